"""Generator, margin estimation, and CSV ingestion tests."""

import numpy as np
import pytest

from stepgrow import data_gen
from stepgrow.data_gen import (
    GenSpec,
    estimate_margin,
    generate_separable,
    load_csv,
    save_certificate,
    save_csv,
    verify_margin,
)
from stepgrow.errors import CsvFormatError, NotSeparableError
from stepgrow.loss_core import Dataset, MarginCertificate


class TestGenSpec:
    @pytest.mark.parametrize("kwargs", [
        dict(dim=0, count=10, margin=0.1, seed=0),
        dict(dim=2, count=0, margin=0.1, seed=0),
        dict(dim=2, count=10, margin=0.0, seed=0),
        dict(dim=2, count=10, margin=1.0, seed=0),
        dict(dim=2, count=10, margin=1.5, seed=0),
    ])
    def test_invalid_specs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            GenSpec(**kwargs)


class TestGenerateSeparable:
    def test_gd_experiment_shape(self):
        data = generate_separable(GenSpec(dim=80, count=1500, margin=0.1, seed=7))
        assert data.features.shape == (1500, 80)
        assert verify_margin(data, data.certificate) >= 0.1
        assert np.linalg.norm(data.features, axis=1).max() <= 1.0 + 1e-12

    def test_sgd_experiment_shape(self):
        data = generate_separable(GenSpec(dim=10, count=5000, margin=0.2, seed=1))
        assert data.features.shape == (5000, 10)
        assert verify_margin(data, data.certificate) >= 0.2

    def test_deterministic_given_seed(self):
        spec = GenSpec(dim=6, count=40, margin=0.25, seed=99)
        a = generate_separable(spec)
        b = generate_separable(spec)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.certificate.direction, b.certificate.direction)

    def test_different_seeds_differ(self):
        a = generate_separable(GenSpec(dim=6, count=40, margin=0.25, seed=1))
        b = generate_separable(GenSpec(dim=6, count=40, margin=0.25, seed=2))
        assert not np.array_equal(a.features, b.features)

    def test_one_dimensional_data(self):
        data = generate_separable(GenSpec(dim=1, count=25, margin=0.5, seed=4))
        assert verify_margin(data, data.certificate) >= 0.5

    def test_large_margin(self):
        data = generate_separable(GenSpec(dim=5, count=200, margin=0.95, seed=2))
        assert verify_margin(data, data.certificate) >= 0.95
        assert np.linalg.norm(data.features, axis=1).max() <= 1.0 + 1e-12


class TestVerifyMargin:
    def test_hand_dataset(self):
        data = Dataset(features=np.array([[0.5, 0.0], [-0.5, 0.0]]),
                       labels=np.array([1.0, -1.0]))
        cert = MarginCertificate(direction=np.array([1.0, 0.0]), margin=0.5)
        assert verify_margin(data, cert) == pytest.approx(0.5, abs=1e-15)

    def test_negated_certificate(self, small_separable):
        cert = small_separable.certificate
        flipped = MarginCertificate(direction=-cert.direction, margin=cert.margin)
        assert verify_margin(small_separable, flipped) <= -cert.margin

    def test_dimension_mismatch(self, small_separable):
        cert = MarginCertificate(direction=np.array([1.0, 0.0]), margin=0.1)
        with pytest.raises(ValueError, match="dimension"):
            verify_margin(small_separable, cert)


class TestEstimateMargin:
    def test_recovers_positive_margin_on_generated_data(self):
        data = generate_separable(GenSpec(dim=8, count=120, margin=0.2, seed=21))
        bare = Dataset(features=data.features, labels=data.labels)
        cert = estimate_margin(bare, max_epochs=500)
        assert cert.margin > 0.0
        # The estimate is a valid certificate for the data itself.
        assert verify_margin(bare, cert) >= cert.margin

    def test_xor_is_not_separable(self):
        data = Dataset(
            features=np.array([[0.5, 0.5], [-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5]]),
            labels=np.array([1.0, 1.0, -1.0, -1.0]))
        with pytest.raises(NotSeparableError):
            estimate_margin(data, max_epochs=60)

    def test_single_sample(self):
        data = Dataset(features=np.array([[1.0]]), labels=np.array([1.0]))
        cert = estimate_margin(data, max_epochs=5)
        assert cert.margin == pytest.approx(1.0, rel=1e-15)


class TestCsv:
    def test_basic_parse(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("-1,0.1,0.2\n1,0.3,-0.4\n", encoding="utf-8")
        data = load_csv(path)
        assert data.n == 2 and data.dim == 2
        np.testing.assert_allclose(data.labels, [-1.0, 1.0])

    def test_rescaling_by_max_row_norm(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,5.0,0.0\n-1,0.0,3.0\n", encoding="utf-8")
        data = load_csv(path)
        np.testing.assert_allclose(data.features, [[1.0, 0.0], [0.0, 0.6]])

    def test_already_normalized_left_alone(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,0.25,0.0\n", encoding="utf-8")
        np.testing.assert_allclose(load_csv(path).features, [[0.25, 0.0]])

    def test_zero_one_labels_coerced(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("0,0.1\n1,0.2\n", encoding="utf-8")
        np.testing.assert_allclose(load_csv(path).labels, [-1.0, 1.0])

    def test_bad_label_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,0.1\n2,0.2\n", encoding="utf-8")
        with pytest.raises(CsvFormatError, match=":2:"):
            load_csv(path)

    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,0.1,0.2\n1,0.3\n", encoding="utf-8")
        with pytest.raises(CsvFormatError, match=":2:"):
            load_csv(path)

    def test_non_numeric_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,0.1\n1,abc\n", encoding="utf-8")
        with pytest.raises(CsvFormatError, match=":2:"):
            load_csv(path)

    def test_header_skip(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("label,f1\n1,0.5\n", encoding="utf-8")
        data = load_csv(path, skip_header=True)
        assert data.n == 1

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(CsvFormatError, match="no data"):
            load_csv(path)

    def test_save_load_roundtrip(self, tmp_path, small_separable):
        path = tmp_path / "d.csv"
        save_csv(small_separable, path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.features, small_separable.features)
        np.testing.assert_array_equal(back.labels, small_separable.labels)

    def test_certificate_roundtrip(self, tmp_path, small_separable):
        path = tmp_path / "c.json"
        save_certificate(small_separable.certificate, path)
        back = data_gen.load_certificate(path)
        np.testing.assert_array_equal(back.direction,
                                      small_separable.certificate.direction)
        assert back.margin == small_separable.certificate.margin
