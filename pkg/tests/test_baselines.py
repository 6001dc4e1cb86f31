import numpy as np
import numpy.testing as npt
import pytest

from specal.baselines import (
    fit_mlr,
    fit_pcr,
    fit_pls,
    predict_multivariate,
)
from specal.errors import (
    DegenerateSpectraError,
    GridMismatchError,
    InvalidComponentsError,
    InvalidParameterError,
)
from specal.methods import FitSpec
from specal.predict import jackknife_sd
from specal.simulate import SimConfig, generate_dataset, WEAK_PHI


def linear_data(rng, num_samples, num_wavelengths, num_analytes=2, noise=0.0):
    w = rng.standard_normal((num_samples, num_wavelengths))
    coef = rng.standard_normal((num_wavelengths, num_analytes))
    y = 0.5 + w @ coef + noise * rng.standard_normal((num_samples, num_analytes))
    return w, y, coef


class TestMlr:
    def test_exact_recovery_overdetermined(self):
        rng = np.random.default_rng(0)
        w, y, coef = linear_data(rng, 40, 6)
        model = fit_mlr(w, y)
        npt.assert_allclose(model.coefficients, coef, atol=1e-8)
        npt.assert_allclose(predict_multivariate(model, w), y, atol=1e-8)

    def test_min_norm_interpolates_wide_data(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((20, 81))
        y = rng.uniform(0, 1, (20, 3))
        model = fit_mlr(w, y)
        npt.assert_allclose(predict_multivariate(model, w), y, atol=1e-8)
        wc = w - w.mean(axis=0)
        yc = y - y.mean(axis=0)
        oracle = np.linalg.pinv(wc) @ yc
        npt.assert_allclose(model.coefficients, oracle, atol=1e-8)

    def test_conflicting_duplicates_compromise(self):
        rng = np.random.default_rng(2)
        w = np.vstack([rng.standard_normal(5)] * 4)
        y = np.array([[0.0], [1.0], [0.4], [0.6]])
        w = np.vstack([w, rng.standard_normal((3, 5))])
        y = np.vstack([y, rng.uniform(0, 1, (3, 1))])
        model = fit_mlr(w, y)
        resid = y - predict_multivariate(model, w)
        assert np.sum(resid ** 2) > 1e-4

    def test_constant_spectra_degenerate(self):
        with pytest.raises(DegenerateSpectraError):
            fit_mlr(np.ones((5, 8)), np.random.default_rng(3).uniform(0, 1, (5, 2)))


class TestPcr:
    def test_component_count_from_variance_fraction(self):
        # Singular values chosen so the variance spectrum is (4, 3, 2, 1):
        # cumulative fractions 0.4, 0.7, 0.9, 1.0.
        rng = np.random.default_rng(4)
        base = rng.standard_normal((12, 4))
        u, _ = np.linalg.qr(base - base.mean(axis=0))
        v, _ = np.linalg.qr(rng.standard_normal((6, 4)))
        wc = u @ np.diag(np.sqrt([4.0, 3.0, 2.0, 1.0])) @ v.T
        w = wc + 5.0
        y = rng.uniform(0, 1, (12, 2))
        model = fit_pcr(w, y, variance_fraction=0.90)
        assert model.components == 3

    def test_full_rank_equals_min_norm_mlr(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((10, 25))
        y = rng.uniform(0, 1, (10, 2))
        rank = np.linalg.matrix_rank(w - w.mean(axis=0))
        pcr = fit_pcr(w, y, components=rank)
        mlr = fit_mlr(w, y)
        npt.assert_allclose(
            predict_multivariate(pcr, w), predict_multivariate(mlr, w), atol=1e-8
        )

    def test_rank_one_needs_single_component(self):
        rng = np.random.default_rng(6)
        w = np.outer(rng.standard_normal(9), rng.standard_normal(7)) + 2.0
        y = rng.uniform(0, 1, (9, 1))
        for q in (0.1, 0.5, 0.99):
            assert fit_pcr(w, y, variance_fraction=q).components == 1

    def test_component_validation(self):
        rng = np.random.default_rng(7)
        w, y, _ = linear_data(rng, 6, 10)
        with pytest.raises(InvalidComponentsError):
            fit_pcr(w, y, components=6)
        with pytest.raises(InvalidParameterError):
            fit_pcr(w, y)
        with pytest.raises(InvalidParameterError):
            fit_pcr(w, y, components=2, variance_fraction=0.5)

    def test_orthonormal_loadings(self):
        rng = np.random.default_rng(8)
        w, y, _ = linear_data(rng, 15, 9, noise=0.3)
        model = fit_pcr(w, y, components=4)
        scores = model.scores
        gram = scores.T @ scores
        npt.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-8)


class TestPls:
    def test_first_direction_is_cross_covariance(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((14, 7))
        y = rng.standard_normal((14, 1))
        model = fit_pls(w, y, components=1)
        wc = w - w.mean(axis=0)
        yc = (y - y.mean(axis=0)).ravel()
        direction = wc.T @ yc
        direction /= np.linalg.norm(direction)
        score = model.scores[:, 0]
        expected = wc @ direction
        assert min(np.abs(score - expected).max(),
                   np.abs(score + expected).max()) < 1e-10

    def test_full_rank_equals_min_norm_mlr(self):
        rng = np.random.default_rng(10)
        w = rng.standard_normal((9, 20))
        y = rng.uniform(0, 1, (9, 3))
        rank = np.linalg.matrix_rank(w - w.mean(axis=0))
        pls = fit_pls(w, y, components=rank)
        mlr = fit_mlr(w, y)
        npt.assert_allclose(
            predict_multivariate(pls, w), predict_multivariate(mlr, w), atol=1e-6
        )

    def test_scores_orthogonal(self):
        rng = np.random.default_rng(11)
        w, y, _ = linear_data(rng, 18, 12, noise=0.5)
        model = fit_pls(w, y, components=5)
        gram = model.scores.T @ model.scores
        npt.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-8)

    def test_variance_selector_matches_pcr(self):
        rng = np.random.default_rng(12)
        w, y, _ = linear_data(rng, 20, 10, noise=0.4)
        pcr = fit_pcr(w, y, variance_fraction=0.9)
        pls = fit_pls(w, y, variance_fraction=0.9)
        assert pls.components == pcr.components


class TestPredictMultivariate:
    def test_training_row_round_trip(self):
        rng = np.random.default_rng(13)
        w, y, _ = linear_data(rng, 30, 5)
        model = fit_mlr(w, y)
        npt.assert_allclose(predict_multivariate(model, w[:1]), y[:1], atol=1e-8)

    def test_mean_spectrum_gives_mean_response(self):
        rng = np.random.default_rng(14)
        w, y, _ = linear_data(rng, 25, 6, noise=0.2)
        model = fit_mlr(w, y)
        pred = predict_multivariate(model, w.mean(axis=0, keepdims=True))
        npt.assert_allclose(pred[0], y.mean(axis=0), atol=1e-8)

    def test_grid_mismatch(self):
        rng = np.random.default_rng(15)
        w, y, _ = linear_data(rng, 10, 6)
        model = fit_mlr(w, y)
        with pytest.raises(GridMismatchError):
            predict_multivariate(model, np.zeros((2, 7)))


class TestJackknifeHarnessAgnostic:
    def test_all_baselines_run_through_jackknife(self):
        cfg = SimConfig(seed=5, num_samples=12, phi=WEAK_PHI)
        spectra, conc, _ = generate_dataset(cfg)
        for spec in (
            FitSpec(method="mlr"),
            FitSpec(method="pcr", components=3),
            FitSpec(method="pls", variance_fraction=0.9),
        ):
            s = jackknife_sd(spectra, conc, spec)
            assert s.shape == (3,)
            assert np.all(s > 0) and np.all(np.isfinite(s))
