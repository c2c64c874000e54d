import numpy as np
import pytest
import scipy.linalg

from bmistab.cca import (
    CcaAligner,
    TrialAveragedLatents,
    cca_apply,
    cca_fit,
    common_trial_length,
    trial_average,
)
from bmistab.errors import MissingTargetError, ShapeError
from bmistab.interface import LatentSeries
from bmistab.numerics import RngStream


def eig_cca_correlations(a0: np.ndarray, ak: np.ndarray) -> np.ndarray:
    """Independent oracle: CCA correlations via the covariance eigenproblem."""
    x = a0 - a0.mean(axis=1, keepdims=True)
    y = ak - ak.mean(axis=1, keepdims=True)
    n = x.shape[1]
    cxx = x @ x.T / (n - 1)
    cyy = y @ y.T / (n - 1)
    cxy = x @ y.T / (n - 1)
    ex, vx = scipy.linalg.eigh(cxx)
    ey, vy = scipy.linalg.eigh(cyy)
    isx = vx @ np.diag(1.0 / np.sqrt(ex)) @ vx.T
    isy = vy @ np.diag(1.0 / np.sqrt(ey)) @ vy.T
    k = isx @ cxy @ isy
    s = np.linalg.svd(k, compute_uv=False)
    return np.sort(np.clip(s, 0, 1))[::-1]


def random_averaged(seed: int, l: int = 5, tau: int = 30) -> np.ndarray:
    rng = RngStream(seed)
    return rng.normal(0.0, 1.0, (l, 8 * tau))


def correlated_pair(seed: int, l: int = 5, tau: int = 30, mix: float = 0.6):
    rng = RngStream(seed)
    shared = rng.normal(0.0, 1.0, (l, 8 * tau))
    a0 = shared + 0.5 * rng.normal(0.0, 1.0, (l, 8 * tau))
    ak = mix * shared + (1 - mix) * rng.normal(0.0, 1.0, (l, 8 * tau))
    return a0, ak


class TestTrialAverage:
    def make_latents(self, reps_per_target=2, tau=4, l=3, noise=0.0, seed=0):
        rng = RngStream(seed)
        per_target = {g: rng.normal(0, 1, (tau, l)) for g in range(8)}
        markers = []
        blocks = []
        t = 0.0
        for rep in range(reps_per_target):
            for g in range(8):
                markers.append((t, g))
                block = per_target[g] + noise * rng.normal(0, 1, (tau, l))
                blocks.append(block)
                t += tau * 0.05
        z = LatentSeries(0.05, np.concatenate(blocks, axis=0))
        return z, markers, per_target

    def test_single_trial_identity(self):
        z, markers, per_target = self.make_latents(reps_per_target=1)
        avg = trial_average(z, markers, tau=4)
        for g in range(8):
            assert np.allclose(avg.data[:, g * 4 : (g + 1) * 4], per_target[g].T)

    def test_two_identical_trials(self):
        z, markers, per_target = self.make_latents(reps_per_target=2, noise=0.0)
        avg = trial_average(z, markers, tau=4)
        for g in range(8):
            assert np.allclose(avg.data[:, g * 4 : (g + 1) * 4], per_target[g].T)

    def test_matches_direct_mean(self):
        z, markers, _ = self.make_latents(reps_per_target=3, noise=0.5, seed=2)
        avg = trial_average(z, markers, tau=4)
        arr = z.z
        for g in range(8):
            segs = [
                arr[int(round(t0 / 0.05)) : int(round(t0 / 0.05)) + 4]
                for t0, gg in markers
                if gg == g
            ]
            manual = np.mean(segs, axis=0).T
            assert np.allclose(avg.data[:, g * 4 : (g + 1) * 4], manual)

    def test_missing_target_raises(self):
        z, markers, _ = self.make_latents(reps_per_target=1)
        markers = [(t, g) for t, g in markers if g != 5]
        with pytest.raises(MissingTargetError) as err:
            trial_average(z, markers, tau=4)
        assert err.value.target == 5

    def test_common_trial_length(self):
        markers = [(0.0, 0), (0.5, 1), (1.5, 2)]
        assert common_trial_length([markers], 0.05, 40) == 10


class TestCcaFit:
    def test_identical_sets_all_ones(self):
        a = random_averaged(0)
        t = cca_fit(a, a)
        assert np.allclose(t.correlations, 1.0, atol=1e-8)

    def test_invertible_transform_invariance(self):
        a = random_averaged(1)
        rng = RngStream(2)
        for trial in range(100):
            q, _ = np.linalg.qr(rng.normal(0, 1, (5, 5)))
            g = q @ np.diag(rng.uniform(0.5, 2.0, 5)) @ q.T
            t = cca_fit(a, g @ a)
            assert np.all(t.correlations >= 0.999)

    def test_matches_eigen_oracle(self):
        for seed in range(100):
            a0, ak = correlated_pair(seed)
            t = cca_fit(a0, ak)
            oracle = eig_cca_correlations(a0, ak)
            assert np.allclose(t.correlations, oracle, atol=1e-8)

    def test_correlations_sorted_descending(self):
        a0, ak = correlated_pair(11)
        t = cca_fit(a0, ak)
        assert np.all(np.diff(t.correlations) <= 1e-12)

    def test_canonical_variates_correlate_as_reported(self):
        a0, ak = correlated_pair(5)
        t = cca_fit(a0, ak)
        v0 = (a0 - a0.mean(axis=1, keepdims=True)).T @ t.m0
        vk = (ak - ak.mean(axis=1, keepdims=True)).T @ t.mk
        for j in range(v0.shape[1]):
            r = np.corrcoef(v0[:, j], vk[:, j])[0, 1]
            assert r == pytest.approx(t.correlations[j], abs=1e-8)

    def test_too_few_columns_rejected(self):
        with pytest.raises(ShapeError):
            cca_fit(np.ones((5, 5)), np.ones((5, 5)))


class TestCcaApply:
    def test_identity_when_same_data(self):
        a = random_averaged(3)
        t = cca_fit(a, a)
        z = RngStream(4).normal(0, 1, (50, 5))
        out = cca_apply(t, z)
        assert np.abs(out - z).max() <= 1e-10

    def test_undoes_linear_map_on_averages(self):
        a0 = random_averaged(6)
        rng = RngStream(7)
        g = rng.normal(0, 1, (5, 5)) + 2 * np.eye(5)
        shift = rng.normal(0, 1, (5, 1))
        ak = g @ a0 + shift
        t = cca_fit(a0, ak)
        recovered = cca_apply(t, ak.T)
        assert np.abs(recovered - a0.T).max() <= 1e-8

    def test_estimator_wrapper(self):
        a0, ak = correlated_pair(8)
        aligner = CcaAligner().fit(a0, ak)
        assert aligner.correlations_.shape == (5,)
        out = aligner.transform(RngStream(9).normal(0, 1, (20, 5)))
        assert out.shape == (20, 5)

    def test_estimator_get_params_roundtrip(self):
        aligner = CcaAligner()
        assert aligner.get_params() == {}
        import sklearn.base

        clone = sklearn.base.clone(aligner)
        assert isinstance(clone, CcaAligner)
