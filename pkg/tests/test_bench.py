import numpy as np
import pytest

from bmistab.bench import eval_folds, make_folds, vaf, crossval
from bmistab.errors import ShapeError
from bmistab.numerics import RngStream


class TestVaf:
    def test_perfect_prediction(self):
        y = RngStream(0).uniform(0, 1, (50, 3))
        assert vaf(y, y.copy()).mean_vaf == pytest.approx(100.0)

    def test_mean_predictor_zero(self):
        y = RngStream(1).uniform(0, 1, (50, 3))
        pred = np.tile(y.mean(axis=0), (50, 1))
        assert vaf(y, pred).mean_vaf == pytest.approx(0.0, abs=1e-10)

    def test_hand_case(self):
        y = np.array([[0.0], [1.0], [2.0]])
        pred = np.array([[0.0], [1.0], [1.0]])
        assert vaf(y, pred).mean_vaf == pytest.approx(50.0)

    def test_affine_invariance(self):
        rng = RngStream(2)
        y = rng.uniform(0, 1, (40, 2))
        pred = y + 0.1 * rng.normal(0, 1, (40, 2))
        base = vaf(y, pred).mean_vaf
        shifted = vaf(3.0 * y - 1.0, 3.0 * pred - 1.0).mean_vaf
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_zero_variance_muscle_excluded(self):
        y = np.column_stack([np.ones(20), np.linspace(0, 1, 20)])
        pred = np.column_stack([np.ones(20), np.linspace(0, 1, 20)])
        with pytest.warns(UserWarning):
            report = vaf(y, pred)
        assert np.isnan(report.per_muscle[0])
        assert report.mean_vaf == pytest.approx(100.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            vaf(np.zeros((3, 2)), np.zeros((3, 3)))


def grid_markers(n_trials=40, trial_len=0.5):
    return [(i * trial_len, i % 8) for i in range(n_trials)]


class TestFolds:
    def test_disjoint_and_exhaustive(self):
        markers = grid_markers()
        folds = make_folds(markers, 0.05, 400, k=5, seed=0)
        all_bins = np.concatenate(folds)
        assert len(all_bins) == 400
        assert len(np.unique(all_bins)) == 400

    def test_every_fold_sees_every_target(self):
        markers = grid_markers()
        folds = make_folds(markers, 0.05, 400, k=5, seed=0)
        for fold in folds:
            targets = {markers[b // 10][1] for b in fold[::10]}
            assert targets == set(range(8))

    def test_whole_trials(self):
        markers = grid_markers()
        folds = make_folds(markers, 0.05, 400, k=5, seed=0)
        for fold in folds:
            for b0 in fold[fold % 10 == 0]:
                trial_bins = np.arange(b0, b0 + 10)
                assert np.isin(trial_bins, fold).all()

    def test_deterministic(self):
        markers = grid_markers()
        a = make_folds(markers, 0.05, 400, k=5, seed=3)
        b = make_folds(markers, 0.05, 400, k=5, seed=3)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa, fb)


class LinearTrainer:
    """Tiny deterministic reference model for cross-validation tests."""

    def __init__(self, x, y):
        xc = np.column_stack([x, np.ones(len(x))])
        self.w, *_ = np.linalg.lstsq(xc, y, rcond=None)

    def predict(self, x):
        return np.column_stack([x, np.ones(len(x))]) @ self.w


class TestCrossval:
    def make_data(self, seed=0, T=400):
        rng = RngStream(seed)
        x = rng.normal(0, 1, (T, 6))
        true_w = rng.normal(0, 1, (6, 2))
        y = x @ true_w + 0.1 * rng.normal(0, 1, (T, 2))
        return x, y, grid_markers()

    def test_deterministic(self):
        x, y, markers = self.make_data()
        a = crossval(x, y, markers, LinearTrainer, k=5, seed=1)
        b = crossval(x, y, markers, LinearTrainer, k=5, seed=1)
        assert a.per_fold == b.per_fold

    def test_matches_manual_single_fold(self):
        x, y, markers = self.make_data(seed=4)
        report = crossval(x, y, markers, LinearTrainer, k=5, seed=2)
        folds = make_folds(markers, 0.05, len(x), k=5, seed=2)
        test_bins = folds[0]
        train_bins = np.setdiff1d(np.arange(len(x)), test_bins)
        model = LinearTrainer(x[train_bins], y[train_bins])
        manual = vaf(y[test_bins], model.predict(x)[test_bins]).mean_vaf
        assert report.per_fold[0] == pytest.approx(manual, abs=1e-12)

    def test_report_statistics(self):
        x, y, markers = self.make_data(seed=5)
        report = crossval(x, y, markers, LinearTrainer, k=5, seed=0)
        assert report.fold_count == 5
        assert len(report.per_fold) == 5
        assert report.mean_vaf == pytest.approx(np.mean(report.per_fold))
        expected_sd = np.std(report.per_fold, ddof=1) / np.sqrt(5)
        assert report.sd_of_mean == pytest.approx(expected_sd)

    def test_no_leakage(self):
        # a memorizing model aces seen bins and fails unseen ones, so
        # honest folds must report chance-level VAF
        class Memorizer:
            def __init__(self, x, y):
                self.lookup = {tuple(np.round(r, 9)): t for r, t in zip(x, y)}
                self.mean = y.mean(axis=0)

            def predict(self, x):
                return np.array(
                    [self.lookup.get(tuple(np.round(r, 9)), self.mean) for r in x]
                )

        rng = RngStream(9)
        x = rng.normal(0, 1, (400, 3))
        y = rng.normal(0, 1, (400, 2))  # pure noise: unseen bins unpredictable
        report = crossval(x, y, grid_markers(), Memorizer, k=5, seed=0)
        assert report.mean_vaf < 5.0


def test_eval_folds_matches_plain_vaf_on_union():
    rng = RngStream(10)
    y = rng.uniform(0, 1, (400, 2))
    pred = y + 0.2 * rng.normal(0, 1, (400, 2))
    report = eval_folds(y, pred, grid_markers(), 0.05, k=5, seed=0)
    assert report.fold_count == 5
    overall = vaf(y, pred).mean_vaf
    assert report.mean_vaf == pytest.approx(overall, abs=5.0)
