import math

import numpy as np
import pytest

from robustpipe import data
from robustpipe.data import (
    SPLITS,
    Dataset,
    apply_covariate_shift,
    gen_blobs,
    gen_preferences,
    gen_two_moons,
    inject_label_noise,
    load_csv,
    save_csv,
    shift_transform,
)


def _angles(X, cls):
    if cls == 0:
        return np.degrees(np.arctan2(X[:, 1], X[:, 0]))
    return np.degrees(np.arctan2(0.5 - X[:, 1], 1.0 - X[:, 0]))


class TestTwoMoons:
    def test_zero_noise_on_arcs(self):
        ds = gen_two_moons(200, noise_sd=0.0, seed=0)
        X, y = ds.X, ds.y
        np.testing.assert_allclose(np.hypot(X[y == 0, 0], X[y == 0, 1]), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.hypot(1 - X[y == 1, 0], 0.5 - X[y == 1, 1]), 1.0, atol=1e-12)
        assert np.all(X[y == 0, 1] >= -1e-12) and np.all(X[y == 1, 1] <= 0.5 + 1e-12)

    def test_balanced(self):
        ds = gen_two_moons(101, seed=1)
        Xtr, ytr = ds.subset("train")
        assert abs(int((ytr == 0).sum()) - int((ytr == 1).sum())) <= 1

    def test_gap_excluded_from_training_only(self):
        ds = gen_two_moons(2000, noise_sd=0.0, gap=(60, 120), seed=2)
        Xtr, ytr = ds.subset("train")
        a = _angles(Xtr[ytr == 0], 0)
        assert not np.any((a > 60) & (a < 120))
        Xv, yv = ds.subset("val_id")
        av = _angles(Xv[yv == 0], 0)
        assert np.any((av > 60) & (av < 120))

    def test_shift_moves_ood_mean(self):
        diffs = []
        for seed in range(10):
            ds = gen_two_moons(400, shift=(0.3, 0.0, 0.0), seed=seed)
            diffs.append(ds.subset("test_ood")[0][:, 0].mean() - ds.subset("test_id")[0][:, 0].mean())
        diffs = np.array(diffs)
        se = diffs.std(ddof=1) / math.sqrt(len(diffs))
        assert abs(diffs.mean() - 0.3) <= 3 * se + 1e-12

    def test_rotation_moves_ood_only(self):
        base = gen_two_moons(100, seed=3)
        rot = gen_two_moons(100, shift=(0.0, 0.0, 25.0), seed=3)
        for tag in ("train", "val_id", "test_id"):
            np.testing.assert_array_equal(base.subset(tag)[0], rot.subset(tag)[0])
        assert not np.allclose(base.subset("val_ood")[0], rot.subset("val_ood")[0])

    def test_all_splits_present(self):
        ds = gen_two_moons(20, seed=0, n_eval=7)
        assert ds.present_splits() == list(SPLITS)
        assert ds.subset("train")[0].shape[0] == 20 and ds.subset("test_ood")[0].shape[0] == 7

    def test_seeded_determinism(self):
        a = gen_two_moons(50, gap=(30, 90), shift=(0.2, 0.1, 5), seed=9)
        b = gen_two_moons(50, gap=(30, 90), shift=(0.2, 0.1, 5), seed=9)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)

    @pytest.mark.parametrize("kw", [dict(n=3), dict(n=10, noise_sd=-1), dict(n=10, gap=(90, 30)), dict(n=10, gap=(-10, 200))])
    def test_errors(self, kw):
        with pytest.raises(ValueError):
            gen_two_moons(**kw)


class TestLabelNoise:
    def test_rate_zero_unchanged(self):
        ds = gen_two_moons(100, seed=0)
        assert inject_label_noise(ds, 0.0, seed=1) is ds

    def test_rate_one_flips_all_training(self):
        ds = gen_two_moons(100, seed=0)
        noisy = inject_label_noise(ds, 1.0, seed=1)
        tr = ds.mask("train")
        assert np.all(noisy.y[tr] != ds.y[tr])
        np.testing.assert_array_equal(noisy.y[~tr], ds.y[~tr])
        np.testing.assert_array_equal(noisy.X, ds.X)

    def test_rate_concentration(self):
        ds = gen_blobs(10_000, seed=0, n_eval=10)
        noisy = inject_label_noise(ds, 0.3, seed=5)
        tr = ds.mask("train")
        frac = float(np.mean(noisy.y[tr] != ds.y[tr]))
        assert 0.27 <= frac <= 0.33

    def test_multiclass_never_keeps_flipped_label(self):
        X = np.zeros((3000, 1))
        y = np.arange(3000) % 4
        ds = Dataset(X, y, np.full(3000, "train"), "classification", 4, 0)
        noisy = inject_label_noise(ds, 0.5, seed=2)
        changed = noisy.y != ds.y
        counts = np.bincount(noisy.y[changed], minlength=4)
        assert np.all(counts > 0)

    def test_rejects_regression(self):
        ds = Dataset(np.zeros((3, 1)), np.zeros(3), np.full(3, "train"), "regression", 0, 0)
        with pytest.raises(ValueError):
            inject_label_noise(ds, 0.1)


class TestCovariateShift:
    def test_identity(self):
        ds = gen_two_moons(30, seed=0)
        out = apply_covariate_shift(ds, np.eye(2), np.zeros(2), ("test_ood",))
        np.testing.assert_array_equal(out.X, ds.X)

    def test_translation_moves_means_exactly(self):
        ds = gen_two_moons(30, seed=0)
        b = np.array([0.25, -1.5])
        out = apply_covariate_shift(ds, np.eye(2), b, ("val_ood", "test_ood"))
        for tag in ("val_ood", "test_ood"):
            np.testing.assert_allclose(out.subset(tag)[0].mean(axis=0) - ds.subset(tag)[0].mean(axis=0), b, atol=1e-12)
        np.testing.assert_array_equal(out.subset("train")[0], ds.subset("train")[0])
        np.testing.assert_array_equal(out.y, ds.y)

    def test_rotation_is_isometry(self):
        ds = gen_two_moons(40, seed=1)
        A, b = shift_transform((0.3, 0.0), 30.0)
        out = apply_covariate_shift(ds, A, b, ("test_ood",))
        P, Q = ds.subset("test_ood")[0], out.subset("test_ood")[0]
        d0 = np.linalg.norm(P[:, None] - P[None], axis=2)
        d1 = np.linalg.norm(Q[:, None] - Q[None], axis=2)
        np.testing.assert_allclose(d0, d1, atol=1e-12)

    def test_dimension_mismatch(self):
        ds = gen_two_moons(10, seed=0)
        with pytest.raises(ValueError):
            apply_covariate_shift(ds, np.eye(3), np.zeros(3), ("test_ood",))


class TestPreferences:
    def test_deterministic_annotator(self):
        u = np.array([5.0, 0.0, 0.0])
        ds = gen_preferences(500, 3, u, annotator_noise=0.0, seed=0)
        a, b = ds.X[:, :3], ds.X[:, 3:]
        better_a = (a @ u > b @ u).astype(float)
        np.testing.assert_array_equal(ds.y, better_a)

    def test_equal_utilities_are_coin_flips(self):
        ds = gen_preferences(10_000, 2, np.zeros(2), annotator_noise=1.0, seed=1)
        assert 0.47 <= ds.y.mean() <= 0.53

    def test_position_flip_symmetry(self):
        n = 10_000
        ds = gen_preferences(n, 2, np.array([3.0, -1.0]), annotator_noise=0.0, seed=2)
        rate = ds.y.mean()
        assert abs(rate - 0.5) <= 3 * math.sqrt(0.25 / n)

    def test_pair_widths(self):
        ds = gen_preferences(10, 4, np.ones(4), seed=0)
        assert ds.task == "preference" and ds.X.shape == (10, 8) and ds.pair_dim == 4

    def test_bad_utility(self):
        with pytest.raises(ValueError):
            gen_preferences(10, 3, np.ones(2))


class TestSplitAndCsv:
    def test_hand_written_csv(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n1.5,2,0\n-3,4e-1,1\n0,0,1\n", encoding="utf-8")
        ds = load_csv(p, {"features": ["a", "b"], "target": "label"})
        np.testing.assert_array_equal(ds.X, [[1.5, 2.0], [-3.0, 0.4], [0.0, 0.0]])
        np.testing.assert_array_equal(ds.y, [0, 1, 1])
        assert ds.present_splits() == ["train"] and ds.n_classes == 2

    @pytest.mark.parametrize(
        "text,msg",
        [("a,label\n1,0\n", "missing column"), ("a,b,label\n1,x,0\n", "non-numeric"), ("a,b,label\n1,2\n", "expected 3 cells"), ("", "empty")],
    )
    def test_csv_errors(self, tmp_path, text, msg):
        p = tmp_path / "bad.csv"
        p.write_text(text, encoding="utf-8")
        with pytest.raises(ValueError, match=msg):
            load_csv(p, {"features": ["a", "b"], "target": "label"})

    def test_roundtrip(self, tmp_path):
        ds = gen_two_moons(30, gap=(10, 50), shift=(0.1, 0.2, 7), seed=4)
        p = tmp_path / "m.csv"
        save_csv(ds, p)
        back = load_csv(p, {"features": ["x0", "x1"], "target": "y", "split": "split"})
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)
        np.testing.assert_array_equal(back.split, ds.split)

    def test_split_all_train(self):
        ds = gen_preferences(50, 2, np.ones(2), seed=0)
        out = data.split(ds, (1, 0, 0, 0, 0), seed=3)
        assert np.all(out.split == "train")

    def test_split_deterministic_disjoint_exhaustive(self):
        ds = gen_preferences(101, 2, np.ones(2), seed=0)
        a = data.split(ds, (0.5, 0.2, 0.1, 0.1, 0.1), seed=3)
        b = data.split(ds, (0.5, 0.2, 0.1, 0.1, 0.1), seed=3)
        np.testing.assert_array_equal(a.split, b.split)
        assert sum(a.mask(t).sum() for t in SPLITS) == ds.n
        assert a.mask("train").sum() == 50 or a.mask("train").sum() == 51

    @pytest.mark.parametrize("fr", [(0.5, 0.5, 0.5, 0, 0), (1, 0, 0, 0), (-0.1, 1.1, 0, 0, 0)])
    def test_bad_fractions(self, fr):
        ds = gen_preferences(10, 2, np.ones(2), seed=0)
        with pytest.raises(ValueError):
            data.split(ds, fr)


class TestDatasetInvariants:
    def test_read_only(self):
        ds = gen_two_moons(10, seed=0)
        with pytest.raises(ValueError):
            ds.X[0, 0] = 1.0

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 1)), np.array([0, 2]), np.full(2, "train"), "classification", 2, 0)

    def test_bad_split_tag(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 1)), np.array([0, 1]), np.array(["train", "holdout"]), "classification", 2, 0)

    def test_blobs_deterministic(self):
        np.testing.assert_array_equal(gen_blobs(20, seed=3).X, gen_blobs(20, seed=3).X)
