import numpy as np
import pytest

from nariqa.data import build_synthetic_dataset
from nariqa.errors import DataError, MetricError
from nariqa.metrics import (EvalReport, evaluate, fit_logistic, krcc, plcc,
                            predict_scores, srcc, write_report_csv)
from nariqa.network import ArchConfig, init_params


# --- independent brute-force oracles -------------------------------------

def rank_bruteforce(v):
    """Explicit rank construction: 1-based, ties get the mean of their span."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty(len(v))
    for i in range(len(v)):
        less = np.sum(v < v[i])
        eq = np.sum(v == v[i])
        out[i] = less + (eq + 1) / 2.0
    return out


def srcc_bruteforce(a, b):
    ra, rb = rank_bruteforce(a), rank_bruteforce(b)
    return float(np.corrcoef(ra, rb)[0, 1])


def krcc_bruteforce(a, b):
    """O(n^2) pair enumeration with tau-b tie correction."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = len(a)
    concordant = discordant = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = np.sign(a[i] - a[j])
            dy = np.sign(b[i] - b[j])
            if dx == 0:
                tx += 1
            if dy == 0:
                ty += 1
            if dx * dy > 0:
                concordant += 1
            elif dx * dy < 0:
                discordant += 1
    n0 = n * (n - 1) / 2
    return (concordant - discordant) / np.sqrt((n0 - tx) * (n0 - ty))


class TestSrcc:
    def test_perfect_monotone_is_exactly_one(self, rng):
        gt = np.sort(rng.random(30))
        assert srcc(gt, gt) == 1.0
        assert srcc(np.exp(gt), gt) == 1.0

    def test_reversed_is_minus_one(self, rng):
        gt = np.sort(rng.random(25))
        assert srcc(gt[::-1], gt) == -1.0

    def test_matches_bruteforce_with_ties(self, rng):
        for trial in range(200):
            n = int(rng.integers(5, 40))
            a = rng.integers(0, 8, size=n).astype(float)  # heavy ties
            b = rng.integers(0, 8, size=n).astype(float)
            if np.all(a == a[0]) or np.all(b == b[0]):
                continue
            assert srcc(a, b) == pytest.approx(srcc_bruteforce(a, b), abs=1e-9)

    def test_constant_vector_raises(self):
        with pytest.raises(MetricError):
            srcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_symmetry_and_bounds(self, rng):
        for _ in range(50):
            a = rng.standard_normal(15)
            b = rng.standard_normal(15)
            v = srcc(a, b)
            assert v == srcc(b, a)
            assert -1.0 <= v <= 1.0

    def test_invariant_under_increasing_transforms(self, rng):
        a = rng.standard_normal(40)
        b = rng.standard_normal(40)
        base = srcc(a, b)
        assert srcc(np.exp(a), b) == pytest.approx(base, abs=1e-12)
        assert srcc(3.0 * a + 7.0, b) == pytest.approx(base, abs=1e-12)
        assert srcc(a, np.exp(0.5 * b)) == pytest.approx(base, abs=1e-12)


class TestKrcc:
    def test_identical_order_is_one(self, rng):
        gt = np.sort(rng.random(20))
        assert krcc(gt, gt) == 1.0

    def test_four_point_hand_case(self):
        # pairs: C=5, D=1 -> (5-1)/6
        assert krcc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(4.0 / 6.0, abs=1e-12)

    def test_matches_bruteforce(self, rng):
        for trial in range(100):
            n = int(rng.integers(4, 30))
            a = rng.integers(0, 6, size=n).astype(float)
            b = rng.standard_normal(n)
            if np.all(a == a[0]):
                continue
            assert krcc(a, b) == pytest.approx(krcc_bruteforce(a, b), abs=1e-12)

    def test_all_tied_raises(self):
        with pytest.raises(MetricError):
            krcc([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])

    def test_invariant_under_increasing_transforms(self, rng):
        a = rng.standard_normal(25)
        b = rng.standard_normal(25)
        assert krcc(np.exp(a), b) == pytest.approx(krcc(a, b), abs=1e-12)


class TestLogisticFit:
    def test_recovers_generated_logistic_mapping(self, rng):
        x = np.sort(rng.uniform(-2, 2, size=60))
        true_beta = np.array([40.0, 1.5, 0.2, 3.0, 50.0])
        from nariqa.metrics import _logistic_eval
        y = _logistic_eval(true_beta, x)
        fit = fit_logistic(x, y)
        np.testing.assert_allclose(fit(x), y, atol=1e-6)
        assert fit.residual_norm < 1e-6

    def test_pure_linear_reaches_plcc_one(self, rng):
        x = rng.uniform(0, 10, size=40)
        y = 2.0 * x + 3.0
        value, fit = plcc(x, y)
        assert value == pytest.approx(1.0, abs=1e-9)

    def test_iteration_cap_reports_nonconvergence(self, rng):
        x = rng.uniform(0, 1, 50)
        y = rng.uniform(0, 100, 50)
        fit = fit_logistic(x, y, max_iter=1)
        assert fit.converged in (True, False)  # no exception is the contract
        fit2 = fit_logistic(x, y, max_iter=1, rel_tol=0.0)
        assert fit2.n_iter <= 1

    def test_zero_variance_predictions_raise(self):
        with pytest.raises(MetricError):
            fit_logistic(np.ones(10), np.arange(10.0))

    def test_needs_six_points(self):
        with pytest.raises(MetricError):
            fit_logistic([1, 2, 3], [1, 2, 3])

    def test_fitted_map_is_monotone(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            x = r.uniform(0, 1, 50)
            y = 80 * x ** 2 + r.normal(0, 5, 50)
            fit = fit_logistic(x, np.clip(y, 0, 100))
            grid = np.linspace(x.min(), x.max(), 200)
            q = fit(grid)
            assert np.all(np.diff(q) >= -1e-9)


class TestPlcc:
    def test_logistic_data_reaches_one(self, rng):
        x = np.sort(rng.uniform(-3, 3, size=80))
        from nariqa.metrics import _logistic_eval
        y = _logistic_eval(np.array([60.0, 2.0, 0.0, 1.0, 40.0]), x)
        value, _ = plcc(x, y)
        assert value == pytest.approx(1.0, abs=1e-6)

    def test_constant_ground_truth_raises(self, rng):
        with pytest.raises(MetricError):
            plcc(rng.random(10), np.full(10, 5.0))

    def test_anti_monotone_gives_nonpositive(self, rng):
        x = np.sort(rng.uniform(0, 1, size=50))
        y = 100.0 - 90.0 * x + rng.normal(0, 1, 50) * 0.0
        value, _ = plcc(x, y)
        assert value <= 0.0

    def test_correction_never_hurts_pearson(self, rng):
        from nariqa.metrics import _pearson
        for seed in range(20):
            r = np.random.default_rng(seed)
            x = r.uniform(0, 1, 60)
            y = np.clip(100 * x ** 1.5 + r.normal(0, 10, 60), 0, 100)
            if y.std() == 0:
                continue
            raw = _pearson(x.copy(), y.copy())
            corrected, _ = plcc(x, y)
            assert corrected >= raw - 1e-9


TINY = ArchConfig(patch_count=2, patch_size=16, backbone_channels=(4, 6, 8, 8),
                  proj_channels=4, pooled_size=2, depth_lq=1, depth_diff=2)
TINY_NR = ArchConfig(patch_count=2, patch_size=16, backbone_channels=(4, 6, 8, 8),
                     proj_channels=4, pooled_size=2, depth_lq=1, depth_diff=2,
                     with_reference=False)


@pytest.fixture(scope="module")
def tiny_data():
    # 4 test images x 2 distortions = 8 scored samples, enough for the fit
    return build_synthetic_dataset(n_images=16, distortions_per_image=2, seed=3,
                                   pool_size=3)


class TestEvaluate:
    def test_single_shuffle_has_zero_std(self, tiny_data):
        params = init_params(TINY, 0)
        report = evaluate(params, TINY, tiny_data.test, pool=tiny_data.pool,
                          n_shuffles=1, seed=0)
        assert report.srcc_std == 0.0
        assert len(report.srcc_per_shuffle) == 1

    def test_no_reference_model_identical_across_shuffles(self, tiny_data):
        params = init_params(TINY_NR, 0)
        report = evaluate(params, TINY_NR, tiny_data.test, pool=None,
                          n_shuffles=5, seed=0, ref_mode="none")
        assert report.srcc_std == 0.0
        assert len(set(report.srcc_per_shuffle)) == 1
        assert len(set(report.krcc_per_shuffle)) == 1

    def test_bitwise_reproducible(self, tiny_data, tmp_path):
        params = init_params(TINY, 0)

        def run(path):
            report = evaluate(params, TINY, tiny_data.test, pool=tiny_data.pool,
                              n_shuffles=3, seed=11)
            write_report_csv(report, path)
            return path.read_bytes()

        assert run(tmp_path / "a.csv") == run(tmp_path / "b.csv")

    def test_aligned_mode_ignores_shuffles(self, tiny_data):
        params = init_params(TINY, 0)
        report = evaluate(params, TINY, tiny_data.test, n_shuffles=4, seed=0,
                          ref_mode="aligned_fr")
        assert report.srcc_std == 0.0

    def test_shuffles_vary_content_variant_scores(self, tiny_data):
        params = init_params(TINY, 0)
        report = evaluate(params, TINY, tiny_data.test, pool=tiny_data.pool,
                          n_shuffles=4, seed=0, ref_mode="content_variant")
        assert len(report.srcc_per_shuffle) == 4

    def test_requires_pool_for_content_variant(self, tiny_data):
        params = init_params(TINY, 0)
        with pytest.raises(DataError):
            evaluate(params, TINY, tiny_data.test, pool=None,
                     ref_mode="content_variant")

    def test_mode_architecture_mismatch(self, tiny_data):
        params = init_params(TINY_NR, 0)
        with pytest.raises(DataError):
            evaluate(params, TINY_NR, tiny_data.test, pool=tiny_data.pool,
                     ref_mode="content_variant")

    def test_report_csv_format(self, tiny_data, tmp_path):
        params = init_params(TINY, 0)
        report = evaluate(params, TINY, tiny_data.test, pool=tiny_data.pool,
                          n_shuffles=2, seed=0)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "shuffle,srcc,plcc,krcc"
        assert len(lines) == 4
        assert lines[1].startswith("0,") and lines[2].startswith("1,")
        summary = lines[3].split(",")
        assert summary[0] == "summary" and summary[3] == "-"
        assert float(summary[1]) == pytest.approx(report.srcc_mean, abs=1e-6)

    def test_predict_scores_deterministic(self, tiny_data):
        params = init_params(TINY, 0)
        a = predict_scores(params, TINY, tiny_data.test, pool=tiny_data.pool,
                           ref_mode="content_variant", seed=4)
        b = predict_scores(params, TINY, tiny_data.test, pool=tiny_data.pool,
                           ref_mode="content_variant", seed=4)
        assert a.tobytes() == b.tobytes()

    def test_headline_is_first_shuffle(self, tiny_data):
        params = init_params(TINY, 0)
        report = evaluate(params, TINY, tiny_data.test, pool=tiny_data.pool,
                          n_shuffles=3, seed=2)
        assert report.srcc == report.srcc_per_shuffle[0]
        assert report.plcc == report.plcc_per_shuffle[0]

    def test_eval_report_mean_std(self):
        report = EvalReport(srcc=0.5, plcc=0.5, krcc=0.5, n_samples=4,
                            srcc_per_shuffle=[0.4, 0.6], plcc_per_shuffle=[0.5, 0.5],
                            krcc_per_shuffle=[0.5, 0.5])
        assert report.srcc_mean == pytest.approx(0.5)
        assert report.srcc_std == pytest.approx(0.1)
