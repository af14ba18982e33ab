import itertools

import numpy as np
import pytest

from arflsim.aggregate import (
    AggregationRule,
    ClientContribution,
    ZeroMassRoundError,
    aggregate_round,
    arfl_aggregate,
    fedavg_aggregate,
    mkrum_aggregate,
    rfa_aggregate,
    rfa_objective,
)


def contribs_from(params, counts=None, weights=None, ids=None):
    params = np.asarray(params, dtype=float)
    n = params.shape[0]
    counts = counts if counts is not None else [1] * n
    weights = weights if weights is not None else [0.0] * n
    ids = ids if ids is not None else list(range(n))
    return [
        ClientContribution(client_id=i, params=p, sample_count=c, weight=w)
        for i, p, c, w in zip(ids, params, counts, weights)
    ]


def brute_force_mkrum(params, ids, f, m):
    """Exhaustive Multi-Krum: score every update against all others, average the m best."""
    n = len(params)
    scores = []
    for i in range(n):
        dists = sorted(
            float(np.sum((params[i] - params[j]) ** 2)) for j in range(n) if j != i
        )
        scores.append(sum(dists[: n - f - 2]))
    ranked = sorted(range(n), key=lambda i: (scores[i], ids[i]))
    return np.mean([params[i] for i in ranked[:m]], axis=0)


def grid_search_geometric_median(params, counts, spans=6):
    """Iteratively refined 2-D grid minimizer of the weighted distance sum."""
    params = np.asarray(params, dtype=float)
    base = np.asarray(counts, dtype=float)
    base = base / base.sum()

    def objective(points):
        # points: (k, 2); returns (k,) weighted distance sums
        d = np.linalg.norm(points[:, None, :] - params[None, :, :], axis=2)
        return d @ base

    lo = params.min(axis=0) - 0.5
    hi = params.max(axis=0) + 0.5
    centre = (lo + hi) / 2
    half = (hi - lo).max() / 2
    for _ in range(spans):
        xs = np.linspace(centre[0] - half, centre[0] + half, 81)
        ys = np.linspace(centre[1] - half, centre[1] + half, 81)
        grid = np.array([[x, y] for x in xs for y in ys])
        values = objective(grid)
        centre = grid[int(np.argmin(values))]
        half = half * 2 / 80 * 1.5  # keep a margin around the best cell
    return centre, float(objective(centre[None, :])[0])


class TestArfl:
    def test_single_contribution_passthrough(self):
        contribs = contribs_from([[1.0, -2.0, 3.0]], weights=[0.4])
        np.testing.assert_array_equal(arfl_aggregate(contribs), [1.0, -2.0, 3.0])

    def test_symmetric_cancellation(self):
        w = np.array([2.0, -1.0, 0.5])
        contribs = contribs_from([w, -w], weights=[0.5, 0.5])
        np.testing.assert_allclose(arfl_aggregate(contribs), np.zeros(3), atol=1e-15)

    def test_renormalizes_over_selected_subset(self):
        # full weights [2/3, 1/3, 0]; the round only selected clients 1 and 2
        w1, w2 = np.array([1.0, 2.0]), np.array([-3.0, 5.0])
        contribs = contribs_from([w1, w2], ids=[1, 2], weights=[1 / 3, 0.0])
        np.testing.assert_allclose(arfl_aggregate(contribs), w1, atol=1e-15)

    def test_zero_mass_round(self):
        contribs = contribs_from([[1.0], [2.0]], weights=[0.0, 0.0])
        with pytest.raises(ZeroMassRoundError):
            arfl_aggregate(contribs)


class TestFedavg:
    def test_equal_counts_cancel(self):
        w = np.array([1.0, -4.0])
        contribs = contribs_from([w, -w])
        np.testing.assert_allclose(fedavg_aggregate(contribs), np.zeros(2), atol=1e-15)

    def test_count_weighted_mean(self):
        contribs = contribs_from([np.zeros(3), np.ones(3)], counts=[1, 3])
        np.testing.assert_allclose(fedavg_aggregate(contribs), np.full(3, 0.75))

    def test_equals_weighted_rule_with_count_weights(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 7))
            params = rng.normal(0, 1, (n, 5))
            counts = rng.integers(1, 40, n).tolist()
            contribs = contribs_from(params, counts=counts, weights=[float(c) for c in counts])
            np.testing.assert_allclose(
                fedavg_aggregate(contribs), arfl_aggregate(contribs), atol=1e-12
            )


class TestRfa:
    def test_identical_inputs_fixed_point(self):
        w = np.array([0.3, -0.7])
        contribs = contribs_from([w, w, w])
        np.testing.assert_allclose(rfa_aggregate(contribs), w, atol=1e-12)

    def test_one_dimensional_median(self):
        contribs = contribs_from([[0.0], [0.0], [10.0]])
        out = rfa_aggregate(contribs, epsilon=1e-6, max_iters=500)
        assert abs(out[0]) < 1e-3

    def test_equilateral_triangle_centroid(self):
        angles = 2 * np.pi * np.arange(3) / 3
        pts = np.column_stack([np.cos(angles), np.sin(angles)])
        out = rfa_aggregate(contribs_from(pts), max_iters=500)
        np.testing.assert_allclose(out, pts.mean(axis=0), atol=1e-4)

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(1)
        params = rng.normal(0.0, 1.0, (4, 2))
        counts = rng.integers(1, 10, 4).tolist()
        contribs = contribs_from(params, counts=counts)
        out = rfa_aggregate(contribs, max_iters=500)
        _, best_value = grid_search_geometric_median(params, counts)
        ours = rfa_objective(contribs, out)
        assert abs(ours - best_value) < 1e-3

    def test_smoothed_objective_non_increasing(self):
        rng = np.random.default_rng(2)
        params = rng.normal(0.0, 1.0, (5, 3))
        counts = rng.integers(1, 10, 5).tolist()
        contribs = contribs_from(params, counts=counts)
        # replay the iteration step by step and check the objective trace
        base = np.asarray(counts, float) / sum(counts)
        v = base @ params
        previous = rfa_objective(contribs, v)
        for _ in range(50):
            dist = np.linalg.norm(params - v, axis=1)
            theta = base / np.maximum(dist, 1e-6)
            v = (theta @ params) / theta.sum()
            value = rfa_objective(contribs, v)
            assert value <= previous + 1e-12
            previous = value


class TestMkrum:
    def test_identical_updates(self):
        w = np.array([1.0, 2.0])
        out = mkrum_aggregate(contribs_from([w] * 5), f=1, m=1)
        np.testing.assert_array_equal(out, w)

    def test_outlier_never_selected(self):
        rng = np.random.default_rng(3)
        cluster = rng.normal(0.0, 0.05, (4, 3))
        outlier = np.full((1, 3), 50.0)
        params = np.vstack([cluster, outlier])
        out = mkrum_aggregate(contribs_from(params), f=1, m=1)
        assert np.linalg.norm(out - outlier[0]) > 10.0
        np.testing.assert_allclose(
            out, brute_force_mkrum(params, list(range(5)), f=1, m=1), atol=1e-12
        )

    def test_m_equal_selectable_maximum_on_identical_updates(self):
        w = np.array([4.0])
        out = mkrum_aggregate(contribs_from([w] * 5), f=0, m=3)
        np.testing.assert_array_equal(out, w)

    def test_parameter_validation(self):
        contribs = contribs_from(np.zeros((4, 2)))
        with pytest.raises(ValueError):
            mkrum_aggregate(contribs, f=2, m=1)  # needs n >= f + 3
        with pytest.raises(ValueError):
            mkrum_aggregate(contribs, f=1, m=2)  # m > n - f - 2

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(3, 9))
            f = int(rng.integers(0, max(1, n - 2)))
            f = min(f, n - 3)
            m = int(rng.integers(1, n - f - 1))
            params = rng.normal(0.0, 1.0, (n, 4))
            ids = rng.permutation(100)[:n].tolist()
            out = mkrum_aggregate(contribs_from(params, ids=ids), f=f, m=m)
            np.testing.assert_allclose(out, brute_force_mkrum(params, ids, f, m), atol=1e-12)

    def test_score_ties_break_toward_lowest_client_id(self):
        # two mirrored tight pairs, perfectly symmetric scores
        params = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
        out_a = mkrum_aggregate(contribs_from(params, ids=[0, 1, 2, 3]), f=0, m=1)
        out_b = mkrum_aggregate(contribs_from(params, ids=[5, 6, 2, 3]), f=0, m=1)
        assert out_a[0] < 5.0
        assert out_b[0] > 5.0


class TestCommonInvariants:
    @pytest.mark.parametrize(
        "rule",
        [
            AggregationRule("arfl"),
            AggregationRule("fedavg"),
            AggregationRule("rfa"),
            AggregationRule("mkrum"),
        ],
        ids=["arfl", "fedavg", "rfa", "mkrum"],
    )
    def test_output_within_coordinate_hull(self, rule):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(4, 9))
            params = rng.normal(0.0, 2.0, (n, 6))
            counts = rng.integers(1, 20, n).tolist()
            weights = rng.uniform(0.1, 1.0, n).tolist()
            contribs = contribs_from(params, counts=counts, weights=weights)
            out = aggregate_round(rule, contribs)
            assert out.shape == (6,)
            assert np.all(out >= params.min(axis=0) - 1e-9)
            assert np.all(out <= params.max(axis=0) + 1e-9)

    def test_rule_validation(self):
        with pytest.raises(ValueError):
            AggregationRule("median")
        with pytest.raises(ValueError):
            AggregationRule("rfa", rfa_epsilon=0.0)

    def test_mkrum_default_resolution(self):
        rule = AggregationRule("mkrum")
        assert rule.resolve_mkrum(10) == (3, 5)
        assert rule.resolve_mkrum(5) == (2, 1)
        assert rule.resolve_mkrum(3) == (0, 1)
        fixed = AggregationRule("mkrum", mkrum_f=1, mkrum_m=2)
        assert fixed.resolve_mkrum(10) == (1, 2)

    def test_length_mismatch_rejected(self):
        contribs = [
            ClientContribution(0, np.zeros(3), 1),
            ClientContribution(1, np.zeros(4), 1),
        ]
        with pytest.raises(ValueError):
            fedavg_aggregate(contribs)
