import numpy as np
import pytest
from scipy import stats

from npis import lbfp
from npis.lbfp import (
    BinSegment,
    DegenerateWeightsError,
    GridFormatError,
    HistogramGrid,
    InvalidSampleError,
    LbfpDensity,
    OutsideSupportError,
    build_histogram,
    conditional_cdf_table,
    deserialize_grid,
    invert_segment,
    lbfp_cell_probabilities,
    lbfp_eval,
    lbfp_sample,
    marginalize,
    segment_cdf,
    serialize_grid,
)

GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def random_density(rng, d, n_bins=None, h=None):
    """Random normalized grid with a zero ring, as build_histogram produces."""
    n_bins = n_bins or int(rng.integers(3, 8))
    h = h or float(rng.uniform(0.2, 1.7))
    shape = tuple(n_bins + int(rng.integers(0, 3)) for _ in range(d))
    core = rng.random(shape) ** 2
    core.flat[rng.integers(0, core.size, size=max(1, core.size // 4))] = 0.0
    core.flat[int(rng.integers(0, core.size))] = 1.0  # keep at least one positive bin
    heights = np.pad(core, 1)
    heights /= heights.sum() * h ** d
    origin = rng.uniform(-3, 3, size=d)
    return LbfpDensity(HistogramGrid(origin=origin, bin_width=h, heights=heights))


def quadrature_integral(dens, fn=None):
    """Composite 2-point Gauss quadrature over all interpolation cells.

    Exact for the multilinear blend, but built from plain point evaluations,
    so it checks the evaluation geometry independently of the height-sum
    identity.
    """
    g = dens.grid
    h, d = g.bin_width, g.dim
    axes = [g.origin[i] - h + h * np.arange(g.counts_per_axis[i] + 1) for i in range(d)]
    nodes_1d = [np.add.outer(ax, GAUSS2 * h).reshape(-1) for ax in axes]
    mesh = np.meshgrid(*nodes_1d, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    vals = lbfp_eval(dens, pts)
    if fn is not None:
        vals = vals * fn(pts)
    return vals.sum() * (h / 2.0) ** d


class TestBuildHistogram:
    def test_single_point_mass(self):
        g = build_histogram([[2.3]], [1.0], 1.0)
        assert g.heights.sum() * g.bin_width == pytest.approx(1.0, abs=1e-12)
        interior = g.heights[g.heights > 0]
        assert interior.shape == (1,)
        assert interior[0] == pytest.approx(1.0)
        assert g.heights[0] == 0.0 and g.heights[-1] == 0.0

    def test_two_weighted_samples_hand_count(self):
        # weights 1 and 3 at 0.25 and 0.75 with h = 0.5:
        # bin sums 1/4 and 3/4, heights divided by h give 0.5 and 1.5
        g = build_histogram([[0.25], [0.75]], [1.0, 3.0], 0.5)
        mids = g.mid_points(0)
        np.testing.assert_allclose(mids, [-0.25, 0.25, 0.75, 1.25])
        np.testing.assert_allclose(g.heights, [0.0, 0.5, 1.5, 0.0])
        assert g.total_weight == pytest.approx(4.0)

    def test_uniform_square_within_binomial_error(self):
        rng = np.random.default_rng(7)
        n = 100_000
        pts = rng.random((n, 2))
        g = build_histogram(pts, np.ones(n), 0.1)
        d = LbfpDensity(g)
        # every fully-interior bin is Binomial(n, h^2) up to grid snapping
        p = 0.01
        se = np.sqrt(p * (1 - p) / n) / p
        interior = g.heights[g.heights > 0]
        np.testing.assert_array_less(np.abs(interior - 1.0), 5 * se + 1e-12)
        assert quadrature_integral(d) == pytest.approx(1.0, abs=1e-9)

    def test_degenerate_weights(self):
        with pytest.raises(DegenerateWeightsError, match="degenerate weights"):
            build_histogram([[0.0], [1.0]], [0.0, 0.0], 1.0)

    def test_invalid_sample(self):
        with pytest.raises(InvalidSampleError, match="invalid sample"):
            build_histogram([[np.nan]], [1.0], 1.0)
        with pytest.raises(InvalidSampleError):
            build_histogram([[0.0]], [np.inf], 1.0)

    def test_explicit_origin(self):
        g = build_histogram([[0.6], [1.4]], [1.0, 1.0], 0.5, origin=[0.25])
        assert g.origin[0] == 0.25
        assert g.integral() == pytest.approx(1.0, abs=1e-12)


class TestEval:
    def test_midpoint_identity_exact(self):
        rng = np.random.default_rng(3)
        for d in (1, 2, 3):
            dens = random_density(rng, d)
            g = dens.grid
            mids = np.meshgrid(*[g.mid_points(i) for i in range(d)], indexing="ij")
            pts = np.stack([m.reshape(-1) for m in mids], axis=1)
            vals = lbfp_eval(dens, pts)
            np.testing.assert_array_equal(vals, g.heights.reshape(-1))

    def test_between_midpoints_is_average(self):
        g = build_histogram([[0.25], [0.75]], [1.0, 3.0], 0.5)
        dens = LbfpDensity(g)
        assert lbfp_eval(dens, np.array([0.5])) == pytest.approx((0.5 + 1.5) / 2)

    def test_quadrature_normalization(self):
        rng = np.random.default_rng(11)
        for d in (1, 2, 3):
            for _ in range(3):
                dens = random_density(rng, d)
                assert quadrature_integral(dens) == pytest.approx(1.0, abs=1e-6)

    def test_zero_outside_support(self):
        g = build_histogram([[0.0]], [1.0], 1.0)
        dens = LbfpDensity(g)
        assert lbfp_eval(dens, np.array([50.0])) == 0.0
        assert lbfp_eval(dens, np.array([-50.0])) == 0.0
        # taper reaches zero exactly at the padded mid-points
        lo = g.origin[0] - g.bin_width
        assert lbfp_eval(dens, np.array([lo])) == 0.0


class TestMarginalize:
    def test_full_prefix_is_identity(self):
        rng = np.random.default_rng(5)
        dens = random_density(rng, 2)
        assert marginalize(dens, 2) is dens.grid

    def test_product_grid_separability(self):
        a = np.array([0.0, 0.3, 0.7, 0.0])
        b = np.array([0.0, 0.5, 0.25, 0.25, 0.0])
        h = 0.5
        hei = np.outer(a / (a.sum() * h), b / (b.sum() * h))
        g = HistogramGrid(origin=np.array([0.0, 0.0]), bin_width=h, heights=hei)
        dens = LbfpDensity(g)
        m1 = marginalize(dens, 1)
        np.testing.assert_allclose(m1.heights, a / (a.sum() * h), atol=1e-12)

    def test_marginal_matches_quadrature(self):
        rng = np.random.default_rng(9)
        dens = random_density(rng, 2)
        g = dens.grid
        h = g.bin_width
        m1 = LbfpDensity(marginalize(dens, 1))
        probes = rng.uniform(
            g.origin[0] - h, g.origin[0] + g.counts_per_axis[0] * h, size=50
        )
        # integrate the full blend over x2 by 2-point Gauss per cell (exact
        # for a piecewise-linear section)
        edges = g.origin[1] - h + h * np.arange(g.counts_per_axis[1] + 1)
        nodes = np.add.outer(edges, GAUSS2 * h).reshape(-1)
        for x1 in probes:
            pts = np.column_stack([np.full(nodes.shape, x1), nodes])
            val = lbfp_eval(dens, pts).sum() * h / 2.0
            assert val == pytest.approx(lbfp_eval(m1, np.array([x1])), abs=1e-8)

    def test_marginals_integrate_to_one(self):
        rng = np.random.default_rng(13)
        dens = random_density(rng, 3)
        for i in (1, 2, 3):
            assert marginalize(dens, i).integral() == pytest.approx(1.0, abs=1e-9)

    def test_out_of_range(self):
        rng = np.random.default_rng(1)
        dens = random_density(rng, 2)
        with pytest.raises(IndexError):
            marginalize(dens, 3)
        with pytest.raises(IndexError):
            marginalize(dens, 0)


class TestConditionalCdf:
    def test_single_bin_triangle(self):
        g = HistogramGrid(origin=np.array([2.0]), bin_width=1.0, heights=np.array([1.0]))
        segs = conditional_cdf_table(LbfpDensity(g))
        assert len(segs) == 2
        assert [s.cdf_low for s in segs] == [0.0, 0.5]
        assert segs[-1].cdf_high == 1.0
        assert segs[0].left_midpoint == pytest.approx(1.0)
        assert segs[0].slope == pytest.approx(1.0)
        assert segs[1].slope == pytest.approx(-1.0)

    def test_flat_region_zero_slope(self):
        h = 0.5
        hei = np.array([0.0, 0.8, 0.8, 0.8, 0.0])
        hei = hei / (hei.sum() * h)
        g = HistogramGrid(origin=np.zeros(1), bin_width=h, heights=hei)
        segs = conditional_cdf_table(LbfpDensity(g))
        flat = [s for s in segs if s.slope == 0.0]
        assert len(flat) == 2

    def test_segment_masses_sum_to_one(self):
        rng = np.random.default_rng(21)
        for d in (1, 2):
            for _ in range(5):
                dens = random_density(rng, d)
                prefix = ()
                if d == 2:
                    m1 = LbfpDensity(marginalize(dens, 1))
                    prefix = lbfp_sample(m1, rng.random((1, 1)))[0]
                segs = conditional_cdf_table(dens, prefix)
                total = sum(
                    s.intercept * s.width + 0.5 * s.slope * s.width**2 for s in segs
                )
                assert total == pytest.approx(1.0, abs=1e-9)
                assert segs[-1].cdf_high == 1.0

    def test_conditional_is_valid_density(self):
        rng = np.random.default_rng(23)
        dens = random_density(rng, 2)
        m1 = LbfpDensity(marginalize(dens, 1))
        for _ in range(10):
            prefix = lbfp_sample(m1, rng.random((1, 1)))[0]
            segs = conditional_cdf_table(dens, prefix)
            for s in segs:
                assert s.intercept >= -1e-12
                assert s.intercept + s.slope * s.width >= -1e-12
                assert s.cdf_low <= s.cdf_high

    def test_outside_support_raises(self):
        g = build_histogram([[0.0, 0.0]], [1.0], 1.0)
        dens = LbfpDensity(g)
        with pytest.raises(OutsideSupportError, match="outside support"):
            conditional_cdf_table(dens, [99.0])


class TestInvertSegment:
    def test_lower_boundary(self):
        seg = BinSegment(0.5, 1.0, 0.2, 0.9, 3.0, width=1.0)
        assert invert_segment(seg, 0.2) == pytest.approx(3.0)

    def test_flat_midpoint(self):
        seg = BinSegment(1.0, 0.0, 0.25, 0.75, 0.0, width=0.5)
        assert invert_segment(seg, 0.5) == pytest.approx(0.25)

    def test_round_trip(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            h = float(rng.uniform(0.1, 2.0))
            a = float(rng.uniform(0.0, 2.0))
            b = float(rng.uniform(-a / h if a > 0 else 0.0, 2.0))
            if a == 0.0 and b <= 0.0:
                continue
            mass = a * h + 0.5 * b * h * h
            if mass <= 0:
                continue
            lo = float(rng.uniform(0.0, 1.0 - mass)) if mass < 1 else 0.0
            seg = BinSegment(a, b, lo, lo + mass, float(rng.uniform(-5, 5)), width=h)
            for y in rng.uniform(seg.cdf_low, np.nextafter(seg.cdf_high, seg.cdf_low), size=5):
                x = invert_segment(seg, float(y))
                z = x - seg.left_midpoint
                back = seg.cdf_low + a * z + 0.5 * b * z * z
                assert abs(back - y) < 1e-10
                assert seg.left_midpoint <= x <= seg.left_midpoint + h

    def test_contract_violation(self):
        seg = BinSegment(1.0, 0.0, 0.25, 0.75, 0.0, width=0.5)
        with pytest.raises(ValueError, match="outside segment"):
            invert_segment(seg, 0.8)
        with pytest.raises(ValueError):
            invert_segment(seg, 0.75)


class TestSample:
    def test_triangle_median_is_apex(self):
        g = HistogramGrid(origin=np.array([4.0]), bin_width=1.0, heights=np.array([1.0]))
        dens = LbfpDensity(g)
        x = lbfp_sample(dens, np.array([0.5]))
        assert x[0] == pytest.approx(4.0, abs=1e-12)

    def test_monotone_in_uniforms(self):
        rng = np.random.default_rng(29)
        dens = random_density(rng, 1)
        u = np.sort(rng.random(200)).reshape(-1, 1)
        x = lbfp_sample(dens, u)[:, 0]
        assert np.all(np.diff(x) >= 0)

    def test_monotone_second_axis_given_prefix(self):
        rng = np.random.default_rng(31)
        dens = random_density(rng, 2)
        u1 = 0.37
        u2 = np.sort(rng.random(100))
        U = np.column_stack([np.full(100, u1), u2])
        X = lbfp_sample(dens, U)
        assert np.allclose(X[:, 0], X[0, 0])
        assert np.all(np.diff(X[:, 1]) >= 0)

    def test_samples_inside_support(self):
        rng = np.random.default_rng(37)
        dens = random_density(rng, 3)
        X = lbfp_sample(dens, rng.random((500, 3)))
        assert np.all(lbfp_eval(dens, X) >= 0)
        g = dens.grid
        for ax in range(3):
            lo = g.origin[ax] - g.bin_width
            hi = g.origin[ax] + g.counts_per_axis[ax] * g.bin_width
            assert np.all(X[:, ax] >= lo) and np.all(X[:, ax] <= hi)

    def test_ks_against_marginal_cdf(self):
        rng = np.random.default_rng(41)
        dens = random_density(rng, 2, n_bins=5)
        n = 100_000
        X = lbfp_sample(dens, rng.random((n, 2)))
        # axis 1: analytic prefix-marginal CDF
        segs1 = conditional_cdf_table(LbfpDensity(marginalize(dens, 1)))
        res1 = stats.kstest(X[:, 0], lambda q: segment_cdf(segs1, q))
        assert res1.pvalue > 0.01
        # axis 2: marginal over axis 1, via the axis-swapped grid
        g = dens.grid
        swapped = LbfpDensity(
            HistogramGrid(
                origin=g.origin[::-1].copy(),
                bin_width=g.bin_width,
                heights=np.ascontiguousarray(g.heights.T),
            )
        )
        segs2 = conditional_cdf_table(LbfpDensity(marginalize(swapped, 1)))
        res2 = stats.kstest(X[:, 1], lambda q: segment_cdf(segs2, q))
        assert res2.pvalue > 0.01

    def test_chi_square_against_cell_probabilities(self):
        rng = np.random.default_rng(43)
        dens = random_density(rng, 2, n_bins=4)
        n = 100_000
        X = lbfp_sample(dens, rng.random((n, 2)))
        probs, lows = lbfp_cell_probabilities(dens)
        h = dens.grid.bin_width
        idx = np.floor((X - lows) / h).astype(int)
        shape = probs.shape
        observed = np.bincount(
            np.ravel_multi_index(tuple(np.clip(idx, 0, np.array(shape) - 1).T), shape),
            minlength=probs.size,
        ).astype(float)
        expected = probs.reshape(-1) * n
        keep = expected >= 5
        obs = np.append(observed[keep], observed[~keep].sum())
        exp = np.append(expected[keep], expected[~keep].sum())
        if exp[-1] == 0:
            obs, exp = obs[:-1], exp[:-1]
        exp *= obs.sum() / exp.sum()
        res = stats.chisquare(obs, exp)
        assert res.pvalue > 0.01

    def test_deterministic(self):
        rng = np.random.default_rng(47)
        dens = random_density(rng, 2)
        U = rng.random((50, 2))
        X1 = lbfp_sample(dens, U)
        X2 = lbfp_sample(dens, U)
        np.testing.assert_array_equal(X1, X2)

    def test_rejects_bad_uniforms(self):
        rng = np.random.default_rng(53)
        dens = random_density(rng, 1)
        with pytest.raises(ValueError):
            lbfp_sample(dens, np.array([[1.0]]))


class TestSerialization:
    def test_round_trip_bit_identical(self):
        rng = np.random.default_rng(59)
        for d in (1, 2, 3):
            dens = random_density(rng, d)
            g1 = dens.grid
            g2 = deserialize_grid(serialize_grid(g1))
            np.testing.assert_array_equal(g1.heights, g2.heights)
            np.testing.assert_array_equal(g1.origin, g2.origin)
            assert g1.bin_width == g2.bin_width
            assert g1.total_weight == g2.total_weight

    def test_empty_input(self):
        with pytest.raises(GridFormatError, match="line 1"):
            deserialize_grid(b"")

    def test_bad_magic(self):
        with pytest.raises(GridFormatError, match="line 1"):
            deserialize_grid(b"NOPE 1 0.5\n")

    def test_truncated_heights(self):
        data = b"LBFP1 1 0.5\naxis 0 -0.25 4\nheights\n0 0.5\n"
        with pytest.raises(GridFormatError, match="expected 4 heights"):
            deserialize_grid(data)

    def test_hand_written_fixture(self):
        data = b"LBFP1 1 0.5\naxis 0 -0.25 4\nheights\n0 0.5 1.5 0\n"
        g = deserialize_grid(data)
        np.testing.assert_allclose(g.heights, [0.0, 0.5, 1.5, 0.0])
        assert g.total_weight == 1.0


class TestPerformanceShape:
    def test_per_sample_cost_vs_bins(self):
        import time

        rng = np.random.default_rng(61)
        setups = {}
        for n_bins in (20, 40):
            pts = rng.random((20_000, 2)) * 4.0
            dens = LbfpDensity(build_histogram(pts, np.ones(len(pts)), 4.0 / n_bins))
            U = rng.random((20_000, 2))
            lbfp_sample(dens, U)  # warm up
            setups[n_bins] = (dens, U)
        times = {20: [], 40: []}
        # interleave rounds so CPU frequency drift hits both configs alike
        for _ in range(7):
            for n_bins, (dens, U) in setups.items():
                t0 = time.perf_counter()
                lbfp_sample(dens, U)
                times[n_bins].append(time.perf_counter() - t0)
        assert min(times[40]) / min(times[20]) <= 2.5
