"""Weighted multivariate histograms and the linear blend frequency polygon (LBFP).

The LBFP interpolates histogram bin heights multilinearly between bin
mid-points.  It integrates to one exactly whenever the underlying histogram
does, it factorizes into conditional univariate frequency polygons, and its
piecewise-quadratic conditional CDFs can be inverted in closed form.  That
combination makes it cheap to evaluate and to sample from, which is what the
importance-sampling pipelines in this package rely on.

Conventions used throughout:

* bins are axis-aligned cubes of a single width ``h``; bin ``k`` on an axis
  is the half-open interval ``[t_k - h/2, t_k + h/2)`` around the mid-point
  ``t_k = origin + k*h``,
* ``heights`` hold a normalized density: ``sum(heights) * h**d == 1``,
* one ring of implicit zero bins surrounds the stored grid, so height
  lookups one step outside any axis return 0 instead of failing.  The blend
  therefore tapers linearly to zero around the data and is a total function.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HistogramGrid",
    "LbfpDensity",
    "BinSegment",
    "build_histogram",
    "lbfp_eval",
    "marginalize",
    "conditional_cdf_table",
    "invert_segment",
    "lbfp_sample",
    "lbfp_sample_box",
    "lbfp_cell_probabilities",
    "serialize_grid",
    "deserialize_grid",
    "DegenerateWeightsError",
    "InvalidSampleError",
    "OutsideSupportError",
    "GridFormatError",
]

# Relative slack (in cell units) when locating the interpolation cell of a
# point.  The blend is continuous, so snapping points this close to a cell
# boundary onto it changes values by O(1e-12) while making evaluation at bin
# mid-points exact.
_CELL_EPS = 1e-12

_NORMALIZATION_TOL = 1e-9


class DegenerateWeightsError(ValueError):
    """All sample weights are zero; no histogram can be formed."""


class InvalidSampleError(ValueError):
    """A sample coordinate or weight is NaN/inf."""


class OutsideSupportError(ValueError):
    """Conditioning prefix has zero marginal density."""


class GridFormatError(ValueError):
    """Malformed serialized grid."""


@dataclass(eq=False)
class HistogramGrid:
    """Axis-aligned weighted histogram, normalized to a probability density.

    origin       mid-point of bin 0 on each axis, shape (d,)
    bin_width    shared bin width h > 0
    heights      bin heights, C-order array of shape ``counts_per_axis``
    total_weight raw weight sum before normalization (diagnostic only)
    """

    origin: np.ndarray
    bin_width: float
    heights: np.ndarray
    total_weight: float = 1.0

    def __post_init__(self):
        self.origin = np.atleast_1d(np.asarray(self.origin, dtype=np.float64))
        self.heights = np.ascontiguousarray(self.heights, dtype=np.float64)
        self.bin_width = float(self.bin_width)
        if self.bin_width <= 0 or not np.isfinite(self.bin_width):
            raise ValueError(f"bin_width must be positive, got {self.bin_width}")
        if self.origin.ndim != 1 or self.origin.shape[0] != self.heights.ndim:
            raise ValueError("origin length must equal heights.ndim")
        if not np.all(np.isfinite(self.origin)):
            raise InvalidSampleError("invalid sample: non-finite origin")
        if not np.all(np.isfinite(self.heights)) or np.any(self.heights < 0):
            raise ValueError("heights must be finite and non-negative")
        integral = self.heights.sum() * self.bin_width ** self.dim
        if abs(integral - 1.0) > 1e-6:
            raise ValueError(
                f"histogram must integrate to 1, got {integral!r}"
            )
        # shared across threads; guard against accidental mutation
        self.origin.flags.writeable = False
        self.heights.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.heights.ndim

    @property
    def counts_per_axis(self) -> tuple[int, ...]:
        return self.heights.shape

    def mid_points(self, axis: int) -> np.ndarray:
        """Bin mid-points along one axis."""
        n = self.heights.shape[axis]
        return self.origin[axis] + self.bin_width * np.arange(n)

    def integral(self) -> float:
        return float(self.heights.sum() * self.bin_width ** self.dim)


@dataclass(frozen=True)
class BinSegment:
    """One linear piece of a conditional frequency polygon on [t_k, t_k + h).

    The density on the piece is ``intercept + slope * (x - left_midpoint)``
    and the CDF runs from ``cdf_low`` to ``cdf_high``.
    """

    intercept: float
    slope: float
    cdf_low: float
    cdf_high: float
    left_midpoint: float
    width: float = field(default=0.0)


def build_histogram(points, weights, bin_width: float, origin=None) -> HistogramGrid:
    """Bin weighted samples into a normalized histogram.

    The grid is snapped so that bin edges lie on multiples of ``bin_width``
    and covers the bounding box of all positive-weight samples plus one ring
    of zero bins per axis.  Pass ``origin`` (mid-point of bin 0 per axis) to
    pin the lattice explicitly; samples must still fall inside bins then.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    if pts.ndim != 2 or len(pts) != len(w):
        raise ValueError("points must be (n, d) with one weight per row")
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
        raise InvalidSampleError("invalid sample: non-finite coordinate or weight")
    if np.any(w < 0):
        raise InvalidSampleError("invalid sample: negative weight")
    h = float(bin_width)
    if h <= 0 or not np.isfinite(h):
        raise ValueError(f"bin_width must be positive, got {bin_width}")

    total = float(w.sum())
    pos = w > 0
    if not pos.any():
        raise DegenerateWeightsError("degenerate weights: all sample weights are zero")
    live = pts[pos]
    d = pts.shape[1]

    if origin is None:
        # anchor the lattice on the data: the smallest positive-weight sample
        # sits exactly on the mid-point of bin 1, one ring bin below it
        t0 = live.min(axis=0) - h
    else:
        t0 = np.atleast_1d(np.asarray(origin, dtype=np.float64)).copy()
        if t0.shape != (d,):
            raise ValueError("explicit origin must have one entry per axis")
    edge0 = t0 - 0.5 * h
    idx = np.floor((live - edge0) / h).astype(np.int64)
    if origin is not None and np.any(idx < 0):
        raise ValueError("explicit origin leaves samples below the grid")
    counts = tuple(int(k) for k in idx.max(axis=0) + 2)

    flat = np.ravel_multi_index(tuple(idx.T), counts)
    sums = np.bincount(flat, weights=w[pos], minlength=int(np.prod(counts)))
    heights = sums.reshape(counts) / (total * h ** d)
    return HistogramGrid(origin=t0, bin_width=h, heights=heights, total_weight=total)


def bin_sums(points, values, grid: HistogramGrid) -> np.ndarray:
    """Sum ``values`` per bin of ``grid``; out-of-grid points are dropped."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    vals = np.asarray(values, dtype=np.float64)
    counts = grid.counts_per_axis
    idx = np.floor((pts - (grid.origin - 0.5 * grid.bin_width)) / grid.bin_width).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.array(counts)), axis=1)
    flat = np.ravel_multi_index(tuple(idx[ok].T), counts)
    sums = np.bincount(flat, weights=vals[ok], minlength=int(np.prod(counts)))
    return sums.reshape(counts)


def _locate(x: np.ndarray, origin: np.ndarray, h: float):
    """Interpolation cell indices and in-cell fractions for rows of x."""
    rel = (x - origin) / h
    k = np.floor(rel + _CELL_EPS).astype(np.int64)
    frac = rel - k
    frac[frac < _CELL_EPS] = 0.0
    return k, frac


def _blend_eval(heights: np.ndarray, origin: np.ndarray, h: float, x: np.ndarray) -> np.ndarray:
    d = heights.ndim
    counts = np.array(heights.shape)
    k, frac = _locate(x, origin, h)
    out = np.zeros(len(x))
    inside = np.all((k >= -1) & (k <= counts - 1), axis=1)
    if not inside.any():
        return out
    ki = k[inside]
    fr = frac[inside]
    acc = np.zeros(ki.shape[0])
    flat_heights = heights.reshape(-1)
    for corner in itertools.product((0, 1), repeat=d):
        idx = ki + corner
        valid = np.all((idx >= 0) & (idx < counts), axis=1)
        if not valid.any():
            continue
        w = np.ones(valid.sum())
        for ax, c in enumerate(corner):
            w *= fr[valid, ax] if c else 1.0 - fr[valid, ax]
        flat = np.ravel_multi_index(tuple(idx[valid].T), heights.shape)
        acc[valid] += w * flat_heights[flat]
    out[inside] = acc
    return out


class LbfpDensity:
    """LBFP over a histogram grid, with cached prefix marginals.

    Immutable after construction; evaluation and sampling are pure, so one
    instance can be shared across worker processes or threads.
    """

    def __init__(self, grid: HistogramGrid):
        self.grid = grid
        h = grid.bin_width
        d = grid.dim
        margs = []
        for i in range(1, d):
            trailing = tuple(range(i, d))
            mh = grid.heights.sum(axis=trailing) * h ** (d - i)
            margs.append(
                HistogramGrid(
                    origin=grid.origin[:i],
                    bin_width=h,
                    heights=mh,
                    total_weight=grid.total_weight,
                )
            )
        margs.append(grid)
        self.marginal_grids: list[HistogramGrid] = margs
        # unconditional axis-0 profile, shared by every draw
        g0 = np.zeros(grid.heights.shape[0] + 2)
        g0[1:-1] = self.marginal_grids[0].heights
        seg = (g0[:-1] + g0[1:]) * (0.5 * h)
        self._profile0 = (g0, np.cumsum(seg))

    @property
    def dim(self) -> int:
        return self.grid.dim

    def pdf(self, x) -> np.ndarray | float:
        return lbfp_eval(self, x)

    def sample(self, u) -> np.ndarray:
        return lbfp_sample(self, u)

    def _prefix_profiles(self, prefix: np.ndarray) -> np.ndarray:
        """Conditional height profiles g along the next axis, one row per prefix.

        Row r holds the (padded) values ``f(prefix_r, t_k)`` of the marginal
        LBFP one dimension up from ``prefix``; ``h * sum(row)`` equals the
        marginal density at the prefix.
        """
        prefix = np.atleast_2d(prefix)
        i = prefix.shape[1]
        marg = self.marginal_grids[i]
        n_ax = marg.heights.shape[-1]
        g = np.zeros((prefix.shape[0], n_ax + 2))
        if i == 0:
            g[:, 1:-1] = marg.heights
            return g
        flat_h = marg.heights.reshape(-1, n_ax)
        pre_counts = np.array(marg.heights.shape[:-1])
        k, fr = _locate(prefix, self.grid.origin[:i], self.grid.bin_width)
        for corner in itertools.product((0, 1), repeat=i):
            idx = k + corner
            valid = np.all((idx >= 0) & (idx < pre_counts), axis=1)
            if not valid.any():
                continue
            w = np.ones(valid.sum())
            for ax, c in enumerate(corner):
                w *= fr[valid, ax] if c else 1.0 - fr[valid, ax]
            flat = np.ravel_multi_index(tuple(idx[valid].T), tuple(pre_counts))
            g[valid, 1:-1] += w[:, None] * flat_h[flat]
        return g


def lbfp_eval(density: LbfpDensity, x) -> np.ndarray | float:
    """Evaluate the LBFP; returns 0 outside the interpolation support."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != density.dim:
        raise ValueError(f"expected points of dimension {density.dim}")
    if not np.all(np.isfinite(pts)):
        raise InvalidSampleError("invalid sample: non-finite coordinate")
    out = _blend_eval(density.grid.heights, density.grid.origin, density.grid.bin_width, pts)
    return float(out[0]) if single else out


def marginalize(density: LbfpDensity, prefix_len: int) -> HistogramGrid:
    """Histogram of the marginal onto the first ``prefix_len`` coordinates."""
    if not 1 <= prefix_len <= density.dim:
        raise IndexError(f"prefix_len must be in 1..{density.dim}")
    return density.marginal_grids[prefix_len - 1]


def _segments_from_profile(g: np.ndarray, cum: np.ndarray, origin_ax: float, h: float):
    denom = cum[-1]
    if denom <= 0.0:
        raise OutsideSupportError("conditioning outside support: zero marginal density")
    masses = np.diff(np.concatenate(([0.0], cum)))
    nz = np.nonzero(masses > 0)[0]
    first, last = nz[0], nz[-1]
    segs = []
    for s in range(first, last + 1):
        lo = cum[s - 1] / denom if s > 0 else 0.0
        hi = cum[s] / denom
        if s == last:
            hi = 1.0
        segs.append(
            BinSegment(
                intercept=g[s] / denom,
                slope=(g[s + 1] - g[s]) / (h * denom),
                cdf_low=lo,
                cdf_high=hi,
                left_midpoint=origin_ax + (s - 1) * h,
                width=h,
            )
        )
    return segs


def conditional_cdf_table(density: LbfpDensity, prefix=()) -> list[BinSegment]:
    """Piecewise-linear conditional density of the next coordinate given a prefix.

    With an empty prefix this is the table of the first coordinate's marginal
    frequency polygon.  Raises :class:`OutsideSupportError` when the prefix
    marginal density is zero.
    """
    prefix = np.atleast_1d(np.asarray(prefix, dtype=np.float64)) if len(np.atleast_1d(prefix)) else np.empty(0)
    i = prefix.shape[0]
    if i >= density.dim:
        raise IndexError("prefix must be shorter than the dimension")
    h = density.grid.bin_width
    if i == 0:
        g, cum = density._profile0
    else:
        g = density._prefix_profiles(prefix.reshape(1, -1))[0]
        cum = np.cumsum((g[:-1] + g[1:]) * (0.5 * h))
    return _segments_from_profile(g, cum, density.grid.origin[i], h)


def invert_segment(seg: BinSegment, y: float) -> float:
    """Inverse CDF of one segment at y in [cdf_low, cdf_high)."""
    if not seg.cdf_low <= y < seg.cdf_high:
        raise ValueError(
            f"y={y!r} outside segment CDF range [{seg.cdf_low!r}, {seg.cdf_high!r})"
        )
    h = seg.width
    dy = y - seg.cdf_low
    if seg.slope == 0.0:
        z = (
            (seg.cdf_high - y) * seg.left_midpoint
            + (y - seg.cdf_low) * (seg.left_midpoint + h)
        ) / (seg.cdf_high - seg.cdf_low) - seg.left_midpoint
    elif dy == 0.0:
        z = 0.0
    else:
        # stable root of slope/2 z^2 + intercept z - dy = 0
        disc = seg.intercept * seg.intercept + 2.0 * seg.slope * dy
        z = 2.0 * dy / (seg.intercept + np.sqrt(max(disc, 0.0)))
    return seg.left_midpoint + float(np.clip(z, 0.0, h))


def segment_cdf(segments: list[BinSegment], x) -> np.ndarray | float:
    """CDF of a segment table, vectorized over x."""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    lefts = np.array([s.left_midpoint for s in segments])
    h = segments[0].width
    alpha = np.array([s.intercept for s in segments])
    beta = np.array([s.slope for s in segments])
    glo = np.array([s.cdf_low for s in segments])
    idx = np.clip(np.searchsorted(lefts, xs, side="right") - 1, 0, len(segments) - 1)
    z = np.clip(xs - lefts[idx], 0.0, h)
    val = glo[idx] + alpha[idx] * z + 0.5 * beta[idx] * z * z
    val = np.where(xs < lefts[0], 0.0, val)
    val = np.where(xs >= lefts[-1] + h, 1.0, val)
    out = np.clip(val, 0.0, 1.0)
    return float(out[0]) if np.isscalar(x) or np.asarray(x).ndim == 0 else out


def _invert_rows(g: np.ndarray, cum: np.ndarray, y: np.ndarray, origin_ax: float, h: float) -> np.ndarray:
    """Vectorized per-row inversion on unnormalized profiles.

    ``g`` has one padded profile per row, ``cum`` its running segment masses
    and ``y`` one target in [0, cum[-1]) per row.
    """
    s = (cum <= y[:, None]).sum(axis=1)
    rows = np.arange(len(y))
    alpha = g[rows, s]
    beta = (g[rows, s + 1] - alpha) / h
    gamma1 = np.where(s > 0, cum[rows, np.maximum(s - 1, 0)], 0.0)
    dy = y - gamma1
    disc = np.maximum(alpha * alpha + 2.0 * beta * dy, 0.0)
    den = alpha + np.sqrt(disc)
    quad = 2.0 * dy / np.where(den > 0, den, 1.0)
    lin = dy / np.where(alpha > 0, alpha, 1.0)
    z = np.where(beta == 0.0, lin, quad)
    z = np.where(dy > 0, z, 0.0)
    return origin_ax + (s - 1) * h + np.clip(z, 0.0, h)


def lbfp_sample(density: LbfpDensity, u) -> np.ndarray:
    """Map uniform variates through the inverse conditional CDFs.

    ``u`` is one vector in [0,1)^d or a matrix of such rows.  The map is
    deterministic and monotone coordinate-wise given the prefix, so it
    preserves the structure of stratified or quasi-random inputs.  The
    output law is exactly the LBFP.
    """
    arr = np.asarray(u, dtype=np.float64)
    single = arr.ndim == 1
    U = np.atleast_2d(arr)
    d = density.dim
    if U.shape[1] != d:
        raise ValueError(f"expected uniforms of dimension {d}")
    if np.any(U < 0) or np.any(U >= 1):
        raise ValueError("uniforms must lie in [0, 1)")
    n = U.shape[0]
    h = density.grid.bin_width
    X = np.empty((n, d))
    g0, cum0 = density._profile0
    y0 = U[:, 0] * cum0[-1]
    s0 = np.searchsorted(cum0, y0, side="right")
    X[:, 0] = _invert_axis0(g0, cum0, s0, y0, density.grid.origin[0], h)
    for ax in range(1, d):
        g = density._prefix_profiles(X[:, :ax])
        cum = np.cumsum((g[:, :-1] + g[:, 1:]) * (0.5 * h), axis=1)
        total = cum[:, -1]
        if np.any(total <= 0):
            raise OutsideSupportError(
                "conditioning outside support: sampled prefix has zero density"
            )
        y = U[:, ax] * total
        X[:, ax] = _invert_rows(g, cum, y, density.grid.origin[ax], h)
    return X[0] if single else X


def _profile_cdf_at(g: np.ndarray, cum: np.ndarray, x, origin_ax: float, h: float):
    """Unnormalized CDF of a padded profile at x (vectorized over rows).

    ``g``/``cum`` may be a single profile (1-d) or one row per sample.
    """
    n_seg = cum.shape[-1]
    s = np.clip(np.floor((np.asarray(x) - origin_ax) / h).astype(np.int64) + 1, 0, n_seg - 1)
    left = origin_ax + (s - 1) * h
    z = np.clip(x - left, 0.0, h)
    if g.ndim == 1:
        alpha = g[s]
        beta = (g[s + 1] - alpha) / h
        lo = np.where(s > 0, cum[np.maximum(s - 1, 0)], 0.0)
    else:
        rows = np.arange(g.shape[0])
        alpha = g[rows, s]
        beta = (g[rows, s + 1] - alpha) / h
        lo = np.where(s > 0, cum[rows, np.maximum(s - 1, 0)], 0.0)
    return lo + alpha * z + 0.5 * beta * z * z


def lbfp_sample_box(density: LbfpDensity, u, low=None, high=None):
    """Inversion sampling of the LBFP conditioned on an axis-aligned box.

    Each coordinate is drawn from its conditional law restricted to
    ``[low[i], high[i]]`` (``None`` leaves a side unrestricted).  Returns
    ``(samples, box_prob)`` where ``box_prob[r]`` is the product over axes of
    the conditional probabilities of the box slices, so the density of the
    returned law at a sample is ``lbfp_eval(density, x) / box_prob``.
    Restricting to the fitted data range implements the support restriction
    of the two-stage sampler without disturbing the underlying density.
    """
    arr = np.asarray(u, dtype=np.float64)
    single = arr.ndim == 1
    U = np.atleast_2d(arr)
    d = density.dim
    if U.shape[1] != d:
        raise ValueError(f"expected uniforms of dimension {d}")
    if np.any(U < 0) or np.any(U >= 1):
        raise ValueError("uniforms must lie in [0, 1)")
    lows = [None] * d if low is None else list(np.broadcast_to(low, (d,)))
    highs = [None] * d if high is None else list(np.broadcast_to(high, (d,)))
    n = U.shape[0]
    h = density.grid.bin_width
    X = np.empty((n, d))
    prob = np.ones(n)
    for ax in range(d):
        if ax == 0:
            g, cum = density._profile0
            total = cum[-1]
        else:
            g = density._prefix_profiles(X[:, :ax])
            cum = np.cumsum((g[:, :-1] + g[:, 1:]) * (0.5 * h), axis=1)
            total = cum[:, -1]
            if np.any(total <= 0):
                raise OutsideSupportError(
                    "conditioning outside support: sampled prefix has zero density"
                )
        o = density.grid.origin[ax]
        glo = 0.0 if lows[ax] is None else _profile_cdf_at(g, cum, lows[ax], o, h)
        ghi = total if highs[ax] is None else _profile_cdf_at(g, cum, highs[ax], o, h)
        slice_mass = ghi - glo
        if np.any(slice_mass <= 0):
            raise OutsideSupportError("conditioning box has zero probability")
        y = glo + U[:, ax] * slice_mass
        if ax == 0:
            s = np.searchsorted(cum, y, side="right")
            X[:, ax] = _invert_axis0(g, cum, s, y, o, h)
        else:
            X[:, ax] = _invert_rows(g, cum, y, o, h)
        if lows[ax] is not None:
            X[:, ax] = np.maximum(X[:, ax], lows[ax])
        if highs[ax] is not None:
            X[:, ax] = np.minimum(X[:, ax], highs[ax])
        prob *= slice_mass / total
    return (X[0], float(prob[0])) if single else (X, prob)


def _invert_axis0(g0, cum0, s, y, origin_ax, h):
    alpha = g0[s]
    beta = (g0[s + 1] - alpha) / h
    gamma1 = np.where(s > 0, cum0[np.maximum(s - 1, 0)], 0.0)
    dy = y - gamma1
    disc = np.maximum(alpha * alpha + 2.0 * beta * dy, 0.0)
    den = alpha + np.sqrt(disc)
    quad = 2.0 * dy / np.where(den > 0, den, 1.0)
    lin = dy / np.where(alpha > 0, alpha, 1.0)
    z = np.where(beta == 0.0, lin, quad)
    z = np.where(dy > 0, z, 0.0)
    return origin_ax + (s - 1) * h + np.clip(z, 0.0, h)


def lbfp_cell_probabilities(density: LbfpDensity):
    """Exact probability mass of every interpolation cell.

    Cells are indexed like bins shifted by one: cell ``k`` spans
    ``[t_{k-1}, t_k)`` per axis for ``k = 0..n``, with the implicit zero ring
    as outer corners.  Each cell's mass is ``(h/2)^d`` times the sum of its
    ``2^d`` corner heights.  Useful as the oracle for sampling GOF tests.
    """
    h = density.grid.bin_width
    d = density.dim
    padded = np.pad(density.grid.heights, 1)
    mass = np.zeros(tuple(n + 1 for n in density.grid.counts_per_axis))
    for corner in itertools.product((0, 1), repeat=d):
        sl = tuple(slice(c, c + n + 1) for c, n in zip(corner, density.grid.counts_per_axis))
        mass += padded[sl]
    lows = [density.grid.origin[i] - h for i in range(d)]
    return mass * (0.5 * h) ** d, np.array(lows)


def serialize_grid(grid: HistogramGrid) -> bytes:
    """Lossless, line-oriented text encoding of a grid."""
    lines = [f"LBFP1 {grid.dim} {grid.bin_width:.17g}"]
    for i in range(grid.dim):
        lines.append(f"axis {i} {grid.origin[i]:.17g} {grid.counts_per_axis[i]}")
    lines.append(f"weight {grid.total_weight:.17g}")
    lines.append("heights")
    flat = grid.heights.reshape(-1)
    per_line = max(1, grid.counts_per_axis[-1])
    for start in range(0, flat.size, per_line):
        lines.append(" ".join(f"{v:.17g}" for v in flat[start : start + per_line]))
    return ("\n".join(lines) + "\n").encode("ascii")


def deserialize_grid(data: bytes) -> HistogramGrid:
    """Parse a grid written by :func:`serialize_grid`.

    Raises :class:`GridFormatError` with the offending line on any problem.
    The ``weight`` line is optional and defaults to 1.
    """
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as e:
        raise GridFormatError(f"not ascii text: {e}") from None
    lines = text.splitlines()
    if not lines:
        raise GridFormatError("line 1: empty input")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "LBFP1":
        raise GridFormatError(f"line 1: expected 'LBFP1 <dim> <bin_width>', got {lines[0]!r}")
    try:
        d = int(head[1])
        h = float(head[2])
    except ValueError:
        raise GridFormatError(f"line 1: bad dim or bin_width in {lines[0]!r}") from None
    if d < 1:
        raise GridFormatError("line 1: dim must be >= 1")
    origin = np.empty(d)
    counts = []
    ln = 1
    for i in range(d):
        if ln >= len(lines):
            raise GridFormatError(f"line {ln + 1}: missing axis line {i}")
        parts = lines[ln].split()
        if len(parts) != 4 or parts[0] != "axis":
            raise GridFormatError(f"line {ln + 1}: expected 'axis {i} <origin> <count>'")
        try:
            ax = int(parts[1])
            origin[i] = float(parts[2])
            counts.append(int(parts[3]))
        except ValueError:
            raise GridFormatError(f"line {ln + 1}: bad axis fields") from None
        if ax != i:
            raise GridFormatError(f"line {ln + 1}: axis index {ax}, expected {i}")
        if counts[-1] < 1:
            raise GridFormatError(f"line {ln + 1}: count must be positive")
        ln += 1
    weight = 1.0
    if ln < len(lines) and lines[ln].startswith("weight"):
        parts = lines[ln].split()
        if len(parts) != 2:
            raise GridFormatError(f"line {ln + 1}: expected 'weight <w>'")
        try:
            weight = float(parts[1])
        except ValueError:
            raise GridFormatError(f"line {ln + 1}: bad weight") from None
        ln += 1
    if ln >= len(lines) or lines[ln].strip() != "heights":
        raise GridFormatError(f"line {ln + 1}: expected 'heights'")
    ln += 1
    vals = []
    for off, line in enumerate(lines[ln:]):
        for tok in line.split():
            try:
                vals.append(float(tok))
            except ValueError:
                raise GridFormatError(
                    f"line {ln + off + 1}: bad height value {tok!r}"
                ) from None
    expect = int(np.prod(counts))
    if len(vals) != expect:
        raise GridFormatError(
            f"line {ln + 1}: expected {expect} heights, got {len(vals)}"
        )
    heights = np.array(vals).reshape(tuple(counts))
    try:
        return HistogramGrid(origin=origin, bin_width=h, heights=heights, total_weight=weight)
    except ValueError as e:
        raise GridFormatError(str(e)) from None
