"""Nonparametric importance sampling pipelines.

Two-stage estimators: a pilot sample from a trial distribution is reweighted
toward the variance-optimal proposal, a linear blend frequency polygon is
fitted to the weighted pilot, and the main integration stage samples that fit
by inversion.  Variants:

* ``nis_integrate``      unnormalized IS with proposal ~ |phi| p
* ``nis_split_integrate`` runs the pipeline separately on the positive and
  negative parts of the integrand and subtracts the estimates
* ``nsis_integrate``     self-normalized IS with proposal ~ |phi - I| p,
  usable when the target density is known only up to a constant
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import lbfp
from .lbfp import (
    LbfpDensity,
    build_histogram,
    lbfp_eval,
    lbfp_sample,
    lbfp_sample_box,
)

__all__ = [
    "Problem",
    "NisConfig",
    "ProposalEstimate",
    "IntegrationResult",
    "TheoryConstants",
    "estimate_is_proposal",
    "estimate_sis_proposal",
    "pilot_snis_estimate",
    "nis_integrate",
    "nis_split_integrate",
    "nsis_integrate",
    "reference_bandwidth",
    "plugin_bandwidth",
    "estimate_theory_constants",
    "optimal_lambda",
    "EmptyPilotError",
    "DegenerateSpreadError",
]

# Pilot and self-normalized weights are divided by their maximum and snapped
# to this dyadic grid.  Rescaling the unnormalized target perturbs raw weights
# by ~1 ulp; the snap collapses that noise so self-normalized estimates are
# bit-identical under such rescalings.  The induced relative weight error
# (<= 2^-25) is far below Monte Carlo noise.
_WEIGHT_SNAP = 2.0**-24

_PLUGIN_OVERSMOOTH = 1.6  # curvature grids use this multiple of the reference h
_PLUGIN_CLAMP = 5.0


class EmptyPilotError(RuntimeError):
    """Pilot never hit the support of the optimal proposal."""


class DegenerateSpreadError(ValueError):
    """Weighted sample has zero spread on some axis."""


@dataclass
class Problem:
    """An integration problem: estimate the integral of phi against p.

    ``target_density`` may be unnormalized for the self-normalized pipeline.
    ``trial_sampler`` maps a matrix of uniforms in [0,1)^d to trial points, so
    callers own all randomness; ``trial_density`` evaluates the trial law.
    The trial density must be positive wherever ``|phi| p`` is.
    """

    dim: int
    target_density: Callable[[np.ndarray], np.ndarray]
    integrand: Callable[[np.ndarray], np.ndarray]
    trial_sampler: Callable[[np.ndarray], np.ndarray]
    trial_density: Callable[[np.ndarray], np.ndarray]


@dataclass
class NisConfig:
    total_budget: int
    pilot_fraction: float | None = None
    bandwidth_rule: str = "plugin"  # fixed | reference | plugin
    bandwidth: float | None = None
    seed: int | np.random.SeedSequence = 0

    def resolve_fraction(self, method: str, dim: int) -> float:
        lam = self.pilot_fraction
        if lam is None:
            lam = {"nis": 0.15, "nis-split": optimal_lambda(dim), "nsis": 0.2}[method]
        if not 0.0 < lam < 1.0:
            raise ValueError(f"pilot_fraction must be in (0,1), got {lam}")
        if method in ("nis", "nsis") and lam > 0.25:
            warnings.warn(
                f"pilot fraction {lam} above the 0.25 heuristic for {method}",
                stacklevel=3,
            )
        return lam

    def pilot_size(self, method: str, dim: int, budget: int | None = None) -> int:
        n = self.total_budget if budget is None else budget
        lam = self.resolve_fraction(method, dim)
        return min(max(int(round(lam * n)), 1), n - 1)


@dataclass
class ProposalEstimate:
    """Fitted proposal plus the pilot summaries the theory formulas need.

    ``support_low``/``support_high`` hold the positive-weight bounding box;
    the main stage samples the proposal conditioned on that box (the support
    restriction of the two-stage scheme), so mass the boundary taper would
    place outside the observed support is never drawn.
    """

    density: LbfpDensity
    mean_weight: float
    pilot_size: int
    bandwidth: float
    support_low: np.ndarray = None
    support_high: np.ndarray = None
    pilot_points: np.ndarray = field(repr=False, default=None)
    pilot_weights: np.ndarray = field(repr=False, default=None)
    pilot_signed: np.ndarray = field(repr=False, default=None)
    signed_mean: float = float("nan")

    def sample(self, u):
        """Draw from the support-restricted proposal; returns (points, density)."""
        x, box_prob = lbfp_sample_box(
            self.density, u, low=self.support_low, high=self.support_high
        )
        return x, lbfp_eval(self.density, x) / box_prob


@dataclass
class IntegrationResult:
    estimate: float
    within_run_variance: float
    pilot_size: int
    main_size: int
    method: str
    elapsed: float
    mean_pilot_weight: float
    pilot_hits: int


@dataclass
class TheoryConstants:
    """Plug-in estimates of the MSE expansion coefficients and optima."""

    H1: float = float("nan")
    H2: float = float("nan")
    h_star: float = float("nan")
    Hbar1: float = float("nan")
    Hbar2: float = float("nan")
    h_double_star: float = float("nan")
    lambda_star: float = float("nan")
    Itilde: float = float("nan")


def _seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def canonical_weights(w: np.ndarray) -> np.ndarray:
    """Normalize weights by their maximum and snap to a dyadic grid.

    Exact arithmetic except for the single division by the maximum, so the
    output bits depend only on weight ratios, not on a common scale factor.
    """
    w = np.asarray(w, dtype=np.float64)
    m = w.max()
    if not np.isfinite(m) or m <= 0:
        raise EmptyPilotError("empty pilot: all pilot weights are zero")
    scaled = w / m
    return np.round(scaled / _WEIGHT_SNAP) * _WEIGHT_SNAP


def optimal_lambda(d: int) -> float:
    """Pilot share minimizing the asymptotic MSE for one-signed integrands."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return 4.0 / (d + 8)


def reference_bandwidth(samples, weights, d: int, M: int) -> float:
    """Gaussian reference bin width 2.15 * sigma * M^(-1/(d+4)).

    ``sigma`` is the weighted standard deviation for d = 1 and the geometric
    mean of the per-axis weighted standard deviations otherwise.
    """
    pts = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    ws = w.sum()
    if ws <= 0 or (w > 0).sum() < 2:
        raise DegenerateSpreadError("degenerate spread: need two positive-weight samples")
    mean = (w[:, None] * pts).sum(axis=0) / ws
    var = (w[:, None] * (pts - mean) ** 2).sum(axis=0) / ws
    if np.any(var <= 0):
        raise DegenerateSpreadError("degenerate spread: zero variance on an axis")
    sigma = float(np.exp(np.mean(np.log(np.sqrt(var)))))
    return 2.15 * sigma * M ** (-1.0 / (d + 4))


def _second_differences(q: np.ndarray, h: float) -> list[np.ndarray]:
    """Central second differences of bin heights along each axis (zero padded)."""
    out = []
    for ax in range(q.ndim):
        padded = np.pad(q, [(1, 1) if a == ax else (0, 0) for a in range(q.ndim)])
        lo = tuple(slice(0, -2) if a == ax else slice(None) for a in range(q.ndim))
        hi = tuple(slice(2, None) if a == ax else slice(None) for a in range(q.ndim))
        out.append((padded[lo] + padded[hi] - 2.0 * q) / (h * h))
    return out


def _grid_midpoint_mesh(grid) -> np.ndarray:
    axes = [grid.mid_points(i) for i in range(grid.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def estimate_theory_constants(
    pilot: ProposalEstimate, q0_density, d: int, M: int, mode: str = "is"
) -> TheoryConstants:
    """Riemann-sum estimates of the MSE expansion coefficients.

    Curvature is estimated by central second differences of a deliberately
    oversmoothed refit of the pilot (noise in second differences otherwise
    inflates the squared-curvature integrals), integrals by bin sums over the
    refit grid, and the trial density is evaluated at bin mid-points.
    """
    if pilot.pilot_points is None:
        raise ValueError("pilot carries no sample diagnostics")
    h_ref = pilot.bandwidth
    h = _PLUGIN_OVERSMOOTH * h_ref
    grid = build_histogram(pilot.pilot_points, pilot.pilot_weights, h)
    q = grid.heights
    vol = h**d
    d2 = _second_differences(q, h)
    # bin-height sampling noise inflates squared second differences by a
    # known amount; estimate Var[height] per bin and subtract it
    wsum = float(pilot.pilot_weights.sum())
    s1 = lbfp.bin_sums(pilot.pilot_points, pilot.pilot_weights, grid)
    s2 = lbfp.bin_sums(pilot.pilot_points, pilot.pilot_weights**2, grid)
    v = s2 / (wsum * vol) ** 2
    # sparsely hit bins carry more noise than the correction can remove
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(s2 > 0, s1**2 / np.where(s2 > 0, s2, 1.0), 0.0)
    pos = (q > 0) & (ess >= 4.0)
    h4 = h**4
    sum_sq = 0.0
    for ax, d2i in enumerate(d2):
        pad = [(1, 1) if a == ax else (0, 0) for a in range(d)]
        vpad = np.pad(v, pad)
        lo = tuple(slice(0, -2) if a == ax else slice(None) for a in range(d))
        hi = tuple(slice(2, None) if a == ax else slice(None) for a in range(d))
        noise = (vpad[lo] + 4.0 * v + vpad[hi]) / h4
        sum_sq += float(((d2i**2 - noise)[pos] / q[pos]).sum())
    lap = np.zeros_like(q)
    for d2i in d2:
        lap += d2i
    cross = (lap**2) - sum(d2i**2 for d2i in d2) - d * (d - 1) * 4.0 * v / h4
    cross_all = float((cross[pos] / q[pos]).sum())
    H1 = vol * (49.0 / 2880.0 * sum_sq + cross_all / 64.0)

    mids = _grid_midpoint_mesh(grid)
    q0 = np.asarray(q0_density(mids), dtype=np.float64).reshape(q.shape)
    okq0 = q0 > 0
    H2 = vol * float((q[okq0] / q0[okq0]).sum())

    tc = TheoryConstants(H1=H1, H2=H2, lambda_star=optimal_lambda(d))
    if H1 > 0 and H2 > 0:
        tc.h_star = (d * H2 * 2.0**d / (4.0 * H1 * 3.0**d)) ** (1.0 / (d + 4)) * M ** (
            -1.0 / (d + 4)
        )
    if mode == "signed":
        if pilot.pilot_signed is None or not np.isfinite(pilot.signed_mean):
            raise ValueError("pilot carries no signed diagnostics")
        ssum = lbfp.bin_sums(pilot.pilot_points, pilot.pilot_signed, grid)
        ghat = ssum / (M * vol)
        ihat = pilot.signed_mean
        with np.errstate(divide="ignore", invalid="ignore"):
            f = ghat / ihat - q
        both = pos & okq0
        t1 = float((f[pos] ** 2 * lap[pos] / (8.0 * q[pos] ** 2)).sum())
        t2 = float((f[pos] * lap[pos] / (4.0 * q[pos])).sum())
        tc.Hbar1 = -vol * (t1 + t2)
        b1 = float((q[okq0] / q0[okq0]).sum())
        b2 = float((f[okq0] / q0[okq0]).sum())
        b3 = float((f[both] ** 2 / (q0[both] * q[both])).sum())
        tc.Hbar2 = vol * (b1 - 2.0 * b2 - b3)
        ratio = tc.Hbar2 / tc.Hbar1 if tc.Hbar1 != 0 else float("nan")
        if np.isfinite(ratio) and ratio > 0:
            tc.h_double_star = (d * ratio * 2.0 ** (d - 1) / 3.0**d) ** (
                1.0 / (d + 2)
            ) * M ** (-1.0 / (d + 2))
    return tc


def plugin_bandwidth(
    pilot: ProposalEstimate, q0_density, d: int, M: int, mode: str = "is"
) -> float:
    """Plug-in bin width, clamped around the reference rule for robustness.

    ``mode="is"`` targets the one-signed expansion, ``mode="signed"`` the
    sign-indefinite one.  The sign-indefinite coefficients divide by the
    pilot mean of the signed weights; when that mean is statistically
    indistinguishable from zero they are noise, so the one-signed optimum is
    used instead (it minimizes the same proposal-mismatch functional, which
    is exactly what remains of the MSE when the integral is near zero).
    Falls back to the reference rule when the coefficients are unusable.
    """
    h_ref = pilot.bandwidth
    if mode == "signed" and pilot.pilot_signed is not None:
        se = float(pilot.pilot_signed.std(ddof=1)) / np.sqrt(len(pilot.pilot_signed))
        if not np.isfinite(pilot.signed_mean) or abs(pilot.signed_mean) < 3.0 * se:
            mode = "is"
    tc = estimate_theory_constants(pilot, q0_density, d, M, mode=mode)
    h = tc.h_double_star if mode == "signed" else tc.h_star
    if not np.isfinite(h) or h <= 0:
        h = tc.h_star
    if not np.isfinite(h) or h <= 0:
        warnings.warn("plug-in bandwidth unusable, falling back to reference rule")
        return h_ref
    return float(np.clip(h, h_ref / _PLUGIN_CLAMP, h_ref * _PLUGIN_CLAMP))


def _draw_pilot(problem: Problem, M: int, seed):
    rng = np.random.default_rng(_seedseq(seed))
    u = rng.random((M, problem.dim))
    pts = np.atleast_2d(np.asarray(problem.trial_sampler(u), dtype=np.float64))
    if pts.shape != (M, problem.dim):
        raise ValueError("trial_sampler returned wrong shape")
    phi = np.asarray(problem.integrand(pts), dtype=np.float64)
    p = np.asarray(problem.target_density(pts), dtype=np.float64)
    q0 = np.asarray(problem.trial_density(pts), dtype=np.float64)
    if np.any(q0 <= 0):
        raise ValueError("trial density is zero at its own sample")
    return pts, phi, p, q0


def _snap_to_span(h: float, pts: np.ndarray) -> float:
    """Snap h so the sample span is a whole number of bins.

    With the data-anchored grid this places the outer bin mid-points on the
    empirical support edges, which removes most of the boundary taper's
    undershoot for compactly supported targets.
    """
    span = float(np.mean(pts.max(axis=0) - pts.min(axis=0)))
    if span <= 0:
        return h
    m = max(1, round(span / h))
    return span / m


def _fit_proposal(pts, weights_raw, signed_raw, problem, M, bandwidth_rule, bandwidth, mode):
    what = canonical_weights(weights_raw)
    if not (what > 0).any():
        raise EmptyPilotError("empty pilot: no positive pilot weights")
    pos = what > 0
    h_ref = reference_bandwidth(pts[pos], what[pos], problem.dim, M)
    prop = ProposalEstimate(
        density=None,
        mean_weight=float(weights_raw.mean()),
        pilot_size=M,
        bandwidth=h_ref,
        support_low=pts[pos].min(axis=0),
        support_high=pts[pos].max(axis=0),
        pilot_points=pts,
        pilot_weights=what,
        pilot_signed=signed_raw,
        signed_mean=float(signed_raw.mean()) if signed_raw is not None else float("nan"),
    )
    if bandwidth_rule == "fixed":
        if bandwidth is None or bandwidth <= 0:
            raise ValueError("fixed bandwidth rule needs a positive bandwidth")
        h = float(bandwidth)
    elif bandwidth_rule == "reference":
        h = _snap_to_span(h_ref, pts[pos])
    elif bandwidth_rule == "plugin":
        h = plugin_bandwidth(prop, problem.trial_density, problem.dim, M, mode=mode)
        h = _snap_to_span(h, pts[pos])
    else:
        raise ValueError(f"unknown bandwidth rule {bandwidth_rule!r}")
    prop.bandwidth = h
    prop.density = LbfpDensity(build_histogram(pts, what, h))
    return prop


def estimate_is_proposal(
    problem: Problem,
    M: int,
    bandwidth_rule: str = "plugin",
    seed=0,
    bandwidth: float | None = None,
) -> ProposalEstimate:
    """Stage-1 proposal for unnormalized NIS: LBFP fit of |phi| p / q0 weights.

    The plug-in bandwidth uses the one-signed expansion when the pilot sees a
    one-signed integrand and the sign-indefinite expansion otherwise.
    """
    if M < 1:
        raise ValueError("pilot size must be >= 1")
    pts, phi, p, q0 = _draw_pilot(problem, M, seed)
    w_raw = np.abs(phi) * p / q0
    if not (w_raw > 0).any():
        raise EmptyPilotError(
            "empty pilot: pilot never hit the support of |phi| p; "
            "raise the pilot size or widen the trial distribution"
        )
    signed = phi * p / q0
    mode = "is" if (np.all(phi >= 0) or np.all(phi <= 0)) else "signed"
    return _fit_proposal(pts, w_raw, signed, problem, M, bandwidth_rule, bandwidth, mode)


def pilot_snis_estimate(problem: Problem, pilot_samples, weights) -> float:
    """Self-normalized pilot estimate from base weights p~ / q0.

    Invariant (to the bit) under rescaling of the unnormalized target, thanks
    to weight canonicalization.
    """
    pts = np.atleast_2d(np.asarray(pilot_samples, dtype=np.float64))
    bw = np.asarray(weights, dtype=np.float64)
    if not (bw > 0).any():
        raise EmptyPilotError("empty pilot: all base weights are zero")
    bhat = canonical_weights(bw)
    denom = bhat.sum()
    if denom <= 0:
        raise EmptyPilotError("empty pilot: canonical base weights sum to zero")
    phi = np.asarray(problem.integrand(pts), dtype=np.float64)
    return float((phi * bhat).sum() / denom)


def estimate_sis_proposal(
    problem: Problem,
    M: int,
    bandwidth_rule: str = "plugin",
    seed=0,
    bandwidth: float | None = None,
) -> ProposalEstimate:
    """Stage-1 proposal for NSIS: LBFP fit of |phi - I_pilot| p~ / q0 weights."""
    if M < 1:
        raise ValueError("pilot size must be >= 1")
    pts, phi, p, q0 = _draw_pilot(problem, M, seed)
    base = p / q0
    if not (base > 0).any():
        raise EmptyPilotError("empty pilot: target density vanished on the pilot")
    bhat = canonical_weights(base)
    i_pilot = float((phi * bhat).sum() / bhat.sum())
    w_raw = np.abs(phi - i_pilot) * bhat
    if not (w_raw > 0).any():
        raise EmptyPilotError(
            "empty pilot: integrand is constant on the pilot sample, "
            "no self-normalized proposal can be fitted"
        )
    return _fit_proposal(pts, w_raw, None, problem, M, bandwidth_rule, bandwidth, "is")


def _run_clock():
    return time.perf_counter()


def nis_integrate(problem: Problem, config: NisConfig, _method="nis", _phi=None) -> IntegrationResult:
    """Two-stage unnormalized importance sampling estimate."""
    t0 = _run_clock()
    n = config.total_budget
    M = config.pilot_size(_method, problem.dim)
    ss = _seedseq(config.seed)
    seed_pilot, seed_main = ss.spawn(2)
    prob = problem
    if _phi is not None:
        prob = Problem(
            dim=problem.dim,
            target_density=problem.target_density,
            integrand=_phi,
            trial_sampler=problem.trial_sampler,
            trial_density=problem.trial_density,
        )
    prop = estimate_is_proposal(
        prob, M, config.bandwidth_rule, seed_pilot, config.bandwidth
    )
    n_main = n - M
    rng = np.random.default_rng(seed_main)
    x, qv = prop.sample(rng.random((n_main, problem.dim)))
    if np.any(qv <= 0):
        raise RuntimeError("internal error: proposal density zero at its own sample")
    phi_fn = _phi if _phi is not None else problem.integrand
    terms = (
        np.asarray(phi_fn(x), dtype=np.float64)
        * np.asarray(problem.target_density(x), dtype=np.float64)
        / qv
    )
    est = float(terms.mean())
    var = float(terms.var(ddof=1) / n_main) if n_main > 1 else float("nan")
    return IntegrationResult(
        estimate=est,
        within_run_variance=var,
        pilot_size=M,
        main_size=n_main,
        method=_method,
        elapsed=_run_clock() - t0,
        mean_pilot_weight=prop.mean_weight,
        pilot_hits=int((prop.pilot_weights > 0).sum()),
    )


def nis_split_integrate(problem: Problem, config: NisConfig) -> IntegrationResult:
    """NIS applied separately to the positive and negative integrand parts.

    The budget is split evenly between the two one-signed subproblems, which
    restores the super-canonical MSE rate for sign-indefinite integrands.  A
    side whose pilot finds no mass contributes zero with a warning, so
    one-signed integrands degrade gracefully.
    """
    t0 = _run_clock()
    n = config.total_budget
    n_plus = n - n // 2
    ss = _seedseq(config.seed)
    seeds = ss.spawn(2)
    phi = problem.integrand

    def phi_plus(x):
        return np.maximum(np.asarray(phi(x), dtype=np.float64), 0.0)

    def phi_minus(x):
        return np.maximum(-np.asarray(phi(x), dtype=np.float64), 0.0)

    sides = []
    for side_phi, side_n, side_seed, tag in (
        (phi_plus, n_plus, seeds[0], "positive"),
        (phi_minus, n - n_plus, seeds[1], "negative"),
    ):
        cfg = NisConfig(
            total_budget=side_n,
            pilot_fraction=config.pilot_fraction,
            bandwidth_rule=config.bandwidth_rule,
            bandwidth=config.bandwidth,
            seed=side_seed,
        )
        try:
            sides.append(nis_integrate(problem, cfg, _method="nis-split", _phi=side_phi))
        except EmptyPilotError:
            warnings.warn(
                f"{tag} part has no pilot mass; integrand may be one-signed"
            )
            sides.append(None)
    if sides[0] is None and sides[1] is None:
        raise EmptyPilotError("empty pilot: integrand vanished on both pilot samples")
    est = (sides[0].estimate if sides[0] else 0.0) - (
        sides[1].estimate if sides[1] else 0.0
    )
    var = sum(s.within_run_variance for s in sides if s is not None)
    return IntegrationResult(
        estimate=est,
        within_run_variance=var,
        pilot_size=sum(s.pilot_size for s in sides if s),
        main_size=sum(s.main_size for s in sides if s),
        method="nis-split",
        elapsed=_run_clock() - t0,
        mean_pilot_weight=sum(s.mean_pilot_weight for s in sides if s),
        pilot_hits=sum(s.pilot_hits for s in sides if s),
    )


def nsis_integrate(problem: Problem, config: NisConfig) -> IntegrationResult:
    """Two-stage self-normalized importance sampling estimate.

    The target may be unnormalized; the estimate is invariant, bit for bit,
    under rescaling it by a constant.
    """
    t0 = _run_clock()
    n = config.total_budget
    M = config.pilot_size("nsis", problem.dim)
    ss = _seedseq(config.seed)
    seed_pilot, seed_main = ss.spawn(2)
    prop = estimate_sis_proposal(
        problem, M, config.bandwidth_rule, seed_pilot, config.bandwidth
    )
    n_main = n - M
    rng = np.random.default_rng(seed_main)
    x, qv = prop.sample(rng.random((n_main, problem.dim)))
    if np.any(qv <= 0):
        raise RuntimeError("internal error: proposal density zero at its own sample")
    w_raw = np.asarray(problem.target_density(x), dtype=np.float64) / qv
    what = canonical_weights(w_raw)
    wsum = what.sum()
    if wsum <= 0:
        raise EmptyPilotError("empty pilot: all main-stage weights are zero")
    phi = np.asarray(problem.integrand(x), dtype=np.float64)
    est = float((phi * what).sum() / wsum)
    var = float((what**2 * (phi - est) ** 2).sum() / wsum**2)
    return IntegrationResult(
        estimate=est,
        within_run_variance=var,
        pilot_size=M,
        main_size=n_main,
        method="nsis",
        elapsed=_run_clock() - t0,
        mean_pilot_weight=prop.mean_weight,
        pilot_hits=int((prop.pilot_weights > 0).sum()),
    )
