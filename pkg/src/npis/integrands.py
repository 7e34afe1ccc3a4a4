"""Benchmark integration problems with analytic oracles and parametric baselines.

Three families, registered by name:

* ``example1``  odd indicator-windowed integrand against a standard normal,
  in dimensions 1..8; exact value 0 and a closed-form optimal IS variance
* ``bs-call``   European call under Black-Scholes, priced by integrating the
  discounted payoff against a standard normal; closed-form oracle
* ``example3``  two-dimensional posterior-style target known only up to a
  constant, self-normalized estimators only

Each problem carries runnable baselines (crude MC, parametric IS variants)
next to the nonparametric pipelines so studies can report relative
efficiencies against the same oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import ndtr, ndtri

from .nis import (
    IntegrationResult,
    NisConfig,
    Problem,
    canonical_weights,
    nis_integrate,
    nis_split_integrate,
    nsis_integrate,
)

__all__ = [
    "BenchmarkProblem",
    "BsParams",
    "example1",
    "example2",
    "example3",
    "black_scholes_price",
    "discounted_payoff",
    "optimal_drift",
    "get_problem",
    "parse_problem_key",
    "run_estimator",
    "REGISTRY",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)

# Deliberately non-unit constant in front of example3's unnormalized target;
# estimators must produce values independent of it.
_EXAMPLE3_SCALE = 2.7182818


@dataclass
class BenchmarkProblem:
    name: str
    problem: Problem
    oracle_value: float
    oracle_provenance: str
    baseline_methods: tuple[str, ...]
    oracle_optimal_variance: float | None = None
    crude_variance: float | None = None
    direct_sampler: object = None  # rng, n -> points from the normalized target
    nis_defaults: dict = field(default_factory=dict)
    fixed_bandwidths: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.problem.dim


@dataclass(frozen=True)
class BsParams:
    spot: float = 100.0
    rate: float = 0.1
    volatility: float = 0.2
    maturity: float = 1.0
    strike: float = 130.0

    def __post_init__(self):
        if min(self.spot, self.volatility, self.maturity, self.strike) <= 0:
            raise ValueError("Black-Scholes parameters must be positive")


# ----------------------------------------------------------------- example 1

def _normal_pdf_prod(x):
    x = np.atleast_2d(x)
    return np.exp(-0.5 * (x**2).sum(axis=1)) / _SQRT2PI ** x.shape[1]


def _ex1_integrand(x):
    x = np.atleast_2d(x)
    inside = np.all(np.abs(x) <= 1.0, axis=1)
    return x[:, 0] * inside


def _cube_sampler(u, low, high):
    return low + (high - low) * np.atleast_2d(u)


def _cube_density(x, low, high, dim):
    x = np.atleast_2d(x)
    inside = np.all((x >= low) & (x <= high), axis=1)
    return inside / (high - low) ** dim


def _ex1_direct(rng, n, d):
    return ndtri(rng.random((n, d)))


def example1(d: int) -> BenchmarkProblem:
    """Odd integrand on the unit cube against a d-dimensional standard normal."""
    if not 1 <= d <= 8:
        raise ValueError("example1 supports dimensions 1..8")
    phi0 = 1.0 / _SQRT2PI
    phi1 = math.exp(-0.5) / _SQRT2PI
    mass1 = 2.0 * ndtr(1.0) - 1.0  # P(|Z| <= 1)
    ibar = 2.0 * (phi0 - phi1) * mass1 ** (d - 1)
    # E[x1^2 1{cube}] = (mass1 - 2 phi1) * mass1^(d-1), and the mean is zero
    crude_var = (mass1 - 2.0 * phi1) * mass1 ** (d - 1)
    problem = Problem(
        dim=d,
        target_density=_normal_pdf_prod,
        integrand=_ex1_integrand,
        trial_sampler=partial(_cube_sampler, low=-1.0, high=1.0),
        trial_density=partial(_cube_density, low=-1.0, high=1.0, dim=d),
    )
    return BenchmarkProblem(
        name=f"example1?d={d}",
        problem=problem,
        oracle_value=0.0,
        oracle_provenance="closed form (odd integrand, symmetric law)",
        oracle_optimal_variance=ibar**2,
        crude_variance=crude_var,
        baseline_methods=("mc", "is", "nis", "nis-split"),
        direct_sampler=partial(_ex1_direct, d=d),
        nis_defaults={"nis": {"pilot_fraction": 0.15}, "nis-split": {}},
    )


# ----------------------------------------------------------------- example 2

def black_scholes_price(p: BsParams) -> float:
    """Closed-form European call price, the oracle for the payoff integral."""
    st = p.volatility * math.sqrt(p.maturity)
    d1 = (math.log(p.spot / p.strike) + (p.rate + 0.5 * p.volatility**2) * p.maturity) / st
    d2 = d1 - st
    return p.spot * ndtr(d1) - p.strike * math.exp(-p.rate * p.maturity) * ndtr(d2)


def discounted_payoff(p: BsParams, z) -> np.ndarray | float:
    """exp(-rT) (S(T) - K)^+ with S(T) driven by a standard normal draw."""
    z = np.asarray(z, dtype=np.float64)
    st = p.spot * np.exp(
        (p.rate - 0.5 * p.volatility**2) * p.maturity
        + p.volatility * math.sqrt(p.maturity) * z
    )
    return np.exp(-p.rate * p.maturity) * np.maximum(st - p.strike, 0.0)


def _payoff_kink(p: BsParams) -> float:
    return (math.log(p.strike / p.spot) - (p.rate - 0.5 * p.volatility**2) * p.maturity) / (
        p.volatility * math.sqrt(p.maturity)
    )


def optimal_drift(p: BsParams) -> float:
    """Drift maximizing log payoff minus the Gaussian exponent.

    Golden-section search on the smooth region right of the payoff kink; the
    objective is strictly concave there.
    """
    if black_scholes_price(p) <= 0:
        raise ValueError("option has no value; no interior maximum")
    kink = _payoff_kink(p)
    lo, hi = kink + 1e-9, kink + 30.0

    def neg_objective(z):
        f = discounted_payoff(p, z)
        return -(math.log(f) - 0.5 * z * z) if f > 0 else math.inf

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d_ = a + invphi * (b - a)
    fc, fd = neg_objective(c), neg_objective(d_)
    while b - a > 1e-11:
        if fc < fd:
            b, d_, fd = d_, c, fc
            c = b - invphi * (b - a)
            fc = neg_objective(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + invphi * (b - a)
            fd = neg_objective(d_)
    return 0.5 * (a + b)


def _ex2_integrand(x, params):
    return discounted_payoff(params, np.atleast_2d(x)[:, 0])


def _ex2_direct(rng, n):
    return ndtri(rng.random((n, 1)))


def example2(strike: float = 130.0) -> BenchmarkProblem:
    """Call-option payoff integral against a standard normal."""
    params = BsParams(strike=strike)
    problem = Problem(
        dim=1,
        target_density=_normal_pdf_prod,
        integrand=partial(_ex2_integrand, params=params),
        trial_sampler=partial(_cube_sampler, low=-5.0, high=5.0),
        trial_density=partial(_cube_density, low=-5.0, high=5.0, dim=1),
    )
    bench = BenchmarkProblem(
        name=f"bs-call?K={strike:g}",
        problem=problem,
        oracle_value=black_scholes_price(params),
        oracle_provenance="closed form (Black-Scholes)",
        oracle_optimal_variance=0.0,  # non-negative payoff
        baseline_methods=("mc", "cdis", "nis", "nsis"),
        direct_sampler=_ex2_direct,
        nis_defaults={
            "nis": {"pilot_fraction": 4.0 / 9.0},
            "nsis": {"pilot_fraction": 0.05},
        },
    )
    bench.params = params
    return bench


# ----------------------------------------------------------------- example 3

def _ex3_density(x, a, scale):
    x = np.atleast_2d(x)
    sd = 0.3 * a
    inside = (x[:, 0] >= -1.0) & (x[:, 0] <= 4.0)
    gauss = np.exp(-0.5 * ((x[:, 1] - np.abs(x[:, 0])) / sd) ** 2) / (sd * _SQRT2PI)
    return scale * 0.2 * inside * gauss


def _ex3_phi1(x):
    return np.atleast_2d(x)[:, 1]


def _ex3_phi2(x):
    return (np.atleast_2d(x)[:, 0] < 0.0).astype(np.float64)


def _ex3_direct(rng, n, a):
    u = rng.random((n, 2))
    x1 = -1.0 + 5.0 * u[:, 0]
    x2 = np.abs(x1) + 0.3 * a * ndtri(u[:, 1])
    return np.column_stack([x1, x2])


def _box_sampler(u, lows, highs):
    u = np.atleast_2d(u)
    lows = np.asarray(lows)
    highs = np.asarray(highs)
    return lows + (highs - lows) * u


def _box_density(x, lows, highs):
    x = np.atleast_2d(x)
    lows = np.asarray(lows)
    highs = np.asarray(highs)
    inside = np.all((x >= lows) & (x <= highs), axis=1)
    return inside / np.prod(highs - lows)


def example3(a: float, phi: int = 1) -> BenchmarkProblem:
    """Posterior-style 2-d target known only up to a constant.

    ``phi=1`` integrates the second coordinate (truth 1.7), ``phi=2`` the
    probability of a negative first coordinate (truth 0.2).  The uniform box
    proposal doubles as trial distribution and as the self-normalized IS
    baseline.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if phi not in (1, 2):
        raise ValueError("phi must be 1 or 2")
    lows, highs = np.array([-4.0, -4.0]), np.array([7.0, 8.0])
    problem = Problem(
        dim=2,
        target_density=partial(_ex3_density, a=a, scale=_EXAMPLE3_SCALE),
        integrand=_ex3_phi1 if phi == 1 else _ex3_phi2,
        trial_sampler=partial(_box_sampler, lows=lows, highs=highs),
        trial_density=partial(_box_density, lows=lows, highs=highs),
    )
    oracle = 1.7 if phi == 1 else 0.2
    return BenchmarkProblem(
        name=f"example3?a={a:g}&phi={phi}",
        problem=problem,
        oracle_value=oracle,
        oracle_provenance="closed form, cross-checked by direct simulation",
        baseline_methods=("mc", "sis", "nsis"),
        direct_sampler=partial(_ex3_direct, a=a),
        nis_defaults={"nsis": {"pilot_fraction": 0.2}},
        fixed_bandwidths={"nsis": {1250: 1.54, 5000: 1.224, 10000: 1.09}},
    )


# ----------------------------------------------------------------- baselines

def _result(estimate, variance, n, method, t0):
    import time

    return IntegrationResult(
        estimate=float(estimate),
        within_run_variance=float(variance),
        pilot_size=0,
        main_size=n,
        method=method,
        elapsed=time.perf_counter() - t0,
        mean_pilot_weight=float("nan"),
        pilot_hits=0,
    )


def _run_mc(bench: BenchmarkProblem, n: int, seed) -> IntegrationResult:
    import time

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    x = bench.direct_sampler(rng, n)
    vals = np.asarray(bench.problem.integrand(x), dtype=np.float64)
    return _result(vals.mean(), vals.var(ddof=1) / n, n, "mc", t0)


def _run_uniform_is(bench: BenchmarkProblem, n: int, seed) -> IntegrationResult:
    import time

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    u = rng.random((n, bench.dim))
    x = bench.problem.trial_sampler(u)
    terms = (
        np.asarray(bench.problem.integrand(x), dtype=np.float64)
        * np.asarray(bench.problem.target_density(x), dtype=np.float64)
        / np.asarray(bench.problem.trial_density(x), dtype=np.float64)
    )
    return _result(terms.mean(), terms.var(ddof=1) / n, n, "is", t0)


def _run_cdis(bench: BenchmarkProblem, n: int, seed) -> IntegrationResult:
    """Change-of-drift IS: standard normal proposal shifted to the payoff's tilt optimum."""
    import time

    t0 = time.perf_counter()
    drift = optimal_drift(bench.params)
    rng = np.random.default_rng(seed)
    z = drift + ndtri(rng.random(n))
    lr = np.exp(-drift * z + 0.5 * drift * drift)
    terms = discounted_payoff(bench.params, z) * lr
    return _result(terms.mean(), terms.var(ddof=1) / n, n, "cdis", t0)


def _run_sis_uniform(bench: BenchmarkProblem, n: int, seed) -> IntegrationResult:
    """Self-normalized IS from the uniform box proposal."""
    import time

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    u = rng.random((n, bench.dim))
    x = bench.problem.trial_sampler(u)
    w = canonical_weights(
        np.asarray(bench.problem.target_density(x), dtype=np.float64)
        / np.asarray(bench.problem.trial_density(x), dtype=np.float64)
    )
    phi = np.asarray(bench.problem.integrand(x), dtype=np.float64)
    wsum = w.sum()
    est = float((phi * w).sum() / wsum)
    var = float((w**2 * (phi - est) ** 2).sum() / wsum**2)
    return _result(est, var, n, "sis", t0)


def run_estimator(
    bench: BenchmarkProblem,
    method: str,
    n: int,
    seed,
    pilot_fraction: float | None = None,
    bandwidth_rule: str | None = None,
    bandwidth: float | None = None,
) -> IntegrationResult:
    """Run one estimator on a benchmark problem with its per-problem defaults."""
    if method == "mc":
        return _run_mc(bench, n, seed)
    if method == "is":
        return _run_uniform_is(bench, n, seed)
    if method == "cdis":
        return _run_cdis(bench, n, seed)
    if method == "sis":
        return _run_sis_uniform(bench, n, seed)
    if method not in ("nis", "nis-split", "nsis"):
        raise ValueError(f"unknown method {method!r}")
    defaults = bench.nis_defaults.get(method, {})
    lam = pilot_fraction if pilot_fraction is not None else defaults.get("pilot_fraction")
    rule = bandwidth_rule
    h = bandwidth
    if rule is None:
        fixed = bench.fixed_bandwidths.get(method, {})
        if h is None and n in fixed:
            rule, h = "fixed", fixed[n]
        else:
            rule = defaults.get("bandwidth_rule", "plugin")
    cfg = NisConfig(
        total_budget=n,
        pilot_fraction=lam,
        bandwidth_rule=rule,
        bandwidth=h,
        seed=seed,
    )
    if method == "nis":
        return nis_integrate(bench.problem, cfg)
    if method == "nis-split":
        return nis_split_integrate(bench.problem, cfg)
    return nsis_integrate(bench.problem, cfg)


REGISTRY = {
    "example1": lambda **kw: example1(int(kw.get("d", 1))),
    "bs-call": lambda **kw: example2(float(kw.get("K", 130.0))),
    "example3": lambda **kw: example3(float(kw.get("a", 0.75)), int(kw.get("phi", 1))),
}


def parse_problem_key(key: str) -> tuple[str, dict]:
    """Split ``name?k=v&k2=v2`` into the registry name and parameter dict."""
    if "?" in key:
        name, _, query = key.partition("?")
        params = {}
        for item in query.split("&"):
            if not item:
                continue
            if "=" not in item:
                raise ValueError(f"bad problem parameter {item!r} in {key!r}")
            k, _, v = item.partition("=")
            params[k] = v
        return name, params
    return key, {}


def get_problem(key: str, **overrides) -> BenchmarkProblem:
    name, params = parse_problem_key(key)
    params.update(overrides)
    if name not in REGISTRY:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name](**params)
