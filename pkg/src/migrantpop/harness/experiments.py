# src/migrantpop/harness/experiments.py
"""Experiment drivers that cross-validate the analytic engine and the sampler.

Each ``run_*`` function takes a validated ExperimentConfig and returns a
Report whose tables and checks are a deterministic function of (config,
seed).  Wall-clock runtimes are recorded on the report object only, never
in a table.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np
from scipy.stats import chi2

from ..analytic import (
    ConvolutionState,
    EmptyState,
    IntensityKernel,
    PoissonState,
    PopulationState,
    SurvivorState,
    convergence_bound,
    convolve_kernels,
    evolve_intensity,
    evolve_kernel,
    evolved_expectation,
    evolved_state_with_immigration,
    functional_gap_bound,
    generator_expectation,
    immigration_intensity,
    poisson_kernel,
    stationary_intensity,
    thin_kernel,
    transport_observable,
)
from ..core import (
    OrderSplitFunctional,
    ProductFunctional,
    ProductSplitFunctional,
    QuadratureSpec,
    Window,
    _gl_segment,
    build_phase_grid,
    lp_integral,
    minlos_check,
    phase_integral,
    spatial_grid,
)
from ..sampler import (
    RngSpec,
    estimate_density,
    estimate_functional,
    sample_batch,
    thin_batch,
)
from .config import ExperimentConfig
from .reports import Report

__all__ = [
    "run_analytic_table",
    "run_convergence",
    "run_density_match",
    "run_fpe_residual",
    "run_identity_suite",
    "run_simulate",
]

# sentinel z for a zero-variance bin that still disagrees with the target;
# finite so it can live in a CSV cell, large enough to fail any z check
_Z_SENTINEL = 1e9


def _z_score(diff: float, se: float, scale: float = 1.0) -> float:
    if se > 0.0:
        return diff / se
    if abs(diff) <= 1e-12 * scale:
        return 0.0
    return math.copysign(_Z_SENTINEL, diff)


def _age_nodes(lo: float, hi: float, spec: QuadratureSpec,
               breaks=()) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes over [lo, hi], split at interior break ages."""
    cuts = [lo] + sorted({float(b) for b in breaks if lo < b < hi}) + [hi]
    nodes, weights = [], []
    for s0, s1 in zip(cuts[:-1], cuts[1:]):
        n, w = _gl_segment(s0, s1, spec.a_nodes)
        nodes.append(n)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def _intensity_components(init: PopulationState) -> list:
    """Poisson summands of an atom-free initial law."""
    if isinstance(init, EmptyState):
        return []
    if isinstance(init, PoissonState):
        return [init.intensity]
    if isinstance(init, ConvolutionState):
        out = []
        for c in init.components:
            out.extend(_intensity_components(c))
        return out
    raise ValueError(
        f"{init.describe()}: this analysis needs an atom-free (Poisson) initial law")


def _kernel_mass(kernel: IntensityKernel, window: Window, spec: QuadratureSpec) -> float:
    grid = build_phase_grid(window, spec, kernel.age_breaks)
    return phase_integral(kernel, grid)


def _mean_count(state: PopulationState, window: Window, spec: QuadratureSpec) -> float:
    """Expected number of points of a population law, any state variant."""
    if isinstance(state, EmptyState):
        return 0.0
    if isinstance(state, PoissonState):
        return _kernel_mass(state.intensity, window, spec)
    if isinstance(state, SurvivorState):
        return state.p
    if isinstance(state, ConvolutionState):
        return sum(_mean_count(c, window, spec) for c in state.components)
    # deterministic configuration
    return float(len(state.config))


# ---------------------------------------------------------------------------
# finite differences in time
# ---------------------------------------------------------------------------

_CENTRAL4 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0        # f(t-2h) .. f(t+2h), no f(t)
_FORWARD4 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


def _ddt(fn, t: float, h: float = 1e-3) -> float:
    """4th-order time derivative; one-sided stencil when t sits near 0."""
    if t >= 2.0 * h:
        vals = np.array([fn(t - 2.0 * h), fn(t - h), fn(t + h), fn(t + 2.0 * h)])
        return float(np.dot(_CENTRAL4, vals) / h)
    vals = np.array([fn(t + k * h) for k in range(5)])
    return float(np.dot(_FORWARD4, vals) / h)


# ---------------------------------------------------------------------------
# density match
# ---------------------------------------------------------------------------

def run_density_match(cfg: ExperimentConfig) -> Report:
    """Empirical (x, a)-histogram of sampled snapshots vs the analytic density.

    Samples at the last configured time, bins the batch on a product grid,
    and compares per-bin mean counts against the quadrature mass of the
    first-order density (evolved initial intensity plus the immigrant
    part).  Needs an atom-free initial law and a one-dimensional window;
    the emitted table has a single spatial bin column.
    """
    report = Report(name="density_match")
    start = time.perf_counter()
    window, rate, spec = cfg.window, cfg.model, cfg.quadrature
    if window.dim != 1:
        raise ValueError("density comparison uses a one-dimensional window")
    components = _intensity_components(cfg.init)
    t = cfg.times[-1]

    kernels = [evolve_intensity(rho, rate, t) for rho in components]
    kernels.append(immigration_intensity(rate, t, window.a_max))

    # immigrant-only populations carry no age mass above t
    a_upper = window.a_max if components or t <= 0.0 else min(t, window.a_max)
    x_edges = np.linspace(float(window.lower[0]), float(window.upper[0]),
                          cfg.density_x_bins + 1)
    a_edges = np.linspace(0.0, a_upper, cfg.density_a_bins + 1)

    batch = sample_batch(cfg.init, rate, window, t, RngSpec(cfg.seed),
                         cfg.replicas, cfg.workers)
    est = estimate_density(batch, [x_edges, a_edges])

    breaks = sorted({b for k in kernels for b in k.age_breaks})
    rows = []
    zs = np.zeros((cfg.density_x_bins, cfg.density_a_bins))
    for i in range(cfg.density_x_bins):
        xs, wx = _gl_segment(float(x_edges[i]), float(x_edges[i + 1]), spec.x_nodes)
        for j in range(cfg.density_a_bins):
            ages, wa = _age_nodes(float(a_edges[j]), float(a_edges[j + 1]), spec, breaks)
            xg = np.repeat(xs, ages.size)[:, None]
            ag = np.tile(ages, xs.size)
            wg = np.outer(wx, wa).ravel()
            mass = sum(float(np.dot(wg, k(xg, ag))) for k in kernels)
            vol = float((x_edges[i + 1] - x_edges[i]) * (a_edges[j + 1] - a_edges[j]))
            analytic = mass / vol
            empirical = float(est.density[i, j])
            se = float(est.se[i, j])
            z = _z_score(empirical - analytic, se, scale=max(1.0, abs(analytic)))
            zs[i, j] = z
            rows.append([0.5 * float(x_edges[i] + x_edges[i + 1]),
                         0.5 * float(a_edges[j] + a_edges[j + 1]),
                         empirical, analytic, se, z])
    report.add_table("density", ["bin_x", "bin_a", "empirical", "analytic", "se", "z"],
                     rows)

    report.add_check("density.within_2se_fraction_min",
                     float(np.mean(np.abs(zs) <= 2.0)), 0.95, at_least=True)
    report.add_check("density.max_abs_z", float(np.max(np.abs(zs))), 4.0)

    counts = batch.counts()
    total_mean = float(np.mean(counts))
    total_se = float(np.std(counts, ddof=1) / math.sqrt(len(batch)))
    total_mass = sum(_kernel_mass(k, window, spec) for k in kernels)
    zt = _z_score(total_mean - total_mass, total_se, scale=max(1.0, total_mass))
    report.add_check("density.total_count_z", abs(zt), 3.0)
    report.runtimes["density_match"] = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# forward-equation residual and stationarity
# ---------------------------------------------------------------------------

def run_fpe_residual(cfg: ExperimentConfig, h: float = 1e-3) -> Report:
    """Time derivative of the evolved product expectation vs the generator.

    For every (time, observable) pair the left side is a 4th-order finite
    difference of the closed-form evolution, the right side applies the
    generator to the law at that time.  The residual tolerance scales with
    the right side: 1e-5 * max(1, |rhs|).  When the hazard is bounded away
    from zero a stationarity section checks that the generator annihilates
    the inflow-survival Poisson state.
    """
    report = Report(name="fpe_residual")
    start = time.perf_counter()
    rate, window, spec = cfg.model, cfg.window, cfg.quadrature
    rows = []
    for t in cfg.times:
        state_t = evolved_state_with_immigration(cfg.init, rate, t, window.a_max)
        for k, obs in enumerate(cfg.theta_suite):
            def mu(s: float, obs=obs) -> float:
                return evolved_expectation(cfg.init, rate, s, obs, window, spec)

            lhs = _ddt(mu, t, h)
            rhs = generator_expectation(state_t, rate, obs, window, spec)
            residual = abs(lhs - rhs)
            tol = 1e-5 * max(1.0, abs(rhs)) if math.isfinite(rhs) else 1e-5
            if all(math.isfinite(v) for v in (lhs, rhs, residual)):
                rows.append([t, obs.label, lhs, rhs, residual, tol])
            report.add_check(f"fpe.residual[t={t:g};th{k:02d}]", residual, tol)
    report.add_table("fpe_residual",
                     ["time", "theta", "lhs", "rhs", "residual", "tolerance"], rows)

    if rate.m_star_lo > 0.0:
        balance = PoissonState(stationary_intensity(rate, window.a_max))
        srows = []
        for k, obs in enumerate(cfg.theta_suite):
            val = generator_expectation(balance, rate, obs, window, spec)
            srows.append([obs.label, val])
            report.add_check(f"stationary.generator[th{k:02d}]", abs(val), 1e-8)
        report.add_table("stationarity", ["theta", "generator_value"], srows)

    report.runtimes["fpe_residual"] = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# convergence to the balance state
# ---------------------------------------------------------------------------

def run_convergence(cfg: ExperimentConfig) -> Report:
    """Decay of the first-order gap to the balance density, with bounds.

    The gap at time t is the sup over spatial nodes of the age L1 distance
    between the time-t density (evolved initial part plus immigrants) and
    the balance density.  A log-linear fit of the gap must recover the
    hazard floor, and the geometric tail bound must dominate pointwise.
    """
    report = Report(name="convergence")
    start = time.perf_counter()
    rate, window, spec = cfg.model, cfg.window, cfg.quadrature
    if rate.m_star_lo <= 0.0:
        raise ValueError("convergence analysis needs a hazard bounded away from zero")
    times = cfg.convergence_times
    if len(times) < 4:
        raise ValueError(f"rate fit needs at least 4 time points, got {len(times)}")
    components = _intensity_components(cfg.init)
    target = stationary_intensity(rate, window.a_max)
    kappa0 = sum(c.kappa for c in components)
    kappa_star = max(kappa0, rate.b_star / rate.m_star_lo)

    xs, _ = spatial_grid(window, spec)
    rows = []
    gaps = []
    bounds = []
    for t in times:
        kernels = [evolve_intensity(c, rate, t) for c in components]
        kernels.append(immigration_intensity(rate, t, window.a_max))
        breaks = set(target.age_breaks)
        for k in kernels:
            breaks.update(k.age_breaks)
        ages, wa = _age_nodes(0.0, window.a_max, spec, breaks)
        xg = np.repeat(xs, ages.size, axis=0)
        ag = np.tile(ages, xs.shape[0])
        diff = sum(k(xg, ag) for k in kernels) - target(xg, ag)
        per_x = np.abs(diff).reshape(xs.shape[0], ages.size) @ wa
        gap = float(np.max(per_x))
        bound = convergence_bound(0.0, kappa_star, 1, rate.m_star_lo, t)
        fbound = functional_gap_bound(3.0 * kappa_star, 0.0, window.volume,
                                      rate.m_star_lo, t)
        rows.append([t, gap, bound, fbound])
        gaps.append(gap)
        bounds.append(bound)
    report.add_table("convergence", ["time", "gap", "bound", "functional_bound"], rows)

    gaps = np.array(gaps)
    bounds = np.array(bounds)
    slack = 1e-12 * max(1.0, 3.0 * kappa_star)
    report.add_check("convergence.bound_excess", float(np.max(gaps - bounds)), slack)

    if np.all(gaps <= slack):
        # already at balance; there is no decay rate to fit
        report.add_check("convergence.zero_gap", float(np.max(gaps)), slack)
    else:
        keep = gaps > slack
        if int(np.count_nonzero(keep)) < 4:
            report.add_check("convergence.fit_rate_rel_err", math.inf, 0.05)
        else:
            slope = float(np.polyfit(np.asarray(times)[keep], np.log(gaps[keep]), 1)[0])
            rel = abs(-slope - rate.m_star_lo) / rate.m_star_lo
            report.add_check("convergence.fit_rate_rel_err", rel, 0.05)
    report.runtimes["convergence"] = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# identity suite
# ---------------------------------------------------------------------------

def _sum_intensity(r1: IntensityKernel, r2: IntensityKernel) -> IntensityKernel:
    sup = None if r1.sup_bound is None or r2.sup_bound is None \
        else r1.sup_bound + r2.sup_bound
    return IntensityKernel(
        fn=lambda x, a: r1(x, a) + r2(x, a),
        kappa=r1.kappa + r2.kappa,
        age_breaks=tuple(sorted(set(r1.age_breaks) | set(r2.age_breaks))),
        sup_bound=sup,
        label=f"{r1.label}+{r2.label}",
    )


def _eval_tuples(window: Window, n: int, count: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic evaluation tuples with distinct positions and mixed ages."""
    xs = np.zeros((count, n, window.dim))
    ages = np.zeros((count, n))
    ext = window.upper - window.lower
    for k in range(count):
        for i in range(n):
            frac = (i + 1.0 + 0.3 * (k + 1.0)) / (n + 2.0)
            xs[k, i] = window.lower + frac * ext
            ages[k, i] = 0.35 + 0.55 * i + 0.2 * k
    return xs, np.minimum(ages, 0.9 * window.a_max)


def _convolve_brute(k1, k2, xs: np.ndarray, ages: np.ndarray) -> np.ndarray:
    """Subset-enumeration convolution of kernels via index combinations."""
    n = ages.shape[1]
    out = np.zeros(xs.shape[0])
    for r in range(n + 1):
        for left in itertools.combinations(range(n), r):
            right = tuple(i for i in range(n) if i not in left)
            out += k1.eval_order(xs[:, left], ages[:, left]) \
                * k2.eval_order(xs[:, right], ages[:, right])
    return out


def _rel_err(lhs, rhs) -> float:
    lhs = np.atleast_1d(np.asarray(lhs, dtype=np.float64))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=np.float64))
    scale = np.maximum(np.abs(rhs), 1e-300)
    return float(np.max(np.abs(lhs - rhs) / scale))


def run_identity_suite(cfg: ExperimentConfig) -> Report:
    """Structural identities with analytic or brute-force counterparts.

    Covers the configuration-series exponential identity, the subset
    splitting identity for product-form and tabulated functionals, kernel
    convolution against enumeration, the thinning identity (analytic and
    sampled), the transport cocycle, and the flow composition identity.
    """
    report = Report(name="identity_suite")
    start = time.perf_counter()
    rate, window, spec = cfg.model, cfg.window, cfg.quadrature
    a_max = window.a_max
    rows = []

    # exponential identity for product functionals at deep truncation
    norm = (1.0 - math.exp(-a_max)) * window.volume
    for c in (-1.0, 0.5, 1.0):
        def g(x, a, c=c):
            return c * np.exp(-np.asarray(a, dtype=np.float64)) / norm

        lhs = lp_integral(ProductFunctional(g), window, 20, spec).value
        grid = build_phase_grid(window, spec)
        rhs = math.exp(phase_integral(g, grid))
        err = _rel_err(lhs, rhs)
        rows.append(["lp_exponential", f"c={c:g}", lhs, rhs, err])
        report.add_check(f"lp.exponential[c={c:g}]", err, 1e-12)

    # subset splitting identity, product form
    def gsplit(x, a):
        return 0.4 * np.exp(-np.asarray(a, dtype=np.float64))

    def hsplit(x, a):
        return 0.2 * np.exp(-0.5 * np.asarray(a, dtype=np.float64))

    lhs, rhs = minlos_check(ProductSplitFunctional(gsplit, hsplit), window,
                            spec.n_max, spec)
    err = _rel_err(lhs, rhs)
    rows.append(["minlos_product", f"n_max={spec.n_max}", lhs, rhs, err])
    report.add_check("minlos.product_rel", err, 1e-9)

    # subset splitting identity, tabulated blocks on a coarse tensor grid;
    # order-3 enumeration cubes the grid size, so keep it small
    coarse = QuadratureSpec(x_nodes=8, a_nodes=12, n_max=3) if window.dim == 1 \
        else QuadratureSpec(x_nodes=4, a_nodes=6, n_max=3)
    table = {
        (1, 0): lambda x1, a1, x2, a2: 0.3 * np.exp(-a1[:, 0]) * (1.0 + 0.5 * x1[:, 0, 0]),
        (0, 1): lambda x1, a1, x2, a2: -0.2 * np.exp(-0.7 * a2[:, 0]),
        (1, 1): lambda x1, a1, x2, a2: 0.15 * np.exp(-a1[:, 0] - 0.5 * a2[:, 0])
        * (0.5 + x1[:, 0, 0] * x2[:, 0, 0]),
        (2, 0): lambda x1, a1, x2, a2: 0.1 * np.exp(-np.sum(a1, axis=1)),
        (2, 1): lambda x1, a1, x2, a2: 0.05 * np.exp(-np.sum(a1, axis=1) - 0.3 * a2[:, 0]),
    }
    split = OrderSplitFunctional(table=table, vacuum=1.0)
    lhs, rhs = minlos_check(split, window, 3, coarse)
    err = _rel_err(lhs, rhs)
    rows.append(["minlos_split", "orders<=3", lhs, rhs, err])
    report.add_check("minlos.split_rel", err, 1e-12)

    # Poisson kernel convolution equals the kernel of the summed density
    if rate.m_star_lo > 0.0:
        rho1 = stationary_intensity(rate, a_max)
    else:
        rho1 = IntensityKernel(fn=lambda x, a: 0.7 * np.exp(-0.8 * np.asarray(a)),
                               kappa=0.875, sup_bound=0.7, label="expdecay")
    rho2 = immigration_intensity(rate, 1.0, a_max)
    conv = convolve_kernels(poisson_kernel(rho1), poisson_kernel(rho2))
    direct = poisson_kernel(_sum_intensity(rho1, rho2))
    for n in (1, 2, 3):
        xs, ages = _eval_tuples(window, n)
        err = _rel_err(conv.eval_order(xs, ages), direct.eval_order(xs, ages))
        rows.append(["poisson_convolution", f"order={n}",
                     float(conv.eval_order(xs, ages)[0]),
                     float(direct.eval_order(xs, ages)[0]), err])
        report.add_check(f"convolution.poisson_order{n}", err, 1e-12)

    # generic convolution against subset enumeration
    k1 = poisson_kernel(rho1)
    k2 = evolve_kernel(poisson_kernel(rho2), rate, 0.4)
    kconv = convolve_kernels(k1, k2)
    xs, ages = _eval_tuples(window, 2)
    brute = _convolve_brute(k1, k2, xs, ages)
    err = _rel_err(kconv.eval_order(xs, ages), brute)
    rows.append(["convolution_brute", "order=2",
                 float(kconv.eval_order(xs, ages)[0]), float(brute[0]), err])
    report.add_check("convolution.brute_order2", err, 1e-12)

    # thinning: kernel identity, then a sampled chi-square on binned counts
    lower, ext = window.lower, window.upper - window.lower

    def q_keep(x, a):
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        u = (x[:, 0] - lower[0]) / ext[0]
        return np.clip((0.3 + 0.5 * np.exp(-a)) * (0.8 + 0.2 * u), 0.0, 1.0)

    thinned_rho = IntensityKernel(
        fn=lambda x, a: q_keep(x, a) * rho2(x, a),
        kappa=rho2.kappa,
        age_breaks=rho2.age_breaks,
        sup_bound=rho2.sup_bound,
        label=f"q*{rho2.label}",
    )
    kthin = thin_kernel(poisson_kernel(rho2), q_keep)
    kdirect = poisson_kernel(thinned_rho)
    worst = 0.0
    sample_lhs = sample_rhs = 0.0
    for n in (1, 2):
        xs, ages = _eval_tuples(window, n)
        lvals = kthin.eval_order(xs, ages)
        rvals = kdirect.eval_order(xs, ages)
        if n == 1:
            sample_lhs, sample_rhs = float(lvals[0]), float(rvals[0])
        worst = max(worst, _rel_err(lvals, rvals))
    rows.append(["thinning_kernel", "orders<=2", sample_lhs, sample_rhs, worst])
    report.add_check("thinning.kernel_rel", worst, 1e-10)

    if window.dim == 1:
        rows.extend(_thinning_chi_square(cfg, rho2, q_keep, report))

    # transport cocycle and flow composition
    xg, _ = spatial_grid(window, spec)
    ag = np.linspace(0.0, a_max, 21)
    xmesh = np.repeat(xg, ag.size, axis=0)
    amesh = np.tile(ag, xg.shape[0])
    for s, t in itertools.product((0.3, 1.1), repeat=2):
        worst = 0.0
        for obs in cfg.theta_suite:
            direct = transport_observable(obs, rate, s + t)
            composed = transport_observable(transport_observable(obs, rate, t), rate, s)
            worst = max(worst, float(np.max(np.abs(composed(xmesh, amesh)
                                                   - direct(xmesh, amesh)))))
        rows.append(["cocycle", f"s={s:g};t={t:g}", worst, 0.0, worst])
        report.add_check(f"cocycle[s={s:g};t={t:g}]", worst, 1e-12)

    for s, t in itertools.product((0.3, 1.1), repeat=2):
        state_s = evolved_state_with_immigration(cfg.init, rate, s, a_max)
        worst = 0.0
        worst_pair = (1.0, 1.0)
        for obs in cfg.theta_suite:
            lhs = evolved_expectation(cfg.init, rate, s + t, obs, window, spec)
            rhs = evolved_expectation(state_s, rate, t, obs, window, spec)
            err = _rel_err(lhs, rhs)
            if err >= worst:
                worst = err
                worst_pair = (lhs, rhs)
        rows.append(["chapman_kolmogorov", f"s={s:g};t={t:g}",
                     worst_pair[0], worst_pair[1], worst])
        report.add_check(f"chapman_kolmogorov[s={s:g};t={t:g}]", worst, 1e-10)

    report.add_table("identities", ["identity", "case", "lhs", "rhs", "error"], rows)
    report.runtimes["identity_suite"] = time.perf_counter() - start
    return report


def _thinning_chi_square(cfg: ExperimentConfig, rho: IntensityKernel, q_keep,
                         report: Report) -> list:
    """Chi-square of thinned snapshot bin counts against q-thinned bin masses.

    Bin counts of a Poisson field are independent Poisson variables, so the
    statistic sums (observed - expected)^2 / expected over cells with the
    cell count as degrees of freedom; cells with expectation below 5 are
    pooled.  One-dimensional windows only.  Returns table rows; appends
    the p-value check.
    """
    window, rate, spec = cfg.window, cfg.model, cfg.quadrature
    t = 1.0
    batch = sample_batch(EmptyState(), rate, window, t, RngSpec(cfg.seed),
                         cfg.replicas, cfg.workers)
    thinned = thin_batch(batch, q_keep, RngSpec(cfg.seed))

    nx, na = 10, 10
    a_hi = min(t, window.a_max)
    x_edges = np.linspace(float(window.lower[0]), float(window.upper[0]), nx + 1)
    a_edges = np.linspace(0.0, a_hi, na + 1)
    est = estimate_density(thinned, [x_edges, a_edges])
    observed = est.mean_counts * len(thinned)

    expected = np.zeros((nx, na))
    for i in range(nx):
        xs, wx = _gl_segment(float(x_edges[i]), float(x_edges[i + 1]), spec.x_nodes)
        for j in range(na):
            ages, wa = _age_nodes(float(a_edges[j]), float(a_edges[j + 1]), spec,
                                  rho.age_breaks)
            xg = np.repeat(xs, ages.size)[:, None]
            wg = np.outer(wx, wa).ravel()
            ag = np.tile(ages, xs.size)
            expected[i, j] = cfg.replicas * float(np.dot(wg, q_keep(xg, ag) * rho(xg, ag)))

    obs_flat = observed.ravel()
    exp_flat = expected.ravel()
    keep = exp_flat >= 5.0
    cells_obs = list(obs_flat[keep])
    cells_exp = list(exp_flat[keep])
    pooled_exp = float(np.sum(exp_flat[~keep]))
    if pooled_exp > 0.0:
        cells_obs.append(float(np.sum(obs_flat[~keep])))
        cells_exp.append(pooled_exp)
    if not cells_exp or sum(cells_exp) < 5.0:
        return []
    stat = float(sum((o - e) ** 2 / e for o, e in zip(cells_obs, cells_exp)))
    df = len(cells_exp)
    p = float(chi2.sf(stat, df))
    report.add_check("thinning.chi2_p_min", p, 0.01, at_least=True)
    return [["thinning_chi2", f"cells={df}", stat, float(df), p]]


# ---------------------------------------------------------------------------
# analytic tables and simulation agreement
# ---------------------------------------------------------------------------

def run_analytic_table(cfg: ExperimentConfig) -> Report:
    """Closed-form product expectations for every (time, observable) pair."""
    report = Report(name="analytic_table")
    start = time.perf_counter()
    rate, window, spec = cfg.model, cfg.window, cfg.quadrature
    rows = []
    values = []
    for t in cfg.times:
        rho_imm = immigration_intensity(rate, t, window.a_max)
        for obs in cfg.theta_suite:
            grid = build_phase_grid(window, spec, rho_imm.age_breaks)
            log_imm = phase_integral(lambda x, a: rho_imm(x, a) * obs(x, a), grid)
            shifted = transport_observable(obs, rate, t)
            init_part = cfg.init.product_expectation(shifted, window, spec)
            value = math.exp(log_imm) * init_part
            rows.append([t, obs.label, value, log_imm, init_part])
            values.append(value)
    report.add_table("analytic",
                     ["time", "theta", "value", "log_immigrant", "initial_factor"],
                     rows)
    values = np.array(values)
    report.add_check("analytic.max_value", float(np.max(values)), 1.0 + 1e-12)
    report.add_check("analytic.min_value_min", float(np.min(values)), 0.0,
                     at_least=True)
    report.runtimes["analytic_table"] = time.perf_counter() - start
    return report


def run_simulate(cfg: ExperimentConfig) -> Report:
    """Monte Carlo snapshots vs closed-form functionals and mean counts."""
    report = Report(name="simulate")
    start = time.perf_counter()
    rate, window, spec = cfg.model, cfg.window, cfg.quadrature
    frows = []
    crows = []
    for t in cfg.times:
        batch = sample_batch(cfg.init, rate, window, t, RngSpec(cfg.seed),
                             cfg.replicas, cfg.workers)
        for k, obs in enumerate(cfg.theta_suite):
            mc, se = estimate_functional(batch, obs)
            analytic = evolved_expectation(cfg.init, rate, t, obs, window, spec)
            z = _z_score(mc - analytic, se, scale=max(1.0, abs(analytic)))
            frows.append([t, obs.label, mc, se, analytic, z])
            report.add_check(f"simulate.functional_z[t={t:g};th{k:02d}]", abs(z), 3.0)
        counts = batch.counts()
        mean_c = float(np.mean(counts))
        se_c = float(np.std(counts, ddof=1) / math.sqrt(len(batch)))
        state_t = evolved_state_with_immigration(cfg.init, rate, t, window.a_max)
        mass = _mean_count(state_t, window, spec)
        zc = _z_score(mean_c - mass, se_c, scale=max(1.0, mass))
        crows.append([t, mean_c, se_c, mass, zc])
        report.add_check(f"simulate.count_z[t={t:g}]", abs(zc), 3.0)
    report.add_table("functional_agreement",
                     ["time", "theta", "mc", "se", "analytic", "z"], frows)
    report.add_table("counts",
                     ["time", "mean_count", "se", "analytic_mass", "z"], crows)
    report.runtimes["simulate"] = time.perf_counter() - start
    return report
