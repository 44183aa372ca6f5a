# src/migrantpop/analytic.py
"""Closed-form evolution engine for age-structured migrant populations.

The model: individuals enter the region at spatial rate b(x) with age 0,
age deterministically at unit speed, and leave with age- and
location-dependent hazard m(x, a).  Individuals neither move nor interact,
which is what makes the time-t law available in closed form.

The engine works at the level of expectations of multiplicative observables
built from a damped test function theta with values in (-1, 0].  The law at
time t factorizes into an immigrant part, a spatial Poisson field whose
intensity is the inflow rate thinned by survival and cut off at age t, and
the initial population transported along the age flow and thinned by its
survival probability.  Both parts, the generator applied to a product
observable, correlation-kernel transport, and the norm and convergence
bounds all live here.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    FiniteConfiguration,
    PhaseGrid,
    QuadratureSpec,
    TemperingWeight,
    Window,
    build_phase_grid,
    exp_decay_weight,
    integrate_age_segments,
    phase_integral,
    spatial_grid,
)

__all__ = [
    "RateModel",
    "ConstantRateModel",
    "SeparableExponentialRateModel",
    "TabulatedRateModel",
    "age_saturation",
    "SeparatingObservable",
    "TransportedObservable",
    "transport_observable",
    "IntensityKernel",
    "immigration_intensity",
    "stationary_intensity",
    "evolve_intensity",
    "poisson_log_expectation",
    "EmptyState",
    "PoissonState",
    "DeterministicState",
    "SurvivorState",
    "ConvolutionState",
    "evolved_state_with_immigration",
    "evolved_expectation",
    "generator_expectation",
    "CorrelationKernel",
    "poisson_kernel",
    "evolve_kernel",
    "thin_kernel",
    "convolve_kernels",
    "kernel_norm",
    "banach_norm",
    "convergence_bound",
    "functional_gap_bound",
    "default_a_max",
]

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# rate models
# ---------------------------------------------------------------------------

class RateModel:
    """Inflow rate b(x) and departure hazard m(x, a) with declared bounds.

    Subclasses provide vectorized ``b``/``m`` evaluators and the cumulative
    hazard M(x; a0, a1), the integral of the hazard along the age flow.  The
    declared bounds are contracts: 0 <= b <= b_star and
    m_star_lo <= m <= m_star_up pointwise.
    """

    kind: str
    b_star: float
    m_star_lo: float
    m_star_up: float

    def b(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def m(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cumulative_hazard(self, x: np.ndarray, a0, a1) -> np.ndarray:
        """Integral of m(x, .) from a0 to a1; requires a1 >= a0 elementwise."""
        raise NotImplementedError

    def b_mass(self, window: Window) -> float:
        """Integral of b over the window, used for immigrant counts."""
        raise NotImplementedError

    def describe(self) -> str:
        return f"{self.kind}(b_star={self.b_star:g}, m in [{self.m_star_lo:g}, {self.m_star_up:g}])"

    def _check_bounds(self) -> None:
        if not (math.isfinite(self.b_star) and self.b_star >= 0.0):
            raise ValueError("b_star must be finite and nonnegative")
        if not (0.0 <= self.m_star_lo <= self.m_star_up) or not math.isfinite(self.m_star_up):
            raise ValueError("hazard bounds must satisfy 0 <= m_star_lo <= m_star_up < inf")

    @staticmethod
    def _age_pair(x: np.ndarray, a0, a1) -> tuple[np.ndarray, np.ndarray]:
        n = np.asarray(x, dtype=np.float64).reshape(-1, np.asarray(x).shape[-1]).shape[0]
        lo = np.broadcast_to(np.asarray(a0, dtype=np.float64), (n,)).astype(np.float64)
        hi = np.broadcast_to(np.asarray(a1, dtype=np.float64), (n,)).astype(np.float64)
        if np.any(hi < lo):
            raise ValueError("cumulative hazard needs a1 >= a0")
        if np.any(lo < 0.0):
            raise ValueError("ages must be nonnegative")
        return lo, hi


class ConstantRateModel(RateModel):
    """Spatially flat inflow b0 and age-independent hazard m0."""

    kind = "constant"

    def __init__(self, b0: float, m0: float):
        if b0 < 0.0 or m0 < 0.0:
            raise ValueError("rates must be nonnegative")
        self.b0 = float(b0)
        self.m0 = float(m0)
        self.b_star = self.b0
        self.m_star_lo = self.m0
        self.m_star_up = self.m0
        self._check_bounds()

    def b(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.full(x.shape[0], self.b0)

    def m(self, x, a):
        a = np.asarray(a, dtype=np.float64)
        return np.full(a.shape, self.m0)

    def cumulative_hazard(self, x, a0, a1):
        lo, hi = self._age_pair(x, a0, a1)
        return self.m0 * (hi - lo)

    def b_mass(self, window: Window) -> float:
        return self.b0 * window.volume

    def describe(self) -> str:
        return f"constant(b={self.b0:g}, m={self.m0:g})"


class SeparableExponentialRateModel(RateModel):
    """Exponentially localized inflow with an exponentially relaxing hazard.

    b(x) = b0 * exp(-b_decay * |x - center|_1)
    m(x, a) = m_base + m_amp * exp(-m_space_decay * |x - center|_1) * exp(-m_age_decay * a)

    The age profile integrates in closed form, so the cumulative hazard is
        m_base * (a1 - a0) + m_amp * s(x) * (exp(-k a0) - exp(-k a1)) / k
    with s the spatial factor and k = m_age_decay (the k -> 0 limit is the
    plain constant-profile product).
    """

    kind = "separable-exponential"

    def __init__(self, b0: float, m_base: float, m_amp: float, center=0.0,
                 b_decay: float = 1.0, m_space_decay: float = 0.0, m_age_decay: float = 1.0):
        if b0 < 0.0 or m_base < 0.0 or m_amp < 0.0:
            raise ValueError("rates must be nonnegative")
        if b_decay < 0.0 or m_space_decay < 0.0 or m_age_decay < 0.0:
            raise ValueError("decay constants must be nonnegative")
        self.b0 = float(b0)
        self.m_base = float(m_base)
        self.m_amp = float(m_amp)
        self.center = np.atleast_1d(np.asarray(center, dtype=np.float64))
        self.b_decay = float(b_decay)
        self.m_space_decay = float(m_space_decay)
        self.m_age_decay = float(m_age_decay)
        self.b_star = self.b0
        self.m_star_lo = self.m_base
        self.m_star_up = self.m_base + self.m_amp
        self._check_bounds()

    def _dist(self, x: np.ndarray) -> np.ndarray:
        return np.sum(np.abs(np.asarray(x, dtype=np.float64) - self.center), axis=-1)

    def b(self, x):
        return self.b0 * np.exp(-self.b_decay * self._dist(x))

    def m(self, x, a):
        s = np.exp(-self.m_space_decay * self._dist(x))
        return self.m_base + self.m_amp * s * np.exp(-self.m_age_decay * np.asarray(a, dtype=np.float64))

    def cumulative_hazard(self, x, a0, a1):
        lo, hi = self._age_pair(x, a0, a1)
        s = np.exp(-self.m_space_decay * self._dist(x))
        base = self.m_base * (hi - lo)
        k = self.m_age_decay
        if k == 0.0:
            return base + self.m_amp * s * (hi - lo)
        return base + self.m_amp * s * (np.exp(-k * lo) - np.exp(-k * hi)) / k

    def b_mass(self, window: Window) -> float:
        # The L1 distance factorizes over axes, so the integral is a product
        # of 1-d integrals of exp(-b_decay |u - c_j|) over [lo_j, hi_j].
        total = self.b0
        for j in range(window.dim):
            lo = float(window.lower[j]) - float(self.center[j])
            hi = float(window.upper[j]) - float(self.center[j])
            k = self.b_decay
            if k == 0.0:
                total *= hi - lo
                continue
            total *= _exp_abs_integral(lo, hi, k)
        return total


def _exp_abs_integral(lo: float, hi: float, k: float) -> float:
    """Integral of exp(-k |u|) over [lo, hi] for k > 0."""
    def anti(u: float) -> float:
        # antiderivative vanishing at 0
        if u >= 0.0:
            return (1.0 - math.exp(-k * u)) / k
        return -(1.0 - math.exp(k * u)) / k
    return anti(hi) - anti(lo)


class TabulatedRateModel(RateModel):
    """Rates given on a regular grid: nearest node in x, linear in age.

    ``x_axes`` lists the per-axis node positions; ``b_values`` has one value
    per spatial node (C-order over axes), ``m_values`` adds a trailing age
    axis over ``a_nodes``.  The age profile is interpolated piecewise
    linearly and held constant beyond the last node, keeping the declared
    hazard bounds valid for all ages.  Cumulative hazards are computed by
    adaptive Simpson quadrature (absolute tolerance 1e-12) after splitting
    at the age knots, where the rule terminates immediately on each linear
    piece.
    """

    kind = "tabulated-grid"

    def __init__(self, x_axes: Sequence[np.ndarray], a_nodes: np.ndarray,
                 b_values: np.ndarray, m_values: np.ndarray):
        self.x_axes = [np.asarray(ax, dtype=np.float64) for ax in x_axes]
        if not 1 <= len(self.x_axes) <= 2:
            raise ValueError("tabulated rates support 1 or 2 spatial axes")
        for ax in self.x_axes:
            if ax.ndim != 1 or ax.shape[0] < 1 or np.any(np.diff(ax) <= 0.0):
                raise ValueError("axis nodes must be strictly increasing 1-d arrays")
        self.a_nodes = np.asarray(a_nodes, dtype=np.float64)
        if self.a_nodes.ndim != 1 or self.a_nodes.shape[0] < 2 or np.any(np.diff(self.a_nodes) <= 0.0):
            raise ValueError("age nodes must be strictly increasing with at least 2 entries")
        shape = tuple(ax.shape[0] for ax in self.x_axes)
        self.b_values = np.asarray(b_values, dtype=np.float64).reshape(shape)
        self.m_values = np.asarray(m_values, dtype=np.float64).reshape(shape + (self.a_nodes.shape[0],))
        if np.any(self.b_values < 0.0) or np.any(self.m_values < 0.0):
            raise ValueError("tabulated rates must be nonnegative")
        self.b_star = float(np.max(self.b_values))
        self.m_star_lo = float(np.min(self.m_values))
        self.m_star_up = float(np.max(self.m_values))
        self._check_bounds()

    def _nearest_index(self, x: np.ndarray) -> tuple[np.ndarray, ...]:
        x = np.asarray(x, dtype=np.float64)
        idx = []
        for j, ax in enumerate(self.x_axes):
            i = np.searchsorted(ax, x[:, j])
            i = np.clip(i, 0, ax.shape[0] - 1)
            left = np.clip(i - 1, 0, ax.shape[0] - 1)
            pick_left = np.abs(x[:, j] - ax[left]) <= np.abs(ax[i] - x[:, j])
            idx.append(np.where(pick_left, left, i))
        return tuple(idx)

    def b(self, x):
        return self.b_values[self._nearest_index(x)]

    def m(self, x, a):
        rows = self.m_values[self._nearest_index(x)]
        a = np.clip(np.asarray(a, dtype=np.float64), self.a_nodes[0], self.a_nodes[-1])
        i = np.clip(np.searchsorted(self.a_nodes, a), 1, self.a_nodes.shape[0] - 1)
        a0, a1 = self.a_nodes[i - 1], self.a_nodes[i]
        w = (a - a0) / (a1 - a0)
        left = rows[np.arange(rows.shape[0]), i - 1]
        right = rows[np.arange(rows.shape[0]), i]
        return (1.0 - w) * left + w * right

    def cumulative_hazard(self, x, a0, a1):
        lo, hi = self._age_pair(x, a0, a1)
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(lo.shape[0])
        for i in range(lo.shape[0]):
            xi = x[i:i + 1]
            prof = lambda a: self.m(np.repeat(xi, np.size(a), axis=0), np.atleast_1d(a))
            out[i] = _adaptive_simpson_with_knots(prof, float(lo[i]), float(hi[i]),
                                                  self.a_nodes, tol=1e-12)
        return out

    def b_mass(self, window: Window) -> float:
        # Nearest-node b is piecewise constant on the Voronoi cells of the
        # axis nodes; sum cell overlaps with the window exactly.
        def cells(ax: np.ndarray, lo: float, hi: float) -> np.ndarray:
            edges = np.concatenate([[lo], 0.5 * (ax[1:] + ax[:-1]), [hi]]) if ax.shape[0] > 1 \
                else np.array([lo, hi])
            edges = np.clip(edges, lo, hi)
            return np.maximum(np.diff(edges), 0.0)

        lengths = [cells(ax, float(window.lower[j]), float(window.upper[j]))
                   for j, ax in enumerate(self.x_axes)]
        if len(lengths) == 1:
            return float(np.dot(lengths[0], self.b_values))
        return float(lengths[0] @ self.b_values @ lengths[1])


def _adaptive_simpson_with_knots(fn, lo: float, hi: float, knots: np.ndarray, tol: float) -> float:
    if hi == lo:
        return 0.0
    inner = [float(k) for k in knots if lo < k < hi]
    edges = [lo] + inner + [hi]
    seg_tol = tol / max(len(edges) - 1, 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        fa, fm, fb = (float(fn(u)[0]) for u in (a, 0.5 * (a + b), b))
        total += _simpson_recurse(fn, a, b, fa, fm, fb, seg_tol, depth=24)
    return total


def _simpson_recurse(fn, a: float, b: float, fa: float, fm: float, fb: float,
                     tol: float, depth: int) -> float:
    mid = 0.5 * (a + b)
    lm = 0.5 * (a + mid)
    rm = 0.5 * (mid + b)
    flm = float(fn(lm)[0])
    frm = float(fn(rm)[0])
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    left = (mid - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - mid) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    return (_simpson_recurse(fn, a, mid, fa, flm, fm, 0.5 * tol, depth - 1)
            + _simpson_recurse(fn, mid, b, fm, frm, fb, 0.5 * tol, depth - 1))


def default_a_max(rate: RateModel) -> float:
    """Age truncation: 40 hazard e-foldings, or 200 when the hazard can vanish."""
    if rate.m_star_lo > 0.0:
        return 40.0 / rate.m_star_lo
    logger.warning("hazard lower bound is 0; using fallback age truncation a_max = 200")
    return 200.0


# ---------------------------------------------------------------------------
# damped test observables
# ---------------------------------------------------------------------------

def age_saturation(a: np.ndarray) -> np.ndarray:
    """Saturating age profile a / (1 + a), increasing from 0 toward 1."""
    a = np.asarray(a, dtype=np.float64)
    return a / (1.0 + a)


class SeparatingObservable:
    """Damped test function theta(x, a) = (1 + vartheta(x)) * damp(x, a) - 1.

    Here damp(x, a) = exp(-tau * psi(x) * a / (1 + a)) with psi a positive
    tempering weight and tau >= 0 a damping strength; vartheta is a
    continuous spatial profile with values in (-1, 0] and compact support
    inside the window.  The family separates population laws through the
    multiplicative product observable, and every value of theta stays in
    (-1, 0].

    Construction validates the range constraints on a dense grid over the
    window and records the grid supremum of |theta| / psi as the diagnostic
    ``c_theta``.  The age derivative is available in closed form, which the
    generator needs.
    """

    def __init__(self, vartheta: Callable[[np.ndarray], np.ndarray], tau: float,
                 psi: TemperingWeight, window: Window, validate: bool = True,
                 label: str = ""):
        if not (math.isfinite(tau) and tau >= 0.0):
            raise ValueError(f"tau must be finite and nonnegative, got {tau}")
        self.vartheta = vartheta
        self.tau = float(tau)
        self.psi = psi
        self.window = window
        self.label = label or "theta"
        self.c_theta = math.nan
        if validate:
            self._validate_on_grid()

    def __call__(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        damp = np.exp(-self.tau * self.psi(x) * age_saturation(a))
        return (1.0 + np.asarray(self.vartheta(x), dtype=np.float64)) * damp - 1.0

    def dda(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Age derivative: -(1 + vartheta) * tau * psi * damp / (1 + a)^2."""
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        p = self.psi(x)
        damp = np.exp(-self.tau * p * age_saturation(a))
        return -(1.0 + np.asarray(self.vartheta(x), dtype=np.float64)) * self.tau * p * damp \
            / (1.0 + a) ** 2

    def at_age_zero(self, x: np.ndarray) -> np.ndarray:
        """theta(x, 0) = vartheta(x): the damping factor is 1 at age 0."""
        return np.asarray(self.vartheta(np.asarray(x, dtype=np.float64)), dtype=np.float64)

    def product(self, other: "SeparatingObservable") -> "SeparatingObservable":
        """Observable whose product observable is the pointwise product.

        Profiles combine as v'' = v + v' + v v' and damping strengths add,
        because (1 + v'')= (1 + v)(1 + v') and the exponents are additive.
        """
        if other.psi is not self.psi:
            raise ValueError("product requires a shared tempering weight")
        mine, theirs = self.vartheta, other.vartheta

        def combined(x: np.ndarray) -> np.ndarray:
            u = np.asarray(mine(x), dtype=np.float64)
            v = np.asarray(theirs(x), dtype=np.float64)
            return u + v + u * v

        return SeparatingObservable(combined, self.tau + other.tau, self.psi, self.window,
                                    validate=False,
                                    label=f"{self.label}*{other.label}")

    def _validate_on_grid(self) -> None:
        nx = 65
        axes = [np.linspace(float(self.window.lower[j]), float(self.window.upper[j]), nx)
                for j in range(self.window.dim)]
        if self.window.dim == 1:
            xg = axes[0][:, None]
        else:
            xg = np.array(list(itertools.product(*axes)))
        v = np.asarray(self.vartheta(xg), dtype=np.float64)
        if np.any(v <= -1.0) or np.any(v > 0.0):
            raise ValueError("vartheta must take values in (-1, 0]")
        ages = np.concatenate([np.linspace(0.0, self.window.a_max, 33), [1e6]])
        ratios = []
        for a0 in ages:
            th = self(xg, np.full(xg.shape[0], a0))
            if np.any(th <= -1.0) or np.any(th > 1e-15):
                raise ValueError("theta must take values in (-1, 0]")
            dth = self.dda(xg, np.full(xg.shape[0], a0))
            p = self.psi(xg)
            if np.any(np.abs(dth) > self.tau * p * (1.0 + 1e-12) + 1e-15):
                raise ValueError("age derivative exceeds tau * psi bound")
            ratios.append(np.max(np.abs(th) / p))
        self.c_theta = float(max(ratios))


class TransportedObservable:
    """Observable pulled back along the age flow over a horizon t.

    Evaluates base(x, a + t) * exp(-M(x; a, a + t)): the test value the
    individual will carry after surviving t more time units, weighted by its
    survival probability.  Transporting twice composes additively in the
    horizon, which the flow identity tests rely on.
    """

    def __init__(self, base, rate: RateModel, t: float):
        if not (math.isfinite(t) and t >= 0.0):
            raise ValueError(f"transport horizon must be finite and nonnegative, got {t}")
        self.base = base
        self.rate = rate
        self.t = float(t)
        self.label = f"{getattr(base, 'label', 'theta')}@+{t:g}"

    def __call__(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        survive = np.exp(-self.rate.cumulative_hazard(x, a, a + self.t))
        return np.asarray(self.base(x, a + self.t), dtype=np.float64) * survive


def transport_observable(obs, rate: RateModel, t: float) -> TransportedObservable:
    """Pull an observable back along the age flow by t with survival damping."""
    return TransportedObservable(obs, rate, t)


# ---------------------------------------------------------------------------
# intensity kernels and Poisson expectations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntensityKernel:
    """First-order density rho(x, a) of a spatial Poisson field.

    ``kappa`` bounds the age integral sup_x int rho(x, a) da; ``sup_bound``
    (optional) bounds rho pointwise on the window and enables rejection
    sampling; ``age_breaks`` lists ages where rho jumps so quadrature can
    split there; ``tail_mass`` reports how much age mass the window
    truncation discards (diagnostic only).
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    kappa: float
    age_breaks: tuple = ()
    sup_bound: float | None = None
    tail_mass: float = 0.0
    label: str = "intensity"

    def __call__(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=np.float64),
                                  np.asarray(a, dtype=np.float64)), dtype=np.float64)

    @classmethod
    def zero(cls) -> "IntensityKernel":
        return cls(fn=lambda x, a: np.zeros(np.asarray(a).shape), kappa=0.0,
                   sup_bound=0.0, label="zero")


def immigration_intensity(rate: RateModel, t: float, a_max: float | None = None) -> IntensityKernel:
    """Density of the immigrant part at time t: inflow thinned by survival.

    rho_t(x, a) = b(x) * exp(-M(x; 0, a)) for a < t and 0 otherwise.  Only
    ages below t can have been born since the start, and a point born a time
    units ago must have survived its whole life so far.  The age cut at
    a = t is a genuine jump and is declared as a break.
    """
    if not (math.isfinite(t) and t >= 0.0):
        raise ValueError(f"time must be finite and nonnegative, got {t}")

    def fn(x: np.ndarray, a: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        out = np.zeros(a.shape)
        mask = a < t
        if np.any(mask):
            xm = x[mask]
            am = a[mask]
            out[mask] = rate.b(xm) * np.exp(-rate.cumulative_hazard(xm, 0.0, am))
        return out

    if rate.m_star_lo > 0.0:
        kappa = rate.b_star * (1.0 - math.exp(-rate.m_star_lo * t)) / rate.m_star_lo
    else:
        kappa = rate.b_star * t
    breaks = (t,) if (a_max is None or t < a_max) and t > 0.0 else ()
    return IntensityKernel(fn=fn, kappa=kappa, age_breaks=breaks, sup_bound=rate.b_star,
                           label=f"immigration(t={t:g})")


def stationary_intensity(rate: RateModel, a_max: float | None = None) -> IntensityKernel:
    """Equilibrium density b(x) * exp(-M(x; 0, a)): inflow balanced by survival.

    Meaningful when the hazard is bounded away from zero; the age integral
    is then at most b_star / m_star_lo.  ``a_max`` (if given) is only used
    to report the truncated tail mass bound.
    """

    def fn(x: np.ndarray, a: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        return rate.b(x) * np.exp(-rate.cumulative_hazard(x, 0.0, a))

    if rate.m_star_lo > 0.0:
        kappa = rate.b_star / rate.m_star_lo
        tail = 0.0 if a_max is None else rate.b_star * math.exp(-rate.m_star_lo * a_max) / rate.m_star_lo
    else:
        kappa = math.inf
        tail = math.inf if a_max is not None else 0.0
    return IntensityKernel(fn=fn, kappa=kappa, sup_bound=rate.b_star, tail_mass=tail,
                           label="stationary")


def evolve_intensity(rho: IntensityKernel, rate: RateModel, t: float) -> IntensityKernel:
    """Transport a Poisson density along the age flow with survival thinning.

    The image density at age a >= t is rho(x, a - t) * exp(-M(x; a - t, a));
    ages below t are impossible for pre-existing individuals and get density
    0.  Ages exactly t (initial age 0) stay on this side of the cut.
    """
    if not (math.isfinite(t) and t >= 0.0):
        raise ValueError(f"time must be finite and nonnegative, got {t}")
    if t == 0.0:
        return rho

    def fn(x: np.ndarray, a: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        out = np.zeros(a.shape)
        mask = a >= t
        if np.any(mask):
            xm = x[mask]
            born_age = a[mask] - t
            out[mask] = rho(xm, born_age) * np.exp(-rate.cumulative_hazard(xm, born_age, a[mask]))
        return out

    breaks = (t,) + tuple(b + t for b in rho.age_breaks)
    return IntensityKernel(
        fn=fn,
        kappa=rho.kappa * math.exp(-rate.m_star_lo * t),
        age_breaks=breaks,
        sup_bound=rho.sup_bound,
        label=f"evolved({rho.label}, t={t:g})",
    )


def poisson_log_expectation(rho: IntensityKernel, obs, window: Window,
                            spec: QuadratureSpec) -> float:
    """log of the Poisson product expectation: the integral of rho * obs.

    The product observable of a Poisson field with density rho averages to
    exp(int rho * theta); this returns the exponent, which is <= 0 whenever
    theta <= 0.
    """
    grid = build_phase_grid(window, spec, rho.age_breaks)
    return phase_integral(lambda x, a: rho(x, a) * np.asarray(obs(x, a), dtype=np.float64), grid)


# ---------------------------------------------------------------------------
# population states
# ---------------------------------------------------------------------------

class PopulationState:
    """Law of a random finite population, closed under the time evolution.

    The variants form a small algebra: empty, Poisson with a given density,
    a deterministic configuration, an independently-retained single point
    (the image of a deterministic point after survival thinning), and finite
    convolutions (independent superpositions).  Two expectations drive
    everything: the product observable mean and the aging/departure part of
    the generator, which acts on products by a Leibniz rule.
    """

    def product_expectation(self, obs, window: Window, spec: QuadratureSpec) -> float:
        raise NotImplementedError

    def aging_departure_expectation(self, obs: SeparatingObservable, rate: RateModel,
                                    window: Window, spec: QuadratureSpec) -> float:
        """Mean of sum_i (d_a theta - m theta)(x_i, a_i) * prod_{j != i} (1 + theta_j)."""
        raise NotImplementedError

    def evolved(self, rate: RateModel, t: float) -> "PopulationState":
        """Image of this law under aging and survival over t (no immigration)."""
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


class EmptyState(PopulationState):
    """Deterministically empty population."""

    def product_expectation(self, obs, window, spec):
        return 1.0

    def aging_departure_expectation(self, obs, rate, window, spec):
        return 0.0

    def evolved(self, rate, t):
        return self

    def describe(self):
        return "empty"


@dataclass(frozen=True)
class PoissonState(PopulationState):
    """Spatial Poisson field with a given intensity density."""

    intensity: IntensityKernel

    def product_expectation(self, obs, window, spec):
        return math.exp(poisson_log_expectation(self.intensity, obs, window, spec))

    def aging_departure_expectation(self, obs, rate, window, spec):
        # For a Poisson field the sum over members factorizes: the mean is
        # (int rho * (d_a theta - m theta)) times the product expectation.
        rho = self.intensity
        grid = build_phase_grid(window, spec, rho.age_breaks)

        def drift(x, a):
            return rho(x, a) * (obs.dda(x, a) - rate.m(x, a) * obs(x, a))

        return phase_integral(drift, grid) * self.product_expectation(obs, window, spec)

    def evolved(self, rate, t):
        return PoissonState(evolve_intensity(self.intensity, rate, t))

    def describe(self):
        return f"poisson({self.intensity.label})"


@dataclass(frozen=True)
class SurvivorState(PopulationState):
    """A single point retained independently with probability ``p``."""

    x: np.ndarray
    a: float
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"retention probability must lie in [0, 1], got {self.p}")
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=np.float64)))

    def _theta(self, obs) -> float:
        return float(np.asarray(obs(self.x[None, :], np.array([self.a])))[0])

    def product_expectation(self, obs, window, spec):
        return 1.0 + self.p * self._theta(obs)

    def aging_departure_expectation(self, obs, rate, window, spec):
        xm = self.x[None, :]
        am = np.array([self.a])
        drift = float((obs.dda(xm, am) - rate.m(xm, am) * obs(xm, am))[0])
        return self.p * drift

    def evolved(self, rate, t):
        survive = float(np.exp(-rate.cumulative_hazard(self.x[None, :], self.a, self.a + t))[0])
        return SurvivorState(self.x, self.a + t, self.p * survive)

    def describe(self):
        return f"survivor(x={self.x.tolist()}, a={self.a:g}, p={self.p:g})"


@dataclass(frozen=True)
class DeterministicState(PopulationState):
    """A fixed configuration, present with probability one."""

    config: FiniteConfiguration

    def product_expectation(self, obs, window, spec):
        vals = np.asarray(obs(self.config.positions, self.config.ages), dtype=np.float64) \
            if len(self.config) else np.empty(0)
        return float(np.prod(1.0 + vals)) if len(self.config) else 1.0

    def aging_departure_expectation(self, obs, rate, window, spec):
        n = len(self.config)
        if n == 0:
            return 0.0
        pos, ages = self.config.positions, self.config.ages
        th = np.asarray(obs(pos, ages), dtype=np.float64)
        drift = np.asarray(obs.dda(pos, ages) - rate.m(pos, ages) * th, dtype=np.float64)
        factors = 1.0 + th
        total = 0.0
        for i in range(n):
            rest = np.prod(np.delete(factors, i))
            total += drift[i] * rest
        return float(total)

    def evolved(self, rate, t):
        return ConvolutionState(tuple(
            SurvivorState(self.config.positions[i], float(self.config.ages[i]), 1.0).evolved(rate, t)
            for i in range(len(self.config))
        )) if len(self.config) else EmptyState()

    def describe(self):
        return f"deterministic(n={len(self.config)})"


@dataclass(frozen=True)
class ConvolutionState(PopulationState):
    """Independent superposition of component populations."""

    components: tuple

    def __post_init__(self):
        if not self.components:
            raise ValueError("convolution needs at least one component")

    def product_expectation(self, obs, window, spec):
        out = 1.0
        for c in self.components:
            out *= c.product_expectation(obs, window, spec)
        return out

    def aging_departure_expectation(self, obs, rate, window, spec):
        # Leibniz rule over independent components: differentiate one factor
        # of the product expectation at a time.
        f = [c.product_expectation(obs, window, spec) for c in self.components]
        h = [c.aging_departure_expectation(obs, rate, window, spec) for c in self.components]
        total = 0.0
        for i in range(len(self.components)):
            rest = 1.0
            for j, fj in enumerate(f):
                if j != i:
                    rest *= fj
            total += h[i] * rest
        return total

    def evolved(self, rate, t):
        return ConvolutionState(tuple(c.evolved(rate, t) for c in self.components))

    def describe(self):
        return "convolution(" + ", ".join(c.describe() for c in self.components) + ")"


def evolved_state_with_immigration(init: PopulationState, rate: RateModel, t: float,
                                   a_max: float | None = None) -> PopulationState:
    """Full law at time t: transported initial part plus the immigrant field."""
    immigrant = PoissonState(immigration_intensity(rate, t, a_max))
    if isinstance(init, EmptyState):
        return immigrant
    return ConvolutionState((init.evolved(rate, t), immigrant))


# ---------------------------------------------------------------------------
# the closed-form evolution and the generator
# ---------------------------------------------------------------------------

def evolved_expectation(init: PopulationState, rate: RateModel, t: float,
                        obs, window: Window, spec: QuadratureSpec) -> float:
    """Mean of the product observable at time t, in closed form.

    The law at time t factorizes into the immigrant Poisson field with the
    age-cut density and the initial law tested against the transported
    observable:

        E_t[prod (1 + theta)] = exp(int_{a<t} b e^{-M} theta) * E_0[prod (1 + theta_t)]

    with theta_t the transport of theta by t.  No discretization of time or
    space enters beyond the final quadrature.
    """
    rho_imm = immigration_intensity(rate, t, window.a_max)
    log_imm = poisson_log_expectation(rho_imm, obs, window, spec)
    shifted = transport_observable(obs, rate, t)
    return math.exp(log_imm) * init.product_expectation(shifted, window, spec)


def generator_expectation(state: PopulationState, rate: RateModel,
                          obs: SeparatingObservable, window: Window,
                          spec: QuadratureSpec) -> float:
    """Mean of the generator applied to the product observable.

    Two mechanisms: present individuals age and depart, giving the
    aging/departure sum with per-member factor d_a theta - m theta, and new
    individuals arrive at age zero, multiplying the product by
    1 + theta(x, 0) at spatial rate b.  For the arrival part the mean
    collapses to the product expectation times int b(x) theta(x, 0) dx.
    """
    xs, wx = spatial_grid(window, spec)
    arrival_rate = float(np.dot(wx, rate.b(xs) * obs.at_age_zero(xs)))
    interior = state.aging_departure_expectation(obs, rate, window, spec)
    return interior + state.product_expectation(obs, window, spec) * arrival_rate


# ---------------------------------------------------------------------------
# correlation kernels
# ---------------------------------------------------------------------------

class CorrelationKernel:
    """Factorial correlation densities of a population law, order by order.

    ``eval_order(n, xs, ages)`` evaluates the order-n density at tuples of
    marked points (xs shaped (K, n, d), ages (K, n)); order 0 is identically
    1.  ``eps`` and ``kappa`` declare the growth contract
    0 <= k^(n) <= (n!)^eps * kappa^n.  ``max_order`` bounds the orders the
    kernel can evaluate (None for all).
    """

    def __init__(self, order_fn, eps: float = 0.0, kappa: float = 0.0,
                 max_order: int | None = None, label: str = "kernel"):
        if not 0.0 <= eps < 1.0:
            raise ValueError(f"eps must lie in [0, 1), got {eps}")
        if kappa < 0.0:
            raise ValueError(f"kappa must be nonnegative, got {kappa}")
        self._order_fn = order_fn
        self.eps = float(eps)
        self.kappa = float(kappa)
        self.max_order = max_order
        self.label = label

    def eval_order(self, n: int, xs: np.ndarray, ages: np.ndarray) -> np.ndarray:
        if n == 0:
            k = xs.shape[0] if hasattr(xs, "shape") and xs.ndim >= 1 else 1
            return np.ones(k)
        if self.max_order is not None and n > self.max_order:
            raise ValueError(f"kernel {self.label} has no order beyond {self.max_order}")
        xs = np.asarray(xs, dtype=np.float64)
        ages = np.asarray(ages, dtype=np.float64)
        if ages.ndim != 2 or ages.shape[1] != n or xs.shape[:2] != ages.shape:
            raise ValueError("tuple arrays must be shaped (K, n, d) and (K, n)")
        return np.asarray(self._order_fn(n, xs, ages), dtype=np.float64)


def poisson_kernel(rho: IntensityKernel, eps: float = 0.0,
                   kappa: float | None = None) -> CorrelationKernel:
    """Correlation kernel of a Poisson field: products of the density."""

    def order_fn(n: int, xs: np.ndarray, ages: np.ndarray) -> np.ndarray:
        k = xs.shape[0]
        out = np.ones(k)
        for i in range(n):
            out = out * rho(xs[:, i], ages[:, i])
        return out

    return CorrelationKernel(order_fn, eps=eps,
                             kappa=rho.kappa if kappa is None else kappa,
                             label=f"poisson({rho.label})")


def evolve_kernel(kernel: CorrelationKernel, rate: RateModel, t: float) -> CorrelationKernel:
    """Transport correlation densities along the age flow with survival decay.

    Any tuple containing an age below t is annihilated (those individuals
    cannot predate the evolution); otherwise every point is pulled back by t
    in age and weighted by exp(-M) over the elapsed stretch.  This is the
    initial-population half of the time-t kernel; convolve with the
    immigrant Poisson kernel for the full law.
    """
    if not (math.isfinite(t) and t >= 0.0):
        raise ValueError(f"time must be finite and nonnegative, got {t}")

    def order_fn(n: int, xs: np.ndarray, ages: np.ndarray) -> np.ndarray:
        k = xs.shape[0]
        out = np.zeros(k)
        alive = np.all(ages >= t, axis=1)
        if not np.any(alive):
            return out
        xs_a = xs[alive]
        ages_a = ages[alive]
        flat_x = xs_a.reshape(-1, xs.shape[2])
        flat_a1 = ages_a.reshape(-1)
        haz = rate.cumulative_hazard(flat_x, flat_a1 - t, flat_a1).reshape(ages_a.shape)
        base = kernel.eval_order(n, xs_a, ages_a - t)
        out[alive] = base * np.exp(-np.sum(haz, axis=1))
        return out

    return CorrelationKernel(order_fn, eps=kernel.eps,
                             kappa=kernel.kappa * math.exp(-rate.m_star_lo * t),
                             max_order=kernel.max_order,
                             label=f"evolved({kernel.label}, t={t:g})")


def thin_kernel(kernel: CorrelationKernel, q) -> CorrelationKernel:
    """Independent thinning: each order picks up a factor prod q(x_i, a_i)."""

    def order_fn(n: int, xs: np.ndarray, ages: np.ndarray) -> np.ndarray:
        out = kernel.eval_order(n, xs, ages)
        for i in range(n):
            out = out * np.asarray(q(xs[:, i], ages[:, i]), dtype=np.float64)
        return out

    return CorrelationKernel(order_fn, eps=kernel.eps, kappa=kernel.kappa,
                             max_order=kernel.max_order, label=f"thinned({kernel.label})")


def convolve_kernels(k1: CorrelationKernel, k2: CorrelationKernel) -> CorrelationKernel:
    """Kernel of an independent superposition: subset-splitting sum.

    The order-n density is the sum over all 2^n splits of the tuple between
    the two factors.  Cost grows as 2^n, which the small orders used here
    keep affordable.
    """

    def order_fn(n: int, xs: np.ndarray, ages: np.ndarray) -> np.ndarray:
        k = xs.shape[0]
        out = np.zeros(k)
        for bits in range(2 ** n):
            right = [i for i in range(n) if bits >> i & 1]
            left = [i for i in range(n) if not bits >> i & 1]
            out += (k1.eval_order(len(left), xs[:, left], ages[:, left])
                    * k2.eval_order(len(right), xs[:, right], ages[:, right]))
        return out

    max_order = None
    if k1.max_order is not None or k2.max_order is not None:
        max_order = min(m for m in (k1.max_order, k2.max_order) if m is not None)
    return CorrelationKernel(order_fn, eps=max(k1.eps, k2.eps),
                             kappa=k1.kappa + k2.kappa, max_order=max_order,
                             label=f"({k1.label} * {k2.label})")


def kernel_norm(kernel: CorrelationKernel, n: int, window: Window,
                spec: QuadratureSpec, age_breaks: Sequence[float] = ()) -> float:
    """Order-n norm: sup over spatial tuples of the n-fold age integral of |k|.

    The supremum runs over the tensor spatial grid and the age integrals use
    the tensor Gauss-Legendre rule, so this is a grid approximation from
    below.  Cost scales as (spatial points * age nodes)^n; pass a coarse
    spec for n >= 2.
    """
    if n < 1:
        raise ValueError("kernel norms are defined for orders n >= 1")
    xs, _ = spatial_grid(window, spec)
    aa, wa = (np.array(v) for v in _age_axis(window, spec, age_breaks))
    mx, na = xs.shape[0], aa.shape[0]
    if mx ** n * na ** n > _NORM_BUDGET:
        raise ValueError(
            f"order-{n} norm needs {mx ** n * na ** n} evaluations; coarsen the quadrature"
        )
    age_idx = np.stack(np.meshgrid(*([np.arange(na)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    age_tuples = aa[age_idx]
    age_weights = np.prod(wa[age_idx], axis=1)
    best = 0.0
    for combo in itertools.product(range(mx), repeat=n):
        x_tuple = xs[list(combo)]
        xs_block = np.broadcast_to(x_tuple, (age_tuples.shape[0], n, xs.shape[1]))
        vals = kernel.eval_order(n, xs_block, age_tuples)
        best = max(best, float(np.dot(age_weights, np.abs(vals))))
    return best


_NORM_BUDGET = 40_000_000


def _age_axis(window: Window, spec: QuadratureSpec, breaks: Sequence[float]):
    from .core import age_grid
    return age_grid(window.a_max, spec, breaks)


def banach_norm(kernel: CorrelationKernel, eps: float, kappa: float, window: Window,
                spec: QuadratureSpec, max_order: int = 3,
                age_breaks: Sequence[float] = ()) -> float:
    """Scaled supremum over orders: max_n |k|_n / ((n!)^eps * kappa^n)."""
    if kappa <= 0.0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    top = max_order if kernel.max_order is None else min(max_order, kernel.max_order)
    best = 0.0
    for n in range(1, top + 1):
        value = kernel_norm(kernel, n, window, spec, age_breaks)
        best = max(best, value / (math.factorial(n) ** eps * kappa ** n))
    return best


# ---------------------------------------------------------------------------
# convergence bounds
# ---------------------------------------------------------------------------

def convergence_bound(eps: float, kappa_star: float, n: int, m_star_lo: float,
                      t: float) -> float:
    """Order-n distance bound to equilibrium: (n!)^eps * (3 kappa_star)^n * e^(-m t).

    Requires a hazard bounded below by m_star_lo > 0; the prefactor collects
    the kernel growth contract and the subset-splitting overhead of the
    convolution structure.
    """
    if m_star_lo <= 0.0:
        raise ValueError("convergence bounds need a positive hazard lower bound")
    if n < 0:
        raise ValueError("order must be nonnegative")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    return math.factorial(n) ** eps * (3.0 * kappa_star) ** n * math.exp(-m_star_lo * t)


def functional_gap_bound(kappa: float, eps: float, volume: float, m_star_lo: float,
                         t: float, tiny: float = 1e-16) -> float:
    """Product-observable gap bound: e^(-m t) * sum_n (kappa V)^n / (n!)^(1-eps).

    ``kappa`` is the series scale (three times the equilibrium kernel bound
    in the convergence experiment); the series is summed until terms drop
    below ``tiny`` relative to the partial sum.
    """
    if m_star_lo <= 0.0:
        raise ValueError("convergence bounds need a positive hazard lower bound")
    if kappa < 0.0 or volume <= 0.0:
        raise ValueError("kappa must be nonnegative and volume positive")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    total = 0.0
    n = 1
    while True:
        term = (kappa * volume) ** n / math.factorial(n) ** (1.0 - eps)
        total += term
        n += 1
        if term <= tiny * max(total, 1.0) or n > 600:
            break
    return math.exp(-m_star_lo * t) * total
