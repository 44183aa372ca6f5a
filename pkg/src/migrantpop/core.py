# src/migrantpop/core.py
"""Finite marked configurations and Lebesgue-Poisson integration.

A population snapshot is a finite set of individuals, each carrying a
location x in R^d (d = 1 or 2) and an age a >= 0.  Locations are pairwise
distinct; coincident locations are a modelling error, never merged.

Expectations of multiplicative observables over such configurations reduce
to integrals against the Lebesgue-Poisson measure on the bounded window
Lambda x [0, a_max]: a sum over particle numbers n of 1/n! times the n-fold
product integral.  This module supplies the configuration and window types,
the multiplicative (Bogoliubov) product observable, tempering sums, tensor
Gauss-Legendre grids, truncated Lebesgue-Poisson integrals, and the Minlos
combinatorial identity used to cross-check them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

__all__ = [
    "MarkedPoint",
    "FiniteConfiguration",
    "Window",
    "TemperingWeight",
    "QuadratureSpec",
    "PhaseGrid",
    "ProductFunctional",
    "CallableFunctional",
    "ProductSplitFunctional",
    "OrderSplitFunctional",
    "LpResult",
    "bogoliubov_product",
    "tempering_sum",
    "exp_decay_weight",
    "lp_integral",
    "minlos_check",
    "spatial_grid",
    "age_grid",
    "build_phase_grid",
    "phase_integral",
    "integrate_age_segments",
]

# Hard cap on tensor-grid tuples enumerated per order in the generic
# Lebesgue-Poisson path; product-form functionals never hit it.
_MAX_TUPLE_BUDGET = 20_000_000


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkedPoint:
    """A single individual: location ``x`` in R^d and age ``a`` >= 0."""

    x: np.ndarray
    a: float

    def __post_init__(self) -> None:
        x = np.atleast_1d(np.asarray(self.x, dtype=np.float64))
        if x.ndim != 1 or x.shape[0] not in (1, 2):
            raise ValueError(f"location must be a vector in R^1 or R^2, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("location coordinates must be finite")
        a = float(self.a)
        if not math.isfinite(a) or a < 0.0:
            raise ValueError(f"age must be finite and nonnegative, got {a}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)

    @property
    def dim(self) -> int:
        return self.x.shape[0]


class FiniteConfiguration:
    """Finite set of marked points with pairwise-distinct locations.

    Points are stored as flat arrays sorted lexicographically by location
    (age appended as a final tiebreaker key for determinism).  Location
    coincidence is detected bit-exactly after sorting and raises
    ``ValueError``: distinctness is part of the state space, and a collision
    indicates corrupted input or broken sampling randomness, so it must
    surface instead of being merged away.
    """

    __slots__ = ("positions", "ages")

    def __init__(self, positions: np.ndarray, ages: np.ndarray):
        pos = np.asarray(positions, dtype=np.float64)
        age = np.asarray(ages, dtype=np.float64)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[1] not in (1, 2):
            raise ValueError(f"positions must have shape (n, d) with d in {{1, 2}}, got {pos.shape}")
        if age.shape != (pos.shape[0],):
            raise ValueError(f"ages shape {age.shape} does not match {pos.shape[0]} positions")
        if pos.size and not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if age.size and (not np.all(np.isfinite(age)) or np.any(age < 0.0)):
            raise ValueError("ages must be finite and nonnegative")
        if pos.shape[0] > 1:
            keys = tuple(pos[:, j] for j in range(pos.shape[1] - 1, -1, -1))
            order = np.lexsort((age,) + keys)
            pos = pos[order]
            age = age[order]
            same = np.all(pos[1:] == pos[:-1], axis=1)
            if np.any(same):
                i = int(np.argmax(same))
                raise ValueError(
                    f"coincident locations at {pos[i].tolist()}: configurations require "
                    "pairwise-distinct positions"
                )
        pos = np.ascontiguousarray(pos)
        age = np.ascontiguousarray(age)
        pos.setflags(write=False)
        age.setflags(write=False)
        self.positions = pos
        self.ages = age

    @classmethod
    def empty(cls, dim: int = 1) -> "FiniteConfiguration":
        return cls(np.empty((0, dim)), np.empty(0))

    @classmethod
    def from_marked_points(cls, points: Sequence[MarkedPoint]) -> "FiniteConfiguration":
        if not points:
            return cls.empty()
        dims = {p.dim for p in points}
        if len(dims) != 1:
            raise ValueError("mixed location dimensions in one configuration")
        pos = np.stack([p.x for p in points])
        age = np.array([p.a for p in points])
        return cls(pos, age)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __iter__(self) -> Iterator[MarkedPoint]:
        for i in range(len(self)):
            yield MarkedPoint(self.positions[i], float(self.ages[i]))

    def __repr__(self) -> str:
        return f"FiniteConfiguration(n={len(self)}, dim={self.dim})"

    def union(self, other: "FiniteConfiguration") -> "FiniteConfiguration":
        """Disjoint union; raises on any location collision."""
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        if self.dim != other.dim:
            raise ValueError("cannot merge configurations of different dimension")
        return FiniteConfiguration(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.ages, other.ages]),
        )

    def select(self, mask: np.ndarray) -> "FiniteConfiguration":
        mask = np.asarray(mask, dtype=bool)
        return FiniteConfiguration(self.positions[mask], self.ages[mask])

    def contained_in(self, window: "Window") -> bool:
        if len(self) == 0:
            return True
        in_box = np.all((self.positions >= window.lower) & (self.positions <= window.upper), axis=1)
        return bool(np.all(in_box) and np.all(self.ages <= window.a_max))


@dataclass(frozen=True)
class Window:
    """Observation box Lambda = prod_j [lower_j, upper_j] with age cap a_max."""

    lower: np.ndarray
    upper: np.ndarray
    a_max: float

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.shape[0] not in (1, 2):
            raise ValueError("window corners must be matching vectors in R^1 or R^2")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("window corners must be finite")
        if np.any(hi <= lo):
            raise ValueError("window must have positive extent on every axis")
        a_max = float(self.a_max)
        if not math.isfinite(a_max) or a_max <= 0.0:
            raise ValueError(f"a_max must be finite and positive, got {a_max}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "a_max", a_max)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def volume(self) -> float:
        """Spatial volume of Lambda (the age axis is not included)."""
        return float(np.prod(self.upper - self.lower))

    def contains_positions(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)


@dataclass(frozen=True)
class TemperingWeight:
    """Strictly positive spatial weight with declared integral and sup bound.

    The weight damps observables far from the origin so that configuration
    sums stay summable; the declared full-space integral and the sup bound
    are contracts used by norm estimates, not recomputed here.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    integral: float
    bound: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.integral) and self.integral > 0.0):
            raise ValueError("declared integral must be finite and positive")
        if not (math.isfinite(self.bound) and self.bound > 0.0):
            raise ValueError("declared sup bound must be finite and positive")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(x, dtype=np.float64))


def exp_decay_weight(dim: int = 1) -> TemperingWeight:
    """The default weight exp(-|x|) with |x| the Euclidean norm.

    Full-space integral: 2 in d = 1, 2*pi in d = 2.  Sup bound 1.
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    integral = 2.0 if dim == 1 else 2.0 * math.pi

    def fn(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.exp(-np.linalg.norm(x, axis=-1))

    return TemperingWeight(fn=fn, integral=integral, bound=1.0)


# ---------------------------------------------------------------------------
# configuration observables
# ---------------------------------------------------------------------------

def bogoliubov_product(config: FiniteConfiguration, obs) -> float:
    """Multiplicative observable prod_i (1 + obs(x_i, a_i)); empty product is 1.

    For observables with values in (-1, 0] every factor lies in (0, 1], so the
    product does too.  ``obs`` must accept vectorized (positions, ages).
    """
    if len(config) == 0:
        return 1.0
    vals = np.asarray(obs(config.positions, config.ages), dtype=np.float64)
    return float(np.prod(1.0 + vals))


def tempering_sum(config: FiniteConfiguration, weight: TemperingWeight) -> float:
    """Sum of the spatial weight over the configuration; 0 for the empty one."""
    if len(config) == 0:
        return 0.0
    return float(np.sum(weight(config.positions)))


# ---------------------------------------------------------------------------
# quadrature grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """Tensor Gauss-Legendre resolution: nodes per spatial axis and age axis.

    ``a_nodes`` applies per age segment; when an integrand has a declared age
    discontinuity the age axis is split there, so no node ever straddles a
    jump.  ``n_max`` is the default particle-number truncation order for
    Lebesgue-Poisson sums.
    """

    x_nodes: int = 32
    a_nodes: int = 64
    n_max: int = 12

    def __post_init__(self) -> None:
        if self.x_nodes < 2 or self.a_nodes < 2:
            raise ValueError("quadrature grids need at least 2 nodes per axis")
        if self.n_max < 0:
            raise ValueError(f"n_max must be nonnegative, got {self.n_max}")


@lru_cache(maxsize=64)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _gl_segment(lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    u, w = _leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (u + 1.0), half * w


def spatial_grid(window: Window, spec: QuadratureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre grid over Lambda: points (M, d) and weights (M,)."""
    axes = [_gl_segment(float(window.lower[j]), float(window.upper[j]), spec.x_nodes)
            for j in range(window.dim)]
    if window.dim == 1:
        x, w = axes[0]
        return x[:, None], w.copy()
    pts = np.array(list(itertools.product(axes[0][0], axes[1][0])))
    wts = np.array([w0 * w1 for w0, w1 in itertools.product(axes[0][1], axes[1][1])])
    return pts, wts


def age_grid(a_max: float, spec: QuadratureSpec,
             breaks: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [0, a_max], split at interior break ages."""
    cuts = sorted({float(b) for b in breaks if 0.0 < float(b) < a_max})
    edges = [0.0] + cuts + [a_max]
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        a, w = _gl_segment(lo, hi, spec.a_nodes)
        nodes.append(a)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def integrate_age_segments(fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                           spec: QuadratureSpec, breaks: Sequence[float] = ()) -> float:
    """1-d age integral on [lo, hi] split at any interior breaks."""
    cuts = sorted({float(b) for b in breaks if lo < float(b) < hi})
    edges = [lo] + cuts + [hi]
    total = 0.0
    for seg_lo, seg_hi in zip(edges[:-1], edges[1:]):
        a, w = _gl_segment(seg_lo, seg_hi, spec.a_nodes)
        total += float(np.dot(w, fn(a)))
    return total


@dataclass(frozen=True)
class PhaseGrid:
    """Flattened product grid over Lambda x [0, a_max]."""

    x: np.ndarray        # (M, d)
    a: np.ndarray        # (M,)
    weights: np.ndarray  # (M,)
    spatial_points: np.ndarray = field(repr=False, default=None)
    spatial_weights: np.ndarray = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return self.a.shape[0]


def build_phase_grid(window: Window, spec: QuadratureSpec,
                     age_breaks: Sequence[float] = ()) -> PhaseGrid:
    xs, wx = spatial_grid(window, spec)
    aa, wa = age_grid(window.a_max, spec, age_breaks)
    na = aa.shape[0]
    x_flat = np.repeat(xs, na, axis=0)
    a_flat = np.tile(aa, xs.shape[0])
    w_flat = (wx[:, None] * wa[None, :]).ravel()
    return PhaseGrid(x=x_flat, a=a_flat, weights=w_flat,
                     spatial_points=xs, spatial_weights=wx)


def phase_integral(fn, grid: PhaseGrid) -> float:
    """Integral of fn(x, a) over the phase grid; fixed summation order."""
    vals = np.asarray(fn(grid.x, grid.a), dtype=np.float64)
    return float(np.dot(grid.weights, vals))


# ---------------------------------------------------------------------------
# symmetric configuration functionals and the Lebesgue-Poisson integral
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductFunctional:
    """G(eta) = prod over points of g(x, a), with G(empty) = vacuum (default 1).

    The n-fold tensor-rule integral of a product factorizes exactly into the
    n-th power of the single-point quadrature, so arbitrarily high truncation
    orders stay cheap.
    """

    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    vacuum: float = 1.0


@dataclass(frozen=True)
class CallableFunctional:
    """Generic symmetric functional given by one vectorized n-tuple callable.

    ``fn(xs, ages)`` receives xs of shape (K, n, d) and ages of shape (K, n)
    and returns (K,).  ``max_order`` caps the particle numbers on which the
    functional can be nonzero (None means no cap).  The n-fold integrals
    enumerate the full tensor grid, so this path is only feasible for small
    orders on coarse grids.
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    vacuum: float = 0.0
    max_order: int | None = None


class LpResult(NamedTuple):
    """Truncated Lebesgue-Poisson integral plus a truncation diagnostic."""

    value: float
    last_term: float


def _tuple_quadrature(fn, grid: PhaseGrid, n: int) -> float:
    """Full tensor-rule integral of an n-point symmetric function."""
    m = grid.size
    if m ** n > _MAX_TUPLE_BUDGET:
        raise ValueError(
            f"order-{n} tensor enumeration needs {m ** n} tuples; coarsen the quadrature grid"
        )
    idx = np.stack(np.meshgrid(*([np.arange(m)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    xs = grid.x[idx]                      # (K, n, d)
    ages = grid.a[idx]                    # (K, n)
    w = np.prod(grid.weights[idx], axis=1)
    vals = np.asarray(fn(xs, ages), dtype=np.float64)
    return float(np.dot(w, vals))


def lp_integral(G, window: Window, n_max: int, spec: QuadratureSpec,
                age_breaks: Sequence[float] = ()) -> LpResult:
    """Truncated Lebesgue-Poisson integral of a symmetric functional.

    Returns G(empty) + sum_{n=1}^{n_max} (1/n!) * n-fold tensor integral of
    the n-point restriction over (Lambda x [0, a_max])^n, together with the
    magnitude of the last retained term so callers can judge truncation.
    """
    if n_max < 0:
        raise ValueError(f"n_max must be nonnegative, got {n_max}")
    grid = build_phase_grid(window, spec, age_breaks)
    if isinstance(G, ProductFunctional):
        c = phase_integral(G.g, grid)
        total = float(G.vacuum)
        term = float(G.vacuum)
        for n in range(1, n_max + 1):
            term = c ** n / math.factorial(n)
            total += term
        return LpResult(value=total, last_term=abs(term))
    if isinstance(G, CallableFunctional):
        top = n_max if G.max_order is None else min(n_max, G.max_order)
        total = float(G.vacuum)
        term = float(G.vacuum)
        for n in range(1, top + 1):
            term = _tuple_quadrature(G.fn, grid, n) / math.factorial(n)
            total += term
        return LpResult(value=total, last_term=abs(term))
    raise TypeError(f"unsupported functional type {type(G).__name__}")


# ---------------------------------------------------------------------------
# two-argument functionals and the Minlos identity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductSplitFunctional:
    """G(xi, eta) = prod_{xi} g * prod_{eta} h, vacuum G(empty, empty) = 1."""

    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OrderSplitFunctional:
    """Two-argument functional tabulated order by order.

    ``table[(p, q)]`` evaluates the (p, q)-point block: a callable taking
    (xs1 (K,p,d), ages1 (K,p), xs2 (K,q,d), ages2 (K,q)) -> (K,), symmetric
    within each group.  Orders absent from the table are zero.  ``vacuum``
    is G(empty, empty).
    """

    table: dict
    vacuum: float = 0.0

    def max_total_order(self) -> int:
        return max((p + q for p, q in self.table), default=0)


def _subset_sum_functional(G: OrderSplitFunctional) -> CallableFunctional:
    """Symmetric functional eta -> sum over subsets xi of G(xi, eta minus xi)."""

    def fn(xs: np.ndarray, ages: np.ndarray) -> np.ndarray:
        k, n = ages.shape
        out = np.zeros(k)
        for bits in range(2 ** n):
            left = [i for i in range(n) if bits >> i & 1]
            right = [i for i in range(n) if not bits >> i & 1]
            block = G.table.get((len(left), len(right)))
            if block is None:
                continue
            out += np.asarray(
                block(xs[:, left], ages[:, left], xs[:, right], ages[:, right]),
                dtype=np.float64,
            )
        return out

    return CallableFunctional(fn=fn, vacuum=G.vacuum, max_order=G.max_total_order())


def minlos_check(G, window: Window, n_max: int, spec: QuadratureSpec) -> tuple[float, float]:
    """Both sides of the Minlos subset-splitting identity, truncated consistently.

    Left side: single Lebesgue-Poisson integral of eta -> sum over subsets
    xi of eta of G(xi, eta minus xi), truncated at |eta| <= n_max.  Right
    side: double Lebesgue-Poisson integral of G, truncated at
    |xi| + |eta| <= n_max, which matches the left truncation term by term.
    """
    if n_max < 0:
        raise ValueError(f"n_max must be nonnegative, got {n_max}")
    grid = build_phase_grid(window, spec)
    if isinstance(G, ProductSplitFunctional):
        # The subset sum of a product collapses binomially: summing
        # prod_{xi} g * prod_{eta \ xi} h over subsets gives prod_{eta} (g + h).
        cg = phase_integral(G.g, grid)
        ch = phase_integral(G.h, grid)
        lhs = sum((cg + ch) ** n / math.factorial(n) for n in range(n_max + 1))
        rhs = sum(
            cg ** p * ch ** q / (math.factorial(p) * math.factorial(q))
            for p in range(n_max + 1)
            for q in range(n_max + 1 - p)
        )
        return float(lhs), float(rhs)
    if isinstance(G, OrderSplitFunctional):
        lhs = lp_integral(_subset_sum_functional(G), window, n_max, spec).value
        rhs = float(G.vacuum)
        for (p, q), block in sorted(G.table.items()):
            if p + q == 0 or p + q > n_max:
                continue

            def joint(xs, ages, p=p, block=block):
                return block(xs[:, :p], ages[:, :p], xs[:, p:], ages[:, p:])

            rhs += _tuple_quadrature(joint, grid, p + q) / (
                math.factorial(p) * math.factorial(q)
            )
        return float(lhs), float(rhs)
    raise TypeError(f"unsupported two-argument functional type {type(G).__name__}")
