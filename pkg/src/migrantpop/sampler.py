# src/migrantpop/sampler.py
"""Exact snapshot sampler for the age-structured migrant population.

No event clock and no time discretization: because individuals are
independent, the time-t population can be drawn directly.  Initial
individuals survive the whole horizon iff a unit-rate exponential exceeds
their accumulated hazard, and the immigrants alive at time t form a marked
Poisson field (count from the inflow mass, ages uniform below t thinned by
survival).  Every replica draws from its own counter-based substream, so
batches are bit-identical no matter how replicas are scheduled.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analytic import (
    ConvolutionState,
    DeterministicState,
    EmptyState,
    IntensityKernel,
    PoissonState,
    PopulationState,
    RateModel,
    SurvivorState,
)
from .core import FiniteConfiguration, Window

__all__ = [
    "RngSpec",
    "SnapshotBatch",
    "sample_poisson_config",
    "sample_lifetime_survival",
    "simulate_snapshot",
    "sample_batch",
    "merge_batches",
    "thin_batch",
    "estimate_functional",
    "estimate_density",
    "estimate_count_tail",
    "DensityEstimate",
    "CountTail",
    "FunctionalEstimate",
    "write_batch_csv",
    "read_batch_csv",
]

# Reserved substream channels; replica indices must stay below 2^48.
_STREAM_SNAPSHOT = 0
_STREAM_THINNING = 1
_REPLICA_LIMIT = 1 << 48


@dataclass(frozen=True)
class RngSpec:
    """Counter-based randomness: one Philox substream per (seed, replica).

    The stream for replica i is keyed by the pair (master_seed, i), so the
    draw sequence of a replica depends only on the seed and its index, never
    on scheduling, worker count, or how many replicas ran before it.
    """

    master_seed: int

    def __post_init__(self) -> None:
        if not 0 <= int(self.master_seed) < (1 << 64):
            raise ValueError("master_seed must fit in 64 bits")

    def replica_rng(self, replica: int, stream: int = _STREAM_SNAPSHOT) -> np.random.Generator:
        if not 0 <= replica < _REPLICA_LIMIT:
            raise ValueError(f"replica index out of range: {replica}")
        key = np.array([self.master_seed, (stream << 48) | replica], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def sample_poisson_config(rho: IntensityKernel, window: Window,
                          rng: np.random.Generator) -> FiniteConfiguration:
    """Draw one Poisson configuration on Lambda x [0, a_max] by thinning.

    Candidates come from a homogeneous field at the declared pointwise bound
    and are kept with probability rho / bound.  A density value above the
    declared bound invalidates the whole scheme and raises.
    """
    if rho.sup_bound is None:
        raise ValueError(f"intensity {rho.label!r} declares no pointwise bound; cannot sample")
    bound = float(rho.sup_bound)
    if bound < 0.0 or not math.isfinite(bound):
        raise ValueError(f"invalid pointwise bound {bound}")
    if bound == 0.0:
        return FiniteConfiguration.empty(window.dim)
    mean = bound * window.volume * window.a_max
    n = int(rng.poisson(mean))
    if n == 0:
        return FiniteConfiguration.empty(window.dim)
    pos = rng.uniform(window.lower, window.upper, size=(n, window.dim))
    ages = rng.uniform(0.0, window.a_max, size=n)
    vals = rho(pos, ages)
    if np.any(vals > bound * (1.0 + 1e-9)):
        raise ValueError(
            f"intensity {rho.label!r} exceeds its declared bound {bound} on the window"
        )
    keep = rng.uniform(0.0, 1.0, size=n) < vals / bound
    return FiniteConfiguration(pos[keep], ages[keep])


def sample_lifetime_survival(rate: RateModel, x: np.ndarray, a0: float, t: float,
                             rng: np.random.Generator) -> bool:
    """Does an individual aged a0 at x survive t more time units?

    Survival happens iff a unit-rate exponential mark exceeds the cumulative
    hazard over [a0, a0 + t]; no stepping through time is involved.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    haz = float(rate.cumulative_hazard(x, a0, a0 + t)[0])
    return bool(rng.exponential() > haz)


def _survival_mask(rate: RateModel, pos: np.ndarray, ages: np.ndarray, t: float,
                   rng: np.random.Generator) -> np.ndarray:
    haz = rate.cumulative_hazard(pos, ages, ages + t)
    return rng.exponential(size=pos.shape[0]) > haz


def _realize_initial(init: PopulationState, window: Window,
                     rng: np.random.Generator) -> FiniteConfiguration:
    if isinstance(init, EmptyState):
        return FiniteConfiguration.empty(window.dim)
    if isinstance(init, PoissonState):
        return sample_poisson_config(init.intensity, window, rng)
    if isinstance(init, DeterministicState):
        if not init.config.contained_in(window):
            raise ValueError("deterministic initial configuration must lie inside the window")
        return init.config
    if isinstance(init, SurvivorState):
        if init.p < 1.0 and rng.uniform() >= init.p:
            return FiniteConfiguration.empty(window.dim)
        return FiniteConfiguration(init.x[None, :], np.array([init.a]))
    if isinstance(init, ConvolutionState):
        out = FiniteConfiguration.empty(window.dim)
        for comp in init.components:
            out = out.union(_realize_initial(comp, window, rng))
        return out
    raise TypeError(f"cannot realize initial state of type {type(init).__name__}")


def simulate_snapshot(init: PopulationState, rate: RateModel, window: Window, t: float,
                      rng: np.random.Generator) -> FiniteConfiguration:
    """Draw the exact population at time t for one replica.

    Initial individuals age by exactly t and survive independently against
    their cumulative hazard.  Immigrants arriving in (0, t] are a marked
    Poisson field: the count is Poisson with mean t * int_Lambda b, each
    position follows b by rejection against b_star, the age at time t is
    uniform on [0, t), and each immigrant survives its own lifetime hazard.
    Draw order is fixed, so the replica is a pure function of its stream.
    """
    if not (math.isfinite(t) and t >= 0.0):
        raise ValueError(f"time must be finite and nonnegative, got {t}")
    config = _realize_initial(init, window, rng)
    if len(config):
        keep = _survival_mask(rate, config.positions, config.ages, t, rng)
        config = FiniteConfiguration(config.positions[keep], config.ages[keep] + t)
    if t == 0.0 or rate.b_star == 0.0:
        return config
    k = int(rng.poisson(t * rate.b_mass(window)))
    if k == 0:
        return config
    pos = np.empty((k, window.dim))
    got = 0
    while got < k:
        need = k - got
        cand = rng.uniform(window.lower, window.upper, size=(need, window.dim))
        accept = rng.uniform(0.0, rate.b_star, size=need) < rate.b(cand)
        taken = int(np.sum(accept))
        pos[got:got + taken] = cand[accept]
        got += taken
    ages = rng.uniform(0.0, t, size=k)
    alive = rng.exponential(size=k) > rate.cumulative_hazard(pos, 0.0, ages)
    immigrants = FiniteConfiguration(pos[alive], ages[alive])
    return config.union(immigrants)


@dataclass
class SnapshotBatch:
    """Replicated snapshots at a common time with provenance fingerprints."""

    replicas: list
    t: float
    window: Window
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.replicas)

    def counts(self) -> np.ndarray:
        return np.array([len(c) for c in self.replicas], dtype=np.float64)


def sample_batch(init: PopulationState, rate: RateModel, window: Window, t: float,
                 rng_spec: RngSpec, replicas: int, workers: int = 1) -> SnapshotBatch:
    """Draw a batch of independent snapshot replicas.

    Replica i always uses substream (master_seed, i), and results land in
    slot i, so the batch is bit-identical for any worker count.
    """
    if replicas < 0:
        raise ValueError("replica count must be nonnegative")
    out: list = [None] * replicas

    def run_range(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            out[i] = simulate_snapshot(init, rate, window, t,
                                       rng_spec.replica_rng(i, _STREAM_SNAPSHOT))

    if workers <= 1 or replicas < 2:
        run_range(0, replicas)
    else:
        step = math.ceil(replicas / workers)
        spans = [(lo, min(lo + step, replicas)) for lo in range(0, replicas, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(run_range, lo, hi) for lo, hi in spans]:
                fut.result()
    meta = {
        "model": rate.describe(),
        "init": init.describe(),
        "seed": str(rng_spec.master_seed),
        "t": f"{t:.17g}",
        "replicas": str(replicas),
    }
    return SnapshotBatch(replicas=out, t=t, window=window, meta=meta)


def merge_batches(a: SnapshotBatch, b: SnapshotBatch) -> SnapshotBatch:
    """Replica-wise union of two batches (independent superposition)."""
    if len(a) != len(b):
        raise ValueError("batches must have equal replica counts to merge")
    merged = [ca.union(cb) for ca, cb in zip(a.replicas, b.replicas)]
    meta = {"init": f"merge({a.meta.get('init', '?')}, {b.meta.get('init', '?')})"}
    return SnapshotBatch(replicas=merged, t=a.t, window=a.window, meta=meta)


def thin_batch(batch: SnapshotBatch, q: Callable[[np.ndarray, np.ndarray], np.ndarray],
               rng_spec: RngSpec) -> SnapshotBatch:
    """Keep each point independently with probability q(x, a).

    Thinning draws from a dedicated substream channel, so it never perturbs
    the snapshot randomness of the same seed.
    """
    thinned = []
    for i, config in enumerate(batch.replicas):
        if len(config) == 0:
            thinned.append(config)
            continue
        rng = rng_spec.replica_rng(i, _STREAM_THINNING)
        probs = np.asarray(q(config.positions, config.ages), dtype=np.float64)
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ValueError("thinning probabilities must lie in [0, 1]")
        keep = rng.uniform(0.0, 1.0, size=len(config)) < probs
        thinned.append(config.select(keep))
    meta = dict(batch.meta)
    meta["thinned"] = "yes"
    return SnapshotBatch(replicas=thinned, t=batch.t, window=batch.window, meta=meta)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

class FunctionalEstimate(dict):
    pass


def estimate_functional(batch: SnapshotBatch, obs) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the product observable.

    All replicas are evaluated in one vectorized pass: per-replica products
    become exp of per-replica sums of log1p(theta), accumulated by replica
    id.  Empty replicas contribute exactly 1.
    """
    n = len(batch)
    if n < 2:
        raise ValueError("functional estimation needs at least 2 replicas")
    sizes = np.array([len(c) for c in batch.replicas])
    total = int(sizes.sum())
    if total == 0:
        return 1.0, 0.0
    dim = batch.window.dim
    pos = np.concatenate([c.positions for c in batch.replicas if len(c)]).reshape(-1, dim)
    ages = np.concatenate([c.ages for c in batch.replicas if len(c)])
    ids = np.repeat(np.arange(n), sizes)
    theta = np.asarray(obs(pos, ages), dtype=np.float64)
    logs = np.bincount(ids, weights=np.log1p(theta), minlength=n)
    vals = np.exp(logs)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n))
    return mean, se


@dataclass
class DensityEstimate:
    """Per-bin phase-space density with replica-based standard errors."""

    edges: list
    density: np.ndarray
    se: np.ndarray
    mean_counts: np.ndarray
    replicas: int


def estimate_density(batch: SnapshotBatch, bins: Sequence[np.ndarray]) -> DensityEstimate:
    """Histogram the batch on a product grid over (x, age).

    ``bins`` lists monotone edge arrays, one per spatial axis plus one for
    age.  Points outside the grid are dropped.  The standard error comes
    from the replica-to-replica spread of per-bin counts, computed exactly
    from grouped counts without materializing a replica-by-bin matrix.
    """
    n = len(batch)
    if n < 2:
        raise ValueError("density estimation needs at least 2 replicas")
    edges = [np.asarray(e, dtype=np.float64) for e in bins]
    dim = batch.window.dim
    if len(edges) != dim + 1:
        raise ValueError(f"need {dim + 1} edge arrays (spatial axes plus age), got {len(edges)}")
    shape = tuple(e.shape[0] - 1 for e in edges)
    nbins = int(np.prod(shape))
    volumes = edges[0][1:] - edges[0][:-1]
    for e in edges[1:]:
        volumes = np.multiply.outer(volumes, e[1:] - e[:-1])
    volumes = volumes.reshape(-1)

    sums = np.zeros(nbins)
    sqsums = np.zeros(nbins)
    for i, config in enumerate(batch.replicas):
        if len(config) == 0:
            continue
        coords = np.column_stack([config.positions, config.ages])
        flat = _flat_bin_index(coords, edges, shape)
        flat = flat[flat >= 0]
        if flat.size == 0:
            continue
        ids, counts = np.unique(flat, return_counts=True)
        sums[ids] += counts
        sqsums[ids] += counts.astype(np.float64) ** 2

    mean = sums / n
    var = np.maximum(sqsums - n * mean ** 2, 0.0) / (n - 1)
    se_counts = np.sqrt(var / n)
    return DensityEstimate(
        edges=edges,
        density=(mean / volumes).reshape(shape),
        se=(se_counts / volumes).reshape(shape),
        mean_counts=mean.reshape(shape),
        replicas=n,
    )


def _flat_bin_index(coords: np.ndarray, edges: list, shape: tuple) -> np.ndarray:
    flat = np.zeros(coords.shape[0], dtype=np.int64)
    ok = np.ones(coords.shape[0], dtype=bool)
    for j, e in enumerate(edges):
        idx = np.searchsorted(e, coords[:, j], side="right") - 1
        # points sitting exactly on the top edge belong to the last bin
        idx = np.where(coords[:, j] == e[-1], e.shape[0] - 2, idx)
        ok &= (idx >= 0) & (idx < shape[j])
        flat = flat * shape[j] + np.clip(idx, 0, shape[j] - 1)
    return np.where(ok, flat, -1)


class CountTail(tuple):
    """(mean, max) subwindow counts, with the standard error tacked on."""

    def __new__(cls, mean: float, max_count: float, se: float):
        obj = super().__new__(cls, (mean, max_count))
        obj.se = se
        return obj

    @property
    def mean(self) -> float:
        return self[0]

    @property
    def max(self) -> float:
        return self[1]


def estimate_count_tail(batch: SnapshotBatch, lower: np.ndarray | None = None,
                        upper: np.ndarray | None = None) -> CountTail:
    """Mean and maximum point count inside a spatial subwindow."""
    lo = batch.window.lower if lower is None else np.atleast_1d(np.asarray(lower, dtype=np.float64))
    hi = batch.window.upper if upper is None else np.atleast_1d(np.asarray(upper, dtype=np.float64))
    counts = np.empty(len(batch))
    for i, config in enumerate(batch.replicas):
        if len(config) == 0:
            counts[i] = 0.0
        else:
            inside = np.all((config.positions >= lo) & (config.positions <= hi), axis=1)
            counts[i] = float(np.sum(inside))
    n = len(batch)
    se = float(np.std(counts, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return CountTail(float(np.mean(counts)), float(np.max(counts)) if n else 0.0, se)


# ---------------------------------------------------------------------------
# batch serialization
# ---------------------------------------------------------------------------

def write_batch_csv(batch: SnapshotBatch, path) -> None:
    """Point list as CSV: replica index, coordinates, age; 17 significant digits.

    Rows are ordered by replica and then lexicographically by position, which
    is exactly the storage order of each configuration.
    """
    dim = batch.window.dim
    header = ["replica"] + [f"x{j + 1}" for j in range(dim)] + ["age"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, config in enumerate(batch.replicas):
            for r in range(len(config)):
                row = [str(i)] + [f"{v:.17g}" for v in config.positions[r]] \
                    + [f"{config.ages[r]:.17g}"]
                writer.writerow(row)


def read_batch_csv(path, t: float, window: Window) -> SnapshotBatch:
    """Rebuild a batch from the CSV point list (replica count from the data)."""
    per_replica: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2
        for row in reader:
            i = int(row[0])
            per_replica.setdefault(i, []).append([float(v) for v in row[1:]])
    n = max(per_replica) + 1 if per_replica else 0
    replicas = []
    for i in range(n):
        rows = per_replica.get(i, [])
        if not rows:
            replicas.append(FiniteConfiguration.empty(window.dim))
        else:
            arr = np.array(rows)
            replicas.append(FiniteConfiguration(arr[:, :dim], arr[:, dim]))
    return SnapshotBatch(replicas=replicas, t=t, window=window, meta={"source": str(path)})
