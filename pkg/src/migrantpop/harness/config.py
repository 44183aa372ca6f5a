# src/migrantpop/harness/config.py
"""Line-oriented experiment configs and the profile catalogues.

Format: UTF-8 text, one ``key = value`` per line, ``#`` starts a comment,
dotted keys group settings (``model.kind = constant``).  Spatial profiles
for observables and initial intensities come from small named catalogues,
so a config stays a flat text file with no embedded code.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..analytic import (
    ConstantRateModel,
    ConvolutionState,
    DeterministicState,
    EmptyState,
    IntensityKernel,
    PoissonState,
    PopulationState,
    RateModel,
    SeparableExponentialRateModel,
    SeparatingObservable,
    TabulatedRateModel,
    stationary_intensity,
)
from ..core import FiniteConfiguration, QuadratureSpec, TemperingWeight, Window, exp_decay_weight

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "build_intensity",
    "build_profile",
    "default_theta_specs",
    "load_config",
    "parse_config_text",
    "reference_config",
    "scale_intensity",
    "REFERENCE_CONFIG_TEXT",
]

_REQUIRED = object()


class ConfigError(ValueError):
    """Config rejection, pointing at the offending source line when known."""

    def __init__(self, message: str, lineno: int | None = None, source: str | None = None):
        if source is not None and lineno is not None:
            loc = f"{source}:{lineno}: "
        elif lineno is not None:
            loc = f"line {lineno}: "
        elif source is not None:
            loc = f"{source}: "
        else:
            loc = ""
        super().__init__(loc + message)
        self.lineno = lineno
        self.source = source


# ---------------------------------------------------------------------------
# raw key = value scanning
# ---------------------------------------------------------------------------

_KEY_RE = re.compile(r"^[A-Za-z_][\w.-]*$")


class _Entries:
    """Parsed key/value lines with line numbers and used-key tracking.

    Every getter marks its key as consumed; whatever is left at the end is
    reported as unknown, so typos cannot silently fall back to defaults.
    """

    def __init__(self, text: str, source: str):
        self.source = source
        self._items: dict[str, tuple[str, int]] = {}
        self._used: set[str] = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ConfigError("expected 'key = value'", lineno, source)
            key = key.strip()
            value = value.strip()
            if not _KEY_RE.match(key):
                raise ConfigError(f"malformed key {key!r}", lineno, source)
            if key in self._items:
                first = self._items[key][1]
                raise ConfigError(f"duplicate key {key!r} (first set on line {first})",
                                  lineno, source)
            self._items[key] = (value, lineno)

    def error(self, message: str, key: str | None = None) -> "ConfigError":
        lineno = self._items[key][1] if key in self._items else None
        return ConfigError(message, lineno, self.source)

    def has(self, key: str) -> bool:
        return key in self._items

    def get_str(self, key: str, default=_REQUIRED) -> str:
        if key not in self._items:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}", None, self.source)
            return default
        self._used.add(key)
        value = self._items[key][0]
        if not value:
            raise self.error(f"key {key!r} has an empty value", key)
        return value

    def get_float(self, key: str, default=_REQUIRED) -> float:
        raw = self.get_str(key, default)
        if raw is default and key not in self._items:
            return default
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise self.error(f"key {key!r} needs a number, got {raw!r}", key) from None

    def get_floats(self, key: str, default=_REQUIRED) -> tuple[float, ...]:
        raw = self.get_str(key, default)
        if raw is default and key not in self._items:
            return default
        try:
            return tuple(float(v) for v in re.split(r"[,\s]+", raw.strip()) if v)
        except ValueError:
            raise self.error(f"key {key!r} needs numbers, got {raw!r}", key) from None

    def get_int(self, key: str, default=_REQUIRED) -> int:
        raw = self.get_str(key, default)
        if raw is default and key not in self._items:
            return default
        try:
            return int(raw, 0)
        except ValueError:
            pass
        try:
            val = float(raw)
        except ValueError:
            raise self.error(f"key {key!r} needs an integer, got {raw!r}", key) from None
        if not val.is_integer():
            raise self.error(f"key {key!r} needs an integer, got {raw!r}", key)
        return int(val)

    def keys_with_prefix(self, prefix: str) -> list[str]:
        return [k for k in self._items if k.startswith(prefix)]

    def check_all_used(self) -> None:
        leftover = sorted(set(self._items) - self._used,
                          key=lambda k: self._items[k][1])
        if leftover:
            key = leftover[0]
            raise self.error(f"unknown key {key!r}", key)


# ---------------------------------------------------------------------------
# catalogue spec calls: name(arg, key=value, ...)
# ---------------------------------------------------------------------------

_CALL_RE = re.compile(r"^([A-Za-z][\w-]*)\s*(?:\((.*)\))?$")


def _parse_call(text: str) -> tuple[str, list[str], dict[str, str]]:
    m = _CALL_RE.match(text.strip())
    if m is None:
        raise ConfigError(f"cannot parse spec {text!r}")
    name = m.group(1)
    args: list[str] = []
    kwargs: dict[str, str] = {}
    body = m.group(2)
    if body is not None and body.strip():
        for part in body.split(","):
            part = part.strip()
            if not part:
                raise ConfigError(f"empty argument in spec {text!r}")
            k, eq, v = part.partition("=")
            if eq:
                if k.strip() in kwargs:
                    raise ConfigError(f"duplicate argument {k.strip()!r} in spec {text!r}")
                kwargs[k.strip()] = v.strip()
            else:
                if kwargs:
                    raise ConfigError(f"positional after keyword argument in spec {text!r}")
                args.append(part)
    return name, args, kwargs


def _bind_call(spec: str, params: list[tuple[str, object]],
               vectors: tuple[str, ...] = ()) -> dict[str, object]:
    """Match a catalogue call against a parameter list with defaults."""
    name, args, kwargs = _parse_call(spec)
    names = [p for p, _ in params]
    if len(args) > len(names):
        raise ConfigError(f"spec {spec!r} takes at most {len(names)} arguments")
    raw: dict[str, str] = dict(zip(names, args))
    for k, v in kwargs.items():
        if k not in names:
            raise ConfigError(f"spec {spec!r} has no parameter {k!r}")
        if k in raw:
            raise ConfigError(f"parameter {k!r} given twice in spec {spec!r}")
        raw[k] = v
    out: dict[str, object] = {}
    for pname, default in params:
        if pname in raw:
            text = raw[pname]
            try:
                if pname in vectors:
                    out[pname] = tuple(float(v) for v in text.split())
                else:
                    out[pname] = float(text)
            except ValueError:
                raise ConfigError(f"parameter {pname!r} in spec {spec!r} needs a number, "
                                  f"got {text!r}") from None
        elif default is _REQUIRED:
            raise ConfigError(f"spec {spec!r} is missing parameter {pname!r}")
        else:
            out[pname] = default
    return out


# ---------------------------------------------------------------------------
# spatial profile catalogue for observables
# ---------------------------------------------------------------------------

class ConstProfile:
    """Flat level c on the window, zero outside (the clipped constant)."""

    def __init__(self, c: float, window: Window):
        if not (-1.0 < c <= 0.0):
            raise ConfigError(f"const level must lie in (-1, 0], got {c:g}")
        self.c = float(c)
        self.window = window
        self.label = f"const({c:g})"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.where(self.window.contains_positions(x), self.c, 0.0)


class BumpProfile:
    """Smooth radial well of depth ``depth`` supported strictly inside the window.

    The profile is -depth * exp(1 - 1 / (1 - u^2)) with u twice the distance
    from the center over the width, so it vanishes to all orders at the edge
    of its support and never reaches -1.
    """

    def __init__(self, center, width: float, depth: float, window: Window):
        c = np.atleast_1d(np.asarray(center, dtype=np.float64))
        if c.shape[0] == 1 and window.dim == 2:
            c = np.repeat(c, 2)
        if c.shape[0] != window.dim:
            raise ConfigError(f"bump center needs {window.dim} coordinates, got {c.shape[0]}")
        if not (width > 0.0 and math.isfinite(width)):
            raise ConfigError(f"bump width must be positive, got {width:g}")
        if not (0.0 < depth < 1.0):
            raise ConfigError(f"bump depth must lie in (0, 1), got {depth:g}")
        r = 0.5 * width
        if np.any(c - r < window.lower) or np.any(c + r > window.upper):
            raise ConfigError("bump support must fit inside the window")
        self.center = c
        self.width = float(width)
        self.depth = float(depth)
        ctext = " ".join(f"{v:g}" for v in c)
        self.label = f"bump(center={ctext};width={width:g};depth={depth:g})"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        u2 = 4.0 * np.sum((x - self.center) ** 2, axis=-1) / self.width ** 2
        out = np.zeros(u2.shape)
        mask = u2 < 1.0
        if np.any(mask):
            with np.errstate(over="ignore"):
                out[mask] = -self.depth * np.exp(1.0 - 1.0 / (1.0 - u2[mask]))
        return out


def build_profile(spec: str, window: Window):
    """Spatial profile from the catalogue: ``const(c)`` or ``bump(center,width,depth)``."""
    name, _, _ = _parse_call(spec)
    if name == "const":
        p = _bind_call(spec, [("c", _REQUIRED)])
        return ConstProfile(p["c"], window)
    if name == "bump":
        p = _bind_call(spec, [("center", _REQUIRED), ("width", _REQUIRED),
                              ("depth", _REQUIRED)], vectors=("center",))
        return BumpProfile(p["center"], p["width"], p["depth"], window)
    raise ConfigError(f"unknown profile {name!r} (catalogue: const, bump)")


def default_theta_specs(window: Window) -> tuple[tuple[str, float], ...]:
    """Ten-member observable suite mixing flat and bump profiles.

    Bump placement is relative to the window, so the suite adapts to any
    box; on the unit interval the entries match their documented absolute
    shapes.  The first entry is the identically zero observable.
    """
    lo, ext = window.lower, window.upper - window.lower
    wmin = float(np.min(ext))

    def bump(f: float, w: float, depth: float) -> str:
        ctext = " ".join(f"{v:g}" for v in lo + f * ext)
        return f"bump(center={ctext},width={w * wmin:g},depth={depth:g})"

    return (
        ("const(0)", 0.0),
        ("const(-0.5)", 0.0),
        ("const(-0.9)", 0.0),
        ("const(-0.3)", 1.0),
        ("const(-0.5)", 2.5),
        (bump(0.5, 0.4, 0.5), 0.0),
        (bump(0.5, 0.8, 0.9), 1.0),
        (bump(0.3, 0.3, 0.7), 0.5),
        (bump(0.7, 0.25, 0.4), 3.0),
        (bump(0.5, 0.6, 0.2), 0.2),
    )


# ---------------------------------------------------------------------------
# initial intensity catalogue
# ---------------------------------------------------------------------------

def scale_intensity(rho: IntensityKernel, c: float) -> IntensityKernel:
    """Pointwise multiple of a Poisson density; bounds and breaks scale along."""
    if not (math.isfinite(c) and c >= 0.0):
        raise ValueError(f"scale factor must be finite and nonnegative, got {c}")
    return IntensityKernel(
        fn=lambda x, a: c * rho(x, a),
        kappa=c * rho.kappa,
        age_breaks=rho.age_breaks,
        sup_bound=None if rho.sup_bound is None else c * rho.sup_bound,
        tail_mass=c * rho.tail_mass,
        label=f"{c:g}*{rho.label}",
    )


def _expage_intensity(mass: float, decay: float, a_max: float) -> IntensityKernel:
    # spatially flat, exponentially distributed age: total age mass = mass
    def fn(x: np.ndarray, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        return mass * decay * np.exp(-decay * a)

    return IntensityKernel(
        fn=fn,
        kappa=mass,
        sup_bound=mass * decay,
        tail_mass=mass * math.exp(-decay * a_max),
        label=f"expage(mass={mass:g};decay={decay:g})",
    )


def build_intensity(spec: str, rate: RateModel, window: Window) -> IntensityKernel:
    """Initial Poisson density from the catalogue.

    ``stationary`` is the inflow-survival balance density of the rate model;
    ``scaled-stationary(c)`` multiplies it by c; ``expage(mass,decay)`` is a
    spatially flat density with exponential age profile.
    """
    name, _, _ = _parse_call(spec)
    if name == "stationary":
        _bind_call(spec, [])
        if rate.m_star_lo <= 0.0:
            raise ConfigError("stationary intensity needs a hazard bounded away from zero")
        return stationary_intensity(rate, window.a_max)
    if name == "scaled-stationary":
        p = _bind_call(spec, [("c", _REQUIRED)])
        if not (p["c"] > 0.0 and math.isfinite(p["c"])):
            raise ConfigError(f"scaled-stationary factor must be positive, got {p['c']:g}")
        if rate.m_star_lo <= 0.0:
            raise ConfigError("stationary intensity needs a hazard bounded away from zero")
        return scale_intensity(stationary_intensity(rate, window.a_max), p["c"])
    if name == "expage":
        p = _bind_call(spec, [("mass", _REQUIRED), ("decay", _REQUIRED)])
        if not (p["mass"] > 0.0 and p["decay"] > 0.0):
            raise ConfigError("expage needs positive mass and decay")
        return _expage_intensity(p["mass"], p["decay"], window.a_max)
    raise ConfigError(f"unknown intensity {name!r} "
                      "(catalogue: stationary, scaled-stationary, expage)")


# ---------------------------------------------------------------------------
# config assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment run needs, validated and materialized.

    ``theta_specs`` keeps the catalogue text of each observable next to the
    built ``theta_suite`` so reports can cite profiles by name.
    """

    model: RateModel
    window: Window
    init: PopulationState
    times: tuple[float, ...]
    theta_specs: tuple[tuple[str, float], ...]
    theta_suite: tuple[SeparatingObservable, ...]
    psi: TemperingWeight
    replicas: int
    seed: int
    workers: int
    quadrature: QuadratureSpec
    output_dir: Path
    density_x_bins: int = 10
    density_a_bins: int = 40
    convergence_times: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)

    def with_overrides(self, seed: int | None = None, replicas: int | None = None,
                       workers: int | None = None,
                       output_dir: str | Path | None = None) -> "ExperimentConfig":
        """Copy with CLI-level overrides applied; None keeps the config value."""
        updates: dict = {}
        if seed is not None:
            updates["seed"] = _check_seed(seed)
        if replicas is not None:
            if replicas < 2:
                raise ConfigError(f"replicas must be at least 2, got {replicas}")
            updates["replicas"] = int(replicas)
        if workers is not None:
            if workers < 1:
                raise ConfigError(f"workers must be at least 1, got {workers}")
            updates["workers"] = int(workers)
        if output_dir is not None:
            updates["output_dir"] = Path(output_dir)
        return replace(self, **updates) if updates else self


def _check_seed(seed: int) -> int:
    if not 0 <= int(seed) < 2 ** 64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return int(seed)


def _build_model(e: _Entries) -> RateModel:
    kind = e.get_str("model.kind")
    try:
        if kind == "constant":
            return ConstantRateModel(e.get_float("model.b"), e.get_float("model.m"))
        if kind == "separable-exponential":
            return SeparableExponentialRateModel(
                b0=e.get_float("model.b0"),
                m_base=e.get_float("model.m_base"),
                m_amp=e.get_float("model.m_amp"),
                center=e.get_floats("model.center", (0.0,)),
                b_decay=e.get_float("model.b_decay", 1.0),
                m_space_decay=e.get_float("model.m_space_decay", 0.0),
                m_age_decay=e.get_float("model.m_age_decay", 1.0),
            )
        if kind == "tabulated-grid":
            axes = [np.asarray(e.get_floats("model.x_grid"))]
            if e.has("model.y_grid"):
                axes.append(np.asarray(e.get_floats("model.y_grid")))
            return TabulatedRateModel(
                x_axes=axes,
                a_nodes=np.asarray(e.get_floats("model.age_grid")),
                b_values=np.asarray(e.get_floats("model.b_table")),
                m_values=np.asarray(e.get_floats("model.m_table")),
            )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise e.error(f"invalid {kind!r} model: {err}", "model.kind") from err
    raise e.error(f"unknown model kind {kind!r} "
                  "(constant, separable-exponential, tabulated-grid)", "model.kind")


def _build_window(e: _Entries) -> Window:
    lower = e.get_floats("window.lower")
    upper = e.get_floats("window.upper")
    a_max = e.get_float("window.a_max", None)
    alias = e.get_float("quadrature.a_max", None)
    if a_max is not None and alias is not None and a_max != alias:
        raise e.error("window.a_max and quadrature.a_max disagree", "quadrature.a_max")
    if a_max is None:
        a_max = alias
    if a_max is None:
        raise ConfigError("missing required key 'window.a_max'", None, e.source)
    try:
        return Window(np.asarray(lower), np.asarray(upper), a_max)
    except ValueError as err:
        raise e.error(f"invalid window: {err}", "window.lower") from err


def _build_init(e: _Entries, prefix: str, rate: RateModel,
                window: Window) -> PopulationState:
    kind = e.get_str(f"{prefix}.kind", "empty")
    if kind == "empty":
        return EmptyState()
    if kind == "poisson":
        spec = e.get_str(f"{prefix}.intensity", "stationary")
        try:
            return PoissonState(build_intensity(spec, rate, window))
        except ConfigError as err:
            raise e.error(str(err), f"{prefix}.intensity") from err
    if kind == "deterministic":
        text = e.get_str(f"{prefix}.points")
        return DeterministicState(_parse_points(e, f"{prefix}.points", text, window))
    if kind == "convolution":
        pat = re.compile(re.escape(prefix) + r"\.(\d+)\.")
        indices = sorted({int(m.group(1)) for k in e.keys_with_prefix(prefix + ".")
                          if (m := pat.match(k))})
        if len(indices) < 2:
            raise e.error("convolution needs at least 2 numbered components "
                          f"({prefix}.1.kind, {prefix}.2.kind, ...)", f"{prefix}.kind")
        return ConvolutionState(tuple(
            _build_init(e, f"{prefix}.{i}", rate, window) for i in indices))
    raise e.error(f"unknown init kind {kind!r} "
                  "(empty, poisson, deterministic, convolution)", f"{prefix}.kind")


def _parse_points(e: _Entries, key: str, text: str, window: Window) -> FiniteConfiguration:
    rows = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            raise e.error("empty point entry", key)
        coords, sep, age = chunk.partition(":")
        if not sep:
            raise e.error(f"point {chunk!r} must be 'coords:age'", key)
        try:
            x = [float(v) for v in coords.split()]
            a = float(age)
        except ValueError:
            raise e.error(f"point {chunk!r} has non-numeric parts", key) from None
        if len(x) != window.dim:
            raise e.error(f"point {chunk!r} needs {window.dim} coordinates", key)
        if not bool(window.contains_positions(np.asarray(x))):
            raise e.error(f"point {chunk!r} lies outside the window", key)
        if not 0.0 <= a <= window.a_max:
            raise e.error(f"point {chunk!r} has age outside [0, a_max]", key)
        rows.append((x, a))
    try:
        return FiniteConfiguration(np.array([r[0] for r in rows]),
                                   np.array([r[1] for r in rows]))
    except ValueError as err:
        raise e.error(f"invalid point list: {err}", key) from err


def _build_theta_suite(e: _Entries, window: Window, psi: TemperingWeight
                       ) -> tuple[tuple[tuple[str, float], ...],
                                  tuple[SeparatingObservable, ...]]:
    pat = re.compile(r"^theta\.(\d+)\.")
    indices = sorted({int(m.group(1)) for k in e.keys_with_prefix("theta.")
                      if (m := pat.match(k))})
    if indices:
        specs = []
        keys = []
        for i in indices:
            spec = e.get_str(f"theta.{i}.vartheta")
            tau = e.get_float(f"theta.{i}.tau", 0.0)
            specs.append((spec, tau))
            keys.append(f"theta.{i}.vartheta")
        specs = tuple(specs)
    else:
        specs = default_theta_specs(window)
        keys = [None] * len(specs)
    suite = []
    for (spec, tau), key in zip(specs, keys):
        try:
            profile = build_profile(spec, window)
            if not (math.isfinite(tau) and tau >= 0.0):
                raise ConfigError(f"tau must be finite and nonnegative, got {tau:g}")
            label = f"{profile.label.replace(',', ';')} tau={tau:g}"
            suite.append(SeparatingObservable(profile, tau, psi, window, label=label))
        except (ConfigError, ValueError) as err:
            raise e.error(f"observable {spec!r}: {err}", key) from err
    return specs, tuple(suite)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a config given as text; raises ConfigError with lines."""
    e = _Entries(text, source)
    model = _build_model(e)
    window = _build_window(e)
    quad = QuadratureSpec(
        x_nodes=e.get_int("quadrature.x_nodes", 32),
        a_nodes=e.get_int("quadrature.a_nodes", 64),
        n_max=e.get_int("quadrature.n_max", 12),
    )
    psi = exp_decay_weight(window.dim)
    theta_specs, theta_suite = _build_theta_suite(e, window, psi)
    init = _build_init(e, "init", model, window)

    times = e.get_floats("times", (0.25, 1.0, 4.0))
    if any(t < 0.0 or not math.isfinite(t) for t in times):
        raise e.error("times must be finite and nonnegative", "times")
    if list(times) != sorted(times):
        raise e.error("times must be sorted in increasing order", "times")
    if not times:
        raise e.error("times must not be empty", "times")

    replicas = e.get_int("replicas", 100_000)
    if replicas < 2:
        raise e.error(f"replicas must be at least 2, got {replicas}", "replicas")
    seed = e.get_int("seed", 42)
    try:
        seed = _check_seed(seed)
    except ConfigError as err:
        raise e.error(str(err), "seed") from err
    workers = e.get_int("workers", 1)
    if workers < 1:
        raise e.error(f"workers must be at least 1, got {workers}", "workers")

    output_dir = Path(e.get_str("output_dir", "out"))
    density_x_bins = e.get_int("density.x_bins", 10)
    density_a_bins = e.get_int("density.a_bins", 40)
    if density_x_bins < 1 or density_a_bins < 1:
        raise e.error("density bin counts must be positive", "density.x_bins")
    conv_times = e.get_floats("convergence.times",
                              tuple(float(k) for k in range(1, 9)))
    if any(t < 0.0 or not math.isfinite(t) for t in conv_times):
        raise e.error("convergence times must be finite and nonnegative",
                      "convergence.times")

    e.check_all_used()
    return ExperimentConfig(
        model=model,
        window=window,
        init=init,
        times=tuple(times),
        theta_specs=theta_specs,
        theta_suite=theta_suite,
        psi=psi,
        replicas=replicas,
        seed=seed,
        workers=workers,
        quadrature=quad,
        output_dir=output_dir,
        density_x_bins=density_x_bins,
        density_a_bins=density_a_bins,
        convergence_times=tuple(conv_times),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a config file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}", None, str(p)) from err
    return parse_config_text(text, source=str(p))


REFERENCE_CONFIG_TEXT = """\
# Reference verification setup: unit interval, unit rates, age cap 40.
# The observable suite and quadrature resolution use their defaults.
model.kind = constant
model.b = 1.0
model.m = 1.0

window.lower = 0.0
window.upper = 1.0
window.a_max = 40.0

init.kind = empty

times = 0.25, 1.0, 4.0
replicas = 100000
seed = 42
workers = 1
output_dir = out
"""


def reference_config(output_dir: str | Path | None = None) -> ExperimentConfig:
    """The reference setup every acceptance experiment runs against."""
    cfg = parse_config_text(REFERENCE_CONFIG_TEXT, source="<reference>")
    if output_dir is not None:
        cfg = cfg.with_overrides(output_dir=output_dir)
    return cfg
