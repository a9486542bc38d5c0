"""Problem data model: controlled vector field, admissible control set,
initial density, target set, and the three built-in benchmarks.

Everything here is immutable after construction and safe to share across
workers.  Point arguments are numpy arrays of shape (..., 2); evaluators
are expected to broadcast over the leading axes.
"""

from dataclasses import dataclass, field as dataclass_field
from typing import Callable

import numpy as np
from scipy.special import erf, erfc

__all__ = [
    "ConfigError",
    "ControlAffineField",
    "ControlSet",
    "BoxControlSet",
    "BallControlSet",
    "SimplexControlSet",
    "GaussianDensity",
    "CustomDensity",
    "CircleTarget",
    "EllipseTarget",
    "ProblemInstance",
    "make_benchmark",
    "load_problem",
    "BENCHMARK_NAMES",
]

SET_TOL = 1e-12


class ConfigError(ValueError):
    """Raised for unknown or invalid configuration keys/values."""


# ----------------------------------------------------------------------
# Controlled vector field
# ----------------------------------------------------------------------

class ControlAffineField:
    """Control-affine planar vector field: drift plus weighted channels.

    The full field is

        value(t, x, u) = drift(t, x) + sum_i coeff_i(t, u) * channels[i](t, x)

    where ``coeff_i`` defaults to the coordinate projection u_i.  Divergence
    (needed by the volume-evolution ODE) is taken from the analytic pieces
    when supplied, otherwise by central finite differences on the full field.

    Args:
        drift: callable (t, x) -> (..., 2) array.
        channels: sequence of callables (t, x) -> (..., 2), one per control
            component.
        channel_maps: optional callable (t, u) -> (m,) coefficient vector.
            Defaults to the identity in u.  Nonlinear maps are allowed for
            simulation, but the pointwise argmin in the solver assumes the
            identity map.
        drift_divergence: optional callable (t, x) -> (...) with the analytic
            divergence of the drift.
        channel_divergences: optional sequence of callables (t, x) -> (...),
            analytic divergences of the channels.  Both analytic pieces must
            be present for the analytic path to be used.
        fd_step: step for the finite-difference divergence fallback.
    """

    def __init__(self, drift, channels=(), channel_maps=None,
                 drift_divergence=None, channel_divergences=None,
                 fd_step: float = 1e-5):
        self.drift = drift
        self.channels = tuple(channels)
        self._channel_maps = channel_maps
        self.fd_step = float(fd_step)
        self._drift_div = drift_divergence
        self._channel_divs = (tuple(channel_divergences)
                              if channel_divergences is not None else None)
        if self._channel_divs is not None and len(self._channel_divs) != len(self.channels):
            raise ValueError("need one channel divergence per channel")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def has_analytic_divergence(self) -> bool:
        return self._drift_div is not None and (
            self._channel_divs is not None or not self.channels)

    def channel_coefficients(self, t: float, u) -> np.ndarray:
        """Coefficient vector multiplying the channels at (t, u)."""
        if self._channel_maps is None:
            return np.atleast_1d(np.asarray(u, dtype=float))
        return np.atleast_1d(np.asarray(self._channel_maps(t, u), dtype=float))

    def __call__(self, t: float, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        value = np.asarray(self.drift(t, x), dtype=float)
        if (value.shape != x.shape or not value.flags.writeable
                or np.may_share_memory(value, x)):
            value = np.array(np.broadcast_to(value, x.shape), dtype=float)
        if self.channels:
            coeffs = self.channel_coefficients(t, u)
            for k, channel in enumerate(self.channels):
                c = coeffs[k]
                if c != 0.0:
                    value += c * np.asarray(channel(t, x), dtype=float)
        return value

    def divergence(self, t: float, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.has_analytic_divergence:
            div = np.asarray(self._drift_div(t, x), dtype=float)
            div = np.broadcast_to(div, x.shape[:-1]).copy()
            if self.channels:
                coeffs = self.channel_coefficients(t, u)
                for k, channel_div in enumerate(self._channel_divs):
                    c = coeffs[k]
                    if c != 0.0:
                        div += c * np.asarray(channel_div(t, x), dtype=float)
            return div
        return self._fd_divergence(t, x, u)

    def _fd_divergence(self, t, x, u):
        h = self.fd_step
        e1 = np.array([h, 0.0])
        e2 = np.array([0.0, h])
        d1 = self(t, x + e1, u)[..., 0] - self(t, x - e1, u)[..., 0]
        d2 = self(t, x + e2, u)[..., 1] - self(t, x - e2, u)[..., 1]
        return (d1 + d2) / (2.0 * h)


# ----------------------------------------------------------------------
# Admissible control sets
# ----------------------------------------------------------------------

class ControlSet:
    """Compact admissible set with a closed-form linear minimizer."""

    dimension: int

    def linear_argmin(self, c: np.ndarray) -> np.ndarray:
        """Minimizer of c . w over the set (deterministic tie-breaks)."""
        raise NotImplementedError

    def contains(self, u, tol: float = SET_TOL) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class BoxControlSet(ControlSet):
    """Axis-aligned box [lo_1, hi_1] x ... x [lo_m, hi_m]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D vectors of equal length")
        if np.any(self.hi < self.lo):
            raise ValueError("box requires hi >= lo componentwise")

    @property
    def dimension(self) -> int:
        return self.lo.size

    def linear_argmin(self, c):
        c = np.asarray(c, dtype=float)
        # ties (c == 0) resolve to the lower corner
        return np.where(c < 0.0, self.hi, self.lo)

    def contains(self, u, tol=SET_TOL):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))


@dataclass(frozen=True)
class BallControlSet(ControlSet):
    """Euclidean ball of given center and radius."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.atleast_1d(np.asarray(self.center, dtype=float)))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius < 0.0:
            raise ValueError("ball radius must be >= 0")

    @property
    def dimension(self) -> int:
        return self.center.size

    def linear_argmin(self, c):
        c = np.asarray(c, dtype=float)
        norm = float(np.linalg.norm(c))
        if norm == 0.0:
            return self.center.copy()
        return self.center - self.radius * c / norm

    def contains(self, u, tol=SET_TOL):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.linalg.norm(u - self.center) <= self.radius + tol)


@dataclass(frozen=True)
class SimplexControlSet(ControlSet):
    """Standard simplex {u >= 0, sum u = 1} in R^m."""

    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("simplex dimension must be >= 1")

    @property
    def dimension(self) -> int:
        return self.m

    def linear_argmin(self, c):
        c = np.asarray(c, dtype=float)
        vertex = np.zeros(self.m)
        vertex[int(np.argmin(c))] = 1.0  # argmin takes the earliest index on ties
        return vertex

    def contains(self, u, tol=SET_TOL):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(u >= -tol) and np.all(u <= 1.0 + tol)
                    and abs(float(np.sum(u)) - 1.0) <= tol)

    def uniform(self) -> np.ndarray:
        return np.full(self.m, 1.0 / self.m)


# ----------------------------------------------------------------------
# Initial densities
# ----------------------------------------------------------------------

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class GaussianDensity:
    """Isotropic planar Gaussian with unit total mass.

    ``partial_antiderivative(x1, x2)`` returns the running integral of the
    density in the first coordinate from 0 to x1, in closed form via the
    error function.  This is the primitive used by the boundary-integral
    mass evaluation.
    """

    sigma: float
    center: np.ndarray = dataclass_field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d2 = np.sum((x - self.center) ** 2, axis=-1)
        s2 = self.sigma ** 2
        return np.exp(-d2 / (2.0 * s2)) / (2.0 * np.pi * s2)

    def partial_antiderivative(self, x1, x2) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        c1, c2 = self.center
        s = self.sigma
        along = erf((x1 - c1) / (s * SQRT2)) + erf(c1 / (s * SQRT2))
        across = np.exp(-((x2 - c2) ** 2) / (2.0 * s * s))
        return across * along / (2.0 * s * np.sqrt(2.0 * np.pi))

    def tail_antiderivative(self, x1, x2) -> np.ndarray:
        """Running integral of the density in x1 anchored at -infinity.

        Same primitive up to a function of x2 alone (so closed line
        integrals agree), but its values vanish with the local density in
        the left tail instead of cancelling between O(1) terms.  The mass
        evaluation uses this form so that objectives far below the noise
        floor of the zero-anchored form still come out with full relative
        accuracy.
        """
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        c1, c2 = self.center
        s = self.sigma
        along = erfc((c1 - x1) / (s * SQRT2))
        across = np.exp(-((x2 - c2) ** 2) / (2.0 * s * s))
        return across * along / (2.0 * s * np.sqrt(2.0 * np.pi))


class CustomDensity:
    """User-supplied density hook.

    When no antiderivative is given, the running integral in x1 falls back
    to composite-midpoint quadrature with fixed step ``quad_step``.
    """

    def __init__(self, evaluator: Callable, antiderivative: Callable | None = None,
                 center=(0.0, 0.0), quad_step: float = 1e-3):
        self._evaluator = evaluator
        self._antiderivative = antiderivative
        self.center = np.asarray(center, dtype=float).reshape(2)
        self.quad_step = float(quad_step)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self._evaluator(np.asarray(x, dtype=float)), dtype=float)

    def partial_antiderivative(self, x1, x2) -> np.ndarray:
        if self._antiderivative is not None:
            return np.asarray(self._antiderivative(x1, x2), dtype=float)
        return self._quadrature_antiderivative(x1, x2)

    def _quadrature_antiderivative(self, x1, x2):
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        x1b, x2b = np.broadcast_arrays(x1, x2)
        shape = x1b.shape
        x1f = x1b.ravel()
        x2f = x2b.ravel()
        counts = np.maximum(np.ceil(np.abs(x1f) / self.quad_step).astype(int), 1)
        n_max = int(counts.max())
        # midpoints of each point's own subdivision, padded to a rectangle
        k = np.arange(n_max)
        frac = (k[None, :] + 0.5) / counts[:, None]
        mask = k[None, :] < counts[:, None]
        xi = x1f[:, None] * frac
        pts = np.stack([xi, np.broadcast_to(x2f[:, None], xi.shape)], axis=-1)
        vals = self(pts)
        steps = (x1f / counts)[:, None]
        out = np.sum(np.where(mask, vals, 0.0) * steps, axis=1)
        return out.reshape(shape)


# ----------------------------------------------------------------------
# Target sets
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CircleTarget:
    """Closed disc target; boundary sampled counterclockwise."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0.0:
            raise ValueError("target radius must be positive")

    @property
    def area(self) -> float:
        return np.pi * self.radius ** 2

    def points_at(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        return self.center + self.radius * np.stack(
            [np.cos(thetas), np.sin(thetas)], axis=-1)

    def boundary_points(self, n_pts: int) -> np.ndarray:
        if n_pts < 8:
            raise ValueError("need at least 8 boundary points")
        return self.points_at(2.0 * np.pi * np.arange(n_pts) / n_pts)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.sum((x - self.center) ** 2, axis=-1) <= self.radius ** 2

    def params(self) -> dict:
        return {"shape": "circle", "center": self.center.tolist(),
                "radius": self.radius}


@dataclass(frozen=True)
class EllipseTarget:
    """Axis-aligned elliptical target with semi-axes (a, b)."""

    center: np.ndarray
    semi_axes: tuple

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        a, b = self.semi_axes
        object.__setattr__(self, "semi_axes", (float(a), float(b)))
        if a <= 0.0 or b <= 0.0:
            raise ValueError("semi-axes must be positive")

    @property
    def area(self) -> float:
        a, b = self.semi_axes
        return np.pi * a * b

    def points_at(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        a, b = self.semi_axes
        return self.center + np.stack(
            [a * np.cos(thetas), b * np.sin(thetas)], axis=-1)

    def boundary_points(self, n_pts: int) -> np.ndarray:
        if n_pts < 8:
            raise ValueError("need at least 8 boundary points")
        return self.points_at(2.0 * np.pi * np.arange(n_pts) / n_pts)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a, b = self.semi_axes
        y = x - self.center
        return (y[..., 0] / a) ** 2 + (y[..., 1] / b) ** 2 <= 1.0

    def params(self) -> dict:
        return {"shape": "ellipse", "center": self.center.tolist(),
                "semi_axes": list(self.semi_axes)}


# ----------------------------------------------------------------------
# Problem instance
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemInstance:
    """One complete instance: dynamics, controls, density, target, grids."""

    field: ControlAffineField
    controls: ControlSet
    density: GaussianDensity | CustomDensity
    target: CircleTarget | EllipseTarget
    horizon: float
    n_time_steps: int
    n_boundary_pts: int
    metadata: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.n_time_steps < 2:
            raise ValueError("n_time_steps must be >= 2")
        if self.n_boundary_pts < 8:
            raise ValueError("n_boundary_pts must be >= 8")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_time_steps

    def time_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_time_steps + 1)


# ----------------------------------------------------------------------
# Benchmarks
# ----------------------------------------------------------------------

BENCHMARK_NAMES = ("boat", "pendulum", "sheep")

_COMMON_KEYS = {"T", "n_time_steps", "n_boundary_pts", "sigma", "target_center"}
_BENCHMARK_KEYS = {
    "boat": _COMMON_KEYS | {"alpha", "beta", "u_max", "target_radius"},
    "pendulum": _COMMON_KEYS | {"u_max", "target_radius"},
    "sheep": _COMMON_KEYS | {"alpha", "beta", "R", "target_semi_axes"},
}


def _check_overrides(name: str, overrides: dict) -> dict:
    allowed = _BENCHMARK_KEYS[name]
    for key in overrides:
        if key not in allowed:
            raise ConfigError(
                f"benchmark '{name}' does not accept override '{key}'"
                f" (allowed: {', '.join(sorted(allowed))})")
    return dict(overrides)


def _boat(ov: dict) -> ProblemInstance:
    alpha = float(ov.get("alpha", 0.5))
    beta = float(ov.get("beta", 0.5))
    u_max = float(ov.get("u_max", 0.75))

    def drift(t, x):
        out = np.zeros_like(x)
        out[..., 0] = alpha + np.exp(-beta * x[..., 1] ** 2)
        return out

    zero_div = lambda t, x: np.zeros(np.shape(x)[:-1])
    channels = (lambda t, x: np.broadcast_to([1.0, 0.0], np.shape(x)),
                lambda t, x: np.broadcast_to([0.0, 1.0], np.shape(x)))
    field = ControlAffineField(
        drift, channels,
        drift_divergence=zero_div,
        channel_divergences=(zero_div, zero_div))
    params = {"benchmark": "boat", "alpha": alpha, "beta": beta, "u_max": u_max}
    return _assemble(
        field,
        BallControlSet(np.zeros(2), u_max),
        CircleTarget(ov.get("target_center", (-3.0, 0.0)),
                     ov.get("target_radius", 1.0)),
        ov, default_T=12.0, params=params)


def _pendulum(ov: dict) -> ProblemInstance:
    u_max = float(ov.get("u_max", 0.5))

    def drift(t, x):
        out = np.empty_like(x)
        out[..., 0] = x[..., 1]
        out[..., 1] = np.cos(x[..., 0])
        return out

    zero_div = lambda t, x: np.zeros(np.shape(x)[:-1])
    field = ControlAffineField(
        drift, (lambda t, x: np.broadcast_to([1.0, 0.0], np.shape(x)),),
        drift_divergence=zero_div,
        channel_divergences=(zero_div,))
    params = {"benchmark": "pendulum", "u_max": u_max}
    return _assemble(
        field,
        BoxControlSet([-u_max], [u_max]),
        CircleTarget(ov.get("target_center", (np.pi / 2.0, 0.0)),
                     ov.get("target_radius", 1.0)),
        ov, default_T=6.0, params=params)


def _sheep(ov: dict) -> ProblemInstance:
    # field magnitudes and the repeller ring radius are configurable; the
    # chosen values are echoed into ProblemInstance.metadata.  The defaults
    # keep the backward boundary transport well-resolved: stronger/farther
    # repellers squeeze the curve into filaments the line integral cannot
    # track at practical vertex counts.
    alpha = float(ov.get("alpha", 1.0))
    beta = float(ov.get("beta", 2.0))
    ring_radius = float(ov.get("R", 2.5))
    m = 6
    center = np.asarray(ov.get("target_center", (0.0, 0.0)), dtype=float)
    angles = 2.0 * np.pi * np.arange(m) / m
    sites = np.stack([ring_radius * np.cos(angles),
                      ring_radius * np.sin(angles)], axis=-1)

    def drift(t, x, _c=center):
        y = x - _c
        scale = alpha / np.sqrt(1.0 + np.sum(y * y, axis=-1))
        return scale[..., None] * y

    def drift_div(t, x, _c=center):
        q = np.sum((x - _c) ** 2, axis=-1)
        return alpha * (2.0 + q) / (1.0 + q) ** 1.5

    def make_repeller(site):
        def channel(t, x):
            y = x - site
            q = np.sum(y * y, axis=-1)
            return (beta * np.exp(-q * q))[..., None] * y

        def channel_div(t, x):
            y = x - site
            q = np.sum(y * y, axis=-1)
            return beta * np.exp(-q * q) * (2.0 - 4.0 * q * q)

        return channel, channel_div

    pairs = [make_repeller(site) for site in sites]
    field = ControlAffineField(
        drift, [p[0] for p in pairs],
        drift_divergence=drift_div,
        channel_divergences=[p[1] for p in pairs])
    a, b = ov.get("target_semi_axes", (2.0, 1.2))
    params = {"benchmark": "sheep", "alpha": alpha, "beta": beta,
              "R": ring_radius, "m": m}
    return _assemble(
        field,
        SimplexControlSet(m),
        EllipseTarget(center, (a, b)),
        ov, default_T=3.0, params=params)


def _assemble(field, controls, target, ov, default_T, params) -> ProblemInstance:
    sigma = float(ov.get("sigma", 1.0))
    horizon = float(ov.get("T", default_T))
    meta = dict(params)
    meta.update({"sigma": sigma, "T": horizon})
    meta["target"] = target.params()
    return ProblemInstance(
        field=field,
        controls=controls,
        density=GaussianDensity(sigma),
        target=target,
        horizon=horizon,
        n_time_steps=int(ov.get("n_time_steps", 1200)),
        n_boundary_pts=int(ov.get("n_boundary_pts", 400)),
        metadata=meta)


_BUILDERS = {"boat": _boat, "pendulum": _pendulum, "sheep": _sheep}


def make_benchmark(name: str, overrides: dict | None = None) -> ProblemInstance:
    """Build one of the built-in benchmark problems.

    Args:
        name: "boat", "pendulum" or "sheep".
        overrides: optional parameter map; recognized keys depend on the
            benchmark (see _BENCHMARK_KEYS).  Unknown keys raise ConfigError.

    The boat rows a craft across a river drift toward an island, the
    pendulum damps an uncertain oscillator toward its rest point, and the
    sheep problem herds an expanding crowd with a ring of repellers whose
    intensities live on the simplex.
    """
    if name not in _BUILDERS:
        raise ConfigError(
            f"unknown benchmark '{name}' (expected one of {', '.join(BENCHMARK_NAMES)})")
    ov = _check_overrides(name, overrides or {})
    return _BUILDERS[name](ov)


# ----------------------------------------------------------------------
# Configuration files
# ----------------------------------------------------------------------

_CONFIG_SCHEMA = {
    "problem": {"name", "T", "n_time_steps", "n_boundary_pts"},
    "field": {"alpha", "beta", "R"},
    "control": {"u_max"},
    "density": {"sigma"},
    "target": {"center", "radius", "semi_axes"},
}

_CONFIG_TO_OVERRIDE = {
    ("problem", "T"): "T",
    ("problem", "n_time_steps"): "n_time_steps",
    ("problem", "n_boundary_pts"): "n_boundary_pts",
    ("field", "alpha"): "alpha",
    ("field", "beta"): "beta",
    ("field", "R"): "R",
    ("control", "u_max"): "u_max",
    ("density", "sigma"): "sigma",
    ("target", "center"): "target_center",
    ("target", "radius"): "target_radius",
    ("target", "semi_axes"): "target_semi_axes",
}


def load_problem(path) -> ProblemInstance:
    """Build a ProblemInstance from a YAML configuration file.

    The file selects a benchmark (`problem.name`) and overrides documented
    keys; any unrecognized section or key is a hard error naming the
    offending entry.
    """
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping of sections")

    overrides: dict = {}
    name = None
    for section, entries in raw.items():
        if section not in _CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section '{section}'")
        if not isinstance(entries, dict):
            raise ConfigError(f"section '{section}' must be a mapping")
        for key, value in entries.items():
            if key not in _CONFIG_SCHEMA[section]:
                raise ConfigError(f"unknown config key '{section}.{key}'")
            if (section, key) == ("problem", "name"):
                name = str(value)
            else:
                overrides[_CONFIG_TO_OVERRIDE[(section, key)]] = value
    if name is None:
        raise ConfigError("config must set 'problem.name'")
    if "target_semi_axes" in overrides:
        overrides["target_semi_axes"] = tuple(overrides["target_semi_axes"])
    return make_benchmark(name, overrides)
