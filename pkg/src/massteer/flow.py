"""Characteristic integration for the controlled transport problem.

Trajectories of dx/dt = v(t, x, u(t)) are integrated with fixed-step
explicit Euler on the control grid (a Heun option exists for convergence
studies).  The volume factor along a characteristic solves the scalar
linear ODE d(det)/dt = det * div v, discretized multiplicatively so that
positivity is preserved for dt*|div| < 1 and the density identity
rho(t) * det(t) = rho(0) holds by construction.

Control convention: u(t) = values[floor(t / dt)], constant on each
right-open step.  A forward step leaving node j uses values[j] evaluated
at t_j; a backward step landing on node j-1 uses values[j-1] evaluated at
t_{j-1}, so that for state-independent fields the backward step inverts
the forward one exactly.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ControlSignal",
    "Characteristic",
    "IntegrationError",
    "StepSizeError",
    "advect",
    "trace_characteristic",
    "integrate_positions",
    "volume_density_along",
]


class IntegrationError(RuntimeError):
    """Non-finite state encountered while integrating characteristics."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class StepSizeError(RuntimeError):
    """Volume factor lost positivity; the time step is too coarse."""

    def __init__(self, message, time=None, position=None, divergence=None):
        super().__init__(message)
        self.time = time
        self.position = position
        self.divergence = divergence


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control on a uniform grid: values[j] on
    [j*dt, (j+1)*dt), with the final interval closed at the horizon."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dt", float(self.dt))
        if values.ndim != 2 or len(values) < 1:
            raise ValueError("signal values must have shape (n_steps, m)")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

    @classmethod
    def constant(cls, u, n_steps: int, dt: float) -> "ControlSignal":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(np.tile(u, (n_steps, 1)), dt)

    @property
    def n_steps(self) -> int:
        return len(self.values)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def at_time(self, t: float) -> np.ndarray:
        j = min(int(np.floor(t / self.dt)), self.n_steps - 1)
        return self.values[max(j, 0)]

    def refine(self, k: int) -> "ControlSignal":
        """Same control function on a k-times finer integration grid."""
        if k < 1:
            raise ValueError("refinement factor must be >= 1")
        return ControlSignal(np.repeat(self.values, k, axis=0), self.dt / k)

    def check_admissible(self, controls, tol: float = 1e-12) -> bool:
        return all(controls.contains(u, tol) for u in self.values)


@dataclass(frozen=True)
class Characteristic:
    """One trajectory with its volume factor and transported density.

    ``positions[j]`` is the state at node t_j, ``jacobian_det[j]`` the
    volume factor anchored at time 0, and ``density[j]`` the density value
    carried by the characteristic, density[j] = density[0] / jacobian_det[j].
    """

    times: np.ndarray
    positions: np.ndarray
    jacobian_det: np.ndarray
    density: np.ndarray


def _grid_index(t: float, dt: float, n_steps: int) -> int:
    j = int(round(t / dt))
    if abs(t - j * dt) > 1e-9 * max(1.0, abs(t)) or j < 0 or j > n_steps:
        raise ValueError(f"time {t} is not a node of the integration grid")
    return j


def _euler_step_forward(field, signal, j, x, dt):
    return x + dt * field(j * dt, x, signal.values[j])


def _euler_step_backward(field, signal, j, x, dt):
    # step from node j down to node j-1; the interval's control is values[j-1]
    t = (j - 1) * dt
    return x - dt * field(t, x, signal.values[j - 1])


def _heun_step_forward(field, signal, j, x, dt):
    u = signal.values[j]
    t = j * dt
    k1 = field(t, x, u)
    k2 = field(t + dt, x + dt * k1, u)
    return x + 0.5 * dt * (k1 + k2)


def _heun_step_backward(field, signal, j, x, dt):
    u = signal.values[j - 1]
    t = (j - 1) * dt
    k1 = field(t + dt, x, u)
    k2 = field(t, x - dt * k1, u)
    return x - 0.5 * dt * (k1 + k2)


_STEPPERS = {
    ("euler", True): _euler_step_forward,
    ("euler", False): _euler_step_backward,
    ("heun", True): _heun_step_forward,
    ("heun", False): _heun_step_backward,
}


def advect(field, signal: ControlSignal, t_from: float, t_to: float, x,
           method: str = "euler") -> np.ndarray:
    """Move a point along characteristics between two grid times.

    Supports backward motion (t_to < t_from).  Raises IntegrationError with
    the failing time if the state leaves the finite range.
    """
    dt = signal.dt
    j0 = _grid_index(t_from, dt, signal.n_steps)
    j1 = _grid_index(t_to, dt, signal.n_steps)
    x = np.asarray(x, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("starting point must be finite")
    if j0 == j1:
        return x
    forward = j1 > j0
    step = _STEPPERS[(method, forward)]
    rng = range(j0, j1) if forward else range(j0, j1, -1)
    for j in rng:
        x = step(field, signal, j, x, dt)
        if not np.all(np.isfinite(x)):
            t_fail = (j + 1) * dt if forward else (j - 1) * dt
            raise IntegrationError(
                f"non-finite state at t={t_fail:.6g}", time=t_fail)
    return x


def integrate_positions(field, signal: ControlSignal, x0,
                        backward: bool = False, method: str = "euler") -> np.ndarray:
    """Integrate an ensemble over the whole grid, keeping every node.

    Args:
        x0: states of shape (..., 2); anchored at t=0 (forward) or at the
            horizon (backward).

    Returns:
        Array of shape (n_steps + 1, ..., 2) indexed by grid node, always
        laid out from t=0 to the horizon regardless of direction.
    """
    n = signal.n_steps
    dt = signal.dt
    x0 = np.asarray(x0, dtype=float)
    out = np.empty((n + 1,) + x0.shape)
    if not backward:
        out[0] = x0
        step = _STEPPERS[(method, True)]
        for j in range(n):
            out[j + 1] = step(field, signal, j, out[j], dt)
            if not np.all(np.isfinite(out[j + 1])):
                raise IntegrationError(
                    f"non-finite state at t={(j + 1) * dt:.6g}", time=(j + 1) * dt)
    else:
        out[n] = x0
        step = _STEPPERS[(method, False)]
        for j in range(n, 0, -1):
            out[j - 1] = step(field, signal, j, out[j], dt)
            if not np.all(np.isfinite(out[j - 1])):
                raise IntegrationError(
                    f"non-finite state at t={(j - 1) * dt:.6g}", time=(j - 1) * dt)
    return out


def volume_density_along(field, signal: ControlSignal, density, positions,
                         method: str = "euler"):
    """Volume factors and densities along already-integrated positions.

    The factor is always anchored at time 0 (jacobian_det[0] = 1), matching
    rho(t, x) = rho0(y) / det at x = position(t) of the characteristic
    through y = position(0).  Raises StepSizeError if any factor reaches
    zero or below.

    Args:
        positions: (n_steps + 1, ..., 2) array from integrate_positions.

    Returns:
        (jacobian_det, density_values) of shape (n_steps + 1, ...).
    """
    n = signal.n_steps
    dt = signal.dt
    det = np.empty(positions.shape[:-1])
    det[0] = 1.0
    for j in range(n):
        t = j * dt
        u = signal.values[j]
        div = field.divergence(t, positions[j], u)
        if method == "heun":
            factor = 1.0 + dt * div
            div_next = field.divergence(t + dt, positions[j + 1], u)
            factor = 1.0 + 0.5 * dt * (div + div_next * factor)
        else:
            factor = 1.0 + dt * div
        if np.any(factor <= 0.0):
            idx = np.unravel_index(int(np.argmin(factor)), np.shape(factor))
            raise StepSizeError(
                f"volume factor lost positivity at t={t + dt:.6g}; "
                "reduce the time step",
                time=t + dt,
                position=positions[j][idx],
                divergence=np.asarray(div)[idx] if np.ndim(div) else float(div))
        det[j + 1] = det[j] * factor
    rho0 = np.asarray(density(positions[0]), dtype=float)
    return det, rho0 / det


def trace_characteristic(field, signal: ControlSignal, density, y0,
                         direction: str = "forward",
                         method: str = "euler") -> Characteristic:
    """Trace one characteristic and its volume/density payload.

    Args:
        y0: anchor point; at t=0 for "forward", at the horizon for
            "backward".  In both cases positions cover the full grid and
            the volume factor is integrated forward from t=0.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    y0 = np.asarray(y0, dtype=float).reshape(2)
    if not np.all(np.isfinite(y0)):
        raise ValueError("anchor point must be finite")
    positions = integrate_positions(field, signal, y0,
                                    backward=(direction == "backward"),
                                    method=method)
    det, rho = volume_density_along(field, signal, density, positions, method)
    times = np.arange(signal.n_steps + 1) * signal.dt
    return Characteristic(times=times, positions=positions,
                          jacobian_det=det, density=rho)
