"""Independent evaluators of the objective for cross-validation.

Both oracles transport mass forward and measure what lands inside the
target, whereas the solver transports the target backward and integrates
over its boundary; agreement between the two directions exercises the
whole transport/cost pipeline.  The oracles are for validation only and
never run inside the solver loop.
"""

from dataclasses import dataclass

import numpy as np

from .flow import ControlSignal, IntegrationError
from .problem import GaussianDensity, ProblemInstance

__all__ = ["OracleEstimate", "mc_cost", "grid_cost"]

_CHUNK = 1 << 17  # forward-advection chunk; keeps working arrays cache-sized


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    std_error: float
    n_samples: int


def _advect_forward_endpoints(field, signal: ControlSignal, x) -> np.ndarray:
    """Forward-advect points over the whole horizon, keeping endpoints only."""
    dt = signal.dt
    values = signal.values
    x = np.array(x, dtype=float)
    n = signal.n_steps
    for j in range(n):
        v = field(j * dt, x, values[j])
        v *= dt
        x += v
        if (j % 128 == 127 or j == n - 1) and not np.all(np.isfinite(x)):
            raise IntegrationError(
                f"non-finite state by t={(j + 1) * dt:.6g}", time=(j + 1) * dt)
    return x


def mc_cost(problem: ProblemInstance, signal: ControlSignal,
            n_samples: int, rng_seed: int) -> OracleEstimate:
    """Monte-Carlo objective: fraction of density samples that reach the target.

    Samples from the initial density with a seeded PCG64 generator
    (numpy's default_rng), advects each sample forward over the horizon,
    and returns the hit fraction with its binomial standard error.  The
    chunk traversal order is fixed, so a given seed reproduces the estimate
    bit for bit.

    Args:
        n_samples: at least 1000 (the binomial error bar is meaningless
            below that).
        rng_seed: seed for the deterministic sample stream.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    density = problem.density
    if hasattr(density, "sample"):
        sampler = density.sample
    elif isinstance(density, GaussianDensity):
        sampler = None
    else:
        raise TypeError("mc_cost needs a density with a .sample(rng, n) hook")

    rng = np.random.default_rng(rng_seed)
    hits = 0
    done = 0
    while done < n_samples:
        m = min(_CHUNK, n_samples - done)
        if sampler is not None:
            pts = np.asarray(sampler(rng, m), dtype=float)
        else:
            pts = density.center + density.sigma * rng.standard_normal((m, 2))
        final = _advect_forward_endpoints(problem.field, signal, pts)
        hits += int(np.count_nonzero(problem.target.contains(final)))
        done += m
    p = hits / n_samples
    se = float(np.sqrt(p * (1.0 - p) / n_samples))
    return OracleEstimate(value=p, std_error=se, n_samples=n_samples)


def grid_cost(problem: ProblemInstance, signal: ControlSignal,
              grid_half_width: float, n_cells: int) -> float:
    """Deterministic quadrature objective on a centered cartesian grid.

    Midpoint rule: each cell contributes its density mass when its center
    lands inside the target after forward advection.  The grid is centered
    on the density and must cover at least six standard deviations.
    """
    if n_cells < 32:
        raise ValueError("n_cells must be at least 32 per axis")
    density = problem.density
    sigma = getattr(density, "sigma", None)
    if sigma is not None and grid_half_width < 6.0 * sigma:
        raise ValueError("grid must cover at least 6 sigma around the density")
    center = density.center

    h = 2.0 * grid_half_width / n_cells
    axis = -grid_half_width + h * (np.arange(n_cells) + 0.5)
    xx, yy = np.meshgrid(center[0] + axis, center[1] + axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    masses = np.asarray(density(pts), dtype=float) * h * h

    total = 0.0
    for start in range(0, len(pts), _CHUNK):
        block = slice(start, start + _CHUNK)
        final = _advect_forward_endpoints(problem.field, signal, pts[block])
        inside = problem.target.contains(final)
        total += float(np.sum(masses[block][inside]))
    return total
