"""Command-line entry point: run a benchmark or config file, write artifacts.

Outputs are plain CSV (17 significant digits, deterministic bytes for a
fixed config and seed), a structured-text summary, and optional SVG frames
of the transported boundary over a density heat shading.
"""

import argparse
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import bench, oracle
from .boundary import write_curve_csv
from .flow import IntegrationError, StepSizeError
from .problem import ConfigError, load_problem, make_benchmark
from .solver import SolverConfig, optimality_residual, solve, write_diagnostics_csv

__all__ = ["RunConfig", "run", "main"]


@dataclass(frozen=True)
class RunConfig:
    benchmark: str | None = None
    config_path: str | None = None
    max_iters: int = 50
    n_time_steps: int | None = None
    dt: float | None = None
    n_boundary_pts: int | None = None
    out_dir: str = "out"
    frame_stride: int = 10
    svg: bool = False
    validate: bool = False
    seed: int = 0
    tol_g: float | None = None
    mc_samples: int = 1_000_000
    grid_cells: int = 512

    def __post_init__(self):
        if self.frame_stride < 1:
            raise ConfigError("frame stride must be >= 1")
        if (self.benchmark is None) == (self.config_path is None):
            raise ConfigError("exactly one of benchmark/config_path is required")


def _build_problem(config: RunConfig):
    if config.config_path is not None:
        problem = load_problem(config.config_path)
    else:
        problem = make_benchmark(config.benchmark)
    if config.dt is not None:
        n = int(round(problem.horizon / config.dt))
        if n < 2:
            raise ConfigError("dt too large for the horizon")
        problem = replace(problem, n_time_steps=n)
    elif config.n_time_steps is not None:
        problem = replace(problem, n_time_steps=config.n_time_steps)
    if config.n_boundary_pts is not None:
        problem = replace(problem, n_boundary_pts=config.n_boundary_pts)
    return problem


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_control_csv(path, signal):
    m = signal.values.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t," + ",".join(f"u{i + 1}" for i in range(m)) + "\n")
        for j in range(signal.n_steps):
            row = ",".join(f"{signal.values[j, i]:.17g}" for i in range(m))
            fh.write(f"{j * signal.dt:.17g},{row}\n")


_SVG_SHADE_CELLS = 64
_SVG_SIZE = 480


def _write_frame_svg(path, curve, density, extent):
    """Polyline of the boundary over a coarse heat shading of the density."""
    xmin, xmax, ymin, ymax = extent
    span_x = xmax - xmin
    span_y = ymax - ymin
    scale = _SVG_SIZE / max(span_x, span_y)

    def to_px(x, y):
        return (x - xmin) * scale, (ymax - y) * scale

    width = span_x * scale
    height = span_y * scale
    n = _SVG_SHADE_CELLS
    hx = span_x / n
    hy = span_y / n
    cx = xmin + hx * (np.arange(n) + 0.5)
    cy = ymin + hy * (np.arange(n) + 0.5)
    xx, yy = np.meshgrid(cx, cy, indexing="ij")
    rho = density(np.stack([xx, yy], axis=-1))
    peak = float(rho.max()) or 1.0

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
             f'height="{height:.0f}" viewBox="0 0 {width:.4f} {height:.4f}">']
    for i in range(n):
        for j in range(n):
            level = rho[i, j] / peak
            if level < 1e-3:
                continue
            shade = int(round(255 * (1.0 - level)))
            px, py = to_px(cx[i] - 0.5 * hx, cy[j] + 0.5 * hy)
            lines.append(
                f'<rect x="{px:.4f}" y="{py:.4f}" width="{hx * scale:.4f}" '
                f'height="{hy * scale:.4f}" fill="rgb(255,{shade},{shade})"/>')
    pts = " ".join("{:.4f},{:.4f}".format(*to_px(x, y))
                   for x, y in curve.vertices)
    lines.append(f'<polygon points="{pts}" fill="none" stroke="black" '
                 'stroke-width="1.5"/>')
    lines.append(f'<text x="6" y="16" font-size="14">t = {curve.time:.4g}</text>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _frame_extent(trajectory, density):
    pos = trajectory.positions
    sigma = getattr(density, "sigma", 1.0)
    lo = np.minimum(pos.min(axis=(0, 1)), density.center - 3.0 * sigma)
    hi = np.maximum(pos.max(axis=(0, 1)), density.center + 3.0 * sigma)
    pad = 0.05 * float(np.max(hi - lo))
    return (lo[0] - pad, hi[0] + pad, lo[1] - pad, hi[1] + pad)


def run(config: RunConfig) -> int:
    """Execute one solver run and write all artifacts under the output dir."""
    wall_start = time.perf_counter()
    problem = _build_problem(config)
    u0 = bench.initial_signal(problem)
    state = solve(problem, u0,
                  SolverConfig(max_iters=config.max_iters, tol_g=config.tol_g))
    residual = optimality_residual(state)

    out = Path(config.out_dir)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)

    n_nodes = len(state.trajectory)
    extent = _frame_extent(state.trajectory, problem.density) if config.svg else None
    for j in range(0, n_nodes, config.frame_stride):
        curve = state.trajectory.curve(j)
        with open(frames_dir / f"frame_{j:04d}.csv", "w",
                  encoding="utf-8", newline="\n") as fh:
            write_curve_csv(fh, curve)
        if config.svg:
            _write_frame_svg(frames_dir / f"frame_{j:04d}.svg",
                             curve, problem.density, extent)

    _write_control_csv(out / "control.csv", state.control)
    with open(out / "convergence.csv", "w", encoding="utf-8", newline="\n") as fh:
        write_diagnostics_csv(fh, state.diagnostics)

    summary = dict(problem.metadata)
    summary.update({
        "n_time_steps": problem.n_time_steps,
        "n_boundary_pts": problem.n_boundary_pts,
        "dt": problem.dt,
        "iterations": state.iteration,
        "termination": state.termination_reason,
        "initial_cost": state.initial_cost,
        "final_cost": state.cost,
        "final_residual": residual,
        "seed": config.seed,
    })

    if config.validate:
        mc = oracle.mc_cost(problem, state.control, config.mc_samples, config.seed)
        sigma = getattr(problem.density, "sigma", 1.0)
        grid = oracle.grid_cost(problem, state.control,
                                grid_half_width=8.0 * sigma,
                                n_cells=config.grid_cells)
        mc_gap = abs(state.cost - mc.value)
        grid_gap = abs(state.cost - grid)
        mc_tol = max(3.0 * mc.std_error, 1e-2)
        summary.update({
            "stokes_mass": state.cost,
            "mc_value": mc.value,
            "mc_std_error": mc.std_error,
            "mc_samples": mc.n_samples,
            "grid_value": grid,
            "grid_cells": config.grid_cells,
            "stokes_vs_mc": mc_gap,
            "stokes_vs_mc_tolerance": mc_tol,
            "stokes_vs_mc_agree": mc_gap <= mc_tol,
            "stokes_vs_grid": grid_gap,
        })

    summary["wall_time_s"] = time.perf_counter() - wall_start
    with open(out / "summary", "w", encoding="utf-8", newline="\n") as fh:
        for key, value in summary.items():
            fh.write(f"{key}: {_fmt(value)}\n")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="massteer",
        description="Maximize the mass a transported density places inside "
                    "a target set; writes boundary frames, the control, and "
                    "convergence diagnostics as CSV.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--benchmark", choices=("boat", "pendulum", "sheep"),
                     help="built-in problem to solve")
    src.add_argument("--config", metavar="PATH",
                     help="YAML problem configuration file")
    p.add_argument("--iters", type=int, default=50, metavar="N",
                   help="iteration budget (default 50)")
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--dt", type=float, metavar="FLOAT",
                      help="time step (overrides the problem's grid)")
    grid.add_argument("--time-steps", type=int, metavar="N",
                      help="number of time steps")
    p.add_argument("--boundary-points", type=int, metavar="N",
                   help="number of boundary sample points")
    p.add_argument("--out", default="out", metavar="DIR",
                   help="output directory (default ./out)")
    p.add_argument("--frames-stride", type=int, default=10, metavar="N",
                   help="write every N-th boundary snapshot (default 10)")
    p.add_argument("--svg", action="store_true",
                   help="also render each frame as SVG")
    p.add_argument("--validate", action="store_true",
                   help="cross-check the final objective with the "
                        "Monte-Carlo and grid oracles")
    p.add_argument("--seed", type=int, default=0, metavar="N",
                   help="seed for the Monte-Carlo oracle (default 0)")
    p.add_argument("--tol-g", type=float, default=None, metavar="FLOAT",
                   help="absolute residual tolerance (default: 1e-6 of the "
                        "initial residual)")
    p.add_argument("--mc-samples", type=int, default=1_000_000, metavar="N",
                   help="Monte-Carlo sample count for --validate")
    p.add_argument("--grid-cells", type=int, default=512, metavar="N",
                   help="grid oracle resolution per axis for --validate")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = RunConfig(
            benchmark=args.benchmark,
            config_path=args.config,
            max_iters=args.iters,
            n_time_steps=args.time_steps,
            dt=args.dt,
            n_boundary_pts=args.boundary_points,
            out_dir=args.out,
            frame_stride=args.frames_stride,
            svg=args.svg,
            validate=args.validate,
            seed=args.seed,
            tol_g=args.tol_g,
            mc_samples=args.mc_samples,
            grid_cells=args.grid_cells)
        return run(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (IntegrationError, StepSizeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        for attr in ("time", "position", "divergence"):
            value = getattr(exc, attr, None)
            if value is not None:
                print(f"  {attr}: {value}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
