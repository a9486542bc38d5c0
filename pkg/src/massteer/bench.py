"""Frozen benchmark baselines and regression checking.

A baseline records the per-iteration cost sequence of one benchmark run
under a fully pinned configuration.  The configuration hash covers the
physical problem identity (dynamics parameters, density, target, horizon,
start control); discretization and iteration budget are recorded alongside
but excluded from the hash, so discretization sensitivity shows up as a
compared (and failing) drift rather than as a refused comparison.
"""

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .flow import ControlSignal
from .problem import (BallControlSet, BoxControlSet, ProblemInstance,
                      SimplexControlSet, make_benchmark)
from .solver import SolverConfig, optimality_residual, solve

__all__ = [
    "BaselineRecord",
    "RegressionReport",
    "initial_signal",
    "config_hash",
    "record_baseline",
    "load_baseline",
    "regression_check",
]

# run parameters recorded in the snapshot but excluded from the identity hash
_RUN_KEYS = ("n_time_steps", "n_boundary_pts", "max_iters")

_DEFAULT_BASELINE_RUN = {"n_time_steps": 240, "n_boundary_pts": 64, "max_iters": 6}


def initial_signal(problem: ProblemInstance) -> ControlSignal:
    """Unbiased start: zero effort where admissible, else the symmetric point.

    Ball controls start at the center, boxes at zero clipped inside, and
    simplex controls at the uniform weight vector.
    """
    controls = problem.controls
    if isinstance(controls, SimplexControlSet):
        u = controls.uniform()
    elif isinstance(controls, BallControlSet):
        u = controls.center.copy()
    elif isinstance(controls, BoxControlSet):
        u = np.clip(np.zeros(controls.dimension), controls.lo, controls.hi)
    else:
        raise TypeError(f"no default start for control set {type(controls).__name__}")
    return ControlSignal.constant(u, problem.n_time_steps,
                                  problem.horizon / problem.n_time_steps)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(problem_params: dict) -> str:
    """Identity hash over the physical problem parameters."""
    return hashlib.sha256(_canonical(problem_params).encode()).hexdigest()


@dataclass(frozen=True)
class BaselineRecord:
    name: str
    problem_params: dict
    run_params: dict
    config_hash: str
    costs: list
    final_residual: float
    stamp: str

    def content_stamp(self) -> str:
        payload = _canonical({
            "name": self.name,
            "problem": self.problem_params,
            "run": self.run_params,
            "costs": [f"{c:.17g}" for c in self.costs],
            "final_residual": f"{self.final_residual:.17g}",
        })
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class RegressionReport:
    name: str
    passed: bool
    reason: str
    max_drift: float = 0.0
    first_divergence: int = -1
    n_compared: int = 0

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        extra = ""
        if self.first_divergence >= 0:
            extra = (f" (first divergence at index {self.first_divergence}, "
                     f"max drift {self.max_drift:.3e})")
        return f"[{status}] {self.name}: {self.reason}{extra}"


def _run_benchmark(name: str, problem_overrides: dict, run_params: dict):
    overrides = dict(problem_overrides)
    overrides["n_time_steps"] = run_params["n_time_steps"]
    overrides["n_boundary_pts"] = run_params["n_boundary_pts"]
    problem = make_benchmark(name, overrides)
    u0 = initial_signal(problem)
    state = solve(problem, u0, SolverConfig(max_iters=run_params["max_iters"]))
    # sequence: objective at the start, then after each performed iteration
    costs = [state.initial_cost] + [rec.cost for rec in state.diagnostics]
    residual = optimality_residual(state)
    return problem, costs, residual


def _problem_params(name: str, problem: ProblemInstance, overrides: dict) -> dict:
    params = dict(problem.metadata)
    params["start"] = "default"
    for key, value in overrides.items():
        params[key] = value
    return params


def record_baseline(name: str, directory, problem_overrides: dict | None = None,
                    run_params: dict | None = None) -> BaselineRecord:
    """Run a benchmark under a pinned configuration and freeze the result."""
    problem_overrides = dict(problem_overrides or {})
    run = dict(_DEFAULT_BASELINE_RUN)
    run.update(run_params or {})
    problem, costs, residual = _run_benchmark(name, problem_overrides, run)
    params = _problem_params(name, problem, problem_overrides)
    record = BaselineRecord(
        name=name,
        problem_params=params,
        run_params=run,
        config_hash=config_hash(params),
        costs=costs,
        final_residual=residual,
        stamp="")
    record = BaselineRecord(**{**record.__dict__, "stamp": record.content_stamp()})
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{name}.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,cost\n")
        for i, c in enumerate(costs):
            fh.write(f"{i},{c:.17g}\n")
    snapshot = {
        "name": name,
        "problem_params": params,
        "run_params": run,
        "config_hash": record.config_hash,
        "final_residual": residual,
        "stamp": record.stamp,
    }
    with open(directory / f"{name}.json", "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def load_baseline(name: str, directory=None) -> BaselineRecord:
    """Load a frozen baseline; packaged data is used when no directory is given."""
    if directory is not None:
        base = Path(directory)
        csv_text = (base / f"{name}.csv").read_text(encoding="utf-8")
        meta = json.loads((base / f"{name}.json").read_text(encoding="utf-8"))
    else:
        pkg = resources.files("massteer") / "baselines"
        csv_path = pkg / f"{name}.csv"
        json_path = pkg / f"{name}.json"
        if not csv_path.is_file():
            raise FileNotFoundError(f"no packaged baseline for '{name}'")
        csv_text = csv_path.read_text(encoding="utf-8")
        meta = json.loads(json_path.read_text(encoding="utf-8"))
    costs = [float(line.split(",")[1])
             for line in csv_text.strip().splitlines()[1:]]
    return BaselineRecord(
        name=meta["name"],
        problem_params=meta["problem_params"],
        run_params=meta["run_params"],
        config_hash=meta["config_hash"],
        costs=costs,
        final_residual=float(meta["final_residual"]),
        stamp=meta["stamp"])


def regression_check(name: str, tolerance: float = 1e-9,
                     problem_overrides: dict | None = None,
                     run_overrides: dict | None = None,
                     directory=None) -> RegressionReport:
    """Rerun a benchmark against its frozen baseline.

    Problem-parameter overrides change the configuration hash and refuse
    the comparison; run-parameter overrides (discretization, budget) keep
    the identity and surface as cost drift.
    """
    baseline = load_baseline(name, directory)

    merged_problem = dict(problem_overrides or {})
    run = dict(baseline.run_params)
    run.update(run_overrides or {})

    problem, costs, _ = _run_benchmark(name, merged_problem, run)
    params = _problem_params(name, problem, merged_problem)
    new_hash = config_hash(params)
    if new_hash != baseline.config_hash:
        return RegressionReport(
            name=name, passed=False, reason="config hash mismatch; refusing "
            "to compare cost sequences across different problems")

    n = min(len(costs), len(baseline.costs))
    drift = np.abs(np.asarray(costs[:n]) - np.asarray(baseline.costs[:n]))
    beyond = np.nonzero(drift > tolerance)[0]
    if len(costs) != len(baseline.costs):
        first = n if len(beyond) == 0 else int(beyond[0])
        return RegressionReport(
            name=name, passed=False,
            reason=f"cost sequence length changed "
                   f"({len(baseline.costs)} -> {len(costs)})",
            max_drift=float(drift.max()) if n else 0.0,
            first_divergence=first, n_compared=n)
    if len(beyond):
        return RegressionReport(
            name=name, passed=False, reason="cost sequence drifted",
            max_drift=float(drift.max()), first_divergence=int(beyond[0]),
            n_compared=n)
    return RegressionReport(name=name, passed=True, reason="cost sequence "
                            "matches baseline", max_drift=float(drift.max()),
                            n_compared=n)
