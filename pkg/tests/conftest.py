import numpy as np
import pytest

from massteer.problem import (BallControlSet, ControlAffineField,
                              CircleTarget, GaussianDensity, ProblemInstance)


def zero_field(t, x):
    return np.zeros(np.shape(x))


def zero_div(t, x):
    return np.zeros(np.shape(x)[:-1])


def make_identity_problem(n_time_steps=50, n_boundary_pts=1000,
                          target=None, horizon=1.0):
    """Zero dynamics: the target never moves, so costs have closed forms."""
    field = ControlAffineField(zero_field, (zero_field,),
                               drift_divergence=zero_div,
                               channel_divergences=(zero_div,))
    return ProblemInstance(
        field=field,
        controls=BallControlSet(np.zeros(1), 0.0),
        density=GaussianDensity(1.0),
        target=target or CircleTarget((0.0, 0.0), 1.0),
        horizon=horizon,
        n_time_steps=n_time_steps,
        n_boundary_pts=n_boundary_pts)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
