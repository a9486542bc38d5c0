import numpy as np
import numpy.polynomial.legendre as leg
import pytest

from massteer.problem import (BallControlSet, BoxControlSet, ConfigError,
                              CircleTarget, ControlAffineField, CustomDensity,
                              EllipseTarget, GaussianDensity,
                              SimplexControlSet, load_problem, make_benchmark)

EXPECTED_MASS_IN_UNIT_CIRCLE = 1.0 - np.exp(-0.5)


# ----------------------------------------------------------------------
# Control-affine field
# ----------------------------------------------------------------------

def test_field_matches_direct_sum():
    drift = lambda t, x: np.stack([x[..., 1], t * np.ones(np.shape(x)[:-1])], axis=-1)
    ch1 = lambda t, x: np.stack([np.sin(x[..., 0]), x[..., 1] ** 2], axis=-1)
    ch2 = lambda t, x: np.broadcast_to([0.0, 1.0], np.shape(x))
    field = ControlAffineField(drift, (ch1, ch2))
    x = np.array([[0.3, -1.2], [2.0, 0.5]])
    u = np.array([0.7, -0.4])
    expected = drift(0.9, x) + 0.7 * ch1(0.9, x) - 0.4 * np.asarray(ch2(0.9, x))
    np.testing.assert_allclose(field(0.9, x, u), expected, rtol=0, atol=0)


@pytest.mark.parametrize("name", ["boat", "pendulum", "sheep"])
def test_field_is_affine_in_control(name, rng):
    problem = make_benchmark(name)
    field = problem.field
    m = problem.controls.dimension
    for _ in range(20):
        x = rng.normal(size=(5, 2)) * 3.0
        t = rng.uniform(0.0, problem.horizon)
        u = rng.normal(size=m)
        v = rng.normal(size=m)
        mid = field(t, x, 0.5 * (u + v))
        avg = 0.5 * (field(t, x, u) + field(t, x, v))
        np.testing.assert_allclose(mid, avg, rtol=0, atol=1e-14)


@pytest.mark.parametrize("name", ["boat", "pendulum", "sheep"])
def test_analytic_divergence_matches_finite_difference(name, rng):
    problem = make_benchmark(name)
    field = problem.field
    assert field.has_analytic_divergence
    x = rng.normal(size=(40, 2)) * 2.5
    u = np.full(field.n_channels, 1.0 / field.n_channels)
    analytic = field.divergence(0.3, x, u)
    fd = field._fd_divergence(0.3, x, u)
    np.testing.assert_allclose(analytic, fd, atol=1e-8, rtol=1e-6)


def test_finite_difference_divergence_second_order():
    # div(sin x1, e^{x2}) = cos x1 + e^{x2}
    drift = lambda t, x: np.stack([np.sin(x[..., 0]), np.exp(x[..., 1])], axis=-1)
    x = np.array([1.3, -0.4])
    exact = np.cos(1.3) + np.exp(-0.4)
    errs = []
    for h in (1e-2, 5e-3):
        f = ControlAffineField(drift, fd_step=h)
        errs.append(abs(float(f.divergence(0.0, x, np.zeros(0))) - exact))
    # halving h should cut the error by about 4 (second order)
    assert errs[1] < errs[0] / 3.0


def test_field_linear_growth_bound_on_benchmarks(rng):
    # sanity scan, not a proof: |v| <= C (1 + |x|) on a 10-sigma box
    for name in ("boat", "pendulum", "sheep"):
        problem = make_benchmark(name)
        x = rng.uniform(-10.0, 10.0, size=(500, 2))
        u = problem.controls.linear_argmin(rng.normal(size=problem.controls.dimension))
        v = problem.field(0.0, x, u)
        ratio = np.linalg.norm(v, axis=-1) / (1.0 + np.linalg.norm(x, axis=-1))
        assert np.all(np.isfinite(ratio)) and ratio.max() < 50.0


# ----------------------------------------------------------------------
# Control sets
# ----------------------------------------------------------------------

def test_simplex_argmin_vertex_rule():
    s = SimplexControlSet(3)
    np.testing.assert_array_equal(s.linear_argmin([3.0, 1.0, 2.0]), [0.0, 1.0, 0.0])
    # ties go to the earliest index
    np.testing.assert_array_equal(s.linear_argmin([1.0, 1.0, 5.0]), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(s.linear_argmin([0.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


def test_ball_argmin_closed_form():
    b = BallControlSet(np.zeros(2), 0.75)
    np.testing.assert_allclose(b.linear_argmin([1.0, 0.0]), [-0.75, 0.0])
    np.testing.assert_array_equal(b.linear_argmin([0.0, 0.0]), [0.0, 0.0])
    shifted = BallControlSet([1.0, -2.0], 0.5)
    np.testing.assert_allclose(shifted.linear_argmin([0.0, 3.0]), [1.0, -2.5])


def test_box_argmin_sign_rule():
    box = BoxControlSet([-0.5], [0.5])
    np.testing.assert_array_equal(box.linear_argmin([-2.0]), [0.5])
    np.testing.assert_array_equal(box.linear_argmin([2.0]), [-0.5])
    np.testing.assert_array_equal(box.linear_argmin([0.0]), [-0.5])


@pytest.mark.parametrize("controls", [
    BoxControlSet([-0.5, 0.0], [0.5, 2.0]),
    BallControlSet([0.3, -0.1], 0.75),
    SimplexControlSet(6),
])
def test_argmin_lands_in_set_and_minimizes(controls, rng):
    for _ in range(300):
        c = rng.normal(size=controls.dimension)
        w = controls.linear_argmin(c)
        assert controls.contains(w)
        # no random feasible point does better
        for _ in range(20):
            z = _random_point(controls, rng)
            assert float(np.dot(c, w)) <= float(np.dot(c, z)) + 1e-12


def _random_point(controls, rng):
    if isinstance(controls, BoxControlSet):
        return rng.uniform(controls.lo, controls.hi)
    if isinstance(controls, BallControlSet):
        d = rng.normal(size=controls.dimension)
        d /= np.linalg.norm(d)
        return controls.center + controls.radius * d * rng.uniform() ** 0.5
    w = rng.dirichlet(np.ones(controls.m))
    return w


def test_ball_rejects_negative_radius():
    with pytest.raises(ValueError):
        BallControlSet(np.zeros(2), -1.0)


# ----------------------------------------------------------------------
# Densities
# ----------------------------------------------------------------------

def _gauss_legendre_mass(density, half_width, n=128):
    nodes, weights = leg.leggauss(n)
    pts = half_width * nodes
    xx, yy = np.meshgrid(pts, pts, indexing="ij")
    ww = np.outer(weights, weights) * half_width ** 2
    vals = density(np.stack([xx + density.center[0], yy + density.center[1]], axis=-1))
    return float(np.sum(vals * ww))


@pytest.mark.parametrize("sigma,center", [(1.0, (0.0, 0.0)), (0.4, (1.5, -2.0))])
def test_gaussian_density_normalized(sigma, center):
    density = GaussianDensity(sigma, np.asarray(center))
    mass = _gauss_legendre_mass(density, 6.0 * sigma)
    assert abs(mass - 1.0) < 1e-6
    x = np.array([[0.0, 0.0], [3.0, 1.0]])
    assert np.all(density(x) >= 0.0)


def test_gaussian_antiderivative_recovers_density():
    density = GaussianDensity(0.8, np.array([0.5, -0.3]))
    h = 1e-4
    pts = np.array([[0.2, 0.1], [1.0, -0.5], [-0.7, 0.4]])
    for x1, x2 in pts:
        fd = (density.partial_antiderivative(x1 + h, x2)
              - density.partial_antiderivative(x1 - h, x2)) / (2.0 * h)
        rho = float(density(np.array([x1, x2])))
        assert abs(fd - rho) / rho < 1e-6


def test_gaussian_antiderivative_anchored_at_zero():
    density = GaussianDensity(1.0, np.array([0.7, 0.0]))
    assert float(density.partial_antiderivative(0.0, 0.3)) == 0.0


def test_tail_antiderivative_differs_by_function_of_x2_only():
    density = GaussianDensity(0.9, np.array([0.4, -0.2]))
    x2 = 0.6
    offsets = [float(density.tail_antiderivative(x1, x2)
                     - density.partial_antiderivative(x1, x2))
               for x1 in (-2.0, -0.5, 0.0, 1.3, 4.0)]
    np.testing.assert_allclose(offsets, offsets[0], rtol=1e-12)


def test_tail_antiderivative_vanishes_in_left_tail():
    density = GaussianDensity(1.0)
    far = float(density.tail_antiderivative(-20.0, 0.0))
    assert 0.0 < far < 1e-80


def test_custom_density_quadrature_fallback():
    density = GaussianDensity(1.0)
    hook = CustomDensity(density, quad_step=2e-3)
    x1 = np.array([0.7, -1.1, 2.0])
    x2 = np.array([0.2, 0.2, -0.9])
    approx = hook.partial_antiderivative(x1, x2)
    exact = density.partial_antiderivative(x1, x2)
    np.testing.assert_allclose(approx, exact, atol=1e-6)


# ----------------------------------------------------------------------
# Target sets
# ----------------------------------------------------------------------

def _polygon_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@pytest.mark.parametrize("target,area", [
    (CircleTarget((2.0, -1.0), 1.5), np.pi * 1.5 ** 2),
    (EllipseTarget((0.0, 0.0), (2.0, 1.2)), np.pi * 2.0 * 1.2),
])
def test_boundary_sampling_is_ccw_and_area_converges(target, area):
    for n in (16, 64, 256):
        pts = target.boundary_points(n)
        assert pts.shape == (n, 2)
        a = _polygon_area(pts)
        assert a > 0.0
        assert abs(a - area) / area <= 10.0 / n ** 2


def test_circle_boundary_points_on_circle():
    target = CircleTarget((1.0, 2.0), 0.7)
    pts = target.boundary_points(64)
    r = np.linalg.norm(pts - target.center, axis=1)
    np.testing.assert_allclose(r, 0.7, atol=1e-12)


def test_target_contains():
    circle = CircleTarget((0.0, 0.0), 1.0)
    assert bool(circle.contains(np.array([0.5, 0.5])))
    assert not bool(circle.contains(np.array([1.2, 0.0])))
    ellipse = EllipseTarget((0.0, 0.0), (2.0, 1.2))
    assert bool(ellipse.contains(np.array([1.9, 0.0])))
    assert not bool(ellipse.contains(np.array([0.0, 1.3])))


def test_target_rejects_bad_parameters():
    with pytest.raises(ValueError):
        CircleTarget((0.0, 0.0), 0.0)
    with pytest.raises(ValueError):
        EllipseTarget((0.0, 0.0), (2.0, -1.0))
    with pytest.raises(ValueError):
        CircleTarget((0.0, 0.0), 1.0).boundary_points(4)


# ----------------------------------------------------------------------
# Benchmarks
# ----------------------------------------------------------------------

def test_pendulum_drift_value():
    problem = make_benchmark("pendulum")
    np.testing.assert_allclose(
        problem.field.drift(0.0, np.array([0.0, 1.0])), [1.0, 1.0])


def test_boat_drift_value():
    problem = make_benchmark("boat")
    np.testing.assert_allclose(
        problem.field.drift(3.0, np.array([5.0, 0.0])), [1.5, 0.0])


def test_sheep_configuration():
    problem = make_benchmark("sheep")
    assert problem.field.n_channels == 6
    assert isinstance(problem.controls, SimplexControlSet)
    assert problem.metadata["m"] == 6
    for key in ("alpha", "beta", "R"):
        assert key in problem.metadata


def test_sheep_rejects_channel_count_override():
    with pytest.raises(ConfigError):
        make_benchmark("sheep", {"m": 1})


def test_unknown_benchmark_rejected():
    with pytest.raises(ConfigError):
        make_benchmark("submarine")


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        make_benchmark("pendulum", {"sigma": -1.0})
    with pytest.raises(ValueError):
        make_benchmark("boat", {"T": 0.0})
    with pytest.raises(ValueError):
        make_benchmark("pendulum", {"target_radius": -2.0})


def test_benchmark_overrides_apply():
    problem = make_benchmark("boat", {"alpha": 0.25, "u_max": 0.5,
                                      "n_time_steps": 100})
    assert problem.metadata["alpha"] == 0.25
    assert problem.controls.radius == 0.5
    assert problem.n_time_steps == 100


# ----------------------------------------------------------------------
# Config files
# ----------------------------------------------------------------------

def test_load_problem_from_yaml(tmp_path):
    cfg = tmp_path / "problem.yaml"
    cfg.write_text(
        "problem:\n  name: pendulum\n  T: 4.0\n  n_time_steps: 200\n"
        "control:\n  u_max: 0.3\n"
        "density:\n  sigma: 0.9\n"
        "target:\n  center: [1.0, 0.0]\n  radius: 0.8\n")
    problem = load_problem(cfg)
    assert problem.horizon == 4.0
    assert problem.n_time_steps == 200
    assert problem.controls.hi[0] == 0.3
    assert problem.density.sigma == 0.9
    np.testing.assert_allclose(problem.target.center, [1.0, 0.0])


def test_load_problem_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "problem.yaml"
    cfg.write_text("problem:\n  name: pendulum\n  frobnicate: 1\n")
    with pytest.raises(ConfigError, match="problem.frobnicate"):
        load_problem(cfg)


def test_load_problem_rejects_unknown_section(tmp_path):
    cfg = tmp_path / "problem.yaml"
    cfg.write_text("problem:\n  name: boat\nextras:\n  x: 1\n")
    with pytest.raises(ConfigError, match="extras"):
        load_problem(cfg)


def test_load_problem_requires_name(tmp_path):
    cfg = tmp_path / "problem.yaml"
    cfg.write_text("density:\n  sigma: 1.0\n")
    with pytest.raises(ConfigError, match="problem.name"):
        load_problem(cfg)
