import pytest

from massteer.cli import main

TINY = ["--time-steps", "60", "--boundary-points", "32", "--iters", "3",
        "--frames-stride", "20"]


def run_cli(args):
    return main(args)


def test_pendulum_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    code = run_cli(["--benchmark", "pendulum", *TINY, "--out", str(out)])
    assert code == 0
    assert (out / "control.csv").is_file()
    assert (out / "convergence.csv").is_file()
    assert (out / "summary").is_file()
    frames = sorted((out / "frames").glob("frame_*.csv"))
    assert len(frames) == 4  # nodes 0, 20, 40, 60 at stride 20 over 61 nodes
    header = frames[0].read_text().splitlines()[0]
    assert header == "t,vertex_index,x1,x2,rho,jac_det"

    convergence = (out / "convergence.csv").read_text().strip().splitlines()
    assert convergence[0] == "iteration,cost,residual,epsilon,needle_measure"
    assert 2 <= len(convergence) <= 5  # header + at most --iters rows
    costs = [float(line.split(",")[1]) for line in convergence[1:]]
    assert all(b >= a - 1e-10 for a, b in zip(costs, costs[1:]))

    control = (out / "control.csv").read_text().strip().splitlines()
    assert control[0] == "t,u1"
    assert len(control) == 61  # header + one row per step

    summary = (out / "summary").read_text()
    assert "benchmark: pendulum" in summary
    assert "final_cost:" in summary
    assert "termination:" in summary


def test_sheep_summary_echoes_field_parameters(tmp_path):
    out = tmp_path / "run"
    code = run_cli(["--benchmark", "sheep", "--time-steps", "40",
                    "--boundary-points", "32", "--iters", "1", "--out", str(out)])
    assert code == 0
    summary = (out / "summary").read_text()
    for key in ("alpha:", "beta:", "R:", "m:", "sigma:"):
        assert key in summary


def test_reruns_are_byte_identical(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    args = ["--benchmark", "pendulum", *TINY, "--seed", "7"]
    assert run_cli([*args, "--out", str(out1)]) == 0
    assert run_cli([*args, "--out", str(out2)]) == 0
    assert ((out1 / "convergence.csv").read_bytes()
            == (out2 / "convergence.csv").read_bytes())
    assert ((out1 / "control.csv").read_bytes()
            == (out2 / "control.csv").read_bytes())
    frames1 = sorted((out1 / "frames").glob("frame_*.csv"))
    frames2 = sorted((out2 / "frames").glob("frame_*.csv"))
    assert [f.name for f in frames1] == [f.name for f in frames2]
    for f1, f2 in zip(frames1, frames2):
        assert f1.read_bytes() == f2.read_bytes()


def test_unknown_flag_exits_with_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--benchmark", "pendulum", "--frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_benchmark_and_config_are_exclusive(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--benchmark", "pendulum", "--config", "x.yaml"])
    assert exc.value.code == 2


def test_config_file_run(tmp_path):
    cfg = tmp_path / "p.yaml"
    cfg.write_text("problem:\n  name: pendulum\n  T: 2.0\n  n_time_steps: 40\n"
                   "  n_boundary_pts: 32\n")
    out = tmp_path / "run"
    code = run_cli(["--config", str(cfg), "--iters", "2", "--out", str(out)])
    assert code == 0
    assert "T: 2" in (out / "summary").read_text()


def test_config_file_unknown_key_is_reported(tmp_path, capsys):
    cfg = tmp_path / "p.yaml"
    cfg.write_text("problem:\n  name: pendulum\n  wobble: 3\n")
    code = run_cli(["--config", str(cfg), "--out", str(tmp_path / "run")])
    assert code == 2
    err = capsys.readouterr().err
    assert "problem.wobble" in err


def test_invalid_stride_is_config_error(tmp_path, capsys):
    code = run_cli(["--benchmark", "pendulum", "--frames-stride", "0",
                    "--out", str(tmp_path / "run")])
    assert code == 2


def test_dt_flag_sets_time_steps(tmp_path):
    out = tmp_path / "run"
    code = run_cli(["--benchmark", "pendulum", "--dt", "0.1",
                    "--boundary-points", "32", "--iters", "1", "--out", str(out)])
    assert code == 0
    assert "n_time_steps: 60" in (out / "summary").read_text()


def test_validate_reports_oracle_cross_checks(tmp_path):
    out = tmp_path / "run"
    code = run_cli(["--benchmark", "pendulum", "--time-steps", "150",
                    "--boundary-points", "64", "--iters", "2", "--validate",
                    "--mc-samples", "20000", "--grid-cells", "64",
                    "--seed", "1", "--out", str(out)])
    assert code == 0
    summary = (out / "summary").read_text()
    for key in ("stokes_mass:", "mc_value:", "mc_std_error:", "grid_value:",
                "stokes_vs_mc:", "stokes_vs_mc_agree:", "stokes_vs_grid:"):
        assert key in summary


def test_svg_frames_written(tmp_path):
    out = tmp_path / "run"
    code = run_cli(["--benchmark", "pendulum", *TINY, "--svg", "--out", str(out)])
    assert code == 0
    svgs = sorted((out / "frames").glob("frame_*.svg"))
    assert len(svgs) == 4
    body = svgs[0].read_text()
    assert body.startswith("<svg")
    assert "<polygon" in body
