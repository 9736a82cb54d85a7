import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thps.cli import main
from thps.config import PROBLEM_KINDS, ConfigError, RunConfig
from thps.driver import CONVERGE_COLUMNS
from thps.io import read_csv, read_vtk_points


# {{{ config

@given(
    kind=st.sampled_from(PROBLEM_KINDS),
    degree=st.integers(1, 20),
    dt=st.floats(1e-6, 10, allow_nan=False),
    b=st.tuples(*[st.floats(-5, 5, allow_nan=False)] * 3),
    times=st.lists(st.floats(0, 100, allow_nan=False), max_size=3),
    degrees=st.lists(st.integers(1, 12), max_size=3),
    seed=st.one_of(st.none(), st.integers(0, 2**31)),
    every=st.one_of(st.none(), st.integers(1, 50)),
    reaction=st.dictionaries(st.sampled_from(["alpha", "beta", "r1"]), st.floats(-3, 3, allow_nan=False)),
    figures=st.booleans(),
)
def test_config_round_trip(kind, degree, dt, b, times, degrees, seed, every, reaction, figures):
    cfg = RunConfig(kind=kind, degree=degree, dt=dt, b=b, snapshot_times=tuple(times),
                    degrees=tuple(degrees), seed=seed, snapshot_every=every,
                    reaction=dict(reaction), refinements=("icosphere:1", "icosphere:2"),
                    figures=figures, exact="Y3_2")
    text = cfg.to_string()
    again = RunConfig.from_string(text)
    assert again == cfg
    assert again.to_string() == text


def test_config_rejects_unknown_entries():
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig.from_string("[geometry]\nmeshes = icosphere:1\n")
    with pytest.raises(ConfigError, match="section"):
        RunConfig.from_string("[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig().update(colour="red")
    with pytest.raises(ConfigError):
        RunConfig.from_string("[geometry]\ndegree = many\n")
    with pytest.raises(ConfigError):
        RunConfig.from_string("[time]\nscheme = 7\n")
    with pytest.raises(ConfigError, match="malformed"):
        RunConfig.from_string("degree = 3\n")

# }}}


# {{{ command line

def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_constant_solution(tmp_path, capsys):
    code, _, err = run(["solve", "--kind", "custom", "--mesh", "hemisphere:1", "--degree", "6",
                        "--coef-c", "1", "--forcing", "1", "--dirichlet", "1",
                        "--output-dir", str(tmp_path), "--no-figures"], capsys)
    assert code == 0, err
    _, fields = read_vtk_points(tmp_path / "solution.vtk")
    assert np.abs(fields["u"] - 1.0).max() < 1e-11
    assert RunConfig.from_file(tmp_path / "run.ini").kind == "custom"


def test_solve_hemisphere_outputs(tmp_path, capsys):
    code, out, _ = run(["solve", "--exact", "Y3_2", "--mesh", "hemisphere:2", "--degree", "6",
                        "--output-dir", str(tmp_path), "--threads", "1"], capsys)
    assert code == 0
    rows = read_csv(tmp_path / "error.csv")
    assert tuple(rows[0]) == CONVERGE_COLUMNS
    assert float(rows[0]["err_Linf"]) < 1e-3
    assert (tmp_path / "solution.png").stat().st_size > 0
    pts, fields = read_vtk_points(tmp_path / "solution.vtk")
    assert set(fields) == {"u", "exact", "error"} and len(pts) == 64 * 28
    assert "err_Linf=" in out


def test_converge_is_deterministic(tmp_path, capsys):
    argv = ["converge", "--exact", "Y3_2", "--mesh", "hemisphere:0",
            "--refinements", "hemisphere:1,hemisphere:2", "--degrees", "4,5"]
    tables = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code, stdout, _ = run(argv + ["--output-dir", str(out)], capsys)
        assert code == 0
        tables.append(read_csv(out / "convergence.csv"))
    assert len(tables[0]) == 4
    for r0, r1 in zip(*tables):
        for col in ("h", "n", "N", "dof", "err_Linf"):
            assert r0[col] == r1[col]
    slopes = (tmp_path / "run0" / "slopes.txt").read_text()
    assert "n=4 slope=" in slopes and "n=5 slope=" in slopes
    assert (tmp_path / "run0" / "convergence.png").exists()


def test_evolve_zero_steps_writes_initial_snapshot(tmp_path, capsys):
    code, _, _ = run(["evolve", "--kind", "turing2", "--mesh", "icosphere:0", "--degree", "4",
                      "--steps", "0", "--seed", "5", "--output-dir", str(tmp_path), "--no-figures"], capsys)
    assert code == 0
    snaps = sorted(p.name for p in tmp_path.glob("snapshot_*.vtk"))
    assert snaps == ["snapshot_t00000.000000.vtk"]
    assert "seed=5" in (tmp_path / snaps[0]).read_text().splitlines()[1]


def test_evolve_turing_outputs(tmp_path, capsys):
    code, out, _ = run(["evolve", "--kind", "turing2", "--mesh", "icosphere:0", "--degree", "4",
                        "--scheme", "4", "--dt", "0.1", "--steps", "30", "--seed", "1",
                        "--snapshot-times", "0,2,3", "--param", "r1=0.03",
                        "--output-dir", str(tmp_path)], capsys)
    assert code == 0
    times = sorted(p.name for p in tmp_path.glob("snapshot_*.vtk"))
    assert times == ["snapshot_t00000.000000.vtk", "snapshot_t00002.000000.vtk", "snapshot_t00003.000000.vtk"]
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["steps"] == 30 and stats["u1_variance"] > 0
    assert {"u1_min", "u1_max", "u2_min", "u2_max", "u2_variance"} <= set(stats)
    assert len(read_csv(tmp_path / "history.csv")) == 31
    for name in ("history.png", "final_u1.png", "final_u2.png"):
        assert (tmp_path / name).exists()
    assert RunConfig.from_file(tmp_path / "run.ini").reaction == {"r1": 0.03}


def test_evolve_diffusion_error_table(tmp_path, capsys):
    code, _, _ = run(["evolve", "--kind", "diffusion", "--exact", "Y1_0", "--mesh", "icosphere:0",
                      "--degrees", "3,5", "--scheme", "2", "--dt", "0.01", "--steps", "10",
                      "--output-dir", str(tmp_path)], capsys)
    assert code == 0
    rows = read_csv(tmp_path / "error_vs_degree.csv")
    assert [r["n"] for r in rows] == ["3", "5"]
    assert float(rows[1]["err_Linf"]) < float(rows[0]["err_Linf"])
    assert (tmp_path / "error_vs_degree.png").exists()


@pytest.mark.parametrize(
    "argv,code,prefix",
    [
        (["converge", "--exact", "Y3_2", "--refinements", ""], 2, "config error:"),
        (["solve", "--kind", "heat"], 2, "config error:"),
        (["solve", "--degree", "40", "--exact", "Y3_2"], 2, "config error:"),
        (["solve", "--kind", "poisson"], 2, "config error:"),
        (["evolve", "--kind", "turing2", "--param", "zeta=1", "--steps", "1", "--mesh", "icosphere:0"], 2,
         "config error:"),
        (["solve", "--bogus-flag"], 2, "config error:"),
        (["solve", "--config", "/nonexistent/run.ini"], 4, "io error:"),
        (["solve", "--mesh", "/nonexistent/mesh.off", "--exact", "Y3_2"], 4, "io error:"),
        (["solve", "--kind", "custom", "--mesh", "icosphere:0", "--degree", "4",
          "--regularization", "none"], 3, "numerical error:"),
    ],
)
def test_cli_errors(tmp_path, capsys, argv, code, prefix):
    rc, _, err = run(argv + ["--output-dir", str(tmp_path)] if argv[1:2] != ["--bogus-flag"] else argv, capsys)
    assert rc == code
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith(prefix), err


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = RunConfig(kind="poisson", exact="Y3_2", mesh="hemisphere:0", degree=4,
                    output_dir=str(tmp_path), figures=False)
    cfg.write(tmp_path / "in.ini")
    code, _, _ = run(["solve", "--config", str(tmp_path / "in.ini"), "--degree", "5"], capsys)
    assert code == 0
    assert read_csv(tmp_path / "error.csv")[0]["n"] == "5"


def test_mesh_info(capsys):
    code, out, _ = run(["mesh-info", "hemisphere:1", "--surface", "sphere", "--degree", "3"], capsys)
    assert code == 0
    info = dict(line.split(" = ") for line in out.strip().splitlines())
    assert info["triangles"] == "16" and info["closed"] == "False"
    assert info["euler_characteristic"] == "1"
    assert int(info["root_boundary_points"]) == 8 * 3

# }}}
