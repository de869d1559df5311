import numpy as np
import pytest

from hdgsdt import cli
from hdgsdt.config import OUTPUT_ROOT_ENV, build_problem, load_config, parse_text
from hdgsdt.examples import plume_permeability, plume_problem
from hdgsdt.mesh import DARCY, build_structured_mesh
from hdgsdt.problem import ConfigurationError
from hdgsdt.vtk import read_legacy_points, reference_lattice, write_permeability


def test_example_defaults():
    cfg = load_config(None, {"n": "4"})
    assert (cfg.k_f, cfg.k_c, cfg.beta_s, cfg.beta_tr) == (2, 1, 24.0, 6.0)
    assert cfg.dt == pytest.approx(0.1 * 0.25 ** 2 / 3) and cfg.T == 0.1
    assert cfg.mean_constraint is True
    plume = load_config(None, {"example": "example3"})
    assert (plume.n, plume.dt, plume.T, plume.porosity, plume.alpha) == (80, 1e-3, 15.0, 0.4, 0.5)
    assert plume.snapshot_times() == (1e-3, 3.0, 6.0, 9.0, 12.0, 15.0)
    assert plume.mean_constraint is False and plume.viscosity == "quarter-power"


def test_echo_round_trip(tmp_path):
    cfg = load_config(None, {"example": "example2", "kappa": "0.01", "physics.mu0": "0.8", "snapshots": "dt, 0.05"})
    path = cfg.write_echo(tmp_path)
    again = load_config(path)
    assert again == cfg
    assert again.echo() == cfg.echo()


@pytest.mark.parametrize("overrides", [
    {"n": "5"}, {"k_f": "1"}, {"k_c": "3"}, {"scheme": "RK4"}, {"kappa": "-1"}, {"porosity": "1.5"},
    {"bogus": "1"}, {"physics.n": "4"}, {"n": "four"}, {"example": "example9"}, {"viscosity": "linear"},
])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigurationError):
        load_config(None, overrides)


def test_parse_text_sections_and_comments():
    raw = parse_text("# comment\nrun.n = 6  # trailing\nkappa=0.5\n\n")
    assert raw == {"n": "6", "kappa": "0.5"}
    with pytest.raises(ConfigurationError, match=":1:"):
        parse_text("no equals sign")


def test_mean_constraint_conflict():
    cfg = load_config(None, {"example": "example3", "n": "4", "mean_constraint": "true"})
    with pytest.raises(ConfigurationError):
        build_problem(cfg)


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert load_config(None, {"output": "runs/a"}).output_dir() == tmp_path / "runs" / "a"


def test_cli_mesh_info(capsys):
    assert cli.main(["mesh-info", "--n", "4"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "flow dofs" in out and "transport dofs" in out


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["mesh-info", "--n", "3"]) == cli.EXIT_CONFIG
    assert cli.main(["mesh-info", "--set", "nonsense"]) == cli.EXIT_CONFIG
    assert cli.main(["convergence", "--example", "example3"]) == cli.EXIT_CONFIG
    assert cli.main(["mesh-info", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    blocker = tmp_path / "file"
    blocker.write_text("")
    args = ["simulate", "--example", "custom", "--n", "2", "--T", "0.01", "--dt", "0.01",
            "--output", str(blocker / "sub")]
    assert cli.main(args) == cli.EXIT_IO


def test_cli_convergence_writes_csv(tmp_path, capsys):
    args = ["convergence", "--meshes", "2,4", "--T", "0.01", "--dt", "0.005", "--output", str(tmp_path)]
    assert cli.main(args) == cli.EXIT_OK
    csvs = list(tmp_path.glob("convergence_example1_*.csv"))
    assert len(csvs) == 1
    assert (tmp_path / "effective_config.txt").exists()
    body = [l for l in csvs[0].read_text().splitlines() if not l.startswith("#")]
    assert body[0].startswith("h,dofs,err_u_s,rate_u_s") and len(body) == 3


def test_cli_simulate_zero_data(tmp_path, capsys):
    args = ["simulate", "--example", "custom", "--n", "4", "--T", "0.02", "--dt", "0.01",
            "--snapshots", "dt, 0.02", "--output", str(tmp_path)]
    assert cli.main(args) == cli.EXIT_OK
    snaps = sorted(tmp_path.glob("snapshot_*.vtk"))
    assert [p.name for p in snaps] == ["snapshot_000001.vtk", "snapshot_000002.vtk"]
    data = read_legacy_points(snaps[-1])
    for key in (("POINT_DATA", "c_h"), ("POINT_DATA", "p_h")):
        assert np.abs(data["scalars"][key]).max() == 0.0
    assert np.abs(data["vectors"]["u_h"]).max() == 0.0
    log = (tmp_path / "conservation.log").read_text().splitlines()
    assert len(log) == 3


def test_vtk_lattice_counts():
    pts, tris = reference_lattice(3)
    assert len(pts) == 10 and len(tris) == 9
    with pytest.raises(ValueError):
        reference_lattice(0)


def test_permeability_file_round_trip(tmp_path):
    mesh = build_structured_mesh(4)
    path = write_permeability(tmp_path / "k.vtk", mesh, plume_problem(k_f=2), samples=2)
    data = read_legacy_points(path)
    pts = data["points"][:, :2]
    kappa = data["scalars"][("POINT_DATA", "kappa")]
    sub = np.repeat(mesh.subdomain, 6)
    assert len(pts) == mesh.num_elements * 6 and data["cells"] == mesh.num_elements * 4
    assert np.allclose(kappa[sub == DARCY], plume_permeability(pts[sub == DARCY]), rtol=1e-15)
    assert np.all(kappa[sub != DARCY] == 0.0)
    cell_sub = data["scalars"][("CELL_DATA", "subdomain")]
    assert np.array_equal(cell_sub, np.repeat(mesh.subdomain, 4))
