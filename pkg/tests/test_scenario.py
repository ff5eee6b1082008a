import json

import numpy as np
import pytest

from hjjunction import density_scheme as ds
from hjjunction import hj_scheme as hj
from hjjunction.hamiltonian import Orientation
from hjjunction.scenario import (
    ScenarioError, dump_scenario, fmt, load_scenario, parse_scenario, write_outputs,
)

MINIMAL = """
grid: {dx_m: 10, horizon_s: 5}
branches:
  - orientation: incoming
    gamma: 1
    length_m: 100
    diagram: {kind: biparabolic, rho_c: 20, rho_max: 160, f_max: 1000, k: 1.5}
    density: [{from_m: 0, to_m: 100, rho: 12}]
  - orientation: outgoing
    gamma: 1
    length_m: 100
    diagram: {kind: biparabolic, rho_c: 20, rho_max: 160, f_max: 1000, k: 1.5}
    density: [{from_m: 0, to_m: 100, rho: 12}]
"""


def test_bundled_table1(table1):
    j = table1.junction
    assert (j.n_in, j.n_out) == (2, 2)
    assert j.gammas == (0.5,) * 4
    d = j.branches[0].diagram
    assert (d.rho_c, d.rho_max, d.f_max, d.k) == (20, 160, 1000, 1.5)
    assert all(b.length_m == 200 for b in j.branches)
    assert [q.rho for q in table1.initial.profiles[2]] == [30, 90]
    assert table1.grid.dx_m == 5 and table1.grid.dt_s is None and table1.grid.horizon_s == 350
    assert table1.gamma_policy.mode is ds.GammaMode.FIXED


def test_minimal_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.initial.u0_junction == 0.0
    assert sc.grid.dt_s is None
    assert sc.gamma_policy.mode is ds.GammaMode.FIXED
    assert [b.name for b in sc.junction.branches] == ["1", "2"]
    assert sc.junction.branches[1].orientation is Orientation.OUTGOING
    assert sc.outputs.snapshot_times_s == ()


def test_simplex_violation_rejected():
    text = load_scenario("table1.scenario")
    bad = dump_scenario(text).replace("gamma: 0.5", "gamma: 0.45", 1)
    with pytest.raises(ScenarioError, match="incoming split coefficients must sum to 1"):
        parse_scenario(bad, "bad.scenario")


@pytest.mark.parametrize("edit,msg", [
    (("k: 1.5", "k: 3"), "shape parameter"),
    (("dx_m: 10", "dx_m: ten"), r"m.scenario:2: grid.dx_m: expected a number"),
    (("orientation: outgoing", "orientation: sideways"), "orientation"),
    (("rho: 12}]\n  - orient", "rho: 200}]\n  - orient"), "outside"),
    (("grid:", "grdi:"), "unknown section"),
])
def test_rejections(edit, msg):
    with pytest.raises(ScenarioError, match=msg):
        parse_scenario(MINIMAL.replace(*edit), "m.scenario")


def test_error_carries_line_number():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(MINIMAL.replace("k: 1.5}", "k: 9}", 1), "m.scenario")
    assert str(exc.value).startswith("m.scenario:7:")


def test_parse_error_location():
    with pytest.raises(ScenarioError, match=r"m.scenario:\d+:\d+: parse error"):
        parse_scenario("grid: [1, 2\n", "m.scenario")


def test_junction_count_cross_check():
    with pytest.raises(ScenarioError, match="declares 2"):
        parse_scenario("junction: {n_in: 2}\n" + MINIMAL)


def test_missing_file():
    with pytest.raises(ScenarioError, match="no such file"):
        load_scenario("does/not/exist.scenario")


def test_round_trip(table1, tmp_path):
    p = tmp_path / "t.scenario"
    p.write_text(dump_scenario(table1))
    again = load_scenario(p)
    assert again.junction == table1.junction
    assert again.initial == table1.initial
    assert again.grid == table1.grid
    assert again.outputs == table1.outputs
    assert again.gamma_policy == table1.gamma_policy
    assert again == table1


def test_round_trip_maximize():
    sc = parse_scenario(MINIMAL + "gamma_policy: {mode: maximize, resolution: 8}\n")
    assert parse_scenario(dump_scenario(sc)) == sc


def test_full_precision_format():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3


def _run(sc):
    labels0, ghosts = hj.initial_state(sc.junction, sc.grid, sc.initial)
    return hj.run(sc.junction, sc.grid, labels0, ghosts, snapshot_times=sc.outputs.snapshot_times_s)


def test_outputs(table1, table1_hj, tmp_path):
    files = write_outputs(table1_hj, table1, tmp_path)
    names = {p.name for p in files}
    assert {"densities_t350.csv", "labels_t0.csv", "gradients_t100.csv", "estimates.csv", "manifest.json"} <= names
    rows = np.genfromtxt(tmp_path / "densities_t350.csv", delimiter=",", names=True, dtype=None, encoding=None)
    assert rows.dtype.names == ("branch", "index", "x_m", "value")
    means = [rows["value"][rows["branch"] == int(n)].mean() for n in "1234"]
    np.testing.assert_allclose(means, [90, 90, 90, 10], atol=1)
    est = np.genfromtxt(tmp_path / "estimates.csv", delimiter=",", names=True)
    assert np.all(np.diff(est["m_n"]) >= -1e-9)
    assert np.all(np.diff(est["M_n"]) <= 1e-9)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["dt_max_s"] == pytest.approx(0.288)
    assert man["m0"] == pytest.approx(687.5)
    assert man["p_lo"] == pytest.approx([10, 10, -250, -250])


def test_labels_on_nodes(table1, table1_hj, tmp_path):
    write_outputs(table1_hj, table1, tmp_path)
    rows = np.genfromtxt(tmp_path / "labels_t0.csv", delimiter=",", names=True)
    assert np.sum(rows["branch"] == 1) == 41
    dens = np.genfromtxt(tmp_path / "densities_t0.csv", delimiter=",", names=True)
    assert dens["x_m"][0] == 2.5


def test_empty_snapshot_list_gives_manifest_only(tmp_path):
    sc = parse_scenario(MINIMAL + "outputs: {fields: [densities]}\n")
    files = write_outputs(_run(sc), sc, tmp_path)
    assert [p.name for p in files] == ["manifest.json"]


def test_outputs_deterministic(tmp_path):
    sc = parse_scenario(MINIMAL + "outputs: {snapshot_times_s: [0, 5]}\n")
    a, b = tmp_path / "a", tmp_path / "b"
    write_outputs(_run(sc), sc, a)
    write_outputs(_run(sc), sc, b)
    for p in sorted(a.iterdir()):
        if p.name == "manifest.json":
            ma, mb = json.loads(p.read_text()), json.loads((b / p.name).read_text())
            ma.pop("wall_time_s"), mb.pop("wall_time_s")
            assert ma == mb
        else:
            assert p.read_bytes() == (b / p.name).read_bytes()


def test_density_run_outputs(tmp_path):
    sc = parse_scenario(MINIMAL + "outputs: {snapshot_times_s: [5]}\n")
    rho0, inflow = ds.initial_densities(sc.junction, sc.grid, sc.initial)
    run = ds.run_density(sc.junction, sc.grid, rho0, inflow, snapshot_times=[5])
    names = {p.name for p in write_outputs(run, sc, tmp_path)}
    assert "labels_t5.csv" not in names and "densities_t5.csv" in names
    assert "rho_lo_margin_1" in (tmp_path / "estimates.csv").read_text().splitlines()[0]


def test_unwritable_directory(table1, table1_hj, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ScenarioError, match="cannot create"):
        write_outputs(table1_hj, table1, blocker / "sub")
