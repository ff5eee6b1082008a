"""Scenario files and run outputs.

A scenario is a YAML document::

    name: table1
    junction: {n_in: 2, n_out: 2}          # optional cross-check
    grid: {dx_m: 5.0, dt_s: auto, horizon_s: 350.0}
    gamma_policy: {mode: fixed}            # or maximize (+ candidates/lower_bounds/resolution)
    initial: {u0_junction: 0.0}
    branches:                              # incoming first, then outgoing
      - name: "1"
        orientation: incoming
        gamma: 0.5
        length_m: 200.0
        diagram: {kind: biparabolic, rho_c: 20.0, rho_max: 160.0, f_max: 1000.0, k: 1.5}
        density:                           # metres from the junction, veh/km
          - {from_m: 0.0, to_m: 200.0, rho: 15.0}
    outputs:
      snapshot_times_s: [0, 350]
      fields: [labels, densities, gradients, estimates]
      out_dir: out/table1

Piecewise diagrams use ``{kind: piecewise, points: [[0, 0], [rho_c, f_max], ..., [rho_max, 0]]}``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .density_scheme import DensityRun, GammaMode, GammaPolicy
from .hamiltonian import DiagramKind, FundamentalDiagram, Orientation
from .hj_scheme import HJRun, nearest_step
from .junction import Branch, DensityPiece, GridSpec, InitialData, JunctionSpec, densities_from_labels

FIELDS = ("labels", "densities", "gradients", "estimates")


class ScenarioError(Exception):
    """Malformed or invalid scenario file."""


@dataclass(frozen=True)
class Outputs:
    snapshot_times_s: tuple[float, ...] = ()
    fields: tuple[str, ...] = ("densities", "estimates")
    out_dir: str = "out"


@dataclass(frozen=True)
class Scenario:
    junction: JunctionSpec
    grid: GridSpec
    initial: InitialData
    gamma_policy: GammaPolicy = GammaPolicy()
    outputs: Outputs = Outputs()
    name: str = ""


# -- loading ---------------------------------------------------------------------

def _line_map(text: str) -> dict[tuple, int]:
    """Map key paths of a YAML document to 1-based line numbers."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


class _Reader:
    def __init__(self, source: str, lines: dict[tuple, int]):
        self.source = source
        self.lines = lines

    def fail(self, path: tuple, msg: str):
        where = ".".join(f"[{p}]" if isinstance(p, int) else str(p) for p in path).replace(".[", "[")
        line = None
        for k in range(len(path), -1, -1):
            line = self.lines.get(path[:k])
            if line is not None:
                break
        loc = f"{self.source}:{line}" if line else self.source
        raise ScenarioError(f"{loc}: {where or '<root>'}: {msg}")

    def get(self, obj, path, key, kind=None, default=...):
        if not isinstance(obj, dict):
            self.fail(path, "expected a mapping")
        if key not in obj:
            if default is ...:
                self.fail(path + (key,), "missing required field")
            return default
        val = obj[key]
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                self.fail(path + (key,), f"expected a number, got {val!r}")
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                self.fail(path + (key,), f"expected an integer, got {val!r}")
            return val
        if kind is str and not isinstance(val, str):
            self.fail(path + (key,), f"expected a string, got {val!r}")
        if kind is list and not isinstance(val, list):
            self.fail(path + (key,), f"expected a list, got {val!r}")
        return val


def _diagram(rd: _Reader, spec, path) -> FundamentalDiagram:
    kind = rd.get(spec, path, "kind", str, "biparabolic")
    try:
        if kind == DiagramKind.BIPARABOLIC.value:
            return FundamentalDiagram.biparabolic(
                rd.get(spec, path, "rho_c", float), rd.get(spec, path, "rho_max", float),
                rd.get(spec, path, "f_max", float), rd.get(spec, path, "k", float),
            )
        if kind == DiagramKind.PIECEWISE.value:
            pts = rd.get(spec, path, "points", list)
            if not all(isinstance(p, list) and len(p) == 2 for p in pts):
                rd.fail(path + ("points",), "expected a list of [rho, flow] pairs")
            return FundamentalDiagram.piecewise(pts)
    except (ValueError, TypeError) as exc:
        rd.fail(path, str(exc))
    rd.fail(path + ("kind",), f"unknown diagram kind {kind!r}")


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        lines = _line_map(text)
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        loc = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ScenarioError(f"{loc}: parse error: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: parse error: {exc}") from None
    rd = _Reader(source, lines)
    if not isinstance(doc, dict):
        rd.fail((), "scenario must be a mapping")
    known = {"name", "junction", "grid", "gamma_policy", "initial", "branches", "outputs"}
    for key in doc:
        if key not in known:
            rd.fail((key,), "unknown section")

    g = rd.get(doc, (), "grid")
    dt = rd.get(g, ("grid",), "dt_s", default="auto")
    if dt == "auto":
        dt = None
    elif isinstance(dt, bool) or not isinstance(dt, (int, float)):
        rd.fail(("grid", "dt_s"), f"expected 'auto' or seconds, got {dt!r}")
    try:
        grid = GridSpec(rd.get(g, ("grid",), "dx_m", float), rd.get(g, ("grid",), "horizon_s", float),
                        None if dt is None else float(dt))
    except ValueError as exc:
        rd.fail(("grid",), str(exc))

    branches, profiles = [], []
    raw = rd.get(doc, (), "branches", list)
    for i, b in enumerate(raw):
        path = ("branches", i)
        orient = rd.get(b, path, "orientation", str)
        try:
            orientation = Orientation(orient)
        except ValueError:
            rd.fail(path + ("orientation",), f"expected 'incoming' or 'outgoing', got {orient!r}")
        diagram = _diagram(rd, rd.get(b, path, "diagram"), path + ("diagram",))
        try:
            branches.append(Branch(
                diagram, rd.get(b, path, "gamma", float), orientation,
                rd.get(b, path, "length_m", float), str(rd.get(b, path, "name", default=str(i + 1))),
            ))
        except ValueError as exc:
            rd.fail(path, str(exc))
        pieces = []
        for j, q in enumerate(rd.get(b, path, "density", list)):
            qp = path + ("density", j)
            pieces.append(DensityPiece(rd.get(q, qp, "from_m", float), rd.get(q, qp, "to_m", float),
                                       rd.get(q, qp, "rho", float)))
        profiles.append(tuple(pieces))
    try:
        junction = JunctionSpec(tuple(branches))
    except ValueError as exc:
        rd.fail(("branches",), str(exc))
    if "junction" in doc:
        jd = doc["junction"]
        for key, actual in (("n_in", junction.n_in), ("n_out", junction.n_out)):
            want = rd.get(jd, ("junction",), key, int, actual)
            if want != actual:
                rd.fail(("junction", key), f"declares {want} but the branch list has {actual}")

    init_doc = doc.get("initial", {}) or {}
    initial = InitialData(tuple(profiles), rd.get(init_doc, ("initial",), "u0_junction", float, 0.0))
    try:
        initial.validate(junction, grid)
    except ValueError as exc:
        rd.fail(("branches",), str(exc))

    pd = doc.get("gamma_policy", {}) or {}
    mode = rd.get(pd, ("gamma_policy",), "mode", str, "fixed")
    try:
        policy = GammaPolicy(
            GammaMode(mode),
            tuple(tuple(float(x) for x in c) for c in rd.get(pd, ("gamma_policy",), "candidates", list, [])),
            tuple(float(x) for x in rd.get(pd, ("gamma_policy",), "lower_bounds", list, [])),
            rd.get(pd, ("gamma_policy",), "resolution", int, 64),
        )
        policy.admissible_set(junction)
    except ValueError as exc:
        rd.fail(("gamma_policy",), str(exc))

    od = doc.get("outputs", {}) or {}
    fields = tuple(rd.get(od, ("outputs",), "fields", list, list(Outputs.fields)))
    for f in fields:
        if f not in FIELDS:
            rd.fail(("outputs", "fields"), f"unknown field {f!r}; choose from {', '.join(FIELDS)}")
    times = tuple(float(t) for t in rd.get(od, ("outputs",), "snapshot_times_s", list, []))
    for t in times:
        if not 0 <= t <= grid.horizon_s:
            rd.fail(("outputs", "snapshot_times_s"), f"time {t} outside [0, {grid.horizon_s}]")
    outputs = Outputs(times, fields, str(rd.get(od, ("outputs",), "out_dir", str, Outputs.out_dir)))
    return Scenario(junction, grid, initial, policy, outputs, str(doc.get("name", "")))


def bundled_path(name: str) -> Path:
    stem = name[: -len(".scenario")] if name.endswith(".scenario") else name
    return Path(str(resources.files("hjjunction") / "data" / f"{stem}.scenario"))


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file; bare names resolve to bundled scenarios."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_path(str(path))
        if p.parent == Path(".") and bundled.exists():
            p = bundled
        else:
            raise ScenarioError(f"{path}: no such file")
    return parse_scenario(p.read_text(), str(path))


# -- canonical dump ------------------------------------------------------------------

def _diagram_doc(d: FundamentalDiagram) -> dict:
    if d.kind is DiagramKind.BIPARABOLIC:
        return {"kind": d.kind.value, "rho_c": d.rho_c, "rho_max": d.rho_max, "f_max": d.f_max, "k": d.k}
    return {"kind": d.kind.value, "points": [list(p) for p in d.breakpoints]}


def scenario_to_dict(sc: Scenario) -> dict:
    pol = sc.gamma_policy
    policy = {"mode": pol.mode.value}
    if pol.mode is GammaMode.MAXIMIZE:
        policy.update(candidates=[list(c) for c in pol.candidates], lower_bounds=list(pol.lower_bounds),
                      resolution=pol.resolution)
    return {
        "name": sc.name,
        "junction": {"n_in": sc.junction.n_in, "n_out": sc.junction.n_out},
        "grid": {"dx_m": sc.grid.dx_m, "dt_s": "auto" if sc.grid.dt_s is None else sc.grid.dt_s,
                 "horizon_s": sc.grid.horizon_s},
        "gamma_policy": policy,
        "initial": {"u0_junction": sc.initial.u0_junction},
        "branches": [
            {
                "name": b.name,
                "orientation": b.orientation.value,
                "gamma": b.gamma,
                "length_m": b.length_m,
                "diagram": _diagram_doc(b.diagram),
                "density": [{"from_m": q.from_m, "to_m": q.to_m, "rho": q.rho} for q in prof],
            }
            for b, prof in zip(sc.junction.branches, sc.initial.profiles)
        ],
        "outputs": {"snapshot_times_s": list(sc.outputs.snapshot_times_s),
                    "fields": list(sc.outputs.fields), "out_dir": sc.outputs.out_dir},
    }


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)


# -- outputs -------------------------------------------------------------------------------

def fmt(x) -> str:
    """Round-trip decimal with 17 significant digits."""
    return f"{float(x):.17g}"


def _time_tag(t: float) -> str:
    return f"t{t:g}"


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _field_rows(junction: JunctionSpec, dx_m: float, arrays, on_nodes: bool):
    for b, arr in zip(junction.branches, arrays):
        offset = 0.0 if on_nodes else 0.5
        for i, v in enumerate(arr):
            yield (b.name, i, fmt((i + offset) * dx_m), fmt(v))


def write_outputs(result, scenario: Scenario, out_dir=None) -> list[Path]:
    """Write snapshot CSVs, ``estimates.csv`` and ``manifest.json``.

    ``result`` is an :class:`HJRun` or a :class:`DensityRun`. Label files
    are only available from label runs.
    """
    out = Path(out_dir or scenario.outputs.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ScenarioError(f"{out}: cannot create output directory: {exc}") from None
    junction, grid = result.junction, result.grid
    is_hj = isinstance(result, HJRun)
    written = []
    snapshot_map = {}
    for t in scenario.outputs.snapshot_times_s:
        n = nearest_step(t, result.dt_s, result.n_steps)
        snapshot_map[_time_tag(t)] = {"step": n, "time_s": n * result.dt_s}
        snap = result.snapshots[n]
        if is_hj:
            labels = snap.values
            rho = densities_from_labels(junction, grid, labels)
        else:
            labels, rho = None, snap.values
        grads = [b.sign * r / b.gamma for b, r in zip(junction.branches, rho)]
        for name in scenario.outputs.fields:
            if name == "estimates":
                continue
            if name == "labels" and labels is None:
                continue
            arrays = {"labels": labels, "densities": rho, "gradients": grads}[name]
            path = out / f"{name}_{_time_tag(t)}.csv"
            _write_csv(path, ("branch", "index", "x_m", "value"),
                       _field_rows(junction, grid.dx_m, arrays, on_nodes=(name == "labels")))
            written.append(path)

    names = [b.name for b in junction.branches]
    if "estimates" in scenario.outputs.fields:
        path = out / "estimates.csv"
        if is_hj:
            tr = result.tracker
            header = ["step", "time_s", "m_n", "M_n"]
            header += [f"p_lo_margin_{n}" for n in names] + [f"p_hi_margin_{n}" for n in names]
            rows = []
            for n in range(len(tr.m_hist)):
                lo = [fmt(tr.grad_min[n][a] - tr.p_lo[a]) for a in range(junction.n)]
                hi = [fmt(tr.p_hi[a] - tr.grad_max[n][a]) for a in range(junction.n)]
                rows.append([n, fmt(n * result.dt_s), fmt(tr.m_hist[n]), fmt(tr.M_hist[n])] + lo + hi)
        else:
            cfl = result.cfl
            header = ["step", "time_s", "m_n", "M_n"]
            header += [f"rho_lo_margin_{n}" for n in names] + [f"rho_hi_margin_{n}" for n in names]
            rows = []
            for n in range(len(result.rate_min)):
                lo = [fmt(result.rho_min[n][a] - cfl.rho_lo[a]) for a in range(junction.n)]
                hi = [fmt(cfl.rho_hi[a] - result.rho_max[n][a]) for a in range(junction.n)]
                rows.append([n, fmt(n * result.dt_s), fmt(result.rate_min[n]), fmt(result.rate_max[n])] + lo + hi)
        _write_csv(path, header, rows)
        written.append(path)

    cfl = result.cfl
    manifest = {
        "scenario": scenario.name,
        "scheme": "labels" if is_hj else "densities",
        "dx_m": grid.dx_m,
        "dt_s": result.dt_s,
        "dt_max_s": cfl.dt_max_s,
        "n_steps": result.n_steps,
        "m0": cfl.m0,
        "branches": names,
        "snapshots": snapshot_map,
        "files": [p.name for p in written],
        "wall_time_s": result.wall_time_s,
    }
    if is_hj:
        manifest.update(M0=cfl.M0, p_lo=list(cfl.p_lo), p_hi=list(cfl.p_hi),
                        estimate_violations=len(result.tracker.violations))
    else:
        manifest.update(rho_lo=list(cfl.rho_lo), rho_hi=list(cfl.rho_hi),
                        gammas_final=list(result.gammas[-1]) if result.gammas else None)
    path = out / "manifest.json"
    path.write_text(json.dumps(_json_safe(manifest), indent=2) + "\n")
    written.append(path)
    return written


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj

