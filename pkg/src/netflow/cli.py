"""Command-line entry point.

Every subcommand reads its parameters from flags and, optionally, from a
config file (JSON object or ``key=value`` lines); flags win over the file.
Outputs go to an output directory together with ``manifest.json``.

Exit status: 0 success, 2 config error, 3 numerical failure, 4 flow event
halting before the requested time (outputs still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .expander import (ExpanderError, _sorted_rays, default_triod_seeds, random_triod_seeds, solve_expander,
                       verify_decay)
from .flow import HALTING, FlowError, FlowState, StepControls, evolve, snapshot_summary
from .glue import GlueError, extract_cone, make_family, run_glued, verify_hypotheses
from .network import Network, NetworkError, validate
from .pseudoloc import EXTERIORS, PseudolocError, pseudoloc_experiment
from .svg import render_trajectory

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_HALTED = 0, 2, 3, 4
TRAJECTORY_COLUMNS = ("t", "total_length", "sup_k", "min_segment_length", "junction_defect_max",
                      "mean_radius", "event")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _strs(text) -> list:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


# name -> (parser, default, positive, help); None default means required
_FIELDS = {
    "net": (str, None, False, "input network JSON"),
    "out_dir": (str, "netflow-out", False, "output directory"),
    "T": (float, 0.1, True, "final time"),
    "h": (float, 0.02, True, "marker spacing"),
    "cfl": (float, 0.25, True, "time step factor"),
    "scheme": (str, "explicit", False, "explicit or semi-implicit"),
    "snap": (_floats, [], False, "snapshot times t1,t2,..."),
    "svg": (int, 0, False, "write one SVG per snapshot (0/1)"),
    "x0": (_floats, [0.0, 0.0], False, "center a,b"),
    "r": (_floats, [1.0], False, "scales r1,r2,..."),
    "traj": (str, None, False, "trajectory directory written by evolve"),
    "t0": (float, None, True, "kernel focus time"),
    "angles": (_floats, None, False, "ray angles a1,a2,a3[,a4]"),
    "topology": (str, "01|23", False, "pairing for four rays"),
    "rmax": (float, 8.0, True, "integration radius"),
    "n_random": (int, 0, False, "extra random multi-start seeds"),
    "seed": (int, 0, False, "random seed"),
    "out": (str, None, False, "output file"),
    "point": (int, None, False, "vertex id of the singular point"),
    "scales": (_floats, [1e-2, 4e-3, 1e-3], True, "gluing scales s1,s2,..."),
    "expander": (str, "", False, "expander network JSON (rays read from its metadata)"),
    "glued_dir": (str, None, False, "directory written by glue"),
    "tau": (float, 0.1, True, "density scales r^2 <= tau t"),
    "eps": (float, 0.01, False, "window Lipschitz bound"),
    "delta": (float, 0.2, True, "window radius"),
    "eta": (float, 0.5, True, "target Lipschitz bound"),
    "exteriors": (_strs, list(EXTERIORS), False, "exterior shapes"),
}

SUBCOMMANDS = {
    "evolve": ("net", "out_dir", "T", "h", "cfl", "scheme", "snap", "svg"),
    "expander": ("angles", "topology", "rmax", "n_random", "seed", "out"),
    "glue": ("net", "point", "scales", "expander", "out_dir", "rmax"),
    "family": ("glued_dir", "T", "tau", "out", "cfl"),
    "density": ("net", "x0", "r", "out_dir"),
    "trace": ("traj", "x0", "t0", "out_dir"),
    "pseudoloc": ("eps", "delta", "eta", "h", "exteriors", "out_dir"),
    "validate": ("net", "out_dir"),
}
# outputs only written when asked for
_OPTIONAL_OUT = {"density", "validate"}


@dataclass
class ExperimentConfig:
    command: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"command": self.command, **self.params}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        d = json.loads(text)
        return cls(d.pop("command"), d)

    def out_dir(self) -> Path | None:
        if self.params.get("out"):
            return Path(self.params["out"]).parent
        if self.params.get("out_dir"):
            return Path(self.params["out_dir"])
        return None


def read_config_file(path) -> dict:
    """JSON object or ``key=value`` lines (``#`` starts a comment)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config file {path}, line {ln}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve_config(command: str, file_values: dict, flag_values: dict) -> ExperimentConfig:
    """Defaults, then file values, then flags; parse and check every field."""
    allowed = SUBCOMMANDS[command]
    params = {}
    for key in file_values:
        if key.replace("-", "_") not in allowed and key != "command":
            raise ConfigError(f"field '{key}': not a parameter of {command}")
    for name in allowed:
        parse, default, positive, _ = _FIELDS[name]
        raw = flag_values.get(name)
        if raw is None:
            raw = file_values.get(name, default)
        if raw is None:
            if command in _OPTIONAL_OUT and name == "out_dir":
                params[name] = None
                continue
            if name in ("out",) and command == "family":
                raw = str(Path(file_values.get("glued_dir") or flag_values.get("glued_dir") or ".") / "family" / "report.json")
            else:
                raise ConfigError(f"field '{name}': required")
        try:
            val = parse(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"field '{name}': cannot parse {raw!r}") from None
        vals = val if isinstance(val, list) else [val]
        if positive and any(not (isinstance(v, (int, float)) and v > 0) for v in vals):
            raise ConfigError(f"field '{name}': must be positive, got {raw!r}")
        params[name] = val
    if command in _OPTIONAL_OUT and params.get("out_dir") == _FIELDS["out_dir"][1]:
        params["out_dir"] = None
    if "scheme" in params and params["scheme"] not in ("explicit", "semi-implicit"):
        raise ConfigError(f"field 'scheme': must be explicit or semi-implicit, got {params['scheme']!r}")
    if "eps" in params and not params["eps"] >= 0:
        raise ConfigError("field 'eps': must be non-negative")
    if "angles" in params and len(params["angles"]) not in (3, 4):
        raise ConfigError("field 'angles': three or four ray angles expected")
    if "exteriors" in params:
        bad = [e for e in params["exteriors"] if e not in EXTERIORS]
        if bad:
            raise ConfigError(f"field 'exteriors': unknown shapes {bad}")
    return ExperimentConfig(command, params)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netflow", description="Network flow laboratory.")
    p.add_argument("--version", action="version", version=f"netflow {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    for cmd, names in SUBCOMMANDS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", default=None, help="JSON or key=value file; flags win")
        for name in names:
            # every flag defaults to None so that file values are only overridden explicitly
            sp.add_argument("--" + name.replace("_", "-"), dest=name, default=None, help=_FIELDS[name][3])
    return p


# ---------------------------------------------------------------------------
# output helpers


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, columns, rows) -> Path:
    lines = [",".join(columns)]
    lines += [",".join(_num(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, cfg: ExperimentConfig, wall: float, summaries: dict, status: int) -> Path:
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config": json.loads(cfg.to_json()),
        "version": __version__,
        "wall_clock_s": wall,
        "exit_status": status,
        "summaries": summaries,
        "files": {str(p.relative_to(out_dir)): _sha256(p) for p in files},
    }
    return write_json(out_dir / "manifest.json", manifest)


def mean_radius(net: Network) -> float:
    """Mean distance of the markers from their centroid (closing duplicates dropped)."""
    pts = []
    for s in net.segments:
        closed = s.start == s.end
        pts.append(s.points[:-1] if closed else s.points)
    if not pts:
        return float("nan")
    p = np.concatenate(pts)
    return float(np.mean(np.hypot(*(p - p.mean(axis=0)).T)))


def _load_net(path) -> Network:
    try:
        return Network.load(path)
    except FileNotFoundError:
        raise ConfigError(f"field 'net': no such file {path}") from None
    except (json.JSONDecodeError, NetworkError) as exc:
        raise ConfigError(f"field 'net': {exc}") from None


# ---------------------------------------------------------------------------
# subcommands; each returns (exit status, summary dict)


def cmd_validate(cfg: ExperimentConfig, out: Path | None):
    net = _load_net(cfg.params["net"])
    rep = validate(net)
    d = rep.as_dict()
    print(json.dumps(d, indent=2, sort_keys=True))
    if out is not None:
        write_json(out / "validation.json", d)
    return (EXIT_OK if rep.regular else EXIT_CONFIG), {"regular": rep.regular}


def cmd_density(cfg: ExperimentConfig, out: Path | None):
    net = _load_net(cfg.params["net"])
    x0 = cfg.params["x0"]
    if len(x0) != 2:
        raise ConfigError("field 'x0': two coordinates expected")
    rows = []
    for r in cfg.params["r"]:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", dg.UnderResolvedWarning)
            val = dg.gaussian_density(net, tuple(x0), r)
        flag = any(issubclass(w.category, dg.UnderResolvedWarning) for w in caught)
        rows.append((x0[0], x0[1], r, val, flag))
        print(f"r={r:g} density={val:.10f}" + (" (under-resolved)" if flag else ""))
    if out is not None:
        write_csv(out / "density.csv", ("x", "y", "r", "density", "under_resolved"), rows)
    return EXIT_OK, {"densities": [r[3] for r in rows]}


def _save_trajectory(traj, out: Path) -> None:
    snaps = out / "snapshots"
    snaps.mkdir(parents=True, exist_ok=True)
    for i, st in enumerate(traj.snapshots):
        net = st.net
        Network(net.vertices, net.segments, {**net.metadata, "t": float(st.t), "h": float(st.h)}).save(
            snaps / f"snap_{i:04d}.json")


def _event_at(events, t) -> str:
    names = [e.kind for e in events if abs(e.time - t) <= 1e-12 * max(1.0, abs(t))]
    return "|".join(names)


def cmd_evolve(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    net = _load_net(p["net"])
    controls = StepControls(cfl=p["cfl"], scheme=p["scheme"])
    snap = sorted(t for t in p["snap"] if 0 < t < p["T"])
    traj = evolve(FlowState(net, 0.0, p["h"]), p["T"], controls, snap_times=snap)
    rows = []
    for st in traj.snapshots:
        s = snapshot_summary(st)
        rows.append((s["t"], s["total_length"], s["sup_k"], s["min_segment_length"],
                     s["junction_defect_max"], mean_radius(st.net), _event_at(traj.events, st.t)))
    write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, rows)
    write_json(out / "events.json", [e.as_dict() for e in traj.events])
    _save_trajectory(traj, out)
    if p["svg"]:
        render_trajectory(traj.snapshots, out / "svg")
    final = traj.final
    halted = final.t < p["T"] * (1 - 1e-12)
    summary = {"final_t": final.t, "snapshots": len(traj.snapshots),
               "events": [e.as_dict() for e in traj.events], "final": snapshot_summary(final)}
    return (EXIT_HALTED if halted else EXIT_OK), summary


def _load_trajectory(path) -> list:
    d = Path(path)
    files = sorted((d / "snapshots").glob("snap_*.json")) or sorted(d.glob("snap_*.json"))
    if not files:
        raise ConfigError(f"field 'traj': no snapshots in {path}")
    out = []
    for f in files:
        net = Network.load(f)
        out.append(FlowState(net, float(net.metadata["t"]), float(net.metadata.get("h", 0.0))))
    return out


def cmd_trace(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    snaps = [s for s in _load_trajectory(p["traj"]) if s.t < p["t0"]]
    if not snaps:
        raise ConfigError("field 't0': no snapshot before t0")
    tr = dg.huisken_trace(snaps, tuple(p["x0"]), p["t0"])
    inc = np.concatenate([[0.0], np.maximum(tr.increments(), 0.0)])
    rows = list(zip(tr.t, tr.theta, tr.defect, inc))
    write_csv(out / "trace.csv", ("t", "theta_value", "defect", "slack"), rows)
    summary = {"x0": p["x0"], "t0": p["t0"], "max_slack": tr.slack, "theta_first": float(tr.theta[0]),
               "theta_last": float(tr.theta[-1])}
    write_json(out / "trace_summary.json", summary)
    return EXIT_OK, summary


def cmd_expander(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    kw = {"r_max": p["rmax"]}
    if len(p["angles"]) == 3 and p["n_random"] > 0:
        rays = _sorted_rays(p["angles"])
        rng = np.random.default_rng(p["seed"])
        kw["seeds"] = default_triod_seeds(rays) + random_triod_seeds(rays, p["n_random"], rng)
    sol = solve_expander(p["angles"], p["topology"] if len(p["angles"]) == 4 else None, **kw)
    sol.decay = verify_decay(sol)
    sol.network(h=0.05).save(Path(p["out"]))
    rep = sol.report()
    write_json(out / "expander_report.json", rep)
    return EXIT_OK, {"junctions": rep["junctions"], "residuals": rep["residuals"]}


def cmd_glue(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    seed = _load_net(p["net"])
    if p["point"] not in {v.id for v in seed.vertices}:
        raise ConfigError(f"field 'point': no vertex {p['point']}")
    cone = extract_cone(seed, p["point"])
    angles, topology = cone.angles, None
    if p["expander"]:
        meta = _load_net(p["expander"]).metadata
        topology = meta.get("topology")
    # the expander is solved around the origin; the cone may be elsewhere
    exp = solve_expander(angles, topology, r_max=p["rmax"])
    fam = make_family(seed, p["point"], exp, scales=p["scales"])
    reports = verify_hypotheses(fam)
    files = []
    for s, net in zip(fam.scales, fam.glued):
        name = f"glued_s{s:.6g}.json"
        net.save(out / name)
        files.append({"s": s, "file": name, "h": fam.spacing(s)})
    write_json(out / "family.json", {"center": cone.position.tolist(), "point": p["point"], "r0": fam.r0,
                                     "members": files, "cone": cone.as_dict()})
    write_json(out / "hypotheses.json", [r.as_dict() for r in reports])
    return EXIT_OK, {"scales": fam.scales, "r0": fam.r0, "hypotheses": [r.as_dict() for r in reports]}


def cmd_family(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    d = Path(p["glued_dir"])
    try:
        meta = json.loads((d / "family.json").read_text())
    except FileNotFoundError:
        raise ConfigError(f"field 'glued_dir': no family.json in {d}") from None
    members = sorted(meta["members"], key=lambda m: -m["s"])
    nets = [Network.load(d / m["file"]) for m in members]
    res = run_glued(nets, [m["s"] for m in members], [m["h"] for m in members], meta["center"],
                    T=p["T"], controls=StepControls(cfl=p["cfl"]), tau=p["tau"])
    per_s = res["per_s"]
    report = {"T": p["T"], "tau": p["tau"], "finest_s": res["finest_s"], "per_s": per_s,
              "to_finest": res["to_finest"]}
    write_json(Path(p["out"]), report)
    rows = []
    for run in res["runs"]:
        for i, t in enumerate(run.times):
            rows.append((run.s, t, run.sup_k_sqrt_t[i], run.min_seg_over_sqrt_t[i], run.max_density[i]))
    write_csv(out / "family.csv", ("s", "t", "sup_k_sqrt_t", "min_seg_over_sqrt_t", "max_density"), rows)
    halted = any(e["kind"] in HALTING for r in per_s for e in r["events"])
    return (EXIT_HALTED if halted else EXIT_OK), {"per_s": per_s}


def cmd_pseudoloc(cfg: ExperimentConfig, out: Path):
    p = cfg.params
    rep = pseudoloc_experiment(eps=p["eps"], delta=p["delta"], eta=p["eta"], exteriors=p["exteriors"], h=p["h"])
    rows = [(r.exterior, w.t, w.lipschitz, w.height, w.status) for r in rep.runs for w in r.samples]
    write_csv(out / "pseudoloc.csv", ("exterior", "t", "lipschitz", "height", "status"), rows)
    d = rep.as_dict()
    write_json(out / "pseudoloc_report.json", d)
    halted = any(r.events for r in rep.runs)
    return (EXIT_HALTED if halted else EXIT_OK), {"eta_achieved": d["eta_achieved"], "passed": d["passed"]}


COMMANDS = {
    "evolve": cmd_evolve,
    "expander": cmd_expander,
    "glue": cmd_glue,
    "family": cmd_family,
    "density": cmd_density,
    "trace": cmd_trace,
    "pseudoloc": cmd_pseudoloc,
    "validate": cmd_validate,
}


def dispatch(argv) -> int:
    parser = build_parser()
    argv = list(argv)
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] in ("-h", "--help", "--version"):
            parser.parse_args(argv)
        parser.print_usage(sys.stderr)
        print(f"netflow: choose a command from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config") and v is not None}
    try:
        file_values = read_config_file(ns.config) if ns.config else {}
        cfg = resolve_config(ns.command, file_values, flags)
        out = cfg.out_dir()
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"netflow {ns.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        status, summary = COMMANDS[ns.command](cfg, out)
    except (ConfigError, PseudolocError) as exc:
        # a rejected precondition on the input data counts as a config error
        print(f"netflow {ns.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlowError, ExpanderError, GlueError, NetworkError, FloatingPointError) as exc:
        print(f"netflow {ns.command}: numerical failure: {exc}", file=sys.stderr)
        status, summary = EXIT_NUMERIC, {"error": str(exc)}
    if out is not None:
        write_manifest(out, cfg, time.perf_counter() - t0, summary, status)
    return status


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
