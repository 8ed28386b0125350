"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line with measured values."""

import time

import numpy as np
import pytest

from netflow import diagnostics as dg
from netflow import expander as ex
from netflow import shapes
from netflow.cli import dispatch
from netflow.flow import FlowState, StepControls, evolve
from netflow.glue import density_grid, make_family, run_family
from netflow.pseudoloc import pseudoloc_experiment

THETA_CIRCLE = np.sqrt(2 * np.pi / np.e)
PLUS = [0.0, np.pi / 2, np.pi, 3 * np.pi / 2]


@pytest.fixture
def report(capsys):
    def emit(n, ok, text):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {text}")
    return emit


def _circle_radius(net):
    pts = net.segments[0].points[:-1]
    return float(np.mean(np.hypot(*pts.T)))


@pytest.fixture(scope="module")
def plus_family_run():
    exp = ex.solve_tree_expander(PLUS, "01|23")
    fam = make_family(shapes.plus(3.0, h=0.02), 0, exp, scales=(1e-2, 4e-3, 1e-3))
    t = time.perf_counter()
    res = run_family(fam, T=0.05, tau=0.1)
    return fam, res, time.perf_counter() - t


# 1 ---------------------------------------------------------------------------

def test_criterion_1_density_catalog(report):
    cases = [
        ("line", lambda: shapes.line(40.0, h=0.004), (0.0, 0.0), 1.0, 1.0, 1e-6),
        ("triod", lambda: shapes.standard_triod(20.0, h=0.004), (0.0, 0.0), 1.0, 1.5, 1e-6),
        ("circle", lambda: shapes.circle(1.0, n=20000), (0.0, 0.0), np.sqrt(0.5), THETA_CIRCLE, 1e-4),
    ]
    ok, parts = True, []
    for name, build, x0, r, exact, tol in cases:
        net = build()
        n = sum(len(s.points) for s in net.segments)
        t = time.perf_counter()
        val = dg.gaussian_density(net, x0, r)
        wall = time.perf_counter() - t
        good = abs(val - exact) <= tol and wall < 1.0 and n >= 10_000
        ok &= good
        parts.append(f"{name} {val:.9f} (err {abs(val - exact):.1e}, {n} markers, {wall * 1e3:.1f} ms)")
    report(1, ok, "; ".join(parts))
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_2_shrinking_circle(report):
    errs, walls = {}, {}
    for h in (0.01, 0.005):
        t = time.perf_counter()
        tr = evolve(FlowState(shapes.circle(1.0, h=h), 0.0, h), 0.375, StepControls(cfl=0.25))
        walls[h] = time.perf_counter() - t
        errs[h] = abs(_circle_radius(tr.final.net) - 0.5)
    ratio = errs[0.01] / errs[0.005]
    ok = errs[0.005] <= 2e-3 and ratio >= 3.0 and walls[0.005] < 30.0
    report(2, ok, f"radius error {errs[0.005]:.2e} at h=0.005, {errs[0.01]:.2e} at h=0.01, ratio {ratio:.2f}, "
                  f"runtime {walls[0.005]:.1f} s")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_3_gradient_flow_identity(report):
    base = np.linspace(0.005, 0.04, 8)
    gap = 2e-4
    times = sorted(list(base) + list(base + gap))
    err = {}
    for h in (0.02, 0.01, 0.005):
        tr = evolve(FlowState(shapes.bent_triod(2.0, h=h), 0.0, h), 0.041, snap_times=times)
        # odd entries are the short windows [t, t + gap]
        err[h] = float(np.max(dg.length_rate_defect(tr.snapshots)[1::2]))
    seq = [err[h] for h in (0.02, 0.01, 0.005)]
    ok = err[0.01] < 0.02 and seq[0] > seq[1] > seq[2]
    report(3, ok, "max relative |dL/dt + int k^2| / int k^2: "
                  + ", ".join(f"h={h:g}: {e:.2e}" for h, e in err.items()))
    assert ok


# 4 ---------------------------------------------------------------------------

def _huisken_flows(h):
    yield "bent triod", shapes.bent_triod(3.0, h=h)
    tree = ex.solve_tree_expander(PLUS, "01|23")
    yield "lens-free tree", make_family(shapes.plus(3.0, h=h), 0, tree, scales=(1e-2,), h_max=h).glued[0]
    yield "expander", ex.solve_triod_expander([0.3, 2.0, 4.0], r_max=8.0).network(h)


def test_criterion_4_huisken_monotonicity(report):
    T = 0.05
    g = np.linspace(-0.6, 0.6, 5)
    centers = [(a, b) for a in g for b in g]
    slack = {}
    for h in (0.02, 0.01):
        for name, net in _huisken_flows(h):
            tr = evolve(FlowState(net, 0.0, h), T, snap_times=np.linspace(0, T, 51)[1:-1])
            slack[name, h] = max(dg.huisken_trace(tr, x0, T + d).slack for x0 in centers for d in (0.002, 0.02))
    base = max(v for (n, h), v in slack.items() if h == 0.02)
    fine = max(v for (n, h), v in slack.items() if h == 0.01)
    ok = base <= 1e-3 and fine <= 2.5e-4
    report(4, ok, f"max positive increment {base:.2e} at h=0.02, {fine:.2e} at h=0.01 "
                  f"(25 centers x 2 focus times on bent triod, lens-free tree, expander)")
    assert ok


# 5 ---------------------------------------------------------------------------

def _random_gaps(rng):
    while True:
        g = rng.uniform(np.pi / 3, np.pi, 2)
        g3 = 2 * np.pi - g.sum()
        if np.pi / 3 <= g3 <= np.pi:
            a0 = rng.uniform(0, 2 * np.pi)
            return [a0, a0 + g[0], a0 + g[0] + g[1]]


def test_criterion_5_expander_solver(report):
    t = time.perf_counter()
    rng = np.random.default_rng(20240501)
    res, spread, decay_dev = 0.0, 0.0, 0.0
    for _ in range(20):
        angles = _random_gaps(rng)
        sol = ex.solve_triod_expander(angles, r_max=8.0)
        res = max(res, sol.residuals["sup_k_minus_xperp"])
        spread = max(spread, sol.residuals["multi_start_spread"])
        assert sol.residuals["multi_start_agree"]
        c8 = ex.verify_decay(sol)["C_u"]
        c16 = ex.verify_decay(ex.solve_triod_expander(angles, r_max=16.0))["C_u"]
        decay_dev = max(decay_dev, abs(c16 / c8 - 1.0))
    sym = ex.solve_triod_expander([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    j0 = float(np.hypot(*sym.junctions[0]))
    wall = time.perf_counter() - t
    ok = res <= 1e-8 and j0 <= 1e-10 and spread <= 1e-6 and decay_dev <= 0.1 and wall < 60.0
    report(5, ok, f"sup|k - x^perp| {res:.1e}, symmetric junction {j0:.1e}, multi-start spread {spread:.1e}, "
                  f"C_u change under R_max 8->16 {decay_dev:.1e}, runtime {wall:.1f} s")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_self_similar_evolution(report):
    sol = ex.solve_triod_expander([0.3, 2.0, 4.0], r_max=10.0)
    ref = sol.network(0.002)
    cfl = 0.25
    dist, tol = {}, {}
    for h in (0.04, 0.02):
        tr = evolve(FlowState(sol.network(h), 0.0, h), 0.2, StepControls(cfl=cfl), snap_times=[0.1])
        d = [dg.hausdorff(s.net.scaled(1 / np.sqrt(1 + 2 * s.t)), ref, radius=6.0) for s in tr.snapshots[1:]]
        dist[h] = max(d)
        tol[h] = 5 * (h**2 + cfl * h**2)
    ratio = dist[0.04] / dist[0.02]
    ok = all(dist[h] <= tol[h] for h in dist) and ratio >= 3.0
    report(6, ok, "Hausdorff on B_6 at t in {0.1, 0.2}: "
                  + ", ".join(f"h={h:g}: {dist[h]:.2e} (tol {tol[h]:.1e})" for h in dist)
                  + f", shrink {ratio:.2f}x")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_7_glued_family(report, plus_family_run):
    fam, res, wall = plus_family_run
    per = res["per_s"]
    ks = [p["sup_k_sqrt_t"] for p in per]
    var_k = (max(ks) - min(ks)) / min(ks)
    a = np.isfinite(ks).all() and var_k <= 0.25
    kappa = min(p["min_seg_over_sqrt_t"] for p in per)
    b = kappa > 0
    dens = max(p["max_density"] for p in per)
    qslack = max(p["quadrature_slack"] for p in per)
    c = dens <= 1.5 + 0.05 + qslack
    # reference only: the same snapshots sampled at r^2 <= 0.05 t
    centers = fam.cone.position + density_grid(9)
    dens_half = max(dg.polyline_density(snap.net, x, np.sqrt(f * 0.05 * snap.t))
                    for run in res["runs"] for snap in run.snapshots[1:] for x in centers for f in (1.0, 0.25))
    finals = {s: v["hausdorff_to_finest"][-1] for s, v in res["to_finest"].items()}
    means = {s: float(np.mean(v["hausdorff_to_finest"])) for s, v in res["to_finest"].items()}
    d = list(finals.values())[0] > list(finals.values())[1] and list(means.values())[0] > list(means.values())[1]
    events = sum(len(p["events"]) for p in per)
    ok = a and b and c and d and wall < 600 and events == 0
    report(7, ok, f"(a) sup|k|sqrt(t) per s {[round(k, 4) for k in ks]}, variation {var_k:.1%} "
                  f"{'ok' if a else 'FAIL'}; (b) kappa {kappa:.3f} {'ok' if b else 'FAIL'}; "
                  f"(c) max density {dens:.4f} vs bound {1.55 + qslack:.4f} {'ok' if c else 'FAIL'} "
                  f"(r^2 <= 0.05 t gives {dens_half:.4f}); "
                  f"(d) Hausdorff to finest at T {', '.join(f'{s}: {v:.1e}' for s, v in finals.items())} "
                  f"{'ok' if d else 'FAIL'}; events {events}; runtime {wall:.1f} s")
    assert ok


# 8 ---------------------------------------------------------------------------

def test_criterion_8_pseudolocality(report):
    t = time.perf_counter()
    rep = pseudoloc_experiment(eps=0.01, delta=0.2, eta=0.5)
    wall = time.perf_counter() - t
    ratios = {r.exterior: r.length_ratio for r in rep.runs}
    distinct = len(set(ratios)) >= 3 and all(np.isfinite(v) for v in ratios.values())
    ok = rep.passed and distinct and wall < 300
    report(8, ok, f"eta achieved {rep.eta_achieved:.4f} <= 0.5 over exteriors "
                  + ", ".join(f"{k} (length ratio {v:.2f})" for k, v in ratios.items())
                  + f", runtime {wall:.1f} s")
    assert ok


# 9 ---------------------------------------------------------------------------

def test_criterion_9_weighted_monotonicity(report, plus_family_run):
    f = lambda a: a**2  # noqa: E731
    f2 = lambda a: 2.0 * np.ones_like(a)  # noqa: E731
    T, t_start = 0.05, 0.01
    slack = {}
    for h, n in ((0.02, 20), (0.01, 40)):
        net = shapes.bent_triod(3.0, h=h)
        root = next(v.id for v in net.vertices if v.kind == "endpoint")
        tr = evolve(FlowState(net, 0.0, h), T, snap_times=np.linspace(t_start, T, n + 1)[:-1])
        snaps = [s for s in tr.snapshots if s.t >= t_start - 1e-12]
        slack[h] = dg.weighted_monotonicity(snaps, f, f2, (0.1, 0.05), T + 0.05, root=root).max_slack
    _, res, _ = plus_family_run
    annulus = [p["annulus_max"] for p in res["per_s"]]
    ok = slack[0.02] <= 1e-2 and slack[0.01] <= 0.5 * slack[0.02] and np.isfinite(annulus).all()
    report(9, ok, f"slack {slack[0.02]:.2e} at h=0.02, {slack[0.01]:.2e} at h=0.01 "
                  f"(ratio {slack[0.02] / max(slack[0.01], 1e-300):.2f}); "
                  f"localized annulus term per s {[f'{a:.2e}' for a in annulus]}")
    assert ok


# 10 --------------------------------------------------------------------------

def _run_configs(root, inputs):
    runs = [
        ["density", "--net", str(inputs["line"]), "--x0", "0,0", "--r", "1", "--out-dir", str(root / "c1line")],
        ["density", "--net", str(inputs["triod"]), "--x0", "0,0", "--r", "1", "--out-dir", str(root / "c1triod")],
        ["density", "--net", str(inputs["circle"]), "--x0", "0,0", "--r", str(np.sqrt(0.5)),
         "--out-dir", str(root / "c1circle")],
        ["evolve", "--net", str(inputs["circle2"]), "--T", "0.375", "--h", "0.005", "--out-dir", str(root / "c2")],
        ["evolve", "--net", str(inputs["bent"]), "--T", "0.05", "--h", "0.01",
         "--snap", ",".join(f"{t:.4f}" for t in np.linspace(0.001, 0.049, 49)), "--out-dir", str(root / "c34")],
        ["trace", "--traj", str(root / "c34"), "--x0", "0.1,0.05", "--t0", "0.07", "--out-dir", str(root / "c4")],
        ["expander", "--angles", "0.3,2.0,4.0", "--out", str(root / "c5" / "expander.json")],
        ["evolve", "--net", str(root / "c5" / "expander.json"), "--T", "0.2", "--h", "0.05", "--snap", "0.1",
         "--out-dir", str(root / "c6")],
        ["expander", "--angles", ",".join(str(a) for a in PLUS), "--out", str(root / "c7x" / "plus.json")],
        ["glue", "--net", str(inputs["plus"]), "--point", "0", "--expander", str(root / "c7x" / "plus.json"),
         "--out-dir", str(root / "c7")],
        ["family", "--glued-dir", str(root / "c7"), "--T", "0.05"],
        ["pseudoloc", "--out-dir", str(root / "c8")],
    ]
    codes = [dispatch(args) for args in runs]
    return codes


def test_criterion_10_determinism(report, tmp_path):
    inputs = {}
    for name, net in (("line", shapes.line(40.0, h=0.004)), ("triod", shapes.standard_triod(20.0, h=0.004)),
                      ("circle", shapes.circle(1.0, n=20000)), ("circle2", shapes.circle(1.0, h=0.005)),
                      ("bent", shapes.bent_triod(3.0, h=0.01)), ("plus", shapes.plus(3.0, h=0.02))):
        inputs[name] = tmp_path / f"{name}.json"
        net.save(inputs[name])
    codes_a = _run_configs(tmp_path / "a", inputs)
    codes_b = _run_configs(tmp_path / "b", inputs)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*.csv"))
    differ = [str(p) for p in files_a if (tmp_path / "a" / p).read_bytes() != (tmp_path / "b" / p).read_bytes()]
    ok = codes_a == codes_b and all(c == 0 for c in codes_a) and files_a == files_b and not differ and files_a
    report(10, ok, f"{len(files_a)} CSV files from {len(codes_a)} runs compared, "
                   f"{len(differ)} differ; exit codes {codes_a}")
    assert ok
