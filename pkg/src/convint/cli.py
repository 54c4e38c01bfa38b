"""Batch front end: run configs, mesh/metrics export, SVG level-set rendering,
single-block and covering check suites.

    convint run    --config cfg.json --out outdir
    convint render --mesh mesh.json --svg out.svg [--color-by well|q|l]
    convint check  block --problem KH --k 1 [--faithful | --delta 0.125]
    convint check  cover --case box --delta 0.25
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import analysis, blocks, cover, engine, inapprox, mat2
from .errors import (BadParameter, BudgetExceeded, ConvintError, NotInInterior,
                     StageViolation)
from .geom2 import CASE_C2, mesh_from_json, mesh_to_json

WELL_COLORS_KH = {1: "#d62728", 2: "#2ca02c", 3: "#1f77b4"}
WELL_COLORS_O2 = {1: "#1f77b4", 2: "#ff7f0e"}


# ---------------------------------------------------------------------------
# run

def load_config(path: str) -> engine.RunConfig:
    with open(path) as f:
        doc = json.load(f)
    for key in ("problem", "domain", "M0", "depth"):
        if key not in doc:
            raise BadParameter(f"config field '{key}' is missing")
    dm = doc.get("deltaMode", {"mode": "demo", "delta": 0.125})
    mode = dm.get("mode", "demo").lower()
    if mode not in ("demo", "faithful"):
        raise BadParameter(f"deltaMode.mode = {mode!r} must be demo|faithful")
    return engine.RunConfig(
        problem=doc["problem"],
        domain=tuple(tuple(p) for p in doc["domain"]),
        M0=tuple(tuple(r) for r in doc["M0"]),
        depth=int(doc["depth"]),
        delta_mode=mode,
        delta=float(dm.get("delta", 0.125)),
        cell_budget=int(doc.get("cellBudget", 5_000_000)),
        sign_policy=doc.get("signPolicy", "ledger").lower(),
        seed=int(doc.get("seed", 0)),
        engine_cover=doc.get("engineCover", "lean"),
    )


def cmd_run(config_path: str, out_dir: str) -> int:
    try:
        cfg = load_config(config_path)
    except (OSError, json.JSONDecodeError, BadParameter) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1
    os.makedirs(out_dir, exist_ok=True)
    try:
        state, rows = engine.run(cfg)
    except NotInInterior as ex:
        print(f"error: NotInInterior: {ex}", file=sys.stderr)
        return 1
    except StageViolation as ex:
        print(f"error: StageViolation: {ex}", file=sys.stderr)
        return 2
    except ConvintError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1

    csv_text = analysis.rows_to_csv(rows)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        f.write(csv_text)
    mesh_doc = mesh_to_json(state.mesh, history=state.history,
                            path=os.path.join(out_dir, "mesh_final.json"))
    consts = analysis.run_constants(state, rows)
    manifest = {
        "config": json.load(open(config_path)),
        "m0": state.m0,
        "generations": state.k,
        "cellCount": state.mesh.n_cells,
        "budgetExceeded": state.budget_exceeded,
        "constants": consts,
        "tolerances": {
            "tol_geom": cfg.tol_geom,
            "tol_angle": cfg.tol_angle,
            "tol_cont_rel": 1e-9,
            "c2": cfg.c2,
            "median_stop": cfg.median_stop,
        },
        "contentHash": hashlib.sha256(
            (csv_text + json.dumps(mesh_doc["cells"][:64])).encode()).hexdigest(),
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    if state.budget_exceeded:
        print(f"budget exceeded after {state.k} generations "
              f"({state.mesh.n_cells} cells); partial metrics written")
        return 3
    print(f"ok: {state.k} generations, {state.mesh.n_cells} cells")
    return 0


# ---------------------------------------------------------------------------
# render

def _svg_color_q(q, qmax):
    g = 255 - int(230 * min(q, qmax) / max(qmax, 1))
    return f"#{g:02x}{g:02x}{g:02x}"


def cmd_render(mesh_path: str, svg_path: str, color_by: str = "well") -> int:
    try:
        mesh = mesh_from_json(mesh_path)
    except (OSError, json.JSONDecodeError, KeyError) as ex:
        print(f"error: malformed mesh: {ex}", file=sys.stderr)
        return 1
    # problem heuristic: trace-free gradients => three wells
    tr = np.abs(mesh.grad[:, 0, 0] + mesh.grad[:, 1, 1])
    problem = "KH" if float(tr.max(initial=0.0)) < 1e-6 else "O2"
    wells = analysis.chi(mesh, problem)
    lo = mesh.verts.reshape(-1, 2).min(axis=0)
    hi = mesh.verts.reshape(-1, 2).max(axis=0)
    pal = WELL_COLORS_KH if problem == "KH" else WELL_COLORS_O2
    qmax = int(mesh.q.max(initial=0))
    lmax = int(mesh.l.max(initial=0))
    stroke = "none" if mesh.generation >= 6 else "#00000030"
    stroke_w = 0.0 if mesh.generation >= 6 else 0.002 * max(hi[0] - lo[0], hi[1] - lo[1])
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo[0]:.6f} {lo[1]:.6f} '
        f'{hi[0] - lo[0]:.6f} {hi[1] - lo[1]:.6f}">',
        f'<g transform="translate(0,{(lo[1] + hi[1]):.6f}) scale(1,-1)">',
    ]
    for i in range(mesh.n_cells):
        if color_by == "well":
            col = pal.get(int(wells[i]), "#999999")
        elif color_by == "q":
            col = _svg_color_q(int(mesh.q[i]), qmax)
        else:
            col = _svg_color_q(int(mesh.l[i]) + 1, lmax + 1)
        pts = " ".join(f"{x:.6f},{y:.6f}" for x, y in mesh.verts[i])
        parts.append(f'<polygon points="{pts}" fill="{col}" stroke="{stroke}" '
                     f'stroke-width="{stroke_w:.6f}"/>')
    parts.append("</g></svg>")
    with open(svg_path, "w", newline="") as f:
        f.write("\n".join(parts) + "\n")
    print(f"wrote {svg_path} ({mesh.n_cells} polygons, color by {color_by})")
    return 0


# ---------------------------------------------------------------------------
# check suites

def _report(checks) -> int:
    width = max(len(name) for name, _ in checks)
    ok_all = True
    for name, ok in checks:
        print(f"  {name:<{width}}  {'PASS' if ok else 'FAIL'}")
        ok_all &= ok
    print("all checks passed" if ok_all else "FAILURES present")
    return 0 if ok_all else 1


def check_block(problem: str, k: int, j: int = 0, faithful: bool = True,
                delta: float = None) -> int:
    """Single-block acceptance-style suite for one stage."""
    from .geom2 import mesh_from_lists, continuity_check, TAG_C, CASE_C1
    checks = []
    if problem == "KH":
        mu = (250 / 256, 3 / 256, 3 / 256)
        M = mat2.bary_to_sym(mu)
        stage = inapprox.Stage(inapprox.PHASE_U, k, j, anchor=0)
        dlt = delta if delta is not None else engine.faithful_delta("KH", stage.phase, k)
        ks = inapprox.split_kh_sym(M, stage)
        sp, _ = engine._split_kh_full(M, stage, None, "ledger", False)
        blk = blocks.conti_block(sp.lam, dlt, "divfree")
        inst = blocks.instantiate(blk, np.zeros(2), 1.0, sp.dir.n, M, np.zeros(2), sp.A, sp.B)
        checks.append(("lambda value", abs(ks.lam - 3 / 500) < 1e-12))
        tr = np.abs(inst.grad[:, 0, 0] + inst.grad[:, 1, 1]).max()
        checks.append(("trace-free gradients", tr <= 1e-12))
        member = all(inapprox.member_kh(inst.grad[i], sp.target_stage)
                     for i in range(inst.grad.shape[0]))
        checks.append(("target-stage membership", member))
    else:
        M = np.diag([5 / 8, 5 / 8])
        stage = inapprox.Stage(inapprox.PHASE_U, k, j)
        dlt = delta if delta is not None else engine.faithful_delta("O2", stage.phase, k)
        sp = inapprox.split_o2(M, stage)
        blk = blocks.conti_block(sp.lam, dlt, "generic")
        inst = blocks.instantiate(blk, np.zeros(2), 1.0, sp.dir.n, M, np.zeros(2), sp.A, sp.B)
        checks.append(("lambda value", abs(sp.lam - 3 / 26) < 1e-12))
        member = all(inapprox.member_o2(inst.grad[i], sp.target_stage)
                     for i in range(inst.grad.shape[0]))
        checks.append(("target-stage membership", member))
    eps = inst.eps
    dmin = np.minimum(
        np.linalg.norm(inst.grad - sp.A[None], axis=(1, 2)),
        np.linalg.norm(inst.grad - sp.B[None], axis=(1, 2)))
    checks.append(("gradient eps-closeness", bool((dmin <= eps + 1e-12).all())))
    n = inst.verts.shape[0]
    mesh = mesh_from_lists(0, inst.verts, inst.grad, inst.offset,
                           [0] * n, [0] * n, [0] * n, [CASE_C1] * n, [TAG_C] * n,
                           [math.nan] * n, [math.nan] * n, [-1] * n, list(range(n)))
    checks.append(("mutual continuity", len(continuity_check(mesh)) == 0))
    corners = blocks.diamond_corners(np.zeros(2), 1.0, sp.dir.n, blk.delta)
    from .geom2 import boundary_check
    dev = boundary_check(mesh, M, [tuple(c) for c in corners])
    checks.append(("boundary trace", dev <= 1e-9))
    per = mesh.perimeters().sum()
    per_d = 4.0 * math.hypot(1.0, blk.delta)
    checks.append(("perimeter factor <= 16", per <= 16 * per_d))
    return _report(checks)


def check_cover(case: str, delta: float = 0.25) -> int:
    nhat = np.array([0.0, 1.0])
    checks = []
    if case == "box":
        n = int(math.floor(1 / delta))
        rect = np.array([[-1, -delta * n], [1, -delta * n], [1, delta * n], [-1, delta * n]],
                        dtype=float)
        plan = cover.cover_box(rect, delta, nhat)
        n_c1 = sum(1 for p in plan.remainder if p.tag == 1)
        n_rest = sum(1 for p in plan.remainder if p.tag == 0)
        print(f"  {len(plan.diamonds)} diamonds / {n_c1} gap triangles / {n_rest} corners, "
              f"v1 = {plan.v1:.6f}")
        checks.append(("diamond count", len(plan.diamonds) == n))
        checks.append(("gap triangle count", n_c1 == 2 * (n - 1)))
        checks.append(("corner count", n_rest == 4))
        checks.append(("v1 = 1/2", abs(plan.v1 - 0.5) < 1e-9))
        checks.append(("partition", plan.check_partition() < 1e-9))
    elif case == "isosceles":
        tri = np.array([[0, delta], [0, -delta], [-1, 0.0]])
        plan = cover.cover_isosceles(tri, delta, nhat)
        print(f"  v1 = {plan.v1:.6f}, remainder perimeter ratio = {plan.perim_c1:.3f}")
        checks.append(("v1 = 1/2", abs(plan.v1 - 0.5) < 1e-9))
        checks.append(("remainder perimeter <= 2x", plan.perim_c1 <= 2.0))
        checks.append(("partition", plan.check_partition() < 1e-9))
    elif case == "triangle":
        rng = np.random.default_rng(0)
        worst_v1, worst_def, worst_per = 1.0, 0.0, 0.0
        for _ in range(100):
            tri = rng.normal(size=(3, 2))
            while abs(cover.tri_area(tri)) < 0.05:
                tri = rng.normal(size=(3, 2))
            ang = rng.uniform(0, 2 * math.pi)
            nh = np.array([math.cos(ang), math.sin(ang)])
            plan = cover.cover_triangle(tri, delta, nh)
            worst_v1 = min(worst_v1, plan.v1)
            worst_def = max(worst_def, plan.check_partition())
            worst_per = max(worst_per, plan.perim_good + plan.perim_c1 + plan.perim_rest)
        print(f"  worst v1 = {worst_v1:.4f}, worst defect = {worst_def:.2e}, "
              f"worst perimeter ratio = {worst_per:.2f}")
        checks.append(("v1 >= 1/100", worst_v1 >= 0.01))
        checks.append(("partitions exact", worst_def < 1e-9))
        checks.append(("perimeter <= 100/delta", worst_per <= 100.0 / delta))
    else:
        print(f"unknown case {case!r}; expected box|isosceles|triangle", file=sys.stderr)
        return 1
    return _report(checks)


# ---------------------------------------------------------------------------
# entry point

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="convint",
                                     description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="cmd")

    p_run = sub.add_parser("run", help="execute a construction run")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)

    p_ren = sub.add_parser("render", help="render a mesh JSON as SVG")
    p_ren.add_argument("--mesh", required=True)
    p_ren.add_argument("--svg", required=True)
    p_ren.add_argument("--color-by", default="well", choices=["well", "q", "l"])

    p_chk = sub.add_parser("check", help="run a property suite")
    p_chk.add_argument("what", choices=["block", "cover"])
    p_chk.add_argument("--problem", default="KH", choices=["KH", "O2"])
    p_chk.add_argument("--k", type=int, default=1)
    p_chk.add_argument("--j", type=int, default=0)
    p_chk.add_argument("--faithful", action="store_true")
    p_chk.add_argument("--delta", type=float, default=None)
    p_chk.add_argument("--case", default="box", choices=["box", "isosceles", "triangle"])

    ns = parser.parse_args(argv)
    if ns.cmd == "run":
        return cmd_run(ns.config, ns.out)
    if ns.cmd == "render":
        return cmd_render(ns.mesh, ns.svg, ns.color_by)
    if ns.cmd == "check":
        if ns.what == "block":
            return check_block(ns.problem, ns.k, ns.j,
                               faithful=ns.faithful or ns.delta is None,
                               delta=ns.delta)
        return check_cover(ns.case, ns.delta if ns.delta is not None else 0.25)
    parser.print_help()
    return 1


if __name__ == "__main__":
    sys.exit(main())
