"""Planar mesh kernel: triangles with affine maps, refinement bookkeeping,
area/perimeter, interface overlay (continuity, jumps, boundary traces).

A mesh generation is stored as a structure of arrays; cells are always
triangles (counterclockwise).  Hanging nodes are allowed: interfaces are
resolved by a line-overlay that pairs collinear edge intervals from opposite
sides, so a coarse edge may face several finer ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SelfIntersecting

TAG_C = 0       # generic triangle
TAG_C1 = 1      # axis-aligned isosceles triangle (self-similar class)

CASE_C1 = 0     # startup phase (l == -1)
CASE_C2 = 1     # uniform phase


# ---------------------------------------------------------------------------
# basic geometry

def tri_area(verts) -> np.ndarray:
    """Signed area(s) of triangles, verts shaped (3,2) or (N,3,2)."""
    v = np.asarray(verts, dtype=float)
    single = v.ndim == 2
    if single:
        v = v[None]
    x, y = v[..., 0], v[..., 1]
    a = 0.5 * (
        x[:, 0] * (y[:, 1] - y[:, 2])
        + x[:, 1] * (y[:, 2] - y[:, 0])
        + x[:, 2] * (y[:, 0] - y[:, 1])
    )
    return a[0] if single else a


def tri_perimeter(verts) -> np.ndarray:
    v = np.asarray(verts, dtype=float)
    single = v.ndim == 2
    if single:
        v = v[None]
    p = np.zeros(v.shape[0])
    for i in range(3):
        d = v[:, (i + 1) % 3] - v[:, i]
        p += np.hypot(d[:, 0], d[:, 1])
    return p[0] if single else p


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection of open segments (p1,p2) and (p3,p4)."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def triangulate(poly) -> list:
    """Ear-clipping triangulation of a simple polygon (list of (x, y)).

    Returns a list of (3,2) vertex arrays, counterclockwise.  Raises
    SelfIntersecting when non-adjacent edges cross.
    """
    pts = [np.asarray(p, dtype=float) for p in poly]
    n = len(pts)
    if n < 3:
        raise SelfIntersecting("polygon needs at least 3 vertices")
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                raise SelfIntersecting(f"edges {i} and {j} cross")
    if polygon_area(pts) < 0:
        pts = pts[::-1]
    idx = list(range(len(pts)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise SelfIntersecting("ear clipping failed to terminate")
        m = len(idx)
        clipped = False
        for k in range(m):
            i0, i1, i2 = idx[(k - 1) % m], idx[k], idx[(k + 1) % m]
            tri = np.array([pts[i0], pts[i1], pts[i2]])
            if tri_area(tri) <= 1e-14 * max(1.0, abs(polygon_area(pts))):
                continue
            # no other vertex inside the candidate ear
            ok = True
            for other in idx:
                if other in (i0, i1, i2):
                    continue
                if _point_in_tri(pts[other], tri, eps=-1e-12):
                    ok = False
                    break
            if ok:
                tris.append(tri)
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            raise SelfIntersecting("no ear found; polygon not simple")
    tris.append(np.array([pts[idx[0]], pts[idx[1]], pts[idx[2]]]))
    return tris


def _point_in_tri(p, tri, eps=0.0) -> bool:
    a, b, c = tri
    d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
    d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
    return d1 > eps and d2 > eps and d3 > eps


# ---------------------------------------------------------------------------
# mesh storage

@dataclass
class Mesh:
    """One sealed generation of the construction.

    verts   (N,3,2) triangle vertices, counterclockwise
    grad    (N,2,2) gradient of the affine map on each cell
    offset  (N,2)   offset b of the map x -> grad @ x + b
    l,j,q   per-cell stage bookkeeping; case_ in {CASE_C1, CASE_C2}
    tag     TAG_C or TAG_C1; theta/aspect describe the C1 axis (nan otherwise)
    parent  index into the previous generation (-1 at generation 0)
    child_rank  index among the siblings produced from the parent
    ledger  (N,6) signed skew bookkeeping per ordered well pair (or None)
    """

    generation: int
    verts: np.ndarray
    grad: np.ndarray
    offset: np.ndarray
    l: np.ndarray
    j: np.ndarray
    q: np.ndarray
    case_: np.ndarray
    tag: np.ndarray
    theta: np.ndarray
    aspect: np.ndarray
    parent: np.ndarray
    child_rank: np.ndarray
    ledger: Optional[np.ndarray] = None
    accum_good: Optional[np.ndarray] = None
    frozen: Optional[np.ndarray] = None
    _areas: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return self.verts.shape[0]

    @property
    def n_cells(self) -> int:
        return self.verts.shape[0]

    def areas(self) -> np.ndarray:
        if self._areas is None:
            self._areas = tri_area(self.verts)
        return self._areas

    def perimeters(self) -> np.ndarray:
        return tri_perimeter(self.verts)

    def total_area(self) -> float:
        return float(self.areas().sum())

    def diameter(self) -> float:
        lo = self.verts.reshape(-1, 2).min(axis=0)
        hi = self.verts.reshape(-1, 2).max(axis=0)
        return float(math.hypot(hi[0] - lo[0], hi[1] - lo[1]))


def mesh_from_lists(generation, verts, grads, offsets, l, j, q, case_, tag, theta,
                    aspect, parent, child_rank, ledger=None, accum_good=None,
                    frozen=None) -> Mesh:
    n = len(verts)
    return Mesh(
        generation=generation,
        verts=np.asarray(verts, dtype=float).reshape(n, 3, 2),
        grad=np.asarray(grads, dtype=float).reshape(n, 2, 2),
        offset=np.asarray(offsets, dtype=float).reshape(n, 2),
        l=np.asarray(l, dtype=np.int32),
        j=np.asarray(j, dtype=np.int32),
        q=np.asarray(q, dtype=np.int32),
        case_=np.asarray(case_, dtype=np.int8),
        tag=np.asarray(tag, dtype=np.int8),
        theta=np.asarray(theta, dtype=float),
        aspect=np.asarray(aspect, dtype=float),
        parent=np.asarray(parent, dtype=np.int64),
        child_rank=np.asarray(child_rank, dtype=np.int32),
        ledger=None if ledger is None else np.asarray(ledger, dtype=float).reshape(n, 6),
        accum_good=None if accum_good is None else np.asarray(accum_good, dtype=float),
        frozen=None if frozen is None else np.asarray(frozen, dtype=bool),
    )


# ---------------------------------------------------------------------------
# interface overlay

@dataclass
class Overlay:
    """Paired collinear edge intervals of a mesh.

    pair_plus/pair_minus: cell indices on the two sides of each overlap
    pair_p0/pair_p1:      endpoints (K,2) of each overlap segment
    pair_len:             overlap lengths
    edge_owner/edge_p0/edge_p1/edge_resid: per original edge, the residual
    (unpaired) length; residual edges are boundary or defects.
    """

    pair_plus: np.ndarray
    pair_minus: np.ndarray
    pair_p0: np.ndarray
    pair_p1: np.ndarray
    pair_len: np.ndarray
    edge_owner: np.ndarray
    edge_p0: np.ndarray
    edge_p1: np.ndarray
    edge_resid: np.ndarray


def build_overlay(mesh: Mesh, tol_rel: float = 1e-10) -> Overlay:
    n = mesh.n_cells
    V = mesh.verts
    diam = mesh.diameter()
    tol = tol_rel * max(diam, 1e-300)

    P = V[:, [0, 1, 2], :].reshape(3 * n, 2)
    Q = V[:, [1, 2, 0], :].reshape(3 * n, 2)
    owner = np.repeat(np.arange(n), 3)

    d = Q - P
    length = np.hypot(d[:, 0], d[:, 1])
    keep = length > 1e-14 * max(diam, 1.0)
    P, Q, d, length, owner = P[keep], Q[keep], d[keep], length[keep], owner[keep]
    dhat = d / length[:, None]
    # canonical undirected direction: first nonzero component positive
    flip = (dhat[:, 0] < 0) | ((dhat[:, 0] == 0) & (dhat[:, 1] < 0))
    dhat[flip] *= -1.0
    nhat = np.stack([-dhat[:, 1], dhat[:, 0]], axis=1)
    off = nhat[:, 0] * P[:, 0] + nhat[:, 1] * P[:, 1]
    ang = np.arctan2(dhat[:, 1], dhat[:, 0])  # in [-pi/2, pi/2]

    # cluster by angle (sorted gaps), merging the +-pi/2 wrap
    order = np.argsort(ang, kind="stable")
    ang_s = ang[order]
    tol_ang = 1e-9
    brk = np.nonzero(np.diff(ang_s) > tol_ang)[0]
    ang_grp_s = np.zeros(len(ang_s), dtype=np.int64)
    ang_grp_s[brk + 1] = 1
    ang_grp_s = np.cumsum(ang_grp_s)
    ang_grp = np.empty_like(ang_grp_s)
    ang_grp[order] = ang_grp_s
    n_ang = int(ang_grp_s[-1]) + 1 if len(ang_grp_s) else 0
    if n_ang > 1 and (ang_s[0] + math.pi) - ang_s[-1] < tol_ang:
        # vertical wrap: fold the last group onto the first, flipping frames
        wrap = ang_grp == n_ang - 1
        ang_grp[wrap] = 0
        dhat[wrap] *= -1.0
        nhat[wrap] *= -1.0
        off[wrap] *= -1.0

    # cluster by offset inside each angle group
    key = ang_grp.astype(float) * (8.0 * diam + 8.0) + off
    order = np.argsort(key, kind="stable")
    key_s = key[order]
    brk = np.nonzero(np.diff(key_s) > tol)[0]
    line_s = np.zeros(len(key_s), dtype=np.int64)
    line_s[brk + 1] = 1
    line_s = np.cumsum(line_s)
    line = np.empty_like(line_s)
    line[order] = line_s

    t0 = dhat[:, 0] * P[:, 0] + dhat[:, 1] * P[:, 1]
    t1 = dhat[:, 0] * Q[:, 0] + dhat[:, 1] * Q[:, 1]
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    cent = V[owner].mean(axis=1)
    side = np.sign(nhat[:, 0] * cent[:, 0] + nhat[:, 1] * cent[:, 1] - off)

    span = 4.0 * (diam + 1.0)
    g_lo = line.astype(float) * span + lo
    g_hi = line.astype(float) * span + hi

    plus = side > 0
    minus = ~plus
    pl_lo, pl_hi = g_lo[plus], g_hi[plus]
    pl_idx = np.nonzero(plus)[0]
    o_p = np.argsort(pl_lo, kind="stable")
    pl_lo, pl_hi, pl_idx = pl_lo[o_p], pl_hi[o_p], pl_idx[o_p]
    mn_lo, mn_hi = g_lo[minus], g_hi[minus]
    mn_idx = np.nonzero(minus)[0]

    a = np.searchsorted(pl_hi, mn_lo + tol, side="left")
    b = np.searchsorted(pl_lo, mn_hi - tol, side="left")
    counts = np.maximum(b - a, 0)
    rep_m = np.repeat(np.arange(len(mn_idx)), counts)
    flat_p = np.concatenate([np.arange(x, y) for x, y in zip(a, b) if y > x]) if counts.sum() else np.empty(0, dtype=int)

    e_m = mn_idx[rep_m]
    e_p = pl_idx[flat_p]
    same_line = line[e_m] == line[e_p]
    e_m, e_p = e_m[same_line], e_p[same_line]
    ov_lo = np.maximum(g_lo[e_m], g_lo[e_p]) - line[e_m] * span
    ov_hi = np.minimum(g_hi[e_m], g_hi[e_p]) - line[e_m] * span
    ln = ov_hi - ov_lo
    good = ln > tol
    e_m, e_p, ov_lo, ov_hi, ln = e_m[good], e_p[good], ov_lo[good], ov_hi[good], ln[good]

    p0 = dhat[e_m] * ov_lo[:, None] + nhat[e_m] * off[e_m][:, None]
    p1 = dhat[e_m] * ov_hi[:, None] + nhat[e_m] * off[e_m][:, None]

    resid = (hi - lo).copy()
    np.subtract.at(resid, e_m, ln)
    np.subtract.at(resid, e_p, ln)

    return Overlay(
        pair_plus=owner[e_p],
        pair_minus=owner[e_m],
        pair_p0=p0,
        pair_p1=p1,
        pair_len=ln,
        edge_owner=owner,
        edge_p0=P,
        edge_p1=Q,
        edge_resid=resid,
    )


def continuity_check(mesh: Mesh, tol: Optional[float] = None, overlay: Optional[Overlay] = None):
    """Interfaces where adjacent affine maps disagree (beyond tol).

    Returns a list of (cell_a, cell_b, point, deviation).  Interior edge
    intervals left unpaired (cracks) are reported with cell_b = -1.
    """
    if overlay is None:
        overlay = build_overlay(mesh)
    if tol is None:
        tol = 1e-9 * mesh.diameter()
    out = []
    if len(overlay.pair_len):
        ga = mesh.grad[overlay.pair_plus]
        gb = mesh.grad[overlay.pair_minus]
        oa = mesh.offset[overlay.pair_plus]
        ob = mesh.offset[overlay.pair_minus]
        dg = ga - gb
        do = oa - ob
        for pts in (overlay.pair_p0, overlay.pair_p1):
            dev = np.einsum("kij,kj->ki", dg, pts) + do
            mag = np.hypot(dev[:, 0], dev[:, 1])
            bad = np.nonzero(mag > tol)[0]
            for i in bad:
                out.append((int(overlay.pair_plus[i]), int(overlay.pair_minus[i]),
                            tuple(pts[i]), float(mag[i])))
    return out


def interior_cracks(mesh: Mesh, domain_poly, overlay: Optional[Overlay] = None):
    """Residual edge intervals that are not on the domain boundary."""
    if overlay is None:
        overlay = build_overlay(mesh)
    diam = mesh.diameter()
    tol = 1e-7 * diam
    res = np.nonzero(overlay.edge_resid > tol)[0]
    out = []
    for i in res:
        mid = 0.5 * (overlay.edge_p0[i] + overlay.edge_p1[i])
        if not _on_polygon_boundary(mid, domain_poly, 1e-8 * diam):
            out.append(int(overlay.edge_owner[i]))
    return out


def _on_polygon_boundary(p, poly, tol) -> bool:
    pts = np.asarray(poly, dtype=float)
    m = len(pts)
    for i in range(m):
        a, b = pts[i], pts[(i + 1) % m]
        d = b - a
        L = math.hypot(d[0], d[1])
        if L == 0:
            continue
        t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (L * L)
        t = min(1.0, max(0.0, t))
        q = a + t * d
        if math.hypot(p[0] - q[0], p[1] - q[1]) <= tol:
            return True
    return False


def boundary_check(mesh: Mesh, M0: np.ndarray, domain_poly,
                   samples_per_edge: int = 64,
                   overlay: Optional[Overlay] = None) -> float:
    """Max deviation |u(x) - M0 x| over sampled points of boundary edges."""
    if overlay is None:
        overlay = build_overlay(mesh)
    diam = mesh.diameter()
    res = np.nonzero(overlay.edge_resid > 1e-7 * diam)[0]
    if len(res) == 0:
        return 0.0
    bidx = [i for i in res if _on_polygon_boundary(
        0.5 * (overlay.edge_p0[i] + overlay.edge_p1[i]), domain_poly, 1e-8 * diam)]
    if not bidx:
        return 0.0
    bidx = np.asarray(bidx)
    own = overlay.edge_owner[bidx]
    p0 = overlay.edge_p0[bidx]
    p1 = overlay.edge_p1[bidx]
    ts = np.linspace(0.0, 1.0, samples_per_edge + 2)
    G = mesh.grad[own] - M0[None, :, :]
    o = mesh.offset[own]
    worst = 0.0
    for t in ts:
        x = p0 + t * (p1 - p0)
        dev = np.einsum("kij,kj->ki", G, x) + o
        worst = max(worst, float(np.hypot(dev[:, 0], dev[:, 1]).max()))
    return worst


def refinement_check(child: Mesh, parent: Mesh, tol_rel: float = 1e-9):
    """Verify each child triangle lies in its parent and areas sum up.

    Returns (max_outside, max_area_err_rel).
    """
    pv = parent.verts[child.parent]
    scale = child.diameter()
    max_out = 0.0
    for corner in range(3):
        p = child.verts[:, corner, :]
        a, b, c = pv[:, 0], pv[:, 1], pv[:, 2]
        for u, v in ((a, b), (b, c), (c, a)):
            cr = (v[:, 0] - u[:, 0]) * (p[:, 1] - u[:, 1]) - (v[:, 1] - u[:, 1]) * (p[:, 0] - u[:, 0])
            max_out = max(max_out, float(np.maximum(-cr, 0.0).max()) / max(scale, 1e-300))
    sums = np.zeros(parent.n_cells)
    np.add.at(sums, child.parent, child.areas())
    rel = np.abs(sums - parent.areas()) / np.maximum(parent.areas(), 1e-300)
    return max_out, float(rel.max())


# ---------------------------------------------------------------------------
# identifiers and serialization

def cell_ids(history) -> list:
    """Deterministic string ids for the final generation of a mesh history.

    The id of a cell is its ancestry of child ranks joined by '.', a pure
    function of (parent id, local index).
    """
    ids = [str(i) for i in range(history[0].n_cells)]
    for gen in range(1, len(history)):
        m = history[gen]
        ids = [f"{ids[int(p)]}.{int(r)}" for p, r in zip(m.parent, m.child_rank)]
    return ids


def _fmt(x: float) -> float:
    # round-trip via 17 significant digits
    return float(f"{x:.17g}")


def mesh_to_json(mesh: Mesh, history=None, path=None):
    """Serialize a mesh generation; coordinates carry 17 significant digits."""
    if history is not None:
        ids = cell_ids(history)
    else:
        ids = [str(i) for i in range(mesh.n_cells)]
    cells = []
    for i in range(mesh.n_cells):
        cells.append({
            "id": ids[i],
            "verts": [[_fmt(x) for x in v] for v in mesh.verts[i]],
            "grad": [[_fmt(x) for x in row] for row in mesh.grad[i]],
            "offset": [_fmt(x) for x in mesh.offset[i]],
            "state": {
                "l": int(mesh.l[i]),
                "j": int(mesh.j[i]),
                "q": int(mesh.q[i]),
                "case": "c2" if mesh.case_[i] == CASE_C2 else "c1",
                "k": int(mesh.l[i]) if mesh.case_[i] == CASE_C2 else -1,
                "jj": int(mesh.j[i]),
            },
            "classTag": ("C1" if mesh.tag[i] == TAG_C1 else "C"),
        })
    doc = {"generation": mesh.generation, "cells": cells}
    if path is not None:
        with open(path, "w") as f:
            json.dump(doc, f)
    return doc


def mesh_from_json(doc_or_path) -> Mesh:
    if isinstance(doc_or_path, (str, bytes)):
        with open(doc_or_path) as f:
            doc = json.load(f)
    else:
        doc = doc_or_path
    cells = doc["cells"]
    n = len(cells)
    verts = np.array([c["verts"] for c in cells], dtype=float)
    grad = np.array([c["grad"] for c in cells], dtype=float)
    offset = np.array([c["offset"] for c in cells], dtype=float)
    l = np.array([c["state"]["l"] for c in cells], dtype=np.int32)
    j = np.array([c["state"]["j"] for c in cells], dtype=np.int32)
    q = np.array([c["state"]["q"] for c in cells], dtype=np.int32)
    case_ = np.array([CASE_C2 if c["state"]["case"] == "c2" else CASE_C1 for c in cells], dtype=np.int8)
    tag = np.array([TAG_C1 if c["classTag"] == "C1" else TAG_C for c in cells], dtype=np.int8)
    return Mesh(
        generation=doc["generation"], verts=verts, grad=grad, offset=offset,
        l=l, j=j, q=q, case_=case_, tag=tag,
        theta=np.full(n, np.nan), aspect=np.full(n, np.nan),
        parent=np.full(n, -1, dtype=np.int64), child_rank=np.zeros(n, dtype=np.int32),
    )
