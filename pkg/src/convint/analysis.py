"""Quantitative measurements over sealed meshes.

Phase indicators (nearest well per cell), L1 differences against the parent
generation, BV norms of piecewise-constant fields via the interface overlay,
the decay-weighted expected-value recursion, the critical exponent balance,
interpolation bounds and a Monte-Carlo Gagliardo seminorm with a deterministic
quadrature oracle for the half-square indicator.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import mat2
from .errors import BadParameter, ExponentOutOfRange, NotARefinement
from .geom2 import CASE_C1, CASE_C2, Mesh, build_overlay, tri_area
from .inapprox import KAPPA0, interval_I, interval_J, kh_floor, o2_dk

CSV_HEADER = ("k,cellCount,l1_1,l1_2,l1_3,bv_1,bv_2,bv_3,perimSum,Ek,"
              "supDistK,medianDistK,skewRadius,goodFracMin,warnStage,warnBudget")


# ---------------------------------------------------------------------------
# vectorized matrix helpers

def sigmas_batch(G: np.ndarray) -> np.ndarray:
    """Ascending singular values of a (N,2,2) stack, closed form."""
    a, b = G[:, 0, 0], G[:, 0, 1]
    c, d = G[:, 1, 0], G[:, 1, 1]
    e, f = 0.5 * (a + d), 0.5 * (a - d)
    g, h = 0.5 * (c + b), 0.5 * (c - b)
    q = np.hypot(e, h)
    r = np.hypot(f, g)
    return np.stack([np.abs(q - r), q + r], axis=1)


def bary_batch(G: np.ndarray) -> np.ndarray:
    """Barycentric well coordinates of the symmetric parts of a (N,2,2) stack."""
    x = 0.5 * (G[:, 0, 0] - G[:, 1, 1])
    y = 0.25 * (G[:, 0, 1] + G[:, 1, 0]) * 2.0
    s3 = math.sqrt(3.0)
    mu2 = (1.0 / 3.0) - x / 3.0 + y / s3
    mu3 = (1.0 / 3.0) - x / 3.0 - y / s3
    mu1 = 1.0 - mu2 - mu3
    return np.stack([mu1, mu2, mu3], axis=1)


def dist_to_wells(G: np.ndarray, problem: str) -> np.ndarray:
    """(N, m) Frobenius distances to each well component."""
    if problem == "O2":
        s = sigmas_batch(G)
        det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
        drot_pos = np.hypot(s[:, 0] - 1.0, s[:, 1] - 1.0)
        drot_neg = np.hypot(s[:, 0] + 1.0, s[:, 1] - 1.0)
        d_rot = np.where(det >= 0, drot_pos, drot_neg)
        d_ref = np.where(det < 0, drot_pos, drot_neg)
        return np.stack([d_rot, d_ref], axis=1)
    s00 = G[:, 0, 0]
    s11 = G[:, 1, 1]
    s01 = 0.5 * (G[:, 0, 1] + G[:, 1, 0])
    out = np.empty((G.shape[0], 3))
    for jw, w in enumerate(mat2.WELLS_KH):
        out[:, jw] = np.sqrt((s00 - w[0, 0]) ** 2 + (s11 - w[1, 1]) ** 2
                             + 2.0 * (s01 - w[0, 1]) ** 2)
    return out


def chi(mesh: Mesh, problem: str) -> np.ndarray:
    """Nearest-well index per cell, 1-based; ties go to the last well."""
    d = dist_to_wells(mesh.grad, problem)
    m = d.shape[1]
    best = np.argmin(d, axis=1)
    # strictness: a tie with any other well sends the cell to well m
    sorted_d = np.sort(d, axis=1)
    strict = sorted_d[:, 0] < sorted_d[:, 1]
    out = np.where(strict, best + 1, m)
    return out.astype(np.int32)


# ---------------------------------------------------------------------------
# L1 / BV / expectation

def l1_diff(mesh_prev: Mesh, mesh_new: Mesh, problem: str,
            chi_prev: Optional[np.ndarray] = None,
            chi_new: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-well L1 norms of the indicator differences across one refinement."""
    if mesh_new.parent is None or np.any(mesh_new.parent < 0):
        raise NotARefinement("new mesh lacks ancestry into the previous one")
    if int(mesh_new.parent.max()) >= mesh_prev.n_cells:
        raise NotARefinement("parent indices exceed the coarse mesh")
    if chi_prev is None:
        chi_prev = chi(mesh_prev, problem)
    if chi_new is None:
        chi_new = chi(mesh_new, problem)
    anc = chi_prev[mesh_new.parent]
    areas = mesh_new.areas()
    m = 2 if problem == "O2" else 3
    out = np.zeros(3)
    changed = anc != chi_new
    for well in range(1, m + 1):
        mask = changed & ((anc == well) | (chi_new == well))
        out[well - 1] = float(areas[mask].sum())
    return out


def bv_norm(mesh: Mesh, field: np.ndarray, overlay=None) -> float:
    """Total variation of a piecewise-constant scalar field: sum over interior
    interfaces of |jump| * length (hanging nodes resolved by the overlay)."""
    if overlay is None:
        overlay = build_overlay(mesh)
    jump = np.abs(field[overlay.pair_plus] - field[overlay.pair_minus])
    return float(np.dot(jump, overlay.pair_len))


def expected_value_recursion(mesh: Mesh, c2: float, m: int) -> float:
    """Sum over cells of c2^(q/m) * area (the decay-weighted area)."""
    return float(np.dot(np.power(c2, mesh.q.astype(float) / m), mesh.areas()))


def theta0(c_hat: float, max_c: float) -> float:
    """Critical exponent: c_hat^(1-t) * 3^t * max_c^t = 1.

    t = log(1/c_hat) / (log(1/c_hat) + log 3 + log max_c).
    """
    if not (0.0 < c_hat < 1.0):
        raise BadParameter(f"c_hat = {c_hat} outside (0, 1)")
    if max_c < 1.0:
        raise BadParameter(f"max_c = {max_c} must be >= 1")
    num = math.log(1.0 / c_hat)
    return num / (num + math.log(3.0) + math.log(max_c))


def interpolation_bound(norm_inf: float, norm_l1: float, norm_bv: float,
                        theta_0: float, s: float, p: float) -> float:
    """Fractional-norm bound from the L-infinity / L1 / BV interpolation:

        ||u||_{W^{s,p}} <= ||u||_inf^(1 - s/theta0)
                           * (||u||_L1^(1-theta0) ||u||_BV^theta0)^(s/theta0)

    valid for s*p < theta0.
    """
    if s * p >= theta_0:
        raise ExponentOutOfRange(f"s*p = {s * p} >= theta0 = {theta_0}")
    if min(norm_inf, norm_l1, norm_bv) < 0:
        raise BadParameter("norms must be nonnegative")
    if norm_inf == 0 or norm_l1 == 0 or norm_bv == 0:
        return 0.0
    t = s / theta_0
    return norm_inf ** (1.0 - t) * (norm_l1 ** (1.0 - theta_0) * norm_bv ** theta_0) ** t


# ---------------------------------------------------------------------------
# Gagliardo seminorm

class PointLocator:
    """Uniform-grid point location over a triangle mesh."""

    def __init__(self, mesh: Mesh, ncell_target: int = 2):
        self.mesh = mesh
        v = mesh.verts
        self.lo = v.reshape(-1, 2).min(axis=0)
        self.hi = v.reshape(-1, 2).max(axis=0)
        n = mesh.n_cells
        self.nb = max(8, int(math.sqrt(n / ncell_target)))
        self.nb = min(self.nb, 2048)
        span = np.maximum(self.hi - self.lo, 1e-300)
        mins = v.min(axis=1)
        maxs = v.max(axis=1)
        i0 = np.clip(((mins - self.lo) / span * self.nb).astype(int), 0, self.nb - 1)
        i1 = np.clip(((maxs - self.lo) / span * self.nb).astype(int), 0, self.nb - 1)
        buckets = {}
        for c in range(n):
            for bx in range(i0[c, 0], i1[c, 0] + 1):
                for by in range(i0[c, 1], i1[c, 1] + 1):
                    buckets.setdefault((bx, by), []).append(c)
        self.buckets = {k: np.array(vv, dtype=np.int64) for k, vv in buckets.items()}
        self.span = span

    def locate(self, pts: np.ndarray) -> np.ndarray:
        """Cell index per point, -1 when outside the mesh."""
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        ib = np.clip(((pts - self.lo) / self.span * self.nb).astype(int), 0, self.nb - 1)
        v = self.mesh.verts
        for t in range(pts.shape[0]):
            cand = self.buckets.get((ib[t, 0], ib[t, 1]))
            if cand is None:
                continue
            p = pts[t]
            a = v[cand, 0]
            bb = v[cand, 1]
            cc = v[cand, 2]
            d1 = (bb[:, 0] - a[:, 0]) * (p[1] - a[:, 1]) - (bb[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
            d2 = (cc[:, 0] - bb[:, 0]) * (p[1] - bb[:, 1]) - (cc[:, 1] - bb[:, 1]) * (p[0] - bb[:, 0])
            d3 = (a[:, 0] - cc[:, 0]) * (p[1] - cc[:, 1]) - (a[:, 1] - cc[:, 1]) * (p[0] - cc[:, 0])
            inside = (d1 >= 0) & (d2 >= 0) & (d3 >= 0)
            hit = np.nonzero(inside)[0]
            if len(hit):
                out[t] = cand[hit[0]]
        return out


def sample_points(mesh: Mesh, n: int, rng) -> np.ndarray:
    """n points uniform on the mesh (area-weighted cells + uniform barycentric)."""
    areas = mesh.areas()
    p = areas / areas.sum()
    idx = rng.choice(mesh.n_cells, size=n, p=p)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    v = mesh.verts[idx]
    return ((1 - r1)[:, None] * v[:, 0] + (r1 * (1 - r2))[:, None] * v[:, 1]
            + (r1 * r2)[:, None] * v[:, 2])


def gagliardo_mc(mesh: Mesh, field: np.ndarray, s: float, p: float,
                 n_samples: int = 200_000, seed: int = 0,
                 r_min: float = 1e-9):
    """Monte-Carlo Gagliardo seminorm of a piecewise-constant field:

        I = int int |f(x)-f(y)|^p / |x-y|^(2+sp) dx dy   over Omega x Omega.

    x is uniform; y = x + r*omega with log-uniform radius (importance
    sampling that bounds the integrand by r_min^(-sp), giving finite
    variance).  Returns (estimate, standard error).
    """
    if not (0.0 < s < 1.0) or p <= 1.0:
        raise BadParameter("need s in (0,1), p > 1")
    rng = np.random.default_rng(seed)
    area = mesh.total_area()
    diam = mesh.diameter()
    loc = PointLocator(mesh)
    xs = sample_points(mesh, n_samples, rng)
    ix = loc.locate(xs)
    ok = ix >= 0
    u = rng.random(n_samples)
    r = r_min * (diam / r_min) ** u
    phi = rng.random(n_samples) * 2.0 * math.pi
    ys = xs + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    iy = loc.locate(ys)
    ok &= iy >= 0
    fx = np.where(ix >= 0, field[np.maximum(ix, 0)], 0.0)
    fy = np.where(iy >= 0, field[np.maximum(iy, 0)], 0.0)
    dens = 1.0 / (2.0 * math.pi * r * r * math.log(diam / r_min))
    vals = np.zeros(n_samples)
    diff = np.abs(fx - fy)
    mask = ok & (diff > 0)
    vals[mask] = (diff[mask] ** p) / (r[mask] ** (2.0 + s * p)) / dens[mask]
    est = area * float(vals.mean())
    err = area * float(vals.std(ddof=1)) / math.sqrt(n_samples)
    return est, err


def gagliardo_halfsquare_quadrature(s: float, p: float, nodes: int = 512) -> float:
    """Deterministic oracle: Gagliardo seminorm of the indicator of
    [0, 1/2] x [0, 1] inside the unit square.

    Reduces the 4d integral to I = 2 * int_0^1 w(h) g(h) dh with
    w(h) = min(h, 1-h) (overlap of the two strips at horizontal gap h) and
    g(h) = 2 * int_0^1 (1-t) (h^2 + t^2)^(-(2+sp)/2) dt; both integrals are
    evaluated with Gauss-Legendre panels graded toward the singularity.
    """
    beta = 0.5 * (2.0 + s * p)
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes)

    def panel(f, a, b):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        return half * float(np.dot(gl_w, f(mid + half * gl_x)))

    def g(h):
        def integrand(t):
            return 2.0 * (1.0 - t) * (h * h + t * t) ** (-beta)
        # split at t = h and grade the inner panel dyadically
        if h >= 1.0:
            return panel(integrand, 0.0, 1.0)
        val = panel(integrand, min(h, 1.0), 1.0)
        a = min(h, 1.0)
        while a > 1e-14:
            val += panel(integrand, a * 0.5, a)
            a *= 0.5
        return val

    def outer(hs):
        return np.array([min(h, 1.0 - h) * g(h) for h in np.atleast_1d(hs)])

    total = 0.0
    a = 0.5
    total += panel(outer, 0.5, 1.0)
    while a > 1e-12:
        total += panel(outer, 0.5 * a, a)
        a *= 0.5
    return 2.0 * total


# ---------------------------------------------------------------------------
# stage membership (vectorized, for warning counts)

def stage_member_mask(G: np.ndarray, problem: str, case_: np.ndarray,
                      l: np.ndarray, j: np.ndarray, m0: int,
                      tol: float = 1e-9) -> np.ndarray:
    """Per-cell membership of the gradient in the cell's own stage set."""
    n = G.shape[0]
    ok = np.zeros(n, dtype=bool)
    if problem == "O2":
        sig = sigmas_batch(G)
        for key in set(zip(case_.tolist(), l.tolist(), j.tolist())):
            cs, ll, jj = key
            mask = (case_ == cs) & (l == ll) & (j == jj)
            k = m0 if cs == CASE_C1 else ll
            s1, s2 = sig[mask, 0], sig[mask, 1]
            if cs == CASE_C2:
                rest = interval_I(k - 1, KAPPA0 * (1 + jj / 2))
                r1 = (rest.lo - tol <= s1) & (s1 <= rest.hi + tol)
                r2 = (rest.lo - tol <= s2) & (s2 <= rest.hi + tol)
                if jj == 0:
                    good = r1 & r2
                else:
                    pl = interval_I(k, KAPPA0 * jj / 2)
                    p1 = (pl.lo - tol <= s1) & (s1 <= pl.hi + tol)
                    p2 = (pl.lo - tol <= s2) & (s2 <= pl.hi + tol)
                    good = (p1 & r2) | (p2 & r1)
            else:
                bound = 1.0 - 2.0 * o2_dk(k) + o2_dk(k) * KAPPA0 * jj / 2
                r1 = s1 <= bound + tol
                r2 = s2 <= bound + tol
                if jj == 0:
                    good = r1 & r2
                else:
                    pl = interval_I(k, KAPPA0 * jj / 2)
                    p1 = (pl.lo - tol <= s1) & (s1 <= pl.hi + tol)
                    p2 = (pl.lo - tol <= s2) & (s2 <= pl.hi + tol)
                    good = (p1 & r2) | (p2 & r1)
            ok[mask] = good
        return ok
    mu = bary_batch(G)
    for key in set(zip(case_.tolist(), l.tolist(), j.tolist())):
        cs, ll, jj = key
        mask = (case_ == cs) & (l == ll) & (j == jj)
        k = m0 if cs == CASE_C1 else ll
        mm = mu[mask]
        good = np.zeros(mm.shape[0], dtype=bool)
        pl = interval_J(k, KAPPA0 * jj / 2)

        def in_pl(col):
            return (pl.lo - tol <= mm[:, col]) & (mm[:, col] <= pl.hi + tol)

        if cs == CASE_C2:
            rest = interval_J(k - 1, KAPPA0 * (1 + jj / 2))

            def in_rest(col):
                return (rest.lo - tol <= mm[:, col]) & (mm[:, col] <= rest.hi + tol)

            for anchor in range(3):
                others = [c for c in range(3) if c != anchor]
                if jj == 0:
                    good |= in_rest(others[0]) & in_rest(others[1])
                elif jj == 1:
                    good |= (in_pl(others[0]) & in_rest(others[1])) | \
                            (in_pl(others[1]) & in_rest(others[0]))
                else:
                    good |= in_pl(others[0]) & in_pl(others[1])
        else:
            floor = kh_floor(k, jj)

            def ge_floor(col):
                return mm[:, col] >= floor - tol

            if jj == 0:
                good = ge_floor(0) & ge_floor(1) & ge_floor(2)
            elif jj == 1:
                for c in range(3):
                    others = [o for o in range(3) if o != c]
                    good |= in_pl(c) & ge_floor(others[0]) & ge_floor(others[1])
            else:
                for c in range(3):
                    others = [o for o in range(3) if o != c]
                    good |= ge_floor(c) & in_pl(others[0]) & in_pl(others[1])
        ok[mask] = good
    return ok


# ---------------------------------------------------------------------------
# per-step metrics

def metrics_row(state, k: int) -> dict:
    cfg = state.cfg
    mesh = state.history[k]
    prob = cfg.problem
    m = cfg.m()
    row = {"k": k, "cellCount": mesh.n_cells}
    l1 = np.zeros(3)
    bv = np.zeros(3)
    if k > 0:
        prev = state.history[k - 1]
        cp = chi(prev, prob)
        cn = chi(mesh, prob)
        l1 = l1_diff(prev, mesh, prob, cp, cn)
        overlay = build_overlay(mesh)
        anc = cp[mesh.parent]
        for well in range(1, m + 1):
            dfield = (cn == well).astype(float) - (anc == well).astype(float)
            bv[well - 1] = bv_norm(mesh, dfield, overlay)
    for i in range(3):
        row[f"l1_{i + 1}"] = float(l1[i])
        row[f"bv_{i + 1}"] = float(bv[i])
    row["perimSum"] = float(mesh.perimeters().sum())
    row["Ek"] = expected_value_recursion(mesh, cfg.c2, m)
    d = dist_to_wells(mesh.grad, prob).min(axis=1)
    areas = mesh.areas()
    row["supDistK"] = float(d.max())
    order = np.argsort(d)
    cum = np.cumsum(areas[order])
    row["medianDistK"] = float(d[order][np.searchsorted(cum, 0.5 * cum[-1])])
    if prob == "KH":
        w_now = 0.5 * (mesh.grad[:, 0, 1] - mesh.grad[:, 1, 0])
        M0 = cfg.m0_matrix()
        w0 = 0.5 * (M0[0, 1] - M0[1, 0])
        row["skewRadius"] = float(np.abs(w_now - w0).max()) * math.sqrt(2.0)
    else:
        row["skewRadius"] = 0.0
    info = state.step_info[k] if k < len(state.step_info) else None
    row["goodFracMin"] = info.good_frac_weighted if info else 1.0
    if k > 0:
        is_block = mesh.q > state.history[k - 1].q[mesh.parent]
        member = stage_member_mask(mesh.grad[is_block], prob,
                                   mesh.case_[is_block], mesh.l[is_block],
                                   mesh.j[is_block], state.m0)
        row["warnStage"] = int((~member).sum())
    else:
        row["warnStage"] = 0
    row["warnBudget"] = 1 if state.budget_exceeded else 0
    return row


def rows_to_csv(rows) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            str(r["k"]), str(r["cellCount"]),
            *(repr(float(r[f"l1_{i}"])) for i in (1, 2, 3)),
            *(repr(float(r[f"bv_{i}"])) for i in (1, 2, 3)),
            repr(float(r["perimSum"])), repr(float(r["Ek"])),
            repr(float(r["supDistK"])), repr(float(r["medianDistK"])),
            repr(float(r["skewRadius"])), repr(float(r["goodFracMin"])),
            str(r["warnStage"]), str(r["warnBudget"]),
        ]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# run-level derived constants

def run_constants(state, rows) -> dict:
    """Measured decay/growth constants of a finished run.

    c_hat is built from the smallest decay-weighted good-volume fraction (the
    exact per-step contraction factor of the expected value), max_c from the
    largest per-parent perimeter ratios seen up to generation 2.
    """
    cfg = state.cfg
    m = cfg.m()
    v1_min = min((info.good_frac_weighted for info in state.step_info[1:]),
                 default=1.0)
    c_hat = v1_min * cfg.c2 ** (1.0 / m) + (1.0 - v1_min)
    early = state.step_info[1:3] if len(state.step_info) > 1 else []
    c0 = max((i.ratio_good for i in early), default=1.0)
    c1c = max((i.ratio_total for i in early), default=1.0)
    c2c = max((i.ratio_c1 for i in early), default=1.0)
    c0 = max(c0, 1.0)
    max_c = max(c1c, c2c, 1.0)
    out = {
        "v1_min": v1_min,
        "c_hat": c_hat,
        "C0_meas": c0,
        "maxC_meas": max_c,
    }
    if 0.0 < c_hat < 1.0:
        out["theta0_meas"] = theta0(c_hat, max_c)
    else:
        out["theta0_meas"] = 0.0
    return out


def fit_log_slope(ys, ks=None) -> float:
    """Least-squares slope of log(ys) against k (ignoring nonpositive points)."""
    ys = np.asarray(ys, dtype=float)
    if ks is None:
        ks = np.arange(len(ys), dtype=float)
    ks = np.asarray(ks, dtype=float)
    mask = ys > 0
    if mask.sum() < 2:
        return 0.0
    x, y = ks[mask], np.log(ys[mask])
    xm, ym = x.mean(), y.mean()
    return float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())
