"""Coverings of triangles and boxes by oriented diamonds plus remainder.

Three constructions with certified constants:

  cover_isosceles  axis-aligned isosceles triangle -> one half-scale diamond
                   (half the area) + two half-scale copies of the triangle.
  cover_box        rectangle of aspect 1 : delta*floor(1/delta) -> a vertical
                   stack of floor(1/delta) diamonds (half the area), C1 gap
                   triangles and four corner triangles.
  cover_triangle   arbitrary triangle -> bisection into right triangles,
                   rectangle + self-similar remainder, unit-square packing,
                   rotated boxes inside the squares, cover_box inside each.

cover_inscribed is a low-piece-count alternative used by the demo iteration:
one maximal inscribed diamond plus a triangulated ring (volume fraction is
measured, not uniformly bounded below).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .blocks import diamond_corners
from .errors import BadAspect, BadParameter, NotAligned
from .geom2 import TAG_C, TAG_C1, _segments_intersect, tri_area, tri_perimeter

TOL_ANGLE = 1e-6

# remainder case tags (which perimeter-accounting class a piece feeds)
CASE_SELF_SIMILAR = "A3t_ii"     # self-similar C1 remainder
CASE_BOX_GAP = "A3t_iii_1"       # C1 gap triangles of a box stacking
CASE_BOX_CORNER = "A3t_iii_2"    # corner triangles of a box stacking
CASE_GENERIC = "A3t_iii_2"       # generic triangle remainder
CASE_UNIFORM = "A3"              # uniform-phase remainder


@dataclass
class DiamondFrame:
    center: np.ndarray
    r: float
    nhat: np.ndarray
    delta: float
    corners: np.ndarray  # (4,2): z + r*that, z + delta*r*nhat, z - r*that, z - delta*r*nhat

    @property
    def area(self) -> float:
        return 2.0 * self.delta * self.r * self.r


@dataclass
class RemPiece:
    verts: np.ndarray            # (3,2) ccw
    tag: int                     # TAG_C or TAG_C1
    theta: float = math.nan      # C1 axis angle (mod pi)
    aspect: float = math.nan     # C1 aspect (half-base / axis)
    case_tag: str = CASE_GENERIC


@dataclass
class CoverPlan:
    diamonds: List[DiamondFrame]
    remainder: List[RemPiece]
    input_verts: np.ndarray
    v1: float = 0.0
    perim_good: float = 0.0      # sum Per(diamonds) / Per(input)
    perim_c1: float = 0.0        # sum Per(C1 remainder) / Per(input)
    perim_rest: float = 0.0      # sum Per(other remainder) / Per(input)

    def finalize(self) -> "CoverPlan":
        area_in = abs(tri_area(self.input_verts)) if self.input_verts.shape[0] == 3 \
            else abs(_poly_area(self.input_verts))
        per_in = _poly_perimeter(self.input_verts)
        good = sum(d.area for d in self.diamonds)
        self.v1 = good / area_in
        self.perim_good = sum(4.0 * d.r * math.hypot(1.0, d.delta) for d in self.diamonds) / per_in
        self.perim_c1 = sum(tri_perimeter(p.verts) for p in self.remainder if p.tag == TAG_C1) / per_in
        self.perim_rest = sum(tri_perimeter(p.verts) for p in self.remainder if p.tag != TAG_C1) / per_in
        return self

    def check_partition(self, rel_tol: float = 1e-9) -> float:
        """Relative area defect of diamonds + remainder vs the input."""
        area_in = abs(tri_area(self.input_verts)) if self.input_verts.shape[0] == 3 \
            else abs(_poly_area(self.input_verts))
        total = sum(d.area for d in self.diamonds)
        total += sum(abs(tri_area(p.verts)) for p in self.remainder)
        return abs(total - area_in) / area_in


def _poly_area(poly):
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _poly_perimeter(poly):
    p = np.asarray(poly, dtype=float)
    return float(sum(math.hypot(*(p[(i + 1) % len(p)] - p[i])) for i in range(len(p))))


def that_of(nhat) -> np.ndarray:
    return np.array([nhat[1], -nhat[0]])


def _ccw(tri) -> np.ndarray:
    tri = np.asarray(tri, dtype=float)
    if tri_area(tri) < 0:
        return tri[::-1].copy()
    return tri


# ---------------------------------------------------------------------------
# alignment detection

def aligned_isosceles_info(tri, nhat, tol_angle: float = TOL_ANGLE,
                           require_aspect: Optional[float] = None):
    """Detect an isosceles triangle whose symmetry axis is parallel to that(nhat).

    Returns (apex_index, axis_length, half_base, aspect) or None.  The aspect
    (half_base / axis_length) must lie in (0, 1/2); when require_aspect is
    given it must match to 1e-6 relatively.
    """
    tri = np.asarray(tri, dtype=float)
    th = that_of(np.asarray(nhat, dtype=float))
    scale = math.sqrt(abs(tri_area(tri))) + 1e-300
    for apex in range(3):
        a = tri[apex]
        b, c = tri[(apex + 1) % 3], tri[(apex + 2) % 3]
        e1 = math.hypot(*(b - a))
        e2 = math.hypot(*(c - a))
        if abs(e1 - e2) > 1e-9 * (e1 + e2):
            continue
        mid = 0.5 * (b + c)
        axis = mid - a
        axis_len = math.hypot(*axis)
        if axis_len <= 1e-12 * scale:
            continue
        # axis parallel to +-that
        cross = abs(axis[0] * th[1] - axis[1] * th[0]) / axis_len
        if cross > tol_angle:
            continue
        half_base = 0.5 * math.hypot(*(c - b))
        aspect = half_base / axis_len
        if not (1e-9 < aspect < 0.5):
            continue
        if require_aspect is not None and abs(aspect - require_aspect) > 1e-6 * require_aspect:
            continue
        return apex, axis_len, half_base, aspect
    return None


# ---------------------------------------------------------------------------
# ring triangulation (convex annulus)

def triangulate_ring(outer, inner) -> List[np.ndarray]:
    """Triangulate the region between nested convex ccw polygons.

    Advancing-front merge around the ring: at each step either the outer or
    the inner pointer advances, emitting (O, O', I) or (O, I', I); a step is
    admissible when the triangle is positively oriented and its new diagonal
    does not cross the inner polygon.  Produces len(outer) + len(inner)
    triangles adding up exactly to the annulus area.
    """
    outer0 = [np.asarray(p, dtype=float) for p in outer]
    inner0 = [np.asarray(p, dtype=float) for p in inner]
    ctr = np.mean(inner0, axis=0)
    # recentered copies avoid catastrophic cancellation in the area checks
    outer = [p - ctr for p in outer0]
    inner = [p - ctr for p in inner0]

    def ang(p):
        return math.atan2(p[1], p[0]) % (2.0 * math.pi)

    m, k = len(outer), len(inner)
    ao = [ang(p) for p in outer]
    ai = [ang(p) for p in inner]
    scale = max(math.hypot(*p) for p in outer)
    area_floor = 1e-14 * scale * scale

    def crosses_inner(p, q, skip):
        for e in range(k):
            if e in skip:
                continue
            if _segments_intersect(p, q, inner[e], inner[(e + 1) % k]):
                return True
        return False

    target = abs(_poly_area(outer)) - abs(_poly_area(inner))

    def walk(i0, o0):
        tris = []
        io = ii = 0
        base = ai[i0]
        while io < m or ii < k:
            co, ci = (o0 + io) % m, (i0 + ii) % k
            oc = outer[co]
            ic = inner[ci]
            cand = []
            if io < m:
                no = (o0 + io + 1) % m
                t_o = np.array([oc, outer[no], ic])
                if tri_area(t_o) > -area_floor and not crosses_inner(
                        outer[no], ic, {(ci - 1) % k, ci}):
                    key = (ao[no] - base) % (2.0 * math.pi) \
                        + (2.0 * math.pi if io + 1 == m else 0.0)
                    cand.append(("o", t_o, (("o", co), ("o", no), ("i", ci)), key))
            if ii < k:
                ni = (i0 + ii + 1) % k
                t_i = np.array([oc, inner[ni], ic])
                if tri_area(t_i) > -area_floor and not crosses_inner(
                        oc, inner[ni], {ci, ni}):
                    key = (ai[ni] - base) % (2.0 * math.pi) \
                        + (2.0 * math.pi if ii + 1 == k else 0.0)
                    cand.append(("i", t_i, (("o", co), ("i", ni), ("i", ci)), key))
            if not cand:
                return None
            ring, tri, idxs, _ = min(cand, key=lambda c: c[3])
            tris.append((tri, idxs))
            if ring == "o":
                io += 1
            else:
                ii += 1
        areas = [tri_area(t) for t, _ in tris]
        if abs(sum(areas) - target) > 1e-9 * max(target, 1e-300):
            return None
        return tris, areas

    starts = []
    for i0 in range(k):
        o0 = min(range(m), key=lambda t: (ao[t] - ai[i0]) % (2.0 * math.pi))
        starts.append((i0, o0))
    rings = {"o": outer0, "i": inner0}
    for i0, o0 in starts:
        res = walk(i0, o0)
        if res is not None:
            tris, areas = res
            floor = 1e-15 * max(target, 1e-300)
            return [np.array([rings[r][idx] for r, idx in idxs])
                    for (_, idxs), a in zip(tris, areas) if a > floor]
    raise BadParameter("ring triangulation failed (non-star configuration)")


# ---------------------------------------------------------------------------
# the three certified coverings

def cover_isosceles(tri, delta: float, nhat) -> CoverPlan:
    """One half-scale diamond + two half-scale self-similar triangles.

    The triangle must be isosceles with axis parallel to that(nhat) and
    aspect ratio delta (half-base : axis); the diamond spans apex to base
    midpoint so exactly half the area is covered.
    """
    tri = _ccw(tri)
    info = aligned_isosceles_info(tri, nhat, require_aspect=delta)
    if info is None:
        raise NotAligned("triangle is not an aligned isosceles of the requested aspect")
    apex, axis_len, half_base, aspect = info
    a = tri[apex]
    b, c = tri[(apex + 1) % 3], tri[(apex + 2) % 3]
    mid = 0.5 * (b + c)
    pb = 0.5 * (a + b)
    pc = 0.5 * (a + c)
    z = 0.5 * (a + mid)
    r = 0.5 * axis_len
    nh = np.asarray(nhat, dtype=float)
    # corner order must match diamond_corners: [z + r*that, z + d*r*nhat, ...]
    th = that_of(nh)
    cand = [a, mid]
    c_plus_t = cand[0] if (cand[0] - z) @ th > 0 else cand[1]
    c_minus_t = cand[1] if c_plus_t is cand[0] else cand[0]
    c_plus_n = pb if (pb - z) @ nh > 0 else pc
    c_minus_n = pc if c_plus_n is pb else pb
    frame = DiamondFrame(z, r, nh, aspect,
                         np.array([c_plus_t, c_plus_n, c_minus_t, c_minus_n]))
    theta = math.atan2(th[1], th[0]) % math.pi
    rem = [
        RemPiece(_ccw(np.array([pb, b, mid])), TAG_C1, theta, aspect, CASE_SELF_SIMILAR),
        RemPiece(_ccw(np.array([pc, mid, c])), TAG_C1, theta, aspect, CASE_SELF_SIMILAR),
    ]
    return CoverPlan([frame], rem, tri).finalize()


def cover_box(rect, delta: float, nhat) -> CoverPlan:
    """Stack floor(1/delta) diamonds in a rectangle of aspect 1:delta*floor(1/delta).

    Remainder: 2*(floor(1/delta)-1) aligned C1 gap triangles and 4 corner
    right triangles.  The long side must be parallel to that(nhat).
    """
    rect = np.asarray(rect, dtype=float)
    if rect.shape != (4, 2):
        raise BadAspect("rectangle must have 4 corners")
    if not (0.0 < delta < 0.5):
        raise BadParameter(f"delta = {delta} outside (0, 1/2)")
    nh = np.asarray(nhat, dtype=float)
    th = that_of(nh)
    ctr = rect.mean(axis=0)
    xi = (rect - ctr) @ th
    eta = (rect - ctr) @ nh
    w = float(np.max(np.abs(xi)))
    h = float(np.max(np.abs(eta)))
    # corners must be (+-w, +-h) in the frame
    if np.max(np.abs(np.abs(xi) - w)) > 1e-8 * w or np.max(np.abs(np.abs(eta) - h)) > 1e-8 * max(h, 1e-300):
        raise BadAspect("rectangle is not aligned with the frame")
    n_d = int(math.floor(1.0 / delta + 1e-12))
    dd = h / (n_d * w)
    if abs(dd - delta * round(dd / delta)) > 1e-6 * delta or abs(h - n_d * dd * w) > 1e-9 * h:
        pass  # dd is the measured aspect; only sanity below matters
    if not (0.0 < dd < 0.5):
        raise BadAspect(f"measured diamond aspect {dd:.6g} outside (0, 1/2)")
    if abs(h / w - delta * n_d) > 1e-6 * (h / w):
        raise BadAspect(f"rectangle aspect {h / w:.6g} != delta*floor(1/delta) = {delta * n_d:.6g}")

    def pt(x, e):
        return ctr + x * th + e * nh

    theta = math.atan2(th[1], th[0]) % math.pi
    diamonds = []
    rem = []
    etas = [-h + (2 * i + 1) * dd * w for i in range(n_d)]
    for i, e0 in enumerate(etas):
        z = pt(0.0, e0)
        corners = np.array([pt(w, e0), pt(0.0, e0 + dd * w), pt(-w, e0), pt(0.0, e0 - dd * w)])
        diamonds.append(DiamondFrame(z, w, nh, dd, corners))
    for i in range(n_d - 1):
        e0, e1 = etas[i], etas[i + 1]
        emid = e0 + dd * w
        rem.append(RemPiece(_ccw(np.array([pt(-w, e0), pt(0.0, emid), pt(-w, e1)])),
                            TAG_C1, theta, dd, CASE_BOX_GAP))
        rem.append(RemPiece(_ccw(np.array([pt(w, e0), pt(w, e1), pt(0.0, emid)])),
                            TAG_C1, theta, dd, CASE_BOX_GAP))
    for sx in (-1.0, 1.0):
        rem.append(RemPiece(_ccw(np.array([pt(sx * w, -h), pt(0.0, -h), pt(sx * w, etas[0])])),
                            TAG_C, case_tag=CASE_BOX_CORNER))
        rem.append(RemPiece(_ccw(np.array([pt(sx * w, h), pt(0.0, h), pt(sx * w, etas[-1])])),
                            TAG_C, case_tag=CASE_BOX_CORNER))
    return CoverPlan(diamonds, rem, rect).finalize()


def cover_triangle(tri, delta: float, nhat) -> CoverPlan:
    """Arbitrary triangle: bisect, pack squares in the half rectangles, fit a
    rotated box in each square and stack diamonds inside it.

    Guarantees a covered volume fraction >= 1/100 for delta*floor(1/delta)
    close to 1 (delta = 1/8 in the demonstrations) and total remainder
    perimeter <= (100/delta) * Per(triangle).
    """
    tri = _ccw(tri)
    nh = np.asarray(nhat, dtype=float)
    diamonds: List[DiamondFrame] = []
    rem: List[RemPiece] = []

    # bisect at the largest angle; the altitude foot is interior
    lens = [math.hypot(*(tri[(i + 2) % 3] - tri[(i + 1) % 3])) for i in range(3)]
    vmax = int(np.argmax(lens))  # vertex opposite the longest side
    A = tri[vmax]
    B, C = tri[(vmax + 1) % 3], tri[(vmax + 2) % 3]
    d = C - B
    L2 = float(d @ d)
    t = float((A - B) @ d) / L2
    F = B + t * d
    for P in (B, C):
        _cover_right_triangle(np.array([P, F, A]), delta, nh, diamonds, rem)
    return CoverPlan(diamonds, rem, tri).finalize()


def _cover_right_triangle(tri, delta, nh, diamonds, rem):
    """Right triangle with the right angle at tri[1] (F)."""
    P, F, A = tri
    u = P - F
    v = A - F
    lu, lv = math.hypot(*u), math.hypot(*v)
    if min(lu, lv) <= 1e-12 * (lu + lv):
        return  # degenerate half from a right-angled input; the other half covers it
    uh, vh = u / lu, v / lv
    # rectangle between the leg midpoints; remainder: two half-scale copies
    m_u = F + 0.5 * lu * uh
    m_v = F + 0.5 * lv * vh
    hyp_mid = 0.5 * (P + A)
    rem.append(RemPiece(_ccw(np.array([m_u, P, hyp_mid])), TAG_C, case_tag=CASE_GENERIC))
    rem.append(RemPiece(_ccw(np.array([m_v, hyp_mid, A])), TAG_C, case_tag=CASE_GENERIC))
    # rectangle F, m_u, hyp_mid, m_v with sides lu/2, lv/2
    s_u, s_v = 0.5 * lu, 0.5 * lv
    if s_u >= s_v:
        long_h, short_h, s_long, s_short = uh, vh, s_u, s_v
    else:
        long_h, short_h, s_long, s_short = vh, uh, s_v, s_u
    mrat = s_long / s_short
    squares = []
    if mrat >= 2.0:
        n_sq = int(math.floor(mrat / 2.0))
        side = s_short
        for i in range(n_sq):
            squares.append((F + (i * side) * long_h, side))
        used = n_sq * side
        if s_long - used > 1e-12 * s_long:
            q0 = F + used * long_h
            q1 = F + s_long * long_h
            q2 = q1 + s_short * short_h
            q3 = q0 + s_short * short_h
            rem.append(RemPiece(_ccw(np.array([q0, q1, q2])), TAG_C, case_tag=CASE_GENERIC))
            rem.append(RemPiece(_ccw(np.array([q0, q2, q3])), TAG_C, case_tag=CASE_GENERIC))
    else:
        side = 0.5 * s_short
        squares.append((F, side))
        # L-shaped remainder as four triangles
        q0 = F + side * long_h
        q1 = F + s_long * long_h
        q2 = q1 + side * short_h
        q3 = q0 + side * short_h
        rem.append(RemPiece(_ccw(np.array([q0, q1, q2])), TAG_C, case_tag=CASE_GENERIC))
        rem.append(RemPiece(_ccw(np.array([q0, q2, q3])), TAG_C, case_tag=CASE_GENERIC))
        r0 = F + side * short_h
        r1 = r0 + s_long * long_h
        r2 = r1 + (s_short - side) * short_h
        r3 = r0 + (s_short - side) * short_h
        rem.append(RemPiece(_ccw(np.array([r0, r1, r2])), TAG_C, case_tag=CASE_GENERIC))
        rem.append(RemPiece(_ccw(np.array([r0, r2, r3])), TAG_C, case_tag=CASE_GENERIC))
    for (corner, side) in squares:
        sq = np.array([corner, corner + side * long_h,
                       corner + side * (long_h + short_h), corner + side * short_h])
        _cover_square(_ccw_poly(sq), side, delta, nh, diamonds, rem)


def _ccw_poly(poly):
    if _poly_area(poly) < 0:
        return np.asarray(poly, dtype=float)[::-1].copy()
    return np.asarray(poly, dtype=float)


def _cover_square(sq, side, delta, nh, diamonds, rem):
    """Fit a rotated box of long side side/sqrt(2) inside the square."""
    n_d = int(math.floor(1.0 / delta + 1e-12))
    rho = delta * n_d
    ctr = sq.mean(axis=0)
    th = that_of(nh)
    # 0.995: keeps the box corners strictly off the square's incircle so the
    # ring stays non-degenerate at rho = 1
    w = 0.995 * side / (2.0 * math.sqrt(2.0))
    h = rho * w
    box = np.array([ctr + w * th + h * nh, ctr - w * th + h * nh,
                    ctr - w * th - h * nh, ctr + w * th - h * nh])
    box = _ccw_poly(box)
    plan = cover_box(box, delta, nh)
    diamonds.extend(plan.diamonds)
    rem.extend(plan.remainder)
    for t in triangulate_ring(list(sq), list(box)):
        rem.append(RemPiece(t, TAG_C, case_tag=CASE_GENERIC))


# ---------------------------------------------------------------------------
# low-piece-count inscribed cover (demo iteration path)

def cover_inscribed(tri, nhat, delta_cap: float = 0.25) -> CoverPlan:
    """One area-maximized inscribed diamond aligned with the frame + ring.

    The aspect adapts to the triangle, capped at delta_cap (thin diamonds
    keep the interpolation drift of the block small).  The covered fraction
    is reported, not uniformly bounded.  Seven remainder triangles.
    """
    tri = _ccw(tri)
    nh = np.asarray(nhat, dtype=float)
    tx, ty = float(nh[1]), -float(nh[0])
    nx, ny = float(nh[0]), float(nh[1])
    # edge data: outward normal (for ccw) and offset
    nu = []
    for i in range(3):
        px, py = tri[i]
        qx, qy = tri[(i + 1) % 3]
        ex, ey = qx - px, qy - py
        ln = math.hypot(ex, ey)
        ox, oy = ey / ln, -ex / ln
        nu.append((ox, oy, ox * px + oy * py,
                   abs(ox * tx + oy * ty), abs(ox * nx + oy * ny)))

    area = tri_area(tri)
    per = tri_perimeter(tri)
    la = math.hypot(tri[2][0] - tri[1][0], tri[2][1] - tri[1][1])
    lb = math.hypot(tri[0][0] - tri[2][0], tri[0][1] - tri[2][1])
    lc = math.hypot(tri[1][0] - tri[0][0], tri[1][1] - tri[0][1])
    icx = (la * tri[0][0] + lb * tri[1][0] + lc * tri[2][0]) / per
    icy = (la * tri[0][1] + lb * tri[1][1] + lc * tri[2][1]) / per
    r_in = 2.0 * area / per

    def best_ab(zx, zy):
        a = b = 1e300
        for ox, oy, c, at, an in nu:
            s = c - (ox * zx + oy * zy)
            if s <= 0.0:
                return 0.0, 0.0
            if at > 1e-12:
                v = s / at
                if v < a:
                    a = v
            if an > 1e-12:
                v = s / an
                if v < b:
                    b = v
        return a, b

    # local grid ascent on the (log-concave) inscribed area
    zx, zy = icx, icy
    a0, b0 = best_ab(zx, zy)
    best = (min(b0, delta_cap * a0) * a0, zx, zy, a0, b0)
    span = r_in
    for _ in range(3):
        improved = best
        for dx in (-span, 0.0, span):
            for dy in (-span, 0.0, span):
                if dx == 0.0 and dy == 0.0:
                    continue
                a, b = best_ab(best[1] + dx, best[2] + dy)
                score = min(b, delta_cap * a) * a
                if score > improved[0]:
                    improved = (score, best[1] + dx, best[2] + dy, a, b)
        best = improved
        span *= 0.4
    _, zx, zy, a, b = best
    if a <= 0.0 or b <= 0.0:
        raise BadParameter("no inscribed diamond found (degenerate triangle)")
    a *= 0.98
    b *= 0.98
    if b > delta_cap * a:
        b = delta_cap * a
    dd = b / a
    z = np.array([zx, zy])
    corners = diamond_corners(z, a, nh, dd)
    frame = DiamondFrame(z, a, nh, dd, corners)
    rem = [RemPiece(t, TAG_C, case_tag=CASE_GENERIC)
           for t in triangulate_ring(list(tri), list(corners))]
    return CoverPlan([frame], rem, tri).finalize()
