"""Canonical diamond replacement blocks and their world-frame instantiation.

The block interpolates a two-gradient laminate inside the diamond
conv{(+-1, 0), (0, +-delta)} with zero boundary values, using four corner
interpolation triangles.  The divergence-free variant adds two shear fields
that keep every gradient trace-free.  Ten triangles, at most five distinct
gradients; all formulas are closed-form in (lam, delta).

Canonical gradient field (lam <= 1/2, s = 1 for the divergence-free variant,
s = 0 otherwise), with mu = (1-lam)*delta, q = lam(1-lam)delta^2/(mu(1-mu)),
t = lam(1-lam)/(1-lam-mu):

  inner band   |y2| <= lam*delta : [[0, 1-lam], [shear, 0]]   (minority side)
  outer band                     : [[0,  -lam], [shear, 0]]   (majority side)
  interpolation triangles        : t*[[ -delta, -1], [s*delta^2, s*delta]]
                                   (and its quadrant mirror)
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from . import mat2
from .errors import BadParameter

N_BLOCK_CELLS = 10


class CanonicalBlock(NamedTuple):
    verts: np.ndarray        # (10, 3, 2) canonical triangles, ccw
    grad: np.ndarray         # (10, 2, 2) canonical gradients
    offset: np.ndarray       # (10, 2)
    min_region: np.ndarray   # (10,) True on the inner (weight lam_eff) side
    lam: float               # requested minority weight
    lam_eff: float           # min(lam, 1 - lam), the weight actually built
    swapped: bool            # True when lam > 1/2 (roles mirrored)
    delta: float
    variant: str             # 'generic' | 'divfree'
    mu: float
    q_shear: float
    t_interp: float


def conti_block(lam: float, delta: float, variant: str = "generic") -> CanonicalBlock:
    """Build the canonical diamond block for minority weight lam and aspect delta."""
    if not (0.0 < lam < 1.0):
        raise BadParameter(f"lam = {lam!r} outside (0, 1)")
    if not (0.0 < delta < 0.5):
        raise BadParameter(f"delta = {delta!r} outside (0, 1/2)")
    if variant not in ("generic", "divfree"):
        raise BadParameter(f"unknown variant {variant!r}")
    swapped = lam > 0.5
    le = 1.0 - lam if swapped else lam
    d = float(delta)
    s = 1.0 if variant == "divfree" else 0.0
    mu = (1.0 - le) * d
    ld = le * d
    q = le * (1.0 - le) * d * d / (mu * (1.0 - mu))
    t = le * (1.0 - le) / (1.0 - le - mu)

    g_min = np.array([[0.0, 1.0 - le], [-s * q * (1.0 - mu), 0.0]])
    g_min_side = np.array([[0.0, 1.0 - le], [s * q * mu, 0.0]])
    g_maj = np.array([[0.0, -le], [-s * q * (1.0 - mu), 0.0]])
    g_i1 = t * np.array([[-d, -1.0], [s * d * d, s * d]])
    g_i2 = t * np.array([[d, -1.0], [s * d * d, -s * d]])

    o0 = np.zeros(2)
    cells = [
        # inner band (minority side)
        ([(-mu, -ld), (mu, -ld), (mu, ld)], g_min, o0, True),
        ([(-mu, -ld), (mu, ld), (-mu, ld)], g_min, o0, True),
        ([(mu, -ld), (1.0, 0.0), (mu, ld)], g_min_side, np.array([0.0, -s * q * mu]), True),
        ([(-mu, ld), (-1.0, 0.0), (-mu, -ld)], g_min_side, np.array([0.0, s * q * mu]), True),
        # outer band (majority side)
        ([(-mu, ld), (mu, ld), (0.0, d)], g_maj, np.array([ld, 0.0]), False),
        ([(mu, -ld), (-mu, -ld), (0.0, -d)], g_maj, np.array([-ld, 0.0]), False),
        # interpolation corners
        ([(1.0, 0.0), (0.0, d), (mu, ld)], g_i1, np.array([t * d, -s * t * d * d]), False),
        ([(0.0, d), (-1.0, 0.0), (-mu, ld)], g_i2, np.array([t * d, s * t * d * d]), False),
        ([(-1.0, 0.0), (0.0, -d), (-mu, -ld)], g_i1, np.array([-t * d, s * t * d * d]), False),
        ([(0.0, -d), (1.0, 0.0), (mu, -ld)], g_i2, np.array([-t * d, -s * t * d * d]), False),
    ]
    verts = np.array([c[0] for c in cells], dtype=float)
    grads = np.array([c[1] for c in cells], dtype=float)
    offs = np.array([c[2] for c in cells], dtype=float)
    mins = np.array([c[3] for c in cells], dtype=bool)
    from .geom2 import tri_area

    areas = tri_area(verts)
    if float(areas.min()) < 1e-300:
        raise BadParameter("block triangle area underflow")
    return CanonicalBlock(verts, grads, offs, mins, float(lam), le, swapped,
                          d, variant, mu, q, t)


def block_eps(block: CanonicalBlock, amag: float = 1.0) -> float:
    """Gradient closeness bound: all gradients lie within eps of the two targets.

    4*sqrt(2)*delta*lam*(1-lam)*|a| for the generic variant and
    20*delta*lam*(1-lam)*|a| for the divergence-free one.
    """
    c = 4.0 * math.sqrt(2.0) if block.variant == "generic" else 20.0
    return c * block.delta * block.lam_eff * (1.0 - block.lam_eff) * amag


def minority_area_fraction(block: CanonicalBlock) -> float:
    """Area fraction of the inner (weight lam_eff) side of the diamond."""
    le, d = block.lam_eff, block.delta
    return le * (1.0 + (1.0 - le) * d)


def diamond_corners(z, r: float, nhat, delta: float) -> np.ndarray:
    """World corners (4,2) of the diamond frame: z +- r*that, z +- delta*r*nhat."""
    z = np.asarray(z, dtype=float)
    nh = np.asarray(nhat, dtype=float)
    th = np.array([nh[1], -nh[0]])
    return np.array([
        z + r * th,
        z + delta * r * nh,
        z - r * th,
        z - delta * r * nh,
    ])


class Instantiated(NamedTuple):
    verts: np.ndarray     # (n, 3, 2) world triangles
    grad: np.ndarray      # (n, 2, 2)
    offset: np.ndarray    # (n, 2)
    persistent: np.ndarray  # (n,) True where the gradient equals the persistent side
    eps: float            # gradient closeness bound in world units


def instantiate(block: Optional[CanonicalBlock], z, r: float, nhat,
                M: np.ndarray, b, A: np.ndarray, B: np.ndarray) -> Instantiated:
    """Place a block in the world diamond (z, r, nhat) with boundary map M x + b.

    A, B are the split endpoints in the convention M = (1-lam)A + lam B and
    A the persistent side; the block must carry the same lam.  When A == B
    the diamond is emitted unmodified as two affine triangles.  The cells
    satisfy w = M x + b on the diamond boundary, grad w within eps of {A, B},
    and their corner coordinates reuse the caller's frame floats exactly.
    """
    z = np.asarray(z, dtype=float)
    b = np.asarray(b, dtype=float)
    nh0 = np.asarray(nhat, dtype=float)
    delta = 0.25 if block is None else block.delta
    frame_corners = diamond_corners(z, r, nh0, delta)
    degenerate = block is None or mat2.fro(B - A) <= 1e-12 * (1.0 + mat2.fro(M))
    if degenerate:
        verts = np.array([[frame_corners[0], frame_corners[1], frame_corners[2]],
                          [frame_corners[2], frame_corners[3], frame_corners[0]]])
        return Instantiated(verts, np.array([M, M]), np.array([b, b]),
                            np.ones(2, dtype=bool), 0.0)

    # rank-one direction joining the canonical sides, in world terms
    D = (B - A) if not block.swapped else (A - B)
    a, n = mat2.factor_rank_one(D)
    amag = math.hypot(a[0], a[1])
    ahat = a / amag
    if block.variant == "divfree":
        # conjugation preserves the trace constraint: align a with the tangent
        that = np.array([n[1], -n[0]])
        if ahat[0] * that[0] + ahat[1] * that[1] < 0.0:
            a, n, ahat = -a, -n, -ahat
            that = np.array([n[1], -n[0]])
        Q = np.column_stack([that, n])
        out = Q
    else:
        that = np.array([n[1], -n[0]])
        Q = np.column_stack([that, n])
        out = np.outer(ahat, np.array([1.0, 0.0]))
    if abs(abs(float(n @ nh0)) - 1.0) > 1e-9:
        raise BadParameter("frame normal does not match the split direction")

    n_cells = block.verts.shape[0]
    verts = z[None, None, :] + r * np.einsum("cvk,ik->cvi", block.verts, Q)
    grads = np.empty((n_cells, 2, 2))
    offs = np.empty((n_cells, 2))
    QT = Q.T
    for i in range(n_cells):
        Gw = amag * (out @ block.grad[i] @ QT)
        grads[i] = M + Gw
        offs[i] = b - Gw @ z + amag * r * (out @ block.offset[i])
    # snap the four diamond tips onto the caller's frame floats (the gauge may
    # point-reflect the frame; match each tip to its nearest frame corner)
    tips = {(1.0, 0.0), (-1.0, 0.0), (0.0, block.delta), (0.0, -block.delta)}
    for i in range(n_cells):
        for kv in range(3):
            key = (float(block.verts[i, kv, 0]), float(block.verts[i, kv, 1]))
            if key in tips:
                d2 = ((frame_corners - verts[i, kv]) ** 2).sum(axis=1)
                verts[i, kv] = frame_corners[int(np.argmin(d2))]
    persistent = ~block.min_region if not block.swapped else block.min_region.copy()
    return Instantiated(verts, grads, offs, persistent, block_eps(block, amag))
