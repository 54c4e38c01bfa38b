"""2x2 matrix kernel: decompositions, well distances, rank-one algebra.

Matrices are numpy arrays of shape (2, 2) in float64.  Everything here is a
pure function; the heavy users (the iteration engine) call these on millions
of matrices, so the implementations favour closed forms over generic LAPACK
calls.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DegenerateDirection

TOL_GEOM = 1e-9

# Skew generator: J @ x rotates x by +90 degrees.
J = np.array([[0.0, -1.0], [1.0, 0.0]])

# Symmetric trace-free wells of the hexagonal-to-rhombic inclusion.
_S3 = math.sqrt(3.0)
WELLS_KH = (
    np.array([[1.0, 0.0], [0.0, -1.0]]),
    np.array([[-0.5, 0.5 * _S3], [0.5 * _S3, 0.5]]),
    np.array([[-0.5, -0.5 * _S3], [-0.5 * _S3, 0.5]]),
)


class Svd2(NamedTuple):
    """Factorization M = v1 @ diag(d) @ v2 with d ascending and v1, v2 orthogonal."""

    v1: np.ndarray
    d: tuple  # (sigma1, sigma2), 0 <= sigma1 <= sigma2
    v2: np.ndarray


class SymDecomp(NamedTuple):
    e: np.ndarray  # symmetric part
    w: np.ndarray  # skew part


class RankOnePair(NamedTuple):
    a: np.ndarray  # amplitude vector, a != 0
    n: np.ndarray  # unit direction


def mat2(a11, a12, a21, a22) -> np.ndarray:
    return np.array([[float(a11), float(a12)], [float(a21), float(a22)]])


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def fro(M: np.ndarray) -> float:
    m = np.asarray(M)
    return math.sqrt(float((m * m).sum()))


def det2(M: np.ndarray) -> float:
    return float(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])


def svd2(M: np.ndarray) -> Svd2:
    """Closed-form singular value decomposition of a 2x2 matrix.

    Returns v1, (s1, s2), v2 with M = v1 @ diag(s1, s2) @ v2, 0 <= s1 <= s2
    and v1, v2 orthogonal (not necessarily rotations).  The factorization is
    made deterministic by flipping column/row sign pairs so each row of v2
    is lexicographically nonnegative (first nonzero entry > 0).
    """
    a, b = float(M[0, 0]), float(M[0, 1])
    c, d = float(M[1, 0]), float(M[1, 1])
    if a == 0.0 and b == 0.0 and c == 0.0 and d == 0.0:
        return Svd2(np.eye(2), (0.0, 0.0), np.eye(2))
    e, f = 0.5 * (a + d), 0.5 * (a - d)
    g, h = 0.5 * (c + b), 0.5 * (c - b)
    q = math.hypot(e, h)
    r = math.hypot(f, g)
    sx = q + r          # largest singular value
    sy = q - r          # signed: |sy| is the smallest, sign(sy) = sign(det M)
    a1 = math.atan2(g, f) if (g != 0.0 or f != 0.0) else 0.0  # theta + phi
    a2 = math.atan2(h, e) if (h != 0.0 or e != 0.0) else 0.0  # theta - phi
    theta = 0.5 * (a1 + a2)   # left rotation angle
    phi = 0.5 * (a1 - a2)     # right rotation angle
    # M = R(theta) @ diag(sx, sy) @ R(phi)^T  (verified by reconstruction below)
    v1 = rot(theta)
    v2 = rot(phi).T
    s1, s2 = abs(sy), sx
    # fold the sign of sy into v2's second row
    if sy < 0.0:
        v2 = v2.copy()
        v2[1, :] *= -1.0
    # reorder ascending: swap columns of v1 and rows of v2
    v1 = v1[:, ::-1].copy()
    v2 = v2[::-1, :].copy()
    # sign normalization: each v2 row lexicographically nonnegative
    for i in range(2):
        row = v2[i]
        lead = row[0] if row[0] != 0.0 else row[1]
        if lead < 0.0:
            v2[i, :] *= -1.0
            v1[:, i] *= -1.0
    return Svd2(v1, (s1, s2), v2)


def sym_skew(M: np.ndarray) -> SymDecomp:
    """Split M into symmetric and skew parts, M = e + w."""
    e = 0.5 * (M + M.T)
    w = 0.5 * (M - M.T)
    return SymDecomp(e, w)


def dist_o2(M: np.ndarray):
    """Frobenius distances (to SO(2), to the reflection component of O(2)).

    For ascending singular values s1 <= s2,
        dist(M, SO(2))^2 = (s1 - 1)^2 + (s2 - 1)^2        if det M >= 0,
                           (s1 + 1)^2 + (s2 - 1)^2        otherwise,
    and the reflection distance is the rotation distance of M @ diag(-1, 1).
    """
    s1, s2 = svd2(M).d
    dm = det2(M)
    d_rot = math.hypot(s1 - 1.0, s2 - 1.0) if dm >= 0.0 else math.hypot(s1 + 1.0, s2 - 1.0)
    # right-multiplying by diag(-1,1) keeps singular values, flips det
    d_refl = math.hypot(s1 - 1.0, s2 - 1.0) if dm < 0.0 else math.hypot(s1 + 1.0, s2 - 1.0)
    return d_rot, d_refl


def dist_kh(M: np.ndarray):
    """Frobenius distances of M to the three skew-invariant wells.

    The skew part is an orthogonal free direction, so the distance to
    well j + Skew(2) is exactly |e(M) - well_j|.
    """
    e = 0.5 * (M + M.T)
    return tuple(fro(e - w) for w in WELLS_KH)


def sym_rank_one_decompose(E: np.ndarray, tol: float = TOL_GEOM) -> RankOnePair:
    """Factor a trace-free symmetric matrix with det E < 0 as sym(a (x) n).

    With eigenvalues +/- lam (lam = sqrt(-det E)) and orthonormal eigenvectors
    f1 (for +lam), f2 (for -lam), returns n = (f1+f2)/sqrt(2) and
    a = sqrt(2) * lam * (f1 - f2); then (a (x) n + n (x) a)/2 == E.
    """
    if abs(float(E[0, 0] + E[1, 1])) > 100 * tol * (1.0 + fro(E)):
        raise DegenerateDirection("matrix is not trace-free")
    dE = det2(E)
    if dE >= -tol * tol:
        raise DegenerateDirection(f"det E = {dE:g} >= -tol^2, no negative-determinant split")
    lam = math.sqrt(-dE)
    p, r = float(E[0, 0]), float(E[0, 1])
    # unit eigenvector for +lam of [[p, r], [r, -p]]
    if abs(r) > tol * lam:
        f1 = np.array([r, lam - p])
    else:
        f1 = np.array([1.0, 0.0]) if p > 0 else np.array([0.0, 1.0])
    f1 = f1 / math.hypot(f1[0], f1[1])
    f2 = np.array([-f1[1], f1[0]])  # orthogonal, eigenvector for -lam
    n = (f1 + f2) / math.sqrt(2.0)
    a = math.sqrt(2.0) * lam * (f1 - f2)
    return RankOnePair(a, n)


def sym_outer(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Symmetrized outer product (a (x) n + n (x) a)/2."""
    return 0.5 * (np.outer(a, n) + np.outer(n, a))


def skew_outer(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Skew part of a (x) n."""
    return 0.5 * (np.outer(a, n) - np.outer(n, a))


def pull_up_skew(e1: np.ndarray, e2: np.ndarray, w_m: np.ndarray, lam: float, sign: int):
    """Lift a symmetrized rank-one split to a genuine rank-one split.

    Given symmetric e1, e2 with e1 - e2 = sym(a (x) n) and a skew part w_m,
    returns (M1, M2) with e(M1) = e1, e(M2) = e2,
    lam*M1 + (1-lam)*M2 = lam*e1 + (1-lam)*e2 + w_m and rank(M1 - M2) = 1.
    The free sign selects S = +/- skew(a (x) n).
    """
    pair = sym_rank_one_decompose(e1 - e2)
    S = float(sign) * skew_outer(pair.a, pair.n)
    M1 = e1 + w_m + (1.0 - lam) * S
    M2 = e2 + w_m - lam * S
    return M1, M2


def factor_rank_one(D: np.ndarray, tol: float = TOL_GEOM):
    """Factor a rank-one matrix as a (x) n with |n| = 1.

    The sign gauge is fixed so that n's first nonzero component is positive.
    Raises DegenerateDirection if D is (numerically) zero or has rank 2.
    """
    sv = svd2(D)
    s1, s2 = sv.d
    scale = 1.0 + s2
    if s2 <= tol * scale:
        raise DegenerateDirection("zero matrix has no rank-one factorization")
    if s1 > 1e-6 * scale:
        raise DegenerateDirection(f"matrix has rank 2 (s1={s1:g}, s2={s2:g})")
    a = s2 * sv.v1[:, 1].copy()
    n = sv.v2[1, :].copy()
    lead = n[0] if abs(n[0]) > 1e-12 else n[1]
    if lead < 0.0:
        a, n = -a, -n
    return RankOnePair(a, n)


def barycentric_kh(e: np.ndarray, tol: float = TOL_GEOM):
    """Affine coordinates of a trace-free symmetric matrix over the three wells.

    Solves e = mu1*w1 + mu2*w2 + mu3*w3 with mu1+mu2+mu3 = 1; the wells span
    the 2-dimensional trace-free symmetric space, so the solution is unique.
    """
    from .errors import NotTraceFree

    if abs(float(e[0, 0] + e[1, 1])) > 1e4 * tol * (1.0 + fro(e)):
        raise NotTraceFree(f"trace = {float(e[0, 0] + e[1, 1]):g}")
    # components in the basis (E11 - E22, E12 + E21) of trace-free symmetric space
    x = float(e[0, 0])
    y = 0.5 * float(e[0, 1] + e[1, 0])
    # wells: w1 -> (1, 0), w2 -> (-1/2, s3/2), w3 -> (-1/2, -s3/2)
    mu2 = (1.0 / 3.0) - x / 3.0 + y / _S3
    mu3 = (1.0 / 3.0) - x / 3.0 - y / _S3
    mu1 = 1.0 - mu2 - mu3
    return (mu1, mu2, mu3)


def bary_to_sym(mu) -> np.ndarray:
    """Inverse of barycentric_kh: the well combination sum(mu_j * well_j)."""
    return mu[0] * WELLS_KH[0] + mu[1] * WELLS_KH[1] + mu[2] * WELLS_KH[2]


def well_pair_directions():
    """Skew parts of the lifted rank-one connections between well pairs.

    Returns a dict mapping ordered pairs (i, j), i != j, to
    skew(a (x) n) for well_i - well_j = sym(a (x) n); these are the finitely
    many values the skew jumps of the construction are proportional to.
    """
    dirs = {}
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            pair = sym_rank_one_decompose(WELLS_KH[i] - WELLS_KH[j])
            dirs[(i, j)] = skew_outer(pair.a, pair.n)
    return dirs
