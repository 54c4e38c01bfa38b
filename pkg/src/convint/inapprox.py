"""In-approximation stage families for the two planar inclusions.

O(2):   nested singular-value intervals I(k, kappa) climbing to 1.
K_h:    barycentric J-intervals over the three wells, with an anchor well
        carrying the dominant coordinate.

Both families share the bookkeeping (k, j, phase): phase 'utilde' covers the
startup sets that exhaust the open hull, phase 'u' the uniform sets climbed
afterwards.  The split operations return the convex decompositions used by
the diamond replacement blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import mat2
from .errors import BadParameter, NotInInterior, StageExhausted, DegenerateDirection

KAPPA0 = 0.25
TOL = mat2.TOL_GEOM

PHASE_UTILDE = "utilde"
PHASE_U = "u"


@dataclass(frozen=True)
class Stage:
    """Position in the in-approximation: set index k, sub-step j, phase.

    anchor is the dominant-well index (0-based) for the K_h uniform sets;
    None means "any anchor" (membership is existential over anchors).
    """

    phase: str
    k: int
    j: int
    anchor: Optional[int] = None

    def __post_init__(self):
        if self.k < (0 if self.phase == PHASE_UTILDE else 1):
            raise BadParameter(f"stage index k={self.k} out of range")


class IntervalFamily(NamedTuple):
    lo: float
    hi: float

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float, tol: float = TOL) -> bool:
        return self.lo - tol <= x <= self.hi + tol


def interval_I(k: int, kappa: float) -> IntervalFamily:
    """Singular-value interval [c_k - kappa d_k, c_k + kappa d_k].

    c_k = 1 - 3 * 2^-(k+2), d_k = 2^-(k+2); the family climbs to {1}.
    """
    if k < 0:
        raise BadParameter("k must be >= 0")
    if not (0.0 <= kappa <= 1.0):
        raise BadParameter("kappa must lie in [0, 1]")
    d = 2.0 ** (-(k + 2))
    c = 1.0 - 3.0 * d
    return IntervalFamily(c - kappa * d, c + kappa * d)


def o2_ck(k: int) -> float:
    return 1.0 - 3.0 * 2.0 ** (-(k + 2))


def o2_dk(k: int) -> float:
    return 2.0 ** (-(k + 2))


def interval_J(k: int, kappa: float, m: int = 3) -> IntervalFamily:
    """Barycentric interval 2^-(k+2m+2) * [3 - kappa, 3 + kappa]."""
    if k < 0:
        raise BadParameter("k must be >= 0")
    if not (0.0 <= kappa <= 1.0):
        raise BadParameter("kappa must lie in [0, 1]")
    if m != 3:
        raise BadParameter("only the three-well family is supported")
    s = 2.0 ** (-(k + 2 * m + 2))
    return IntervalFamily(s * (3.0 - kappa), s * (3.0 + kappa))


def j_center(k: int, m: int = 3) -> float:
    return 3.0 * 2.0 ** (-(k + 2 * m + 2))


def kh_floor(k: int, j: int, m: int = 3) -> float:
    """Lower bound for the not-yet-placed coordinates of the startup sets."""
    return 2.0 ** (-(k + 2 * m)) * (1.0 + KAPPA0 * j / (m - 1))


# ---------------------------------------------------------------------------
# membership

def member_o2(M: np.ndarray, stage: Stage, tol: float = TOL) -> bool:
    """Singular values of M satisfy the stage's interval conditions.

    Uniform phase: j values in I(k, kappa0*j/2), the rest in
    I(k-1, kappa0*(1+j/2)).  Startup phase: j values in I(k, kappa0*j/2),
    the rest bounded by 1 - 2 d_k + d_k kappa0 j / 2.
    Membership is existential over the assignment of singular values to
    slots (the group action makes only the value multiset observable).
    """
    n = 2
    sig = svd_sigmas(M)
    j = stage.j
    if j == 0:
        placed_iv = None
    else:
        placed_iv = interval_I(stage.k, KAPPA0 * j / n)
    if stage.phase == PHASE_U:
        rest_iv = interval_I(stage.k - 1, KAPPA0 * (1.0 + j / n))
        rest_ok = lambda s: rest_iv.contains(s, tol)
    else:
        bound = 1.0 - 2.0 * o2_dk(stage.k) + o2_dk(stage.k) * KAPPA0 * j / n
        rest_ok = lambda s: s <= bound + tol
    if j == 0:
        return all(rest_ok(s) for s in sig)
    if j == 1:
        for placed, rest in ((sig[0], sig[1]), (sig[1], sig[0])):
            if placed_iv.contains(placed, tol) and rest_ok(rest):
                return True
        return False
    # j == 2 wraps to the next set's j = 0 by definition
    nxt = Stage(stage.phase, stage.k + 1, 0) if stage.phase == PHASE_U else Stage(PHASE_U, stage.k + 1, 0)
    return member_o2(M, nxt, tol)


def svd_sigmas(M: np.ndarray):
    return mat2.svd2(M).d


def member_kh(M: np.ndarray, stage: Stage, tol: float = TOL) -> bool:
    """Barycentric coordinates of e(M) satisfy the stage's conditions.

    The skew part is unconstrained.  Uniform phase with anchor l: j placed
    coordinates (excluding l) in J(k, kappa0*j/2), the remaining non-anchor
    ones in J(k-1, kappa0*(1 + j/2)).  Startup phase: j placed coordinates in
    J(k, kappa0*j/2), the rest at least the stage floor.  Membership is
    existential over placements (and anchors when stage.anchor is None).
    """
    m = 3
    e = 0.5 * (M + M.T)
    mu = mat2.barycentric_kh(e)
    j = stage.j
    if j >= m:
        nxt = Stage(PHASE_U, stage.k + 1, 0)
        return member_kh(M, nxt, tol)
    placed_iv = interval_J(stage.k, KAPPA0 * j / (m - 1))
    if stage.phase == PHASE_U:
        rest_iv = interval_J(stage.k - 1, KAPPA0 * (1.0 + j / (m - 1)))
        anchors = range(m) if stage.anchor is None else [stage.anchor]
        for l in anchors:
            others = [i for i in range(m) if i != l]
            if _kh_assign_ok(mu, others, j, placed_iv,
                             lambda s: rest_iv.contains(s, tol), tol):
                return True
        return False
    floor = kh_floor(stage.k, j)
    return _kh_assign_ok(mu, list(range(m)), j, placed_iv,
                         lambda s: s >= floor - tol, tol)


def _kh_assign_ok(mu, idxs, j, placed_iv, rest_ok, tol) -> bool:
    from itertools import combinations

    for placed in combinations(idxs, j):
        if all(placed_iv.contains(mu[i], tol) for i in placed) and \
           all(rest_ok(mu[i]) for i in idxs if i not in placed):
            return True
    return False


def classify_m0(M: np.ndarray, problem: str) -> int:
    """Smallest startup index whose j=0 set contains M.

    Requires M in the open hull: sigma_max < 1 for O(2), all barycentric
    coordinates positive for K_h.
    """
    if problem == "O2":
        s2 = svd_sigmas(M)[1]
        if s2 >= 1.0 - TOL:
            raise NotInInterior(f"sigma_max = {s2:.12g} >= 1")
        for k in range(1, 400):
            if s2 <= 1.0 - 2.0 * o2_dk(k) + TOL:
                return k
        raise NotInInterior("no startup set found")
    if problem == "KH":
        e, _ = mat2.sym_skew(M)
        mu = mat2.barycentric_kh(e)
        if min(mu) <= TOL:
            raise NotInInterior(f"barycentric coordinates {mu} not strictly positive")
        for k in range(1, 400):
            if min(mu) >= kh_floor(k, 0) - TOL:
                return k
        raise NotInInterior("no startup set found")
    raise BadParameter(f"unknown problem {problem!r}")


# ---------------------------------------------------------------------------
# splits

class SplitResult(NamedTuple):
    """Convex decomposition M = (1-lam)*A + lam*B along a rank-one segment.

    A is the persistent matrix (within O(2^-k) of M in the uniform phase);
    dir is the unit-normal factorization of A - B.  target_stage is the
    stage the endpoints land in.
    """

    A: np.ndarray
    B: np.ndarray
    lam: float
    dir: mat2.RankOnePair
    target_stage: Stage


def _next_stage(stage: Stage, m: int) -> Stage:
    if stage.j + 1 < m:
        return Stage(stage.phase, stage.k, stage.j + 1, None)
    return Stage(PHASE_U, stage.k + 1, 0, None)


def split_o2(M: np.ndarray, stage: Stage, demo_tolerant: bool = False) -> SplitResult:
    """Replace the smallest not-yet-placed singular value by +/- c_k.

    With M = V1 diag(sigma) V2, the endpoints are V1 diag(..., +/-c_k, ...) V2
    and lam = (c_k - sigma_t) / (2 c_k), so M = (1-lam) A + lam B.
    In demo-tolerant mode a drifted sigma_t >= c_k retargets to the midpoint
    of (sigma_t, 1) instead of failing.
    """
    m = 2
    if stage.j >= m:
        raise StageExhausted(f"j = {stage.j}")
    sv = mat2.svd2(M)
    s1, s2 = sv.d
    ck = o2_ck(stage.k)
    # placed values sit near c_k (the top of the range); the split targets the
    # smallest remaining one, which is the global minimum in both phases here.
    if stage.j == 0:
        t_idx = 0
    else:
        # one value is already placed; split the other (ties: lowest index)
        placed_iv = interval_I(stage.k, KAPPA0 * stage.j / m)
        d0 = abs(s1 - placed_iv.center)
        d1 = abs(s2 - placed_iv.center)
        t_idx = 0 if d1 <= d0 else 1
    sig_t = (s1, s2)[t_idx]
    if demo_tolerant:
        # halving ladder: close half the remaining gap to 1 (equals c_k on
        # the nominal rung, where c_k = (1 + c_{k-1})/2)
        if sig_t >= 1.0 - 1e-12:
            raise DegenerateDirection("gradient drifted onto the hull boundary")
        c_eff = max(ck, 0.5 * (sig_t + 1.0))
    else:
        if sig_t >= ck - TOL:
            raise BadParameter(f"target singular value {sig_t:.12g} >= c_k = {ck:.12g}")
        c_eff = ck
    lam = (c_eff - sig_t) / (2.0 * c_eff)
    dA = [s1, s2]
    dB = [s1, s2]
    dA[t_idx] = c_eff
    dB[t_idx] = -c_eff
    A = sv.v1 @ np.diag(dA) @ sv.v2
    B = sv.v1 @ np.diag(dB) @ sv.v2
    a = 2.0 * c_eff * sv.v1[:, t_idx].copy()
    nrm = sv.v2[t_idx, :].copy()
    lead = nrm[0] if abs(nrm[0]) > 1e-12 else nrm[1]
    if lead < 0.0:
        a, nrm = -a, -nrm
    return SplitResult(A, B, lam, mat2.RankOnePair(a, nrm), _next_stage(stage, m))


class KhSplit(NamedTuple):
    """Symmetric-part split e(M) = lam * e_tilde + (1-lam) * e_hat.

    e_tilde re-anchors the pair's mass on coordinate `raise_idx` and places
    `place_idx` at the J-interval center; e_hat is the persistent side.
    coeff is the signed multiple of (well_p - well_r) joining them, with
    (p, r) = pair the ordered well indices.
    """

    mu: tuple
    mu_tilde: tuple
    mu_hat: tuple
    e_tilde: np.ndarray
    e_hat: np.ndarray
    lam: float
    pair: tuple
    coeff: float
    target_stage: Stage
    anchor_tilde: int
    anchor_hat: int


def _kh_sorted_roles(mu):
    order = sorted(range(3), key=lambda i: (mu[i], i))
    return order  # ascending by value, ties by index


def split_kh_sym(M: np.ndarray, stage: Stage, demo_tolerant: bool = False) -> KhSplit:
    """Two-coordinate exchange split of e(M) toward the next stage.

    The pair (place, raise) follows the stage: in the uniform phase the
    anchor's mass absorbs one remaining coordinate; at the wrap step a placed
    coordinate is re-raised to become the next anchor.  lam is small in the
    uniform phase (the persistent side keeps the anchor).
    """
    m = 3
    if stage.j >= m:
        raise StageExhausted(f"j = {stage.j}")
    e, _ = mat2.sym_skew(M)
    mu = mat2.barycentric_kh(e)
    order = _kh_sorted_roles(mu)
    lo, mid, hi = order
    j = stage.j
    if stage.phase == PHASE_U:
        # anchor = dominant coordinate; placed = j smallest; remaining between
        if j < m - 1:
            candidates = [(hi, c) for c in order[j:m - 1]]  # raise anchor, place a remaining one
        else:
            candidates = [(hi, c) for c in (mid, lo)]      # wrap: re-place a placed one
    else:
        if j == 0:
            candidates = [(mid, lo), (hi, lo), (hi, mid)]
        elif j == 1:
            candidates = [(hi, mid), (hi, lo)]
        else:
            candidates = [(hi, c) for c in (mid, lo)]
    c_nom = j_center(stage.k)
    chosen = None
    for r_idx, p_idx in candidates:
        mu_r, mu_p = mu[r_idx], mu[p_idx]
        if mu_p <= 1e-13 or mu_r <= 1e-13:
            continue
        lo_pair = min(mu_p, mu_r)
        if demo_tolerant:
            # halving ladder: never place below the nominal center, never at
            # or above the pair minimum.  On in-stage inputs this reproduces
            # the nominal center exactly (it is half the previous one).
            c_eff = 0.5 * lo_pair if c_nom >= lo_pair else max(c_nom, 0.5 * lo_pair)
        else:
            if lo_pair <= c_nom * (1.0 + 1e-9):
                continue
            c_eff = c_nom
        chosen = (r_idx, p_idx, c_eff)
        break
    if chosen is None:
        raise DegenerateDirection("no viable coordinate pair for the split")
    r_idx, p_idx, c_eff = chosen
    s = mu[p_idx] + mu[r_idx]
    # e_tilde re-anchors on p (old anchor r placed at the interval center);
    # e_hat keeps anchor r and places p.  lam weights e_tilde and is small
    # whenever mu[p] sits at the previous interval scale.
    mu_t = list(mu)
    mu_h = list(mu)
    mu_t[r_idx] = c_eff
    mu_t[p_idx] = s - c_eff
    mu_h[p_idx] = c_eff
    mu_h[r_idx] = s - c_eff
    lam = (mu[p_idx] - c_eff) / (s - 2.0 * c_eff)
    if not (0.0 < lam < 1.0):
        raise DegenerateDirection(f"split weight {lam:.6g} outside (0, 1)")
    e_t = mat2.bary_to_sym(mu_t)
    e_h = mat2.bary_to_sym(mu_h)
    coeff = s - 2.0 * c_eff  # e_tilde - e_hat = coeff * (well_p - well_r)
    return KhSplit(
        mu=tuple(mu), mu_tilde=tuple(mu_t), mu_hat=tuple(mu_h),
        e_tilde=e_t, e_hat=e_h, lam=lam, pair=(p_idx, r_idx), coeff=coeff,
        target_stage=_next_stage(stage, m),
        anchor_tilde=int(np.argmax(mu_t)),
        anchor_hat=int(np.argmax(mu_h)),
    )


def split_kh(M: np.ndarray, stage: Stage, ledger=None, sign_policy: str = "ledger",
             demo_tolerant: bool = False) -> SplitResult:
    """Full rank-one split for the three-well problem.

    Lifts the symmetric-part split to matrices M1 (new anchor, weight lam)
    and M2 (persistent); the free skew sign is chosen by the ledger policy.
    Returns the decomposition in the shared convention
    M = (1 - lam') * A + lam' * B with A = M2 persistent and lam' = lam.
    """
    from .engine import SkewLedger, skew_sign

    ks = split_kh_sym(M, stage, demo_tolerant=demo_tolerant)
    _, w = mat2.sym_skew(M)
    if ledger is None:
        ledger = SkewLedger.fresh()
    if sign_policy == "always_plus":
        sign = 1
    else:
        pair_idx = SkewLedger.pair_index(ks.pair[0], ks.pair[1])
        jump = (1.0 - ks.lam) * abs(ks.coeff)
        sign, _ = skew_sign(ledger, pair_idx, min(jump, 1.0), "bad")
    M1, M2 = mat2.pull_up_skew(ks.e_tilde, ks.e_hat, w, ks.lam, sign)
    pair = mat2.factor_rank_one(M1 - M2)
    return SplitResult(A=M2, B=M1, lam=ks.lam, dir=pair,
                       target_stage=ks.target_stage)
