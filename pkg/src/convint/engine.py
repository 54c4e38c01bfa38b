"""Iteration driver: per-cell splits, covering dispatch, state updates.

Each step replaces every live cell by a covering of oriented diamonds
(carrying the two-gradient replacement block) plus remainder triangles that
keep the parent's affine map.  Cells inside diamonds advance their stage
bookkeeping (j+1 mod m, q+1, promotion of l on wrap); remainder cells are
untouched.  The three-well problem additionally tracks the per-branch skew
sign ledger that keeps the skew part of the gradients bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from . import blocks, cover, inapprox, mat2
from .errors import (BadParameter, BudgetExceeded, DegenerateDirection,
                     NotInInterior, StageViolation)
from .geom2 import (CASE_C1, CASE_C2, TAG_C, TAG_C1, Mesh, mesh_from_lists,
                    tri_area, triangulate)

SQRT6 = math.sqrt(6.0)  # Frobenius norm of the skew direction of every well pair


# ---------------------------------------------------------------------------
# configuration & state

@dataclass(frozen=True)
class RunConfig:
    problem: str                      # 'O2' | 'KH'
    domain: tuple                     # polygon vertices ((x, y), ...)
    M0: tuple                         # 2x2 boundary gradient
    depth: int = 4
    delta_mode: str = "demo"          # 'demo' | 'faithful'
    delta: float = 0.125              # demo diamond aspect
    cell_budget: int = 5_000_000
    sign_policy: str = "ledger"       # 'ledger' | 'always_plus'
    seed: int = 0
    c2: float = 0.5                   # geometric decay constant of the uniform sets
    engine_cover: str = "lean"        # 'lean' | 'spec' covering inside the iteration
    tol_geom: float = 1e-9
    tol_angle: float = 1e-6
    median_stop: float = 1e-4

    def m(self) -> int:
        return 2 if self.problem == "O2" else 3

    def m0_matrix(self) -> np.ndarray:
        return np.asarray(self.M0, dtype=float).reshape(2, 2)


class SkewLedger(NamedTuple):
    """Signed coefficients over the ordered well-pair skew directions.

    mu[p] in [-1, 1] records the accumulated weight of direction p along the
    current branch; accum_good is the absolutely convergent side's budget.
    """

    mu: tuple
    accum_good: float = 0.0

    N_PAIRS = 6

    @staticmethod
    def fresh() -> "SkewLedger":
        return SkewLedger((0.0,) * 6, 0.0)

    @staticmethod
    def pair_index(i: int, jj: int) -> int:
        # ordered pairs of distinct well indices, row-major
        idx = 0
        for a in range(3):
            for b in range(3):
                if a == b:
                    continue
                if (a, b) == (i, jj):
                    return idx
                idx += 1
        raise BadParameter(f"bad well pair ({i}, {jj})")


def skew_sign(ledger, pair_index: int, lam: float, branch: str):
    """Choose the free sign of a skew jump and update the ledger.

    branch 'bad': the jump has O(1) coefficient lam in [0, 1]; the sign is
    forced to -sign(mu) whenever mu + lam would leave [-1, 1], keeping every
    entry bounded.  branch 'good': the jump is geometrically small; the sign
    is free (+1) and only the budget accumulates.
    """
    if isinstance(ledger, SkewLedger):
        mu = list(ledger.mu)
        acc = ledger.accum_good
    else:
        mu = list(ledger)
        acc = 0.0
    if branch == "good":
        acc += lam
        return 1, SkewLedger(tuple(mu), acc)
    cur = mu[pair_index]
    if abs(cur + lam) <= 1.0:
        sign = 1
    else:
        sign = -1 if cur > 0 else 1
    mu[pair_index] = cur + sign * lam
    if abs(mu[pair_index]) > 1.0 + 1e-12:
        # cannot happen for lam in [0, 1]; clamp defensively
        mu[pair_index] = math.copysign(1.0, mu[pair_index])
    return sign, SkewLedger(tuple(mu), acc)


@dataclass
class StepInfo:
    good_frac_weighted: float = 1.0   # decay-weighted good volume fraction
    good_frac_area: float = 1.0
    warn_stage: int = 0
    warn_frozen: int = 0
    ratio_good: float = 0.0           # per-parent perimeter ratios (measured)
    ratio_c1: float = 0.0
    ratio_rest: float = 0.0
    ratio_total: float = 0.0


@dataclass
class RunState:
    cfg: RunConfig
    m0: int
    history: List[Mesh]
    step_info: List[StepInfo]
    budget_exceeded: bool = False

    @property
    def mesh(self) -> Mesh:
        return self.history[-1]

    @property
    def k(self) -> int:
        return len(self.history) - 1


# ---------------------------------------------------------------------------
# initialization

def init(cfg: RunConfig) -> RunState:
    """Triangulated domain, every cell carrying x -> M0 x at stage (-1, 0, 0)."""
    M0 = cfg.m0_matrix()
    m0 = inapprox.classify_m0(M0, cfg.problem)  # raises NotInInterior
    tris = triangulate(list(cfg.domain))
    n = len(tris)
    mesh = mesh_from_lists(
        generation=0,
        verts=np.array(tris),
        grads=np.repeat(M0[None, :, :], n, axis=0),
        offsets=np.zeros((n, 2)),
        l=np.full(n, -1), j=np.zeros(n), q=np.zeros(n),
        case_=np.full(n, CASE_C1), tag=np.full(n, TAG_C),
        theta=np.full(n, np.nan), aspect=np.full(n, np.nan),
        parent=np.full(n, -1), child_rank=np.arange(n),
        ledger=np.zeros((n, 6)) if cfg.problem == "KH" else None,
        accum_good=np.zeros(n), frozen=np.zeros(n, dtype=bool),
    )
    return RunState(cfg=cfg, m0=m0, history=[mesh], step_info=[StepInfo()])


def faithful_delta(problem: str, phase: str, k: int) -> float:
    """Diamond aspect prescribed for exact stage containment.

    O(2): kappa0*2^-10/n uniform, kappa0*2^-(k+10)/n startup;
    three wells: kappa0*2^-(10+2m)/m uniform, kappa0*2^-(10+k+2m)/m startup.
    """
    k0 = inapprox.KAPPA0
    if problem == "O2":
        n = 2
        return k0 * 2.0 ** (-10 - (k if phase == inapprox.PHASE_UTILDE else 0)) / n
    m = 3
    return k0 * 2.0 ** (-(10 + 2 * m) - (k if phase == inapprox.PHASE_UTILDE else 0)) / m


def stage_of(case: int, l: int, j: int, m0: int) -> inapprox.Stage:
    if case == CASE_C1:
        return inapprox.Stage(inapprox.PHASE_UTILDE, m0, int(j))
    return inapprox.Stage(inapprox.PHASE_U, int(l), int(j))


# ---------------------------------------------------------------------------
# the step

class _Acc:
    """Children accumulator for one generation."""

    def __init__(self, kh: bool):
        self.kh = kh
        self.verts = []
        self.grad = []
        self.off = []
        self.l = []
        self.j = []
        self.q = []
        self.case_ = []
        self.tag = []
        self.theta = []
        self.aspect = []
        self.parent = []
        self.rank = []
        self.ledger = []
        self.accg = []
        self.frozen = []

    def add(self, verts, grad, off, l, j, q, case_, tag, theta, aspect,
            parent, rank, ledger, accg, frozen=False):
        self.verts.append(verts)
        self.grad.append(grad)
        self.off.append(off)
        self.l.append(l)
        self.j.append(j)
        self.q.append(q)
        self.case_.append(case_)
        self.tag.append(tag)
        self.theta.append(theta)
        self.aspect.append(aspect)
        self.parent.append(parent)
        self.rank.append(rank)
        if self.kh:
            self.ledger.append(ledger)
            self.accg.append(accg)
        self.frozen.append(frozen)

    def __len__(self):
        return len(self.verts)


def step(state: RunState, check_faithful: bool = True) -> RunState:
    """Advance one generation; raises BudgetExceeded before sealing an
    oversized generation (the previous state remains valid)."""
    cfg = state.cfg
    mesh = state.mesh
    kh = cfg.problem == "KH"
    m = cfg.m()
    m0 = state.m0
    faithful = cfg.delta_mode == "faithful"
    demo_tolerant = not faithful
    acc = _Acc(kh)
    warn_stage = 0
    warn_frozen = 0
    # decay-weighted good fraction accumulators (exact contraction bookkeeping)
    w_good = 0.0
    w_tot = 0.0
    a_good = 0.0
    a_tot = 0.0
    ratio_good = 0.0
    ratio_c1 = 0.0
    ratio_rest = 0.0
    ratio_total = 0.0
    split_cache = {}
    block_cache = {}

    areas = mesh.areas()
    perims = mesh.perimeters()
    c2m = cfg.c2 ** (1.0 / m)

    for i in range(mesh.n_cells):
        par_area = float(areas[i])
        wgt = cfg.c2 ** (float(mesh.q[i]) / m) * par_area
        w_tot += wgt
        a_tot += par_area
        tri = mesh.verts[i]
        M = mesh.grad[i]
        b = mesh.offset[i]
        led_row = tuple(mesh.ledger[i]) if kh else None
        acg = float(mesh.accum_good[i]) if mesh.accum_good is not None else 0.0

        def passthrough(frozen_flag):
            acc.add(tri, M, b, int(mesh.l[i]), int(mesh.j[i]), int(mesh.q[i]),
                    int(mesh.case_[i]), int(mesh.tag[i]), float(mesh.theta[i]),
                    float(mesh.aspect[i]), i, 0, led_row, acg, frozen_flag)

        if mesh.frozen is not None and mesh.frozen[i]:
            passthrough(True)
            continue

        stage = stage_of(int(mesh.case_[i]), int(mesh.l[i]), int(mesh.j[i]), m0)
        key = (mesh.grad[i].tobytes(), stage.phase, stage.k, stage.j, led_row)
        split = split_cache.get(key)
        if split is None:
            try:
                if kh:
                    split = _split_kh_full(M, stage, led_row, cfg.sign_policy,
                                           demo_tolerant)
                else:
                    sp = inapprox.split_o2(M, stage, demo_tolerant=demo_tolerant)
                    split = (sp, None)
            except (DegenerateDirection, BadParameter):
                split = "frozen"
            split_cache[key] = split
        if split == "frozen":
            warn_frozen += 1
            passthrough(True)
            continue
        sp, kh_extra = split
        nhat = sp.dir.n

        # covering dispatch
        if faithful:
            dlt = faithful_delta(cfg.problem, stage.phase, stage.k)
            info = cover.aligned_isosceles_info(tri, nhat, cfg.tol_angle, require_aspect=dlt)
            if info is not None:
                plan = cover.cover_isosceles(tri, dlt, nhat)
            else:
                plan = cover.cover_triangle(tri, dlt, nhat)
        elif cfg.engine_cover == "spec":
            info = cover.aligned_isosceles_info(tri, nhat, cfg.tol_angle,
                                                require_aspect=cfg.delta)
            if info is not None:
                plan = cover.cover_isosceles(tri, cfg.delta, nhat)
            else:
                plan = cover.cover_triangle(tri, cfg.delta, nhat)
        else:
            info = cover.aligned_isosceles_info(tri, nhat, cfg.tol_angle)
            if info is not None:
                plan = cover.cover_isosceles(tri, info[3], nhat)
            else:
                plan = cover.cover_inscribed(tri, nhat)

        # state advance for covered children
        j_new = stage.j + 1
        if j_new >= m:
            j_new = 0
            l_new = m0 + 1 if stage.phase == inapprox.PHASE_UTILDE else stage.k + 1
            case_new = CASE_C2
        else:
            l_new = int(mesh.l[i])
            case_new = int(mesh.case_[i])
        q_new = int(mesh.q[i]) + 1

        if kh:
            led_bad, led_good, acg_good = kh_extra
        variant = "divfree" if kh else "generic"

        good_area_cell = 0.0
        per_good = 0.0
        per_c1 = 0.0
        per_rest = 0.0
        rank = 0
        for dia in plan.diamonds:
            bkey = (sp.lam, dia.delta, variant)
            blk = block_cache.get(bkey)
            if blk is None:
                blk = blocks.conti_block(sp.lam, dia.delta, variant)
                block_cache[bkey] = blk
            inst = blocks.instantiate(blk, dia.center, dia.r, dia.nhat, M, b,
                                      sp.A, sp.B)
            if faithful and check_faithful:
                _assert_faithful(inst, sp.target_stage, cfg)
            for ci in range(inst.verts.shape[0]):
                if kh:
                    led_child = led_bad if not inst.persistent[ci] else led_good
                    acg_child = acg if not inst.persistent[ci] else acg + acg_good
                else:
                    led_child, acg_child = None, 0.0
                acc.add(inst.verts[ci], inst.grad[ci], inst.offset[ci],
                        l_new, j_new, q_new, case_new, TAG_C, math.nan, math.nan,
                        i, rank, led_child, acg_child)
                rank += 1
            good_area_cell += dia.area
            per_good += 4.0 * dia.r * math.hypot(1.0, dia.delta)
        for piece in plan.remainder:
            acc.add(piece.verts, M, b, int(mesh.l[i]), int(mesh.j[i]),
                    int(mesh.q[i]), int(mesh.case_[i]), piece.tag, piece.theta,
                    piece.aspect, i, rank, led_row, acg)
            rank += 1
            p = float(np.sum(np.hypot(*(np.roll(piece.verts, -1, axis=0) - piece.verts).T)))
            if piece.tag == TAG_C1:
                per_c1 += p
            else:
                per_rest += p
        w_good += wgt * good_area_cell / par_area
        a_good += good_area_cell
        pper = float(perims[i])
        ratio_good = max(ratio_good, per_good / pper)
        ratio_c1 = max(ratio_c1, per_c1 / pper)
        ratio_rest = max(ratio_rest, per_rest / pper)
        ratio_total = max(ratio_total, (per_good + per_c1 + per_rest) / pper)
        if len(acc) > cfg.cell_budget:
            raise BudgetExceeded(len(acc))

    child = mesh_from_lists(
        generation=mesh.generation + 1,
        verts=acc.verts, grads=acc.grad, offsets=acc.off,
        l=acc.l, j=acc.j, q=acc.q, case_=acc.case_, tag=acc.tag,
        theta=acc.theta, aspect=acc.aspect, parent=acc.parent,
        child_rank=acc.rank,
        ledger=acc.ledger if kh else None,
        accum_good=acc.accg if kh else np.zeros(len(acc)),
        frozen=acc.frozen,
    )
    info = StepInfo(
        good_frac_weighted=w_good / w_tot if w_tot > 0 else 1.0,
        good_frac_area=a_good / a_tot if a_tot > 0 else 1.0,
        warn_stage=warn_stage, warn_frozen=warn_frozen,
        ratio_good=ratio_good, ratio_c1=ratio_c1, ratio_rest=ratio_rest,
        ratio_total=ratio_total,
    )
    state.history.append(child)
    state.step_info.append(info)
    return state


def _split_kh_full(M, stage, led_row, sign_policy, demo_tolerant):
    """Symmetric split + skew lift + per-branch ledger bookkeeping."""
    ks = inapprox.split_kh_sym(M, stage, demo_tolerant=demo_tolerant)
    w = 0.5 * (M - M.T)
    pair_idx = SkewLedger.pair_index(ks.pair[0], ks.pair[1])
    bad_coeff = min((1.0 - ks.lam) * abs(ks.coeff), 1.0)
    if sign_policy == "always_plus":
        sign = 1
        led_bad = SkewLedger(led_row).mu if led_row else (0.0,) * 6
        led_bad = tuple(led_bad)
        mu = list(led_bad)
        mu[pair_idx] = max(-1.0, min(1.0, mu[pair_idx] + bad_coeff))
        led_bad = tuple(mu)
    else:
        sign, upd = skew_sign(SkewLedger(led_row or (0.0,) * 6), pair_idx,
                              bad_coeff, "bad")
        led_bad = upd.mu
    M1, M2 = mat2.pull_up_skew(ks.e_tilde, ks.e_hat, w, ks.lam, sign)
    pair = mat2.factor_rank_one(M1 - M2)
    sp = inapprox.SplitResult(A=M2, B=M1, lam=ks.lam, dir=pair,
                              target_stage=ks.target_stage)
    acg_good = ks.lam * abs(ks.coeff) * SQRT6
    return sp, (led_bad, led_row or (0.0,) * 6, acg_good)


def _assert_faithful(inst, target_stage, cfg):
    from .inapprox import member_kh, member_o2

    member = member_kh if cfg.problem == "KH" else member_o2
    for ci in range(inst.verts.shape[0]):
        if not member(inst.grad[ci], target_stage):
            raise StageViolation(
                f"gradient left the target stage {target_stage} in faithful mode")


# ---------------------------------------------------------------------------
# run loop

def run(cfg: RunConfig, collect_metrics: bool = True):
    """Execute up to cfg.depth steps; returns (state, metrics rows).

    Stops early on BudgetExceeded (partial results stay valid) or once the
    area-median distance to the wells drops below cfg.median_stop.
    """
    from . import analysis

    state = init(cfg)
    rows = []
    if collect_metrics:
        rows.append(analysis.metrics_row(state, 0))
    for k in range(1, cfg.depth + 1):
        try:
            step(state)
        except BudgetExceeded:
            state.budget_exceeded = True
            break
        if collect_metrics:
            row = analysis.metrics_row(state, k)
            rows.append(row)
            if row["medianDistK"] < cfg.median_stop:
                break
    return state, rows
