"""Coded QR on the simulated grid.

The pipeline is: encode the input with vertical and horizontal checksums, run
parallel block modified Gram-Schmidt while failing and repairing nodes at
iteration boundaries, post-orthogonalize the retrieved factor with ``G0`` and
finally back-substitute.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .codec import build_generator_set, decode_erasures, tree_sum
from .densela import RANK_TOL, as_matrix, back_substitute
from .errors import (
    BadDimensions,
    ConditionViolated,
    DimensionMismatch,
    RankDeficient,
    UnrecoverableFailure,
)
from .gridsim import (
    ZERO,
    CostLedger,
    FaultSchedule,
    collective_reduce,
    distribute,
    gather,
    inject_failures,
    t_allreduce,
    t_broadcast,
    t_flops,
    t_lincomb,
    t_reduce,
)
from .codec import CONDITION_TOL, condition_residual


@dataclass
class CodedRun:
    """Everything produced by one simulated coded run."""

    config: object
    generators: object
    schedule: FaultSchedule
    ledger: CostLedger
    audit_log: list = field(default_factory=list)
    recovery_events: list = field(default_factory=list)
    state: object = None
    norm: float = 0.0
    q1: np.ndarray = None
    r1: np.ndarray = None
    qo: np.ndarray = None
    bo: np.ndarray = None
    x: np.ndarray = None

    def to_dict(self):
        out = {
            "config": {k: getattr(self.config, k) for k in
                       ("n", "p_r", "p_c", "f", "storage", "alpha", "beta", "gamma", "seed")},
            "fault_mode": self.schedule.mode,
            "audit": [{"t": t, "q_res": q, "r_res": r} for t, q, r in self.audit_log],
            "recovery": self.recovery_events,
            "ledger": {ph: {"alpha_count": a, "beta_words": b, "gamma_flops": g, "model_time": t}
                       for ph, a, b, g, t in self.ledger.to_rows()},
        }
        return out


# -- layout ------------------------------------------------------------------------


def new_run(A, config, generators=None, schedule=None):
    """Distribute `A` and lay out checksum slots for the chosen storage mode."""
    A = as_matrix(A, "A")
    gens = generators
    if gens is None:
        gens = build_generator_set(config.n, config.p_r, config.p_c, config.f,
                                   config.storage, seed=config.seed)
    state = distribute(A, config)
    p_r, p_c = config.p_r, config.p_c
    if gens.plan_v is not None:
        state.row_node = list(range(p_r)) + list(gens.plan_v.checksum_owner)
        state.col_node = list(range(p_c)) + list(gens.plan_h.checksum_owner)
    else:
        state.row_node = list(range(p_r + gens.m_r))
        state.col_node = list(range(p_c + gens.m_c))
    b = config.block
    for i in range(p_r):
        for J in range(p_c, state.cols):
            state.r[(i, J)] = np.zeros((b, b))
    ledger = CostLedger(config.params())
    return CodedRun(config, gens, schedule or FaultSchedule.none(), ledger, state=state)


def _check_generators(config, gens):
    if gens.gv_tilde.shape[1] != config.p_r or gens.gh_tilde.shape[0] != config.p_c:
        raise DimensionMismatch(
            f"generators {gens.gv_tilde.shape}/{gens.gh_tilde.shape} do not fit a "
            f"{config.p_r}x{config.p_c} grid")
    if gens.block_v != config.block or gens.block_h != config.n // config.p_c:
        raise DimensionMismatch("generator block size does not match n/p")


# -- encoding ------------------------------------------------------------------------


def encode(run):
    """Append ``A G_h``, ``G_v A`` and the corner ``G_v A G_h`` to the grid."""
    cfg, gens, st, ledger = run.config, run.generators, run.state, run.ledger
    _check_generators(cfg, gens)
    p_r, p_c = cfg.p_r, cfg.p_c
    gv, gh = gens.gv_tilde, gens.gh_tilde
    m_r, m_c = gens.m_r, gens.m_c

    branches = []
    for i in range(p_r):
        br = ledger.branch()
        group = [st.node_of(i, j) for j in range(p_c)]
        blocks = [st.q[(i, j)] for j in range(p_c)]
        for k in range(m_c):
            st.q[(i, p_c + k)] = collective_reduce(br, "enc_h", group, blocks, gh[:, k],
                                                   state=st, lincomb=True)
        branches.append(br)
    ledger.merge_max(branches)

    if m_r:
        # forming G1 = -V V^T / 2
        ledger.charge("enc", t_flops(m_r * (m_r + 1) * (p_r - m_r), ledger.params))
    branches = []
    for J in range(st.cols):
        br = ledger.branch()
        group = [st.node_of(i, J) for i in range(p_r)]
        blocks = [st.q[(i, J)] for i in range(p_r)]
        for k in range(m_r):
            st.q[(p_r + k, J)] = collective_reduce(br, "enc", group, blocks, gv[k],
                                                   state=st, lincomb=True)
        branches.append(br)
    ledger.merge_max(branches)
    run.norm = float(np.linalg.norm(gather(st)))
    return st


# -- audits --------------------------------------------------------------------------


def audit_checksums(run):
    """Relative residuals of ``Q2 = G_v Q1`` and ``R2 = R1 G_h`` on the current state."""
    cfg, gens, st = run.config, run.generators, run.state
    p_r, p_c = cfg.p_r, cfg.p_c
    Qa = gather(st, "q")
    Ra = gather(st, "r")
    nr = p_r * gens.block_v
    nc = p_c * gens.block_h
    q1, q2 = Qa[:nr], Qa[nr:]
    r1, r2 = Ra[:, :nc], Ra[:, nc:]
    q_res = np.linalg.norm(q2 - gens.expand_v() @ q1) / max(1.0, np.linalg.norm(q1))
    r_res = np.linalg.norm(r2 - r1 @ gens.expand_h()) / max(1.0, np.linalg.norm(r1))
    return float(q_res), float(r_res)


# -- recovery ------------------------------------------------------------------------


def _lincomb_combiner(ledger, phase):
    def combine(blocks, coeffs):
        return collective_reduce(ledger, phase, list(range(len(blocks))), blocks, coeffs,
                                 lincomb=True)
    return combine


def recover(run, failed):
    """Rebuild every block lost on `failed` nodes, then mark the nodes alive.

    Q blocks are decoded per extended block column with the vertical code,
    R blocks per block row with the horizontal code. Columns (rows) are
    repaired concurrently, so each ledger phase is charged its costliest one.
    """
    cfg, gens, st, ledger = run.config, run.generators, run.state, run.ledger
    p_r, p_c = cfg.p_r, cfg.p_c
    gv, gh = gens.gv_tilde, gens.gh_tilde
    event = {"t": st.t, "failed": sorted(failed), "f1": 0, "f2": 0, "time": 0.0, "time_h": 0.0}
    if not failed:
        return event
    branches = []
    for J in range(st.cols):
        data = [st.q.get((i, J)) for i in range(p_r)]
        checks = [st.q.get((p_r + k, J)) for k in range(gens.m_r)]
        f1 = sum(d is None for d in data)
        f2 = sum(c is None for c in checks)
        if not (f1 or f2):
            continue
        br = ledger.branch()
        if f1:
            br.charge("recov", t_flops(2.0 * f1 ** 3 / 3.0 + f1 ** 2, ledger.params))
        data, checks, _ = decode_erasures(gv, data, checks, _lincomb_combiner(br, "recov"))
        for i in range(p_r):
            st.q[(i, J)] = data[i]
        for k in range(gens.m_r):
            st.q[(p_r + k, J)] = checks[k]
        event["f1"] = max(event["f1"], f1)
        event["f2"] = max(event["f2"], f2)
        branches.append(br)
    best = ledger.merge_max(branches)
    event["time"] = best.total_time() if best is not None else 0.0

    branches = []
    ght = gh.T
    for i in range(p_r):
        data = [st.r.get((i, j)) for j in range(p_c)]
        checks = [st.r.get((i, p_c + k)) for k in range(gens.m_c)]
        f1 = sum(d is None for d in data)
        if not (f1 or any(c is None for c in checks)):
            continue
        br = ledger.branch()
        if f1:
            br.charge("recov_h", t_flops(2.0 * f1 ** 3 / 3.0 + f1 ** 2, ledger.params))
        data, checks, _ = decode_erasures(ght, data, checks, _lincomb_combiner(br, "recov_h"))
        for j in range(p_c):
            st.r[(i, j)] = data[j]
        for k in range(gens.m_c):
            st.r[(i, p_c + k)] = checks[k]
        branches.append(br)
    best = ledger.merge_max(branches)
    event["time_h"] = best.total_time() if best is not None else 0.0
    st.failed = set()
    run.recovery_events.append(event)
    return event


# -- PBMGS ---------------------------------------------------------------------------


def iteration_charge(params, group, rows_local, b, bcast_group, trail_local):
    """Model cost of one PBMGS iteration.

    `group` nodes share a block column, the busiest of them holds `rows_local`
    block rows, and the Q panel is broadcast to `bcast_group` nodes of a row,
    each updating at most `trail_local` trailing block columns.
    """
    c = ZERO
    for i in range(b):
        c = c + t_allreduce(group, 1, params) + t_flops(3.0 * b * rows_local, params)
        rest = b - i - 1
        if rest:
            c = c + t_allreduce(group, rest, params) + t_flops(4.0 * b * rest * rows_local, params)
    if trail_local:
        w = b * b
        c = c + t_broadcast(bcast_group, rows_local * w, params)
        c = c + t_flops(2.0 * b ** 3 * rows_local * trail_local, params)
        c = c + t_allreduce(group, trail_local * w, params)
        c = c + t_flops(2.0 * b ** 3 * rows_local * trail_local, params)
    return c


def baseline_iteration_charge(params, p, b, t):
    """Iteration cost of the same PBMGS on the uncoded p x p grid."""
    trail = p - t - 1
    return iteration_charge(params, p, 1, b, trail + 1 if trail else 1, 1 if trail else 0)


def _coded_iteration_charge(run, t):
    st = run.state
    col_rows = {}
    for i in range(st.rows):
        col_rows[st.row_node[i]] = col_rows.get(st.row_node[i], 0) + 1
    trail = list(range(t + 1, st.cols))
    per_col = {}
    for J in trail:
        per_col[st.col_node[J]] = per_col.get(st.col_node[J], 0) + 1
    bgroup = len(set(per_col) | {st.col_node[t]})
    return iteration_charge(run.ledger.params, len(col_rows), max(col_rows.values()), st.b,
                            bgroup, max(per_col.values()) if per_col else 0)


def _panel(run, t):
    st = run.state
    b = st.b
    tol = RANK_TOL * run.norm
    blocks = [st.q[(i, t)] for i in range(st.rows)]
    rtt = np.zeros((b, b))
    for i in range(b):
        s = float(tree_sum([np.dot(blk[:, i], blk[:, i]) for blk in blocks]))
        rii = math.sqrt(s) if s > 0 else 0.0
        if not rii > tol:
            raise RankDeficient(f"r[{t * b + i},{t * b + i}] = {rii:.3e} <= {tol:.3e}")
        for blk in blocks:
            blk[:, i] /= rii
        rtt[i, i] = rii
        if i + 1 < b:
            proj = tree_sum([blk[:, i] @ blk[:, i + 1:] for blk in blocks])
            rtt[i, i + 1:] = proj
            for blk in blocks:
                blk[:, i + 1:] -= np.outer(blk[:, i], proj)
    st.r[(t, t)] = rtt


def _update(run, t):
    st = run.state
    qbar = [st.q[(i, t)] for i in range(st.rows)]
    for J in range(t + 1, st.cols):
        rbar = tree_sum([qbar[i].T @ st.q[(i, J)] for i in range(st.rows)])
        st.r[(t, J)] = rbar
        for i in range(st.rows):
            st.q[(i, J)] -= qbar[i] @ rbar


def _check_failures(run, failed):
    st = run.state
    rows, cols = st.node_shape
    for node in failed:
        if not (0 <= node[0] < rows and 0 <= node[1] < cols):
            raise BadDimensions(f"failed node {node} is outside the {rows}x{cols} node grid")
    if not run.schedule.check(failed, run.config.f):
        raise UnrecoverableFailure(
            f"iteration {st.t}: more than f={run.config.f} failures in a grid row or column")


def run_pbmgs(run, audit=False):
    """Factor the encoded grid block column by block column.

    Before each iteration the scheduled nodes fail and are repaired. Each
    iteration charges the uncoded PBMGS cost to ``qr`` and the extra cost of
    the checksum rows/columns to ``comp``.
    """
    cfg, st, ledger = run.config, run.state, run.ledger
    if audit:
        run.audit_log.append((0,) + audit_checksums(run))
    for t in range(cfg.p_c):
        st.t = t
        failed = run.schedule.failures_at(t)
        if failed:
            _check_failures(run, failed)
            inject_failures(st, run.schedule, t)
            recover(run, failed)
        _panel(run, t)
        _update(run, t)
        base = baseline_iteration_charge(ledger.params, cfg.p_c, st.b, t)
        coded = _coded_iteration_charge(run, t)
        ledger.charge("qr", base)
        ledger.charge("comp", coded - base)
        if audit:
            run.audit_log.append((t + 1,) + audit_checksums(run))
    st.t = cfg.p_c
    p = cfg.p_r
    run.q1 = gather(st, "q", rows=range(p), cols=range(cfg.p_c))
    run.r1 = np.triu(gather(st, "r", rows=range(p), cols=range(cfg.p_c)))
    return run.q1, run.r1


# -- post-orthogonalization ----------------------------------------------------------


def post_orthogonalize(q1, rhs, gens, ledger=None):
    """Return ``(G0 Q1, G0 rhs)`` computed blockwise without forming ``G0``.

    Every block column runs the same scheme concurrently: broadcast the first
    m block rows down the column, form the lower block rows locally, and
    reduce the upper block rows.
    """
    q1 = np.asarray(q1, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    vec = rhs.ndim == 1
    Z = np.hstack([q1, rhs.reshape(q1.shape[0], -1)])
    m = gens.m_r
    p = gens.p_r
    b = gens.block_v
    if m == 0:
        return q1.copy(), rhs.copy()
    resid = condition_residual(gens.gv_tilde)
    if resid > CONDITION_TOL:
        raise ConditionViolated(f"|G1 + V V^T/2|_max = {resid:.3e}")
    g1, v = gens.compact_v.g1, gens.compact_v.v
    zb = [Z[i * b:(i + 1) * b] for i in range(p)]
    W = [None] * p
    for i in range(m, p):
        W[i] = tree_sum([-zb[i]] + [v[k, i - m] * zb[k] for k in range(m)])
    for i in range(m):
        local = tree_sum([zb[i]] + [g1[i, k] * zb[k] for k in range(m)])
        remote = tree_sum([v[i, l - m] * zb[l] for l in range(m, p)])
        W[i] = local + remote
    out = np.vstack(W)
    if ledger is not None:
        w = b * (b + 1)
        for _ in range(m):
            ledger.charge("post", t_broadcast(p, w, ledger.params))
        ledger.charge("post", t_flops((2 * m - 1) * w, ledger.params))
        for _ in range(m):
            ledger.charge("post", t_reduce(p - m + 1, w, ledger.params))
    qo = out[:, :q1.shape[1]]
    bo = out[:, q1.shape[1]:]
    return qo, (bo.ravel() if vec else bo)


# -- drivers -------------------------------------------------------------------------


def factorize(A, config, schedule=None, generators=None, audit=False):
    """Encode, factor and retrieve ``(Q1, R1)``; returns the :class:`CodedRun`."""
    run = new_run(A, config, generators, schedule)
    encode(run)
    run_pbmgs(run, audit=audit)
    return run


def solve(A, b, config, schedule=None, generators=None, audit=False, return_run=False):
    """Solve ``A x = b`` through the coded pipeline.

    ``x`` solves ``R1 x = (G0 Q1)^T (G0 b)``.
    """
    A = as_matrix(A, "A")
    rhs = np.asarray(b, dtype=np.float64)
    if rhs.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"b has {rhs.shape[0]} rows, A has {A.shape[0]}")
    if not np.all(np.isfinite(rhs)):
        raise BadDimensions("b contains NaN or Inf entries")
    run = factorize(A, config, schedule, generators, audit)
    run.qo, run.bo = post_orthogonalize(run.q1, rhs, run.generators, run.ledger)
    run.x = back_substitute(run.r1, run.qo.T @ run.bo)
    return run if return_run else run.x
