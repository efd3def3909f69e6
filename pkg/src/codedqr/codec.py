"""Checksum generators over the reals.

Builds the vertical (Q-protecting) and horizontal (R-protecting) compact
generators, their Kronecker expansions, the post-orthogonalization matrix
``G0``, an exhaustive MDS checker, and the in-node checksum layout/recovery
machinery.
"""
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadDimensions,
    BadFailureBudget,
    ConditionViolated,
    EnumerationTooLarge,
    IndivisibleLoad,
    SingularRecovery,
    TooManyFailures,
)

CONDITION_TOL = 1e-12
SVD_TOL = 1e-10
ENUMERATION_CAP = 2_000_000
WITNESS_MAX_NODES = 8


@dataclass(frozen=True)
class CompactGenerator:
    """A compact generator ``g_tilde`` before Kronecker expansion.

    Vertical generators are ``m_r x p_r`` and protect Q; horizontal ones are
    ``p_c x m_c`` and protect R.
    """

    g_tilde: np.ndarray
    kind: str
    f: int
    seed: object = None

    def __post_init__(self):
        if self.kind not in ("vertical", "horizontal"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if not np.all(np.isfinite(self.g_tilde)):
            raise BadDimensions("generator contains NaN or Inf entries")

    @property
    def checksums(self):
        """Number of checksum blocks per column (vertical) or row (horizontal)."""
        g = self.g_tilde
        return g.shape[0] if self.kind == "vertical" else g.shape[1]

    @property
    def g1(self):
        m = self.g_tilde.shape[0]
        return self.g_tilde[:, :m]

    @property
    def v(self):
        m = self.g_tilde.shape[0]
        return self.g_tilde[:, m:]


def condition_residual(g_tilde):
    """Max-abs violation of ``G1 = -1/2 V V^T`` for a vertical generator."""
    g = np.asarray(g_tilde, dtype=np.float64)
    m = g.shape[0]
    if g.shape[1] < m:
        raise BadDimensions(f"generator {g.shape} has no square left block")
    v = g[:, m:]
    if m == 0:
        return 0.0
    return float(np.max(np.abs(g[:, :m] + 0.5 * v @ v.T)))


def build_q_generator(p_r, f, seed=None, v_tilde=None):
    """Semi-random vertical generator ``[-1/2 V V^T | V]`` of shape f x p_r.

    `V` is drawn iid Unif(0, 1) from `seed` unless `v_tilde` is given
    explicitly (useful for reproducing hand-worked cases).
    """
    p_r, f = int(p_r), int(f)
    if f < 1 or 2 * f > p_r:
        raise BadFailureBudget(f"need 1 <= f <= p_r/2, got f={f}, p_r={p_r}")
    if v_tilde is None:
        v = np.random.default_rng(seed).random((f, p_r - f))
    else:
        v = np.array(v_tilde, dtype=np.float64).reshape(f, p_r - f)
    g = np.empty((f, p_r))
    g[:, :f] = -0.5 * (v @ v.T)
    g[:, f:] = v
    return CompactGenerator(g, "vertical", f, seed)


def build_r_generator(p_c, m_c):
    """Deterministic MDS horizontal generator: a real p_c x m_c Cauchy matrix."""
    p_c, m_c = int(p_c), int(m_c)
    if m_c < 1 or m_c > p_c:
        raise BadDimensions(f"need 1 <= m_c <= p_c, got m_c={m_c}, p_c={p_c}")
    x = np.arange(p_c, dtype=np.float64)[:, None]
    y = p_c + np.arange(m_c, dtype=np.float64)[None, :] + 0.5
    return CompactGenerator(1.0 / (x + y), "horizontal", m_c)


def expand_kronecker(g_tilde, block):
    """``g_tilde (x) I_block``."""
    block = int(block)
    if block < 1:
        raise BadDimensions(f"block must be >= 1, got {block}")
    return np.kron(np.asarray(g_tilde, dtype=np.float64), np.eye(block))


def build_g0(compact_v, n, p_r):
    """Dense post-orthogonalization matrix ``[[I + G1, V], [V^T, -I]]``."""
    g = compact_v.g_tilde if isinstance(compact_v, CompactGenerator) else np.asarray(compact_v)
    n, p_r = int(n), int(p_r)
    if n % p_r:
        raise BadDimensions(f"p_r={p_r} does not divide n={n}")
    if g.shape[1] != p_r:
        raise BadDimensions(f"generator has {g.shape[1]} columns, expected p_r={p_r}")
    resid = condition_residual(g)
    if resid > CONDITION_TOL:
        raise ConditionViolated(f"|G1 + V V^T/2|_max = {resid:.3e}")
    b = n // p_r
    m = g.shape[0]
    c = m * b
    if c >= n:
        raise BadDimensions(f"checksum rows c={c} must be < n={n}")
    g0 = np.zeros((n, n))
    g0[:c, :c] = np.eye(c) + np.kron(g[:, :m], np.eye(b))
    vbig = np.kron(g[:, m:], np.eye(b))
    g0[:c, c:] = vbig
    g0[c:, :c] = vbig.T
    g0[c:, c:] = -np.eye(n - c)
    return g0


# -- MDS check ---------------------------------------------------------------


@dataclass
class MdsReport:
    is_mds: bool
    min_det: float
    max_cond: float
    worst_submatrix: tuple
    checked: int

    def to_dict(self):
        rows, cols = self.worst_submatrix
        return {
            "is_mds": bool(self.is_mds),
            "min_det": _json_float(self.min_det),
            "max_cond": _json_float(self.max_cond),
            "worst_submatrix": {"rows": list(rows), "cols": list(cols)},
            "checked": int(self.checked),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def count_square_submatrices(rows, cols):
    return sum(math.comb(rows, s) * math.comb(cols, s) for s in range(1, min(rows, cols) + 1))


def check_mds(g_tilde, cap=ENUMERATION_CAP, chunk=50_000):
    """Enumerate every square submatrix and judge it full-rank by SVD.

    A submatrix ``S`` of size s counts as full-rank when
    ``sigma_min(S) > 1e-10 * max|S| * s``.
    """
    g = np.asarray(g_tilde, dtype=np.float64)
    if g.ndim != 2:
        raise BadDimensions("generator must be 2-D")
    nr, nc = g.shape
    total = count_square_submatrices(nr, nc)
    if total > cap:
        raise EnumerationTooLarge(f"{total} square submatrices exceeds cap {cap}")

    is_mds = True
    min_det, max_cond = math.inf, 0.0
    worst, worst_det, failing = ((), ()), math.inf, None
    for s in range(1, min(nr, nc) + 1):
        row_sets = np.array(list(itertools.combinations(range(nr), s)), dtype=np.intp)
        col_sets = np.array(list(itertools.combinations(range(nc), s)), dtype=np.intp)
        pairs = np.array(list(itertools.product(range(len(row_sets)), range(len(col_sets)))),
                         dtype=np.intp)
        for start in range(0, len(pairs), chunk):
            pr = pairs[start:start + chunk]
            ri, ci = row_sets[pr[:, 0]], col_sets[pr[:, 1]]
            sub = g[ri[:, :, None], ci[:, None, :]]
            sv = np.linalg.svd(sub, compute_uv=False)
            smax, smin = sv[:, 0], sv[:, -1]
            scale = np.max(np.abs(sub), axis=(1, 2)) * s
            ok = smin > SVD_TOL * scale
            dets = np.abs(np.linalg.det(sub))
            with np.errstate(divide="ignore"):
                conds = np.where(smin > 0, smax / np.where(smin > 0, smin, 1.0), np.inf)
            if not ok.all():
                is_mds = False
                if failing is None:
                    k = int(np.flatnonzero(~ok)[0])
                    failing = (tuple(ri[k].tolist()), tuple(ci[k].tolist()))
            k = int(np.argmin(dets))
            if dets[k] < worst_det:
                worst_det = float(dets[k])
                worst = (tuple(ri[k].tolist()), tuple(ci[k].tolist()))
            min_det = min(min_det, float(dets.min()))
            max_cond = max(max_cond, float(conds.max()))
    if total == 0:
        min_det = math.nan
    return MdsReport(is_mds, min_det, max_cond, failing or worst, total)


def random_counterpart(compact_v, seed=None):
    """Same ``V`` as `compact_v` but with the left block drawn iid Unif(0, 1)."""
    g = np.array(compact_v.g_tilde, copy=True)
    m = g.shape[0]
    g[:, :m] = np.random.default_rng(seed).random((m, m))
    return g


# -- in-node checksum storage ------------------------------------------------


def innode_min_checksums(L, P, f):
    """Smallest checksum-block count tolerating any f of P failed nodes."""
    L, P, f = int(L), int(P), int(f)
    if P < 1 or L < 1:
        raise BadDimensions(f"need L, P >= 1, got L={L}, P={P}")
    if L % P:
        raise IndivisibleLoad(f"P={P} does not divide L={L}")
    if f < 0 or f >= P:
        raise BadFailureBudget(f"need 0 <= f < P, got f={f}, P={P}")
    if f == 0:
        return 0
    per_node = L // P
    return f * per_node + f * -(-(f * L) // ((P - f) * P))


@dataclass
class InNodePlan:
    L: int
    P: int
    f: int
    K: int
    checksum_owner: tuple
    data_owner: tuple
    g_tilde: np.ndarray = field(default=None, repr=False)

    def data_blocks_of(self, node):
        return [j for j, p in enumerate(self.data_owner) if p == node]

    def checksums_of(self, node):
        return [i for i, p in enumerate(self.checksum_owner) if p == node]

    def checksum_counts(self):
        return [self.checksum_owner.count(p) for p in range(self.P)]


def innode_layout(L, P, f, K=None):
    """Load-balanced placement: extra checksums go to the lowest-indexed nodes.

    `K` defaults to :func:`innode_min_checksums`; pass it explicitly to study
    under-provisioned layouts.
    """
    K_min = innode_min_checksums(L, P, f)
    K = K_min if K is None else int(K)
    if K < 0:
        raise BadDimensions(f"K must be >= 0, got {K}")
    lo, extra = divmod(K, P)
    owners = []
    for p in range(P):
        owners.extend([p] * (lo + (1 if p < extra else 0)))
    data_owner = tuple(j % P for j in range(L))
    return InNodePlan(L, P, f, K, tuple(owners), data_owner)


def innode_attach_generator(plan, seed=None, q_factor=False):
    """Return a copy of `plan` carrying a K x L generator.

    For R protection each checksum excludes the data of the node storing it.
    For Q protection the left K x K block is set to ``-1/2 V V^T`` and the
    full (non-excluding) encoding is kept so that block stays exact.
    """
    K, L = plan.K, plan.L
    g = np.random.default_rng(seed).random((K, L))
    if q_factor:
        if K >= L:
            raise BadFailureBudget(f"Q-factor in-node code needs K < L, got K={K}, L={L}")
        v = g[:, K:]
        g[:, :K] = -0.5 * (v @ v.T)
    else:
        for i, owner in enumerate(plan.checksum_owner):
            for j in plan.data_blocks_of(owner):
                g[i, j] = 0.0
    return InNodePlan(plan.L, plan.P, plan.f, K, plan.checksum_owner, plan.data_owner, g)


def tree_sum(blocks):
    """Sum in a fixed left-balanced binary tree order."""
    if len(blocks) == 1:
        return np.array(blocks[0], dtype=np.float64, copy=True)
    mid = (len(blocks) + 1) // 2
    return tree_sum(blocks[:mid]) + tree_sum(blocks[mid:])


def _default_combine(blocks, coeffs):
    return tree_sum([c * blk for c, blk in zip(coeffs, blocks)])


def decode_erasures(g, data, checks, combine=None):
    """Restore lost data and checksum blocks of one code word.

    ``checks[k] = sum_j g[k, j] * data[j]``; lost entries are ``None``.
    Lost data are rebuilt from a square subsystem of surviving checksums and
    lost checksums are then re-encoded. Each rebuilt block is one call to
    ``combine(blocks, coeffs)``.

    Returns the completed ``(data, checks)`` lists and a dict with the
    systematic/checksum loss counts ``f1``/``f2``.
    """
    combine = combine or _default_combine
    g = np.asarray(g, dtype=np.float64)
    data, checks = list(data), list(checks)
    lost_d = [j for j, d in enumerate(data) if d is None]
    lost_c = [k for k, c in enumerate(checks) if c is None]
    alive_d = [j for j, d in enumerate(data) if d is not None]
    alive_c = [k for k, c in enumerate(checks) if c is not None]
    if lost_d:
        if len(alive_c) < len(lost_d):
            raise TooManyFailures(
                f"{len(lost_d)} lost data blocks but only {len(alive_c)} surviving checksums")
        # best-conditioned square subsystem of surviving checksums (first wins ties)
        best = None
        for cand in itertools.combinations(alive_c, len(lost_d)):
            s = np.linalg.svd(g[np.ix_(cand, lost_d)], compute_uv=False)
            score = s[-1] / s[0] if s[0] > 0 else 0.0
            if best is None or score > best[0]:
                best = (score, list(cand))
        rows = best[1]
        ghat = g[np.ix_(rows, lost_d)]
        sv = np.linalg.svd(ghat, compute_uv=False)
        if not sv[-1] > SVD_TOL * sv[0]:
            raise SingularRecovery(f"checksum subsystem rows={rows} cols={lost_d} is singular")
        ginv = np.linalg.inv(ghat)
        # D_fail = Ginv C_sel - (Ginv G_succ) D_succ
        coeff_succ = -ginv @ g[np.ix_(rows, alive_d)]
        sources = [checks[k] for k in rows] + [data[j] for j in alive_d]
        for a, j in enumerate(lost_d):
            coeffs = np.concatenate([ginv[a], coeff_succ[a]])
            data[j] = combine(sources, coeffs)
    for k in lost_c:
        data_now = list(data)
        checks[k] = combine(data_now, g[k])
    return data, checks, {"f1": len(lost_d), "f2": len(lost_c)}


def innode_recover(plan, data_blocks, checksum_blocks, failed_nodes):
    """Rebuild the data blocks held by `failed_nodes`.

    Blocks owned by a failed node are treated as lost whatever value is
    passed in. Returns ``{data_index: block}`` for the lost data blocks.
    """
    if plan.g_tilde is None:
        raise ValueError("plan has no generator attached")
    failed = set(int(p) for p in failed_nodes)
    if len(failed) > plan.f:
        raise TooManyFailures(f"{len(failed)} failed nodes exceeds budget f={plan.f}")
    if not failed:
        return {}
    data = [None if plan.data_owner[j] in failed else data_blocks[j] for j in range(plan.L)]
    checks = [None if plan.checksum_owner[k] in failed else checksum_blocks[k]
              for k in range(plan.K)]
    lost = [j for j, d in enumerate(data) if d is None]
    # Lost checksums are not re-encoded here; only data is requested.
    g = plan.g_tilde
    alive_c = [k for k, c in enumerate(checks) if c is not None]
    restored, _, _ = decode_erasures(g[alive_c], data, [checks[k] for k in alive_c])
    return {j: restored[j] for j in lost}


def innode_bound_witness(L, P, f, K):
    """Search every f-subset of failed nodes for a counting violation.

    Returns ``{"recoverable": bool, "witness": tuple or None}`` where the
    witness is a failure set leaving fewer surviving checksums than lost data
    blocks under load-balanced placement.
    """
    L, P, f, K = int(L), int(P), int(f), int(K)
    if P > WITNESS_MAX_NODES:
        raise EnumerationTooLarge(f"exhaustive witness search supports P <= {WITNESS_MAX_NODES}")
    if L % P:
        raise IndivisibleLoad(f"P={P} does not divide L={L}")
    if f < 0 or f >= P:
        raise BadFailureBudget(f"need 0 <= f < P, got f={f}, P={P}")
    plan = innode_layout(L, P, f, K=K)
    counts = plan.checksum_counts()
    lost = f * L // P
    for failed in itertools.combinations(range(P), f):
        surviving = K - sum(counts[p] for p in failed)
        if surviving < lost:
            return {"recoverable": False, "witness": failed}
    return {"recoverable": True, "witness": None}


# -- generator bundles used by the coded pipeline ----------------------------


@dataclass
class GeneratorSet:
    """Vertical and horizontal generators for one coded run.

    ``compact_v`` is ``m_r x p_r`` and ``compact_h`` is ``p_c x m_c``; both are
    absent when no failures are tolerated. In-node runs also carry the plans
    that place each checksum block on a node.
    """

    compact_v: CompactGenerator
    compact_h: CompactGenerator
    block_v: int
    block_h: int
    p_r: int
    p_c: int
    plan_v: InNodePlan = None
    plan_h: InNodePlan = None
    _g0: np.ndarray = field(default=None, repr=False)

    @property
    def gv_tilde(self):
        if self.compact_v is None:
            return np.zeros((0, self.p_r))
        return self.compact_v.g_tilde

    @property
    def gh_tilde(self):
        if self.compact_h is None:
            return np.zeros((self.p_c, 0))
        return self.compact_h.g_tilde

    @property
    def m_r(self):
        return self.gv_tilde.shape[0]

    @property
    def m_c(self):
        return self.gh_tilde.shape[1]

    def expand_v(self):
        return expand_kronecker(self.gv_tilde, self.block_v)

    def expand_h(self):
        return expand_kronecker(self.gh_tilde, self.block_h)

    @property
    def g0(self):
        if self._g0 is None:
            n = self.block_v * self.p_r
            if self.compact_v is None:
                self._g0 = np.eye(n)
            else:
                self._g0 = build_g0(self.compact_v, n, self.p_r)
        return self._g0


def build_generator_set(n, p_r, p_c, f, storage="out-of-node", seed=None):
    """Generators for an n x n problem on a p_r x p_c grid tolerating f failures."""
    n, p_r, p_c, f = int(n), int(p_r), int(p_c), int(f)
    if n % p_r or n % p_c:
        raise BadDimensions(f"grid {p_r}x{p_c} does not divide n={n}")
    if f == 0:
        return GeneratorSet(None, None, n // p_r, n // p_c, p_r, p_c)
    if storage == "out-of-node":
        cv = build_q_generator(p_r, f, seed)
        ch = build_r_generator(p_c, f)
        return GeneratorSet(cv, ch, n // p_r, n // p_c, p_r, p_c)
    if storage == "in-node":
        K = innode_min_checksums(p_r, p_r, f)
        if p_r - K < f:
            # G1 = -VV^T/2 has rank p_r - K; below f some f-column erasure
            # patterns become undecodable.
            raise BadFailureBudget(
                f"in-node Q protection needs p_r - K >= f (got p_r={p_r}, K={K}, f={f})")
        base = 0 if seed is None else int(seed)
        plan_v = innode_attach_generator(innode_layout(p_r, p_r, f), [base, 0], q_factor=True)
        plan_h = innode_attach_generator(innode_layout(p_c, p_c, f), [base, 1], q_factor=False)
        cv = CompactGenerator(plan_v.g_tilde, "vertical", f, seed)
        ch = CompactGenerator(np.ascontiguousarray(plan_h.g_tilde.T), "horizontal", f, seed)
        return GeneratorSet(cv, ch, n // p_r, n // p_c, p_r, p_c, plan_v, plan_h)
    raise BadDimensions(f"unknown storage mode {storage!r}")


def export_csv(g_tilde, path):
    """Write a generator matrix as CSV with 17 significant digits."""
    g = np.atleast_2d(np.asarray(g_tilde, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        for row in g:
            fh.write(",".join(format(x, ".17g") for x in row) + "\n")
