"""Deterministic processor-grid simulator under the alpha-beta-gamma model.

Nothing here measures wall-clock time. Every collective charges a closed-form
model cost to a :class:`CostLedger`, and the ledger totals are the timing
output of a simulated run.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .codec import tree_sum
from .errors import BadDimensions, BadFailureBudget, DeadParticipant, DimensionMismatch

STORAGE_MODES = ("out-of-node", "in-node")
PHASES = ("qr", "enc", "enc_h", "recov", "recov_h", "post", "comp")


@dataclass(frozen=True)
class GridConfig:
    n: int
    p_r: int
    p_c: int
    f: int = 0
    storage: str = "out-of-node"
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        n, p_r, p_c, f = self.n, self.p_r, self.p_c, self.f
        if min(n, p_r, p_c) < 1:
            raise BadDimensions(f"n, p_r, p_c must be positive, got {n}, {p_r}, {p_c}")
        if p_r != p_c:
            raise BadDimensions(f"square grids only, got {p_r}x{p_c}")
        if n % p_r:
            raise BadDimensions(f"p_r={p_r} does not divide n={n}")
        if f < 0 or 2 * f > min(p_r, p_c):
            raise BadFailureBudget(f"failure budget needs 0 <= f <= min(p_r, p_c)/2, got f={f}")
        if self.storage not in STORAGE_MODES:
            raise BadDimensions(f"storage must be one of {STORAGE_MODES}, got {self.storage!r}")
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise BadDimensions(f"{name} must be a finite nonnegative real, got {v}")

    @property
    def block(self):
        return self.n // self.p_r

    @property
    def P(self):
        return self.p_r * self.p_c

    def params(self):
        return CostParams(self.alpha, self.beta, self.gamma)


@dataclass(frozen=True)
class CostParams:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0


# -- charges and the ledger --------------------------------------------------


@dataclass(frozen=True)
class Charge:
    """One closed-form cost: counts plus the resulting model time.

    ``time`` equals ``alpha*a + beta*w + gamma*g`` except for broadcasts, whose
    closed form carries a pipelining cross term ``2*sqrt(alpha*a*beta*w)``.
    """

    alpha_count: float = 0.0
    beta_words: float = 0.0
    gamma_flops: float = 0.0
    time: float = 0.0

    def __add__(self, other):
        return Charge(self.alpha_count + other.alpha_count,
                      self.beta_words + other.beta_words,
                      self.gamma_flops + other.gamma_flops,
                      self.time + other.time)

    def __sub__(self, other):
        return Charge(self.alpha_count - other.alpha_count,
                      self.beta_words - other.beta_words,
                      self.gamma_flops - other.gamma_flops,
                      self.time - other.time)

    def scaled(self, k):
        return Charge(k * self.alpha_count, k * self.beta_words, k * self.gamma_flops, k * self.time)


ZERO = Charge()


def ceil_log2(p):
    return (int(p) - 1).bit_length() if p > 1 else 0


def t_broadcast(p, w, params):
    """``(sqrt(alpha (ceil(log p) - 1)) + sqrt(beta w))^2``, latency clamped at 0."""
    a = max(0, ceil_log2(p) - 1)
    time = (math.sqrt(params.alpha * a) + math.sqrt(params.beta * w)) ** 2
    return Charge(a, w, 0.0, time)


def t_reduce(p, w, params):
    """``2 alpha log p + 2 beta (p-1)/p w + gamma (p-1)/p w``."""
    a = 2.0 * math.log2(p)
    frac = (p - 1) / p
    b, g = 2.0 * frac * w, frac * w
    return Charge(a, b, g, params.alpha * a + params.beta * b + params.gamma * g)


t_allreduce = t_reduce


def t_flops(g, params):
    return Charge(0.0, 0.0, g, params.gamma * g)


def t_lincomb(p, w, params):
    """Reduce of p scaled blocks to one extra destination: ``T_reduce(p+1, w) + gamma w``."""
    return t_reduce(p + 1, w, params) + t_flops(w, params)


class CostLedger:
    """Ordered per-phase list of charges.

    Totals are formed with :func:`math.fsum`, so two ledgers holding the same
    multiset of charges agree bit-for-bit regardless of charge order.
    """

    def __init__(self, params=None):
        self.params = params or CostParams()
        self.entries = {ph: [] for ph in PHASES}

    def charge(self, phase, c):
        if phase not in self.entries:
            raise KeyError(f"unknown phase {phase!r}")
        self.entries[phase].append(c)
        return c

    def extend(self, phase, charges):
        for c in charges:
            self.charge(phase, c)

    def merge_max(self, branches):
        """Charge the most expensive of several concurrently running branches."""
        best = None
        for br in branches:
            if best is None or br.total_time() > best.total_time():
                best = br
        if best is not None:
            for ph, lst in best.entries.items():
                self.extend(ph, lst)
        return best

    def branch(self):
        return CostLedger(self.params)

    def phase_totals(self, phase):
        lst = self.entries[phase]
        return Charge(math.fsum(c.alpha_count for c in lst),
                      math.fsum(c.beta_words for c in lst),
                      math.fsum(c.gamma_flops for c in lst),
                      math.fsum(c.time for c in lst))

    def time(self, phase):
        return self.phase_totals(phase).time

    def total_time(self, phases=None):
        phases = PHASES if phases is None else phases
        return math.fsum(c.time for ph in phases for c in self.entries[ph])

    def to_rows(self):
        rows = []
        for ph in PHASES:
            t = self.phase_totals(ph)
            rows.append((ph, t.alpha_count, t.beta_words, t.gamma_flops, t.time))
        return rows

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phase", "alpha_count", "beta_words", "gamma_flops", "model_time"])
            for ph, a, b, g, t in self.to_rows():
                w.writerow([ph] + [format(x, ".17g") for x in (a, b, g, t)])


# -- grid state ----------------------------------------------------------------


@dataclass
class GridState:
    """Blocks of the evolving Q (``q``) and R (``r``) views keyed by block index.

    Extended block ``(I, J)`` lives on node ``(row_node[I], col_node[J])``.
    Indices below ``p_r``/``p_c`` are systematic; higher ones are checksums.
    """

    config: GridConfig
    row_node: list
    col_node: list
    q: dict = field(default_factory=dict)
    r: dict = field(default_factory=dict)
    failed: set = field(default_factory=set)
    t: int = 0

    @property
    def b(self):
        return self.config.block

    @property
    def rows(self):
        return len(self.row_node)

    @property
    def cols(self):
        return len(self.col_node)

    @property
    def node_shape(self):
        return (max(self.row_node) + 1, max(self.col_node) + 1)

    def node_of(self, I, J):
        return (self.row_node[I], self.col_node[J])

    def alive(self, node):
        return node not in self.failed

    def copy(self):
        return GridState(self.config, list(self.row_node), list(self.col_node),
                         {k: v.copy() for k, v in self.q.items()},
                         {k: v.copy() for k, v in self.r.items()},
                         set(self.failed), self.t)


def distribute(A, config):
    """Split `A` into a p_r x p_c grid of b x b blocks, one per node."""
    A = np.asarray(A, dtype=np.float64)
    n = config.n
    if A.shape != (n, n):
        raise DimensionMismatch(f"matrix is {A.shape}, config expects {n}x{n}")
    b = config.block
    st = GridState(config, list(range(config.p_r)), list(range(config.p_c)))
    for i in range(config.p_r):
        for j in range(config.p_c):
            st.q[(i, j)] = A[i * b:(i + 1) * b, j * b:(j + 1) * b].copy()
            st.r[(i, j)] = np.zeros((b, b))
    return st


def gather(state, which="q", rows=None, cols=None):
    """Assemble blocks into a dense matrix (all extended blocks by default)."""
    store = state.q if which == "q" else state.r
    rows = range(state.rows if which == "q" else state.config.p_r) if rows is None else rows
    cols = range(state.cols) if cols is None else cols
    rows, cols = list(rows), list(cols)
    b = state.b
    out = np.zeros((len(rows) * b, len(cols) * b))
    for a, I in enumerate(rows):
        for c, J in enumerate(cols):
            blk = store.get((I, J))
            if blk is None:
                raise KeyError(f"block {(I, J)} is missing (node {state.node_of(I, J)} failed?)")
            out[a * b:(a + 1) * b, c * b:(c + 1) * b] = blk
    return out


# -- collectives -----------------------------------------------------------------


def _check_group(group, state):
    group = list(group)
    if not group:
        raise BadDimensions("collective group is empty")
    if state is not None:
        dead = [g for g in group if g in state.failed]
        if dead:
            raise DeadParticipant(f"nodes {dead} are failed")
    return group


def collective_broadcast(ledger, phase, group, words, block=None, state=None):
    """Broadcast `words` words from ``group[0]``; returns one copy per member."""
    group = _check_group(group, state)
    c = t_broadcast(len(group), words, ledger.params)
    ledger.charge(phase, c)
    if block is None:
        return None
    return [np.array(block, copy=True) for _ in group]


def collective_reduce(ledger, phase, group, blocks, coefficients=None, state=None, lincomb=False):
    """Sum ``c_i * B_i`` over the group in a fixed binary-tree order.

    With ``lincomb=True`` the result lands on an extra destination node and the
    charge is the linear-combination form ``T_reduce(p+1, w) + gamma w``.
    """
    group = _check_group(group, state)
    if len(blocks) != len(group):
        raise DimensionMismatch(f"{len(blocks)} blocks for a group of {len(group)}")
    if coefficients is not None:
        if len(coefficients) != len(group):
            raise DimensionMismatch(f"{len(coefficients)} coefficients for a group of {len(group)}")
        blocks = [c * np.asarray(b) for c, b in zip(coefficients, blocks)]
    out = tree_sum(blocks)
    w = out.size
    c = t_lincomb(len(group), w, ledger.params) if lincomb else t_reduce(len(group), w, ledger.params)
    ledger.charge(phase, c)
    return out


def collective_allreduce(ledger, phase, group, blocks, coefficients=None, state=None):
    """Reduce and return an identical copy of the result for every member."""
    group = _check_group(group, state)
    if len(blocks) != len(group):
        raise DimensionMismatch(f"{len(blocks)} blocks for a group of {len(group)}")
    if coefficients is not None:
        blocks = [c * np.asarray(b) for c, b in zip(coefficients, blocks)]
    out = tree_sum(blocks)
    ledger.charge(phase, t_allreduce(len(group), out.size, ledger.params))
    return [out.copy() for _ in group]


# -- fault schedules ---------------------------------------------------------


@dataclass
class FaultSchedule:
    """Per-iteration sets of failed nodes.

    Build with :meth:`none`, :meth:`reverse_diagonal`, :meth:`random` or
    :meth:`explicit`.
    """

    mode: str = "none"
    f: int = 0
    p: int = 0
    shape: tuple = (0, 0)
    seed: int = 0
    table: dict = field(default_factory=dict)

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def reverse_diagonal(cls, p, f):
        return cls("reverse-diagonal", int(f), int(p), (int(p), int(p)))

    @classmethod
    def random(cls, rows, cols, f, seed=0):
        return cls("random", int(f), 0, (int(rows), int(cols)), int(seed))

    @classmethod
    def explicit(cls, table, f):
        tab = {int(t): frozenset(tuple(map(int, node)) for node in s) for t, s in table.items()}
        sched = cls("explicit", int(f), table=tab)
        for t in tab:
            sched.check(sched.failures_at(t))
        return sched

    def failures_at(self, t):
        if self.mode == "explicit":
            return self.table.get(int(t), frozenset())
        if self.mode == "none" or self.f == 0:
            return frozenset()
        if self.mode == "reverse-diagonal":
            p = self.p
            band = {(t + k) % p for k in range(self.f)}
            return frozenset((i, j) for i in range(p) for j in range(p) if (i + j) % p in band)
        if self.mode == "random":
            return self._random_at(t)
        raise ValueError(f"unknown fault mode {self.mode!r}")

    def _random_at(self, t):
        rows, cols = self.shape
        rng = np.random.default_rng([self.seed, int(t)])
        order = rng.permutation(rows * cols)
        target = int(rng.integers(1, self.f * min(rows, cols) + 1))
        rc, cc = [0] * rows, [0] * cols
        out = []
        for k in order:
            i, j = divmod(int(k), cols)
            if rc[i] < self.f and cc[j] < self.f:
                out.append((i, j))
                rc[i] += 1
                cc[j] += 1
                if len(out) == target:
                    break
        return frozenset(out)

    def check(self, failed, budget=None):
        """Return True iff no node row or column exceeds the failure budget."""
        budget = self.f if budget is None else budget
        rc, cc = {}, {}
        for i, j in failed:
            rc[i] = rc.get(i, 0) + 1
            cc[j] = cc.get(j, 0) + 1
        return all(v <= budget for v in rc.values()) and all(v <= budget for v in cc.values())


def inject_failures(state, schedule, t):
    """Fail the nodes scheduled at iteration `t`, dropping every block they hold."""
    failed = schedule.failures_at(t)
    state.failed = set(failed)
    for store in (state.q, state.r):
        for key in [k for k in store if state.node_of(*k) in failed]:
            del store[key]
    return failed
