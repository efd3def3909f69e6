"""Command-line front end.

Subcommands: ``solve``, ``factorize``, ``mds-check``, ``innode-bound``,
``cost-report`` and ``sweep``. Settings come from an optional JSON file
(``--config``) overridden by flags. Exit codes: 0 success, 2 configuration
error, 3 numerical failure, 4 unrecoverable fault injection.
"""
import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import codec, costmodel, engine
from .errors import CodedQRError, ConfigError, FaultError, NumericalError
from .gridsim import FaultSchedule, GridConfig

COMMANDS = ("solve", "factorize", "mds-check", "innode-bound", "cost-report", "sweep")
INJECT_MODES = ("none", "reverse-diagonal", "random")
DEFAULT_N = 64


@dataclass
class RunSpec:
    command: str = "solve"
    n: int = None
    p_r: int = 2
    p_c: int = 2
    f: int = 1
    storage: str = "out-of-node"
    seed: int = 0
    alpha: float = costmodel.SWEEP_DEFAULTS["alpha"]
    beta: float = costmodel.SWEEP_DEFAULTS["beta"]
    gamma: float = costmodel.SWEEP_DEFAULTS["gamma"]
    inject: str = "none"
    audit: bool = False
    matrix: str = "random"
    rhs: str = "random"
    out: str = None
    seeds: int = 20
    v_tilde: list = None
    ps: list = field(default_factory=lambda: [4, 8, 16])
    fs: list = field(default_factory=lambda: [1, 2])
    L_values: list = None
    P_values: list = field(default_factory=lambda: [3, 4, 5, 6])
    K: int = None
    simulate: bool = False

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.inject not in INJECT_MODES:
            raise ConfigError(f"inject must be one of {INJECT_MODES}, got {self.inject!r}")
        return self

    def grid_config(self):
        n = DEFAULT_N if self.n is None else self.n
        return GridConfig(int(n), int(self.p_r), int(self.p_c), int(self.f), self.storage,
                          float(self.alpha), float(self.beta), float(self.gamma), int(self.seed))


# -- output helpers --------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def _matrix_csv(M):
    M = np.atleast_2d(M)
    return "".join(",".join(format(x, ".17g") for x in row) + "\n" for row in M)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(obj):
    return json.dumps(_json_safe(obj), sort_keys=True, indent=2) + "\n"


class _Writer:
    """Writes artifacts atomically into the output directory, if one is set."""

    def __init__(self, out):
        self.out = out
        if out:
            os.makedirs(out, exist_ok=True)

    def write(self, name, text):
        if not self.out:
            return
        path = os.path.join(self.out, name)
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)


# -- inputs ----------------------------------------------------------------------


def _load_matrix(source, n, rng, name):
    if source == "random":
        return rng.random((n, n)) if name == "A" else rng.random(n)
    if source == "identity":
        if name != "A":
            raise ConfigError("identity is only a valid matrix source for A")
        return np.eye(n)
    if source == "ones" and name == "b":
        return np.ones(n)
    if not os.path.exists(source):
        raise ConfigError(f"{name} source {source!r} is neither a keyword nor an existing file")
    data = np.loadtxt(source, delimiter=",", ndmin=2)
    return data if name == "A" else data.ravel()


def _schedule(spec, cfg, gens):
    if spec.inject == "none" or cfg.f == 0:
        return FaultSchedule.none()
    if spec.inject == "reverse-diagonal":
        return FaultSchedule.reverse_diagonal(cfg.p_r, cfg.f)
    if gens.plan_v is not None:
        shape = (cfg.p_r, cfg.p_c)
    else:
        shape = (cfg.p_r + gens.m_r, cfg.p_c + gens.m_c)
    return FaultSchedule.random(shape[0], shape[1], cfg.f, seed=cfg.seed)


def _prepare(spec):
    cfg = spec.grid_config()
    gens = codec.build_generator_set(cfg.n, cfg.p_r, cfg.p_c, cfg.f, cfg.storage, seed=cfg.seed)
    return cfg, gens, _schedule(spec, cfg, gens)


def _ledger_csv(ledger):
    return _csv_text(["phase", "alpha_count", "beta_words", "gamma_flops", "model_time"],
                     ledger.to_rows())


def _audit_csv(run):
    return _csv_text(["t", "q_res", "r_res"], run.audit_log)


# -- commands --------------------------------------------------------------------


def cmd_solve(spec, stdout):
    cfg, gens, sched = _prepare(spec)
    rng = np.random.default_rng(cfg.seed)
    A = _load_matrix(spec.matrix, cfg.n, rng, "A")
    b = _load_matrix(spec.rhs, cfg.n, rng, "b")
    run = engine.solve(A, b, cfg, schedule=sched, generators=gens, audit=spec.audit,
                       return_run=True)
    resid = float(np.linalg.norm(A @ run.x - b) / np.linalg.norm(b))
    summary = {"command": "solve", "relative_residual": resid,
               "residual_le_1e-10": resid <= 1e-10, **run.to_dict()}
    w = _Writer(spec.out)
    w.write("x.csv", _matrix_csv(run.x.reshape(-1, 1)))
    w.write("ledger.csv", _ledger_csv(run.ledger))
    if spec.audit:
        w.write("audit.csv", _audit_csv(run))
    w.write("summary.json", _dump(summary))
    stdout.write(f"relative_residual {_fmt(resid)}\n")
    stdout.write(f"residual_le_1e-10 {_fmt(resid <= 1e-10)}\n")
    return 0


def cmd_factorize(spec, stdout):
    cfg, gens, sched = _prepare(spec)
    rng = np.random.default_rng(cfg.seed)
    A = _load_matrix(spec.matrix, cfg.n, rng, "A")
    run = engine.factorize(A, cfg, schedule=sched, generators=gens, audit=spec.audit)
    resid = float(np.linalg.norm(A - run.q1 @ run.r1, 2) / np.linalg.norm(A, 2))
    r_is_i = bool(np.max(np.abs(run.r1 - np.eye(cfg.n))) <= 1e-12)
    summary = {"command": "factorize", "factor_residual": resid, "r1_is_identity": r_is_i,
               **run.to_dict()}
    w = _Writer(spec.out)
    w.write("q1.csv", _matrix_csv(run.q1))
    w.write("r1.csv", _matrix_csv(run.r1))
    w.write("ledger.csv", _ledger_csv(run.ledger))
    if spec.audit:
        w.write("audit.csv", _audit_csv(run))
    w.write("summary.json", _dump(summary))
    stdout.write(f"factor_residual {_fmt(resid)}\n")
    stdout.write(f"r1_is_identity {_fmt(r_is_i)}\n")
    return 0


def cmd_mds_check(spec, stdout):
    p_r, f = int(spec.p_r), int(spec.f)
    header = ["seed", "kind", "is_mds", "min_det", "max_cond"]
    rows = []
    if f == 0:
        summary = {"command": "mds-check", "p_r": p_r, "f": 0, "reports": 0}
    else:
        seeds = [None] if spec.v_tilde is not None else list(range(int(spec.seeds)))
        for s in seeds:
            seed = spec.seed if s is None else spec.seed + s
            g = codec.build_q_generator(p_r, f, seed, v_tilde=spec.v_tilde)
            rep = codec.check_mds(g.g_tilde)
            rows.append([seed, "structured", rep.is_mds, rep.min_det, rep.max_cond])
            rnd = codec.check_mds(codec.random_counterpart(g, seed=[seed, 1]))
            rows.append([seed, "random", rnd.is_mds, rnd.min_det, rnd.max_cond])
        st = [r for r in rows if r[1] == "structured"]
        rd = [r for r in rows if r[1] == "random"]
        gm_s = math.exp(math.fsum(math.log(r[4]) for r in st) / len(st))
        gm_r = math.exp(math.fsum(math.log(r[4]) for r in rd) / len(rd))
        summary = {"command": "mds-check", "p_r": p_r, "f": f, "reports": len(st),
                   "all_mds": all(r[2] for r in st), "min_det": min(r[3] for r in st),
                   "max_cond_structured_gmean": gm_s, "max_cond_random_gmean": gm_r,
                   "cond_factor": gm_s / gm_r}
    table = _csv_text(header, rows)
    w = _Writer(spec.out)
    w.write("mds.csv", table)
    w.write("mds.json", _dump(summary))
    stdout.write(_dump(summary))
    return 0


def cmd_innode_bound(spec, stdout):
    Ps = [int(p) for p in spec.P_values]
    Ls = [int(x) for x in spec.L_values] if spec.L_values else None
    header = ["L", "P", "f", "K_min", "K_checked", "recoverable", "witness"]
    rows = []
    for idx, P in enumerate(Ps):
        L = Ls[idx] if Ls else 2 * P
        for f in spec.fs:
            f = int(f)
            if f >= P:
                continue
            K = codec.innode_min_checksums(L, P, f)
            ks = [spec.K] if spec.K is not None else ([K, K - 1] if K > 0 else [K])
            for k in ks:
                if P <= codec.WITNESS_MAX_NODES:
                    res = codec.innode_bound_witness(L, P, f, k)
                    wit = "" if res["witness"] is None else " ".join(map(str, res["witness"]))
                    rows.append([L, P, f, K, k, res["recoverable"], wit])
                else:
                    rows.append([L, P, f, K, k, "", ""])
    table = _csv_text(header, rows)
    _Writer(spec.out).write("innode_bound.csv", table)
    stdout.write(table)
    return 0


def cmd_cost_report(spec, stdout):
    cfg = spec.grid_config()
    rep = costmodel.analytic_overheads(cfg)
    rows = [["analytic", k, v] for k, v in rep.to_dict().items()]
    if spec.simulate:
        _, gens, sched = _prepare(spec)
        rng = np.random.default_rng(cfg.seed)
        A = _load_matrix(spec.matrix, cfg.n, rng, "A")
        b = _load_matrix(spec.rhs, cfg.n, rng, "b")
        run = engine.solve(A, b, cfg, schedule=sched, generators=gens, return_run=True)
        for ph, a, bw, g, t in run.ledger.to_rows():
            rows.append(["simulated", f"{ph}_model_time", t])
        if run.recovery_events:
            rows.append(["simulated", "recov_max_event",
                         max(e["time"] for e in run.recovery_events)])
    table = _csv_text(["source", "quantity", "value"], rows)
    _Writer(spec.out).write("cost_report.csv", table)
    stdout.write(table)
    return 0


def cmd_sweep(spec, stdout):
    configs = costmodel.sweep_configs(
        [int(p) for p in spec.ps], [int(f) for f in spec.fs],
        n=None if spec.n is None else int(spec.n), alpha=spec.alpha, beta=spec.beta,
        gamma=spec.gamma)
    rows = costmodel.scaling_sweep(configs)
    buf = io.StringIO()
    costmodel.write_sweep_csv(rows, buf)
    _Writer(spec.out).write("sweep.csv", buf.getvalue())
    stdout.write(buf.getvalue())
    return 0


HANDLERS = {"solve": cmd_solve, "factorize": cmd_factorize, "mds-check": cmd_mds_check,
            "innode-bound": cmd_innode_bound, "cost-report": cmd_cost_report,
            "sweep": cmd_sweep}


# -- argument parsing ----------------------------------------------------------------


def _int_list(text):
    text = text.strip()
    return [int(x) for x in text.split(",") if x.strip()] if text else []


def _float_list(text):
    text = text.strip()
    return [float(x) for x in text.split(",") if x.strip()] if text else []


def build_parser():
    ap = argparse.ArgumentParser(prog="codedqr", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON file with RunSpec fields")
    ap.add_argument("--n", type=int)
    ap.add_argument("--pr", dest="p_r", type=int)
    ap.add_argument("--pc", dest="p_c", type=int)
    ap.add_argument("--f", type=int)
    ap.add_argument("--storage", choices=("out-of-node", "in-node"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--beta", type=float)
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--inject", choices=INJECT_MODES)
    ap.add_argument("--audit", action="store_true", default=None)
    ap.add_argument("--out", help="output directory for artifacts")
    ap.add_argument("--matrix", help="random | identity | CSV path")
    ap.add_argument("--rhs", help="random | ones | CSV path")
    ap.add_argument("--seeds", type=int, help="mds-check: number of seeds")
    ap.add_argument("--v-tilde", dest="v_tilde", type=_float_list,
                    help="mds-check: explicit comma-separated V entries")
    ap.add_argument("--ps", type=_int_list, help="sweep: comma-separated grid sizes")
    ap.add_argument("--fs", type=_int_list, help="sweep/innode-bound: comma-separated budgets")
    ap.add_argument("--L-values", dest="L_values", type=_int_list)
    ap.add_argument("--P-values", dest="P_values", type=_int_list)
    ap.add_argument("--K", type=int, help="innode-bound: checksum count to test")
    ap.add_argument("--simulate", action="store_true", default=None)
    return ap


def spec_from_args(args):
    base = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = RunSpec.from_json(fh.read()).to_dict()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from exc
    base["command"] = args.command
    for f in fields(RunSpec):
        if f.name == "command":
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    if args.p_r is not None and args.p_c is None:
        base["p_c"] = args.p_r
    return RunSpec.from_dict(base)


def exit_code(exc):
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, NumericalError):
        return 3
    if isinstance(exc, FaultError):
        return 4
    return 1


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(args)
        return HANDLERS[spec.command](spec, stdout)
    except CodedQRError as exc:
        stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": exit_code(exc)}, sort_keys=True) + "\n")
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
