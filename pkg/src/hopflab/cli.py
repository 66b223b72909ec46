"""Command-line entry point: ``hopflab {analyze,verify,pinch,flow,calibrate}``.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 numerical
quality failure.  Reports are JSON (sorted keys) or CSV and are written
atomically into the output directory.
"""

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import analysis as an
from . import bochner, flow, pinching
from .calculus import FDConfig, SECOND
from .maps import DescriptorError, parse_descriptor

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = ("analyze", "verify", "pinch", "flow", "calibrate")
DEFAULT_N = {"analyze": 100, "verify": 100, "pinch": 1000, "flow": 4000, "calibrate": 4000}


class UsageError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    command: str = None
    map: str = None
    lemma: str = None
    theorem: str = None
    a: float = None
    mode: str = None
    n: int = None
    steps: int = None
    seed: int = None
    h: float = None
    order: int = None
    out: str = None
    tol: float = None
    k: int = None
    stride: int = None

    def to_text(self):
        lines = [f"{f.name}={getattr(self, f.name)}"
                 for f in dataclasses.fields(self) if getattr(self, f.name) is not None]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"config line is not key=value: {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values):
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        out = {}
        for key, value in values.items():
            if value is None:
                continue
            try:
                out[key] = types[key](value)
            except ValueError:
                raise UsageError(f"bad value for {key}: {value!r}") from None
        return cls(**out)

    def merged(self, other):
        """Fields set in ``other`` override this config."""
        vals = dataclasses.asdict(self)
        vals.update({k: v for k, v in dataclasses.asdict(other).items() if v is not None})
        return RunConfig(**vals)

    def to_json(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


def _threads():
    try:
        return max(1, int(os.environ.get("HOPFLAB_THREADS", "1")))
    except ValueError:
        raise UsageError("HOPFLAB_THREADS must be an integer") from None


def _fd(cfg):
    if cfg.h is None and cfg.order is None:
        return SECOND
    return FDConfig(SECOND.h if cfg.h is None else cfg.h,
                    SECOND.order if cfg.order is None else cfg.order)


def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


def _envelope(cfg, body):
    return {"version": __version__, "config": cfg.to_json(), **body}


def _write_json(cfg, name, body):
    path = os.path.join(cfg.out, name)
    write_atomic(path, dumps(_envelope(cfg, body)))
    return path


def _map(cfg):
    if not cfg.map:
        raise UsageError(f"{cfg.command} needs --map")
    return parse_descriptor(cfg.map)


def _parallel(fn, items):
    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _stats(values):
    v = np.asarray(values, dtype=float)
    return {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}


def cmd_analyze(cfg):
    f = _map(cfg)
    fd = _fd(cfg)
    P = f.sample(cfg.n, cfg.seed)
    records = _parallel(lambda p: an.analyze_point(f, p, fd), P)
    agg = {key: _stats([r[key] for r in records])
           for key in ("u", "B_norm2", "tension_norm")}
    agg["d2"] = _stats([r["lambda"] * r["mu"] for r in records])
    path = _write_json(cfg, "analyze.json", {"map": f.to_json(), "aggregate": agg,
                                             "points": records})
    worst = max(r["symmetry_residual"] for r in records)
    print(f"analyze: {len(records)} points, u in [{agg['u']['min']:.6g}, "
          f"{agg['u']['max']:.6g}], max |B|^2 {agg['B_norm2']['max']:.6g} -> {path}")
    if worst > an.SYMMETRY_TOL:
        print(f"Hessian symmetry residual {worst:.3e} exceeds {an.SYMMETRY_TOL}; "
              "adjust --h", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_verify(cfg):
    f = _map(cfg)
    lemma = cfg.lemma or "all"
    names = list(bochner.VERIFIERS) if lemma == "all" else lemma.split(",")
    bad = [x for x in names if x not in bochner.VERIFIERS]
    if bad:
        raise UsageError(f"unknown lemma {bad[0]!r}; choose from "
                         f"{', '.join(bochner.VERIFIERS)} or all")
    tol = bochner.DEFAULT_TOL if cfg.tol is None else cfg.tol
    P = f.sample(cfg.n, cfg.seed)
    reports = bochner.run_batch(f, P, names, _fd(cfg), _threads())
    rows = bochner.summarize(reports)
    failed = [r for r in reports if r.status == "ok" and not r.rel_residual < tol]
    precond = [r for r in reports if r.status == "precondition_failed"]
    body = {"map": f.to_json(), "tolerance": tol, "summary": rows,
            "reports": [r.to_json() for r in reports]}
    path = _write_json(cfg, "verify.json", body)
    write_atomic(os.path.join(cfg.out, "verify_summary.csv"), bochner.summary_csv(rows))
    for r in rows:
        m = r["max_rel_residual"]
        shown = "-" if m is None else f"{m:.3e}"
        print(f"{r['name']:>16}  n={r['n_points']}  max_rel={shown}  skipped={r['n_skipped']}")
    print(f"verify -> {path}")
    if failed or precond:
        print(f"{len(failed)} identity failures, {len(precond)} precondition failures",
              file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_pinch(cfg):
    f = _map(cfg)
    theorem = cfg.theorem or "A1"
    fd = _fd(cfg)
    if theorem in ("A1", "A2", "C"):
        rep = pinching.scan(f, theorem, cfg.n, cfg.seed, cfg.a, fd)
    elif theorem == "B":
        mode = cfg.mode or "constant-u"
        if mode not in ("constant-u", "constant-d2"):
            raise UsageError("--mode must be constant-u or constant-d2 for theorem B")
        tol = pinching.CONSTANCY_TOL if cfg.tol is None else cfg.tol
        try:
            rep = pinching.check_thmB(f, mode, cfg.n, cfg.seed, fd, tol=tol)
        except bochner.PreconditionError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_VERIFY
    else:
        raise UsageError(f"unknown theorem {theorem!r}; choose A1, A2, B or C")
    path = _write_json(cfg, "pinch.json", {"map": f.to_json(), "report": rep.to_json()})
    write_atomic(os.path.join(cfg.out, "pinch_margins.csv"), pinching.margins_csv(rep))
    print(f"pinch {rep.theorem}: min margin {rep.min_margin:.6g}, {rep.verdict} -> {path}")
    return EXIT_OK


def cmd_flow(cfg):
    if not cfg.map:
        raise UsageError("flow needs --init")
    f0 = parse_descriptor(cfg.map)
    k = flow.DEFAULT_K if cfg.k is None else cfg.k
    steps = 500 if cfg.steps is None else cfg.steps
    result = flow.run_flow(f0, cfg.n, cfg.seed, steps, k, stride=cfg.stride or 0)
    E = np.array(result.state.energy_history)
    body = {
        "map": f0.to_json(),
        "calibration": dataclasses.asdict(result.calibration),
        "epsilon": result.cloud.epsilon,
        "steps": result.state.steps,
        "rejections": result.state.rejections,
        "initial_dt": result.diagnostics[0]["dt"],
        "final_dt": result.state.dt,
        "initial_energy": float(E[0]),
        "final_energy": float(E[-1]),
        "max_energy_increase": float(np.max(np.diff(E))) if len(E) > 1 else 0.0,
        "final": result.diagnostics[-1],
    }
    path = _write_json(cfg, "flow.json", body)
    write_atomic(os.path.join(cfg.out, "flow_diagnostics.csv"),
                 flow.diagnostics_csv(result.diagnostics))
    for snap in result.snapshots:
        write_atomic(os.path.join(cfg.out, f"flow_snapshot_{snap.steps:06d}.csv"),
                     flow.snapshot_csv(result.cloud, snap))
    write_atomic(os.path.join(cfg.out, "flow_snapshot_final.csv"),
                 flow.snapshot_csv(result.cloud, result.state))
    print(f"flow: {result.state.steps} steps, energy {E[0]:.6g} -> {E[-1]:.6g} -> {path}")
    return EXIT_OK


def cmd_calibrate(cfg):
    k = flow.DEFAULT_K if cfg.k is None else cfg.k
    cloud = flow.sample_s3(cfg.n, cfg.seed, k)
    cal = flow.calibrate(cloud)
    body = {"n": cloud.n, "k": cloud.k, "epsilon": cloud.epsilon,
            "calibration": dataclasses.asdict(cal),
            "rank_deficient_points": int(np.sum(~cloud.well_posed))}
    path = _write_json(cfg, "calibrate.json", body)
    print(f"calibrate: scale {cal.scale:.6g}, residual {cal.residual:.3e}, "
          f"degree-2 eigenvalue {cal.degree2_eigenvalue:.4g} -> {path}")
    if cal.degree3_error > 0.25:
        print(f"warning: degree-3 harmonic error {cal.degree3_error:.2f}; "
              "cloud is coarse", file=sys.stderr)
    return EXIT_OK


HANDLERS = {"analyze": cmd_analyze, "verify": cmd_verify, "pinch": cmd_pinch,
            "flow": cmd_flow, "calibrate": cmd_calibrate}


def build_parser():
    parser = argparse.ArgumentParser(prog="hopflab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("-n", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if name in ("analyze", "verify", "pinch"):
            p.add_argument("--map", required=False)
            p.add_argument("--h", type=float)
            p.add_argument("--order", type=int, choices=(2, 4))
        if name == "flow":
            p.add_argument("--init", dest="map")
            p.add_argument("--steps", type=int)
            p.add_argument("--stride", type=int)
        if name in ("flow", "calibrate"):
            p.add_argument("--k", type=int)
        if name == "verify":
            p.add_argument("--lemma")
            p.add_argument("--tol", type=float)
        if name == "pinch":
            p.add_argument("--theorem")
            p.add_argument("--a", type=float)
            p.add_argument("--mode")
            p.add_argument("--tol", type=float)
    return parser


def resolve(args):
    """RunConfig from an argparse namespace: defaults < config file < flags."""
    flags = {k: v for k, v in vars(args).items() if k != "config"}
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = RunConfig.from_text(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    cfg = cfg.merged(RunConfig.from_mapping(flags))
    if cfg.command not in COMMANDS:
        raise UsageError(f"unknown command {cfg.command!r}")
    defaults = RunConfig(n=DEFAULT_N[cfg.command], seed=0, out=".")
    cfg = defaults.merged(cfg)
    if cfg.n < 1:
        raise UsageError("-n must be positive")
    return cfg


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = resolve(args)
        return HANDLERS[cfg.command](cfg)
    except (UsageError, DescriptorError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (an.NumericalQualityError, flow.CalibrationError, flow.StagnationError) as exc:
        print(f"numerical quality failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # domain errors from inputs, e.g. a cloud that is too small
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
