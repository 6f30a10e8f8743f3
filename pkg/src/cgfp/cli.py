"""Command-line experiment driver.

Subcommands ``run``, ``bounds``, ``spread-exact``, ``extend`` and ``report``
write CSV/JSON files into an output directory together with a manifest that
lists every file with its sha256.  Settings come from an optional INI file
(section ``[experiment]``) and command-line flags; flags win.

Exit codes: 0 success, 2 partial success (a breakdown or refused step was
recorded), 1 configuration or I/O error.
"""

import argparse
import configparser
from dataclasses import dataclass, field, asdict
import hashlib
import io
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .errors import CGFPError, ConfigError, IndefiniteTridiagonal

ENV_OUTPUT = "CGFP_OUTPUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


@dataclass
class ExperimentConfig:
    source: str = "model"
    model: dict = field(default_factory=lambda: {"n": 48, "rho": 0.8, "lambda1": 1e-3, "lambdan": 1.0})
    mtx: str = None
    spectrum: str = None
    prescale: str = "none"
    normalize: bool = False
    variants: list = field(default_factory=lambda: ["hscg", "cgcg", "gvcg"])
    max_iter: int = 120
    seed: int = 0
    digits: int = 64
    cluster_width: float = None
    conv_tol: float = None
    deltas: list = field(default_factory=lambda: [1e-14, 1e-7])
    widths: list = field(default_factory=lambda: [1e-14, 1e-7])
    multiplicity: int = 11
    residual_replacement: bool = False
    J: int = 100
    half_width: float = 1e-8
    tol: float = None
    output_dir: str = None

    def digest(self):
        d = asdict(self)
        d.pop("output_dir")
        text = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- config parsing ----------------------------------------------------------

def _floats(text):
    return [float(t) for t in str(text).replace(",", " ").split()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _model_params(tokens):
    if isinstance(tokens, str):
        tokens = tokens.split()
    out = {"n": 48, "rho": 0.8, "lambda1": 1e-3, "lambdan": 1.0}
    for tok in tokens:
        if "=" not in tok:
            raise ValueError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in out:
            raise ValueError(f"unknown model parameter {k!r}")
        out[k] = int(v) if k == "n" else float(v)
    return out


_CONVERTERS = {
    "source": str, "mtx": str, "spectrum": str, "prescale": str, "normalize": _bool,
    "variants": lambda s: [v.strip().lower() for v in str(s).split(",") if v.strip()],
    "max_iter": int, "seed": int, "digits": int, "cluster_width": float, "conv_tol": float,
    "deltas": _floats, "widths": _floats, "multiplicity": int, "residual_replacement": _bool,
    "J": int, "half_width": float, "tol": float, "output_dir": str, "model": _model_params,
}


def load_config(path):
    """Read the ``[experiment]`` section of an INI file into a dict of typed values."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.ParsingError as exc:
        where = "; ".join(f"line {n}: {line.strip()!r}" for n, line in exc.errors)
        raise ConfigError(f"{path}: cannot parse {where}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    out = {}
    for key, raw in parser.items("experiment"):
        key = key.replace("-", "_")
        if key not in _CONVERTERS:
            raise ConfigError(f"{path}: unknown field {key!r}")
        try:
            out[key] = _CONVERTERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: field {key!r}: {exc}") from None
    return out


def build_config(args):
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    overrides = {
        "mtx": args.mtx, "spectrum": getattr(args, "spectrum", None),
        "prescale": args.prescale, "max_iter": args.max_iter, "seed": args.seed,
        "digits": getattr(args, "digits", None), "output_dir": args.out,
    }
    if args.model is not None:
        try:
            overrides["model"] = _model_params(args.model)
        except ValueError as exc:
            raise ConfigError(f"--model: {exc}") from None
        overrides["source"] = "model"
    if args.mtx:
        overrides["source"] = "mtx"
    if getattr(args, "spectrum", None):
        overrides["source"] = "spectrum"
    if args.normalize:
        overrides["normalize"] = True
    for name in ("variants", "deltas", "widths", "multiplicity", "cluster_width", "conv_tol",
                 "J", "half_width", "tol", "variant"):
        val = getattr(args, name, None)
        if val is None:
            continue
        try:
            if name == "variant":
                overrides["variants"] = _CONVERTERS["variants"](val)
            else:
                overrides[name] = _CONVERTERS[name](val)
        except ValueError as exc:
            raise ConfigError(f"--{name.replace('_', '-')}: {exc}") from None
    if getattr(args, "residual_replacement", False):
        overrides["residual_replacement"] = True
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig(**values)
    if cfg.output_dir is None:
        cfg.output_dir = os.environ.get(ENV_OUTPUT, "cgfp_out")
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.source not in ("model", "mtx", "spectrum"):
        raise ConfigError(f"field 'source': unknown source {cfg.source!r}")
    if cfg.source == "mtx" and not cfg.mtx:
        raise ConfigError("field 'mtx': a Matrix Market path is required")
    if cfg.prescale not in ("none", "diagonal"):
        raise ConfigError(f"field 'prescale': expected none or diagonal, got {cfg.prescale!r}")
    for v in cfg.variants:
        if v not in ("hscg", "cgcg", "gvcg"):
            raise ConfigError(f"field 'variants': unknown variant {v!r}")
    if cfg.max_iter < 1:
        raise ConfigError("field 'max_iter': must be >= 1")


# -- problem assembly --------------------------------------------------------

def _matrix(cfg):
    from .matio import SpdMatrix, diagonal_prescale, normalize_to_unit_norm, read_matrix_market

    try:
        A = read_matrix_market(cfg.mtx)
    except OSError as exc:
        raise ConfigError(f"cannot read matrix {cfg.mtx}: {exc}") from None
    if cfg.prescale == "diagonal":
        A = diagonal_prescale(A)
    if cfg.normalize:
        A = normalize_to_unit_norm(A)
    return A


def make_problem_from(cfg):
    from .matio import make_problem, model_problem

    if cfg.source == "model":
        return model_problem(seed=cfg.seed, **cfg.model)
    if cfg.source == "mtx":
        return make_problem(_matrix(cfg), cfg.seed, label=os.path.basename(cfg.mtx))
    raise ConfigError("this command needs a matrix (model or mtx source), not a bare spectrum")


def spectrum_from(cfg):
    from .matio import model_eigenvalues

    if cfg.source == "model":
        return model_eigenvalues(**cfg.model)
    if cfg.source == "mtx":
        return _matrix(cfg).eigenvalues
    try:
        vals = np.loadtxt(cfg.spectrum, comments="#", ndmin=1)
    except OSError as exc:
        raise ConfigError(f"cannot read spectrum {cfg.spectrum}: {exc}") from None
    return np.sort(vals)


# -- output ------------------------------------------------------------------

class Output:
    """Output directory plus the manifest of everything written into it."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.dir = cfg.output_dir
        try:
            os.makedirs(self.dir, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.dir}: {exc}") from None
        self.files = {}
        self.timings = {}
        self.notes = []
        self.partial = False

    @property
    def comment(self):
        return f"config digest {self.cfg.digest()}"

    def write(self, name, writer):
        buf = io.StringIO()
        writer(buf)
        data = buf.getvalue().encode()
        path = os.path.join(self.dir, name)
        with open(path, "wb") as fh:
            fh.write(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def write_json(self, name, obj):
        return self.write(name, lambda fh: json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable))

    def stage(self, name, start):
        self.timings[name] = round(time.perf_counter() - start, 3)

    def finish(self):
        import gmpy2

        manifest = {
            "command": self.command,
            "config_digest": self.cfg.digest(),
            "config": {k: v for k, v in asdict(self.cfg).items() if k != "output_dir"},
            "files": dict(sorted(self.files.items())),
            "versions": {"cgfp": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "gmpy2": gmpy2.version()},
            "wall_clock": self.timings,
            "status": "partial" if self.partial else "ok",
            "notes": self.notes,
        }
        with open(os.path.join(self.dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, default=_jsonable)
        return EXIT_PARTIAL if self.partial else EXIT_OK


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return str(v)


# -- commands ----------------------------------------------------------------

def cmd_run(cfg, out):
    from .cg import SolveOptions, error_history, run_cg, save_trace, write_trace_csv
    from .diagnostics import (auxiliary_deviation, build_tridiagonal, definiteness,
                              lanczos_residual)

    problem = make_problem_from(cfg)
    summary = {"problem": problem.label, "n": problem.n, "variants": {}}
    for name in cfg.variants:
        t0 = time.perf_counter()
        opts = SolveOptions(max_iter=cfg.max_iter, residual_replacement=cfg.residual_replacement)
        trace = run_cg(problem, name, opts)
        hist = error_history(trace)
        out.write(f"trace_{name}.csv", lambda fh: write_trace_csv(trace, fh, out.comment))
        out.write(f"trace_{name}.json", lambda fh: fh.write(_trace_json(trace)))
        entry = {"iterations": trace.K, "plateau_index": hist.plateau_index,
                 "breakdown": None, "replacement_steps": trace.replacement_steps}
        if trace.breakdown is not None:
            entry["breakdown"] = {"k": trace.breakdown.k, "reason": trace.breakdown.reason}
            out.partial = True
            out.notes.append(f"{name}: breakdown at step {trace.breakdown.k}")
        J = _usable_steps(trace)
        if J < trace.K:
            out.notes.append(f"{name}: diagnostics use the first {J} step(s) only")
        if J >= 1:
            T = build_tridiagonal(trace, J)
            diag = lanczos_residual(problem.A, trace, T, b=problem.b)
            lmin, pd = definiteness(T)
            aux = auxiliary_deviation(problem.A, trace)
            entry.update({"eps1": diag.eps1, "eps2": diag.eps2, "eps3": diag.eps3,
                          "qnorm_range": list(diag.qnorm_range),
                          "min_eig_T": lmin, "T_positive_definite": pd,
                          "aux_deviation_final": {k: (float(v[-1]) if len(v) else None)
                                                  for k, v in aux.items()}})
            out.write(f"diagnostics_{name}.csv",
                      lambda fh: _write_diag_csv(fh, diag, aux, out.comment))
        summary["variants"][name] = entry
        out.stage(f"run:{name}", t0)
    out.write_json("summary.json", summary)
    return summary


def _usable_steps(trace):
    """Largest J such that T_J (including beta_J) is built from finite, nonzero coefficients."""
    if not (np.isfinite(trace.rnorm[0]) and trace.rnorm[0] != 0):
        return 0
    ok = np.isfinite(trace.rnorm[1:]) & (trace.rnorm[1:] != 0)
    ok &= np.isfinite(trace.coeff_a) & (trace.coeff_a != 0) & np.isfinite(trace.coeff_b)
    bad = np.flatnonzero(~ok)
    return trace.K if bad.size == 0 else int(bad[0])


def _trace_json(trace):
    from .cg import trace_to_dict

    return json.dumps(trace_to_dict(trace))


def _write_diag_csv(fh, diag, aux, comment):
    import csv

    fh.write(f"# {comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["k", "f_norm", "s_dev", "w_dev", "u_dev"])
    for k in range(len(diag.f_norms)):
        row = [k + 1, repr(float(diag.f_norms[k]))]
        for key in ("s", "w", "u"):
            v = aux[key]
            row.append(repr(float(v[k + 1])) if k + 1 < len(v) else "")
        w.writerow(row)


def cmd_bounds(cfg, out):
    from .bounds import IntervalUnion, chebyshev_series, minimax_series, mms_series, write_series_csv

    lam = spectrum_from(cfg)
    kappa = float(lam[-1] / lam[0])
    kmax = cfg.max_iter
    series = [chebyshev_series(kappa, kmax, "Anorm"), chebyshev_series(kappa, kmax, "rnorm"),
              mms_series(kappa, kmax)]
    info = {"kappa": kappa, "minimax": {}}
    for delta in cfg.deltas:
        t0 = time.perf_counter()
        union = IntervalUnion.from_spectrum(lam, 2 * delta)
        s = minimax_series(union, kmax)
        s.kind = f"Minimax(delta={delta:g})"
        series.append(s)
        info["minimax"][f"{delta:g}"] = {"digest": union.digest(), "flagged": s.flagged}
        if s.flagged:
            out.partial = True
            out.notes.append(f"minimax delta={delta:g}: no convergence at k={s.flagged}")
        out.stage(f"minimax:{delta:g}", t0)
    out.write("bounds.csv", lambda fh: write_series_csv(series, fh, out.comment))
    out.write_json("bounds_summary.json", info)
    return info


def cmd_spread_exact(cfg, out):
    import csv

    from .hiprec.context import PrecisionContext
    from .hiprec.exact import exact_cg
    from .matio import SpectrumSpec, spread_problem

    lam = spectrum_from(cfg)
    ctx = PrecisionContext(cfg.digits)
    info = {}
    for width in cfg.widths:
        t0 = time.perf_counter()
        spec = SpectrumSpec(lam, cfg.multiplicity, width)
        problem = spread_problem(spec, cfg.seed)
        run = exact_cg(problem.A, problem.b, max_iter=cfg.max_iter, ctx=ctx, tol=cfg.tol,
                       record_vectors=False)

        def writer(fh, run=run):
            fh.write(f"# {out.comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "anorm_err_rel"])
            for k, v in enumerate(run.relative):
                w.writerow([k, repr(float(v))])

        out.write(f"spread_exact_w{width:g}.csv", writer)
        info[f"{width:g}"] = {"n": problem.n, "steps": len(run.relative) - 1,
                              "stop_reason": run.stop_reason,
                              "iterations_to_1e-6": run.iterations_to(1e-6)}
        out.stage(f"spread-exact:{width:g}", t0)
    out.write_json("spread_exact_summary.json", info)
    return info


def cmd_extend(cfg, out, trace_path=None):
    from .cg import SolveOptions, load_trace, run_cg
    from .diagnostics import build_tridiagonal, extension_floor, ritz_histogram, write_histogram_csv
    from .errors import BinsOverlap
    from .hiprec.context import PrecisionContext
    from .hiprec.extend import (DEFAULT_TOL, classify_ritz, extend_T, verify_extension,
                                write_distance_csv, write_match_csv, write_tridiagonal_text)

    problem = make_problem_from(cfg)
    variant = cfg.variants[0]
    if trace_path:
        try:
            trace = load_trace(trace_path)
        except OSError as exc:
            raise ConfigError(f"cannot read trace {trace_path}: {exc}") from None
    else:
        trace = run_cg(problem, variant, SolveOptions(max_iter=max(cfg.max_iter, cfg.J + 1)))
    J = min(cfg.J, trace.K - 1)
    ctx = PrecisionContext(cfg.digits)
    cw = cfg.cluster_width if cfg.cluster_width is not None else DEFAULT_TOL
    ct = cfg.conv_tol if cfg.conv_tol is not None else DEFAULT_TOL
    T = build_tridiagonal(trace, J)
    Q = trace.lanczos_vectors(J + 1)
    lam = problem.A.eigenvalues
    info = {"variant": trace.variant.value, "J": J, "digits": cfg.digits,
            "cluster_width": cw, "conv_tol": ct}

    t0 = time.perf_counter()
    cls = classify_ritz(problem.A, T, Q, cw, ct, ctx)
    info["health"] = cls.health()
    print(f"unconverged basis: m={cls.m}  orthonormality defect={cls.basis_defect:.3e}  "
          f"|<q_J+1, y>| max={cls.next_overlap:.3e}  q_J residual={cls.last_residual:.3e}")
    out.stage("classify", t0)

    try:
        hist = ritz_histogram(T, lam, cfg.half_width)
        out.write("histogram_TJ.csv", lambda fh: write_histogram_csv(hist, fh, out.comment))
        info["odd_bin_TJ"] = len(hist.offenders)
    except BinsOverlap as exc:
        out.notes.append(f"histogram skipped: {exc}")
    info["extension_floor"] = extension_floor(T, lam) if J > 1 else 0.0

    t0 = time.perf_counter()
    try:
        res = extend_T(problem.A, T, Q, cls, ctx)
    except IndefiniteTridiagonal as exc:
        print(f"refusing extension: {exc}; the equivalence analysis does not apply", file=sys.stderr)
        out.partial = True
        out.notes.append(f"extension refused: {exc}")
        out.write_json("extend_summary.json", info)
        return info
    out.stage("extend", t0)
    info.update({"size": res.size, "m": res.m, "max_eig_distance": res.max_eig_distance,
                 "kappa_T": res.kappa_T, "relation_residual": res.relation_residual,
                 "orthogonality_defect": res.orthogonality_defect, "interlaces": res.interlaces,
                 "early_stop": res.early_stop, "min_eig_T_ext": float(res.eigenvalues[0])})
    out.write("T_ext.csv", lambda fh: write_tridiagonal_text(res.T_ext, fh, cfg.digits, out.comment))
    out.write("eig_distance.csv", lambda fh: write_distance_csv(res, lam, fh, out.comment))
    try:
        hist2 = ritz_histogram(res.T_ext, lam, cfg.half_width, theta=res.eigenvalues)
        out.write("histogram_Text.csv", lambda fh: write_histogram_csv(hist2, fh, out.comment))
        info["odd_bin_Text"] = len(hist2.offenders)
    except BinsOverlap:
        pass

    t0 = time.perf_counter()
    try:
        rep = verify_extension(problem.A, res, trace, ctx)
    except CGFPError as exc:
        out.partial = True
        out.notes.append(f"verification failed: {exc}")
    else:
        out.write("match.csv", lambda fh: write_match_csv(rep, fh, out.comment))
        info.update({"ratio_range": list(rep.ratio_range), "r0hat_max_rel": rep.r0hat_max,
                     "ambiguous_assignments": len(rep.ambiguous)})
    out.stage("verify", t0)
    out.write_json("extend_summary.json", info)
    return info


def cmd_report(directory):
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    bad = []
    for name, digest in manifest["files"].items():
        try:
            with open(os.path.join(directory, name), "rb") as fh:
                actual = hashlib.sha256(fh.read()).hexdigest()
        except OSError:
            actual = None
        if actual != digest:
            bad.append(name)
    print(f"command: {manifest['command']}  status: {manifest['status']}  "
          f"config digest: {manifest['config_digest']}")
    for name in manifest["files"]:
        print(f"  {'MISMATCH' if name in bad else 'ok':8s} {name}")
    for stage, secs in manifest.get("wall_clock", {}).items():
        print(f"  {stage}: {secs:.2f} s")
    for note in manifest.get("notes", []):
        print(f"  note: {note}")
    if bad:
        raise ConfigError(f"{len(bad)} file(s) do not match the manifest")
    return EXIT_PARTIAL if manifest["status"] == "partial" else EXIT_OK


# -- argument parsing --------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="INI file with an [experiment] section")
    p.add_argument("--model", nargs="*", metavar="KEY=VALUE",
                   help="model problem parameters, e.g. n=48 rho=0.8")
    p.add_argument("--mtx", help="Matrix Market file, e.g. SuiteSparse HB/bcsstk03, "
                                  "HB/bcsstk14 or HB/bcsstk16 (not bundled)")
    p.add_argument("--prescale", choices=["none", "diagonal"])
    p.add_argument("--normalize", action="store_true", help="scale A to unit 2-norm")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${ENV_OUTPUT} or ./cgfp_out)")


def build_parser():
    parser = argparse.ArgumentParser(prog="cgfp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"cgfp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="instrumented solves and Lanczos diagnostics")
    _common(p)
    p.add_argument("--variants", help="comma-separated subset of hscg,cgcg,gvcg")
    p.add_argument("--residual-replacement", action="store_true", dest="residual_replacement")

    p = sub.add_parser("bounds", help="Chebyshev, MMS and minimax bound series")
    _common(p)
    p.add_argument("--spectrum", help="text file of eigenvalues, one per line")
    p.add_argument("--deltas", help="interval half-widths about each eigenvalue, comma-separated")

    p = sub.add_parser("spread-exact", help="exact CG on interval-spread diagonal matrices")
    _common(p)
    p.add_argument("--spectrum", help="text file of eigenvalues, one per line")
    p.add_argument("--widths", help="full interval widths, comma-separated")
    p.add_argument("--multiplicity", type=int)
    p.add_argument("--digits", type=int)
    p.add_argument("--tol", type=float, help="stop once the relative A-norm error reaches this level")

    p = sub.add_parser("extend", help="extend T_J and verify the exact-CG match")
    _common(p)
    p.add_argument("--variant", help="variant whose trace is extended")
    p.add_argument("--trace", help="trace JSON written by 'run' (otherwise solved inline)")
    p.add_argument("-J", type=int, dest="J", help="number of steps in T_J")
    p.add_argument("--digits", type=int)
    p.add_argument("--cluster-width", type=float, dest="cluster_width")
    p.add_argument("--conv-tol", type=float, dest="conv_tol")
    p.add_argument("--half-width", type=float, dest="half_width", help="histogram bin half-width")

    p = sub.add_parser("report", help="summarize and verify an output directory")
    p.add_argument("directory", nargs="?", help=f"output directory (default ${ENV_OUTPUT})")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.directory or os.environ.get(ENV_OUTPUT, "cgfp_out"))
        cfg = build_config(args)
        out = Output(cfg, args.command)
        # overflow in a breaking-down run is recorded in the trace, not warned about
        with np.errstate(all="ignore"):
            if args.command == "run":
                cmd_run(cfg, out)
            elif args.command == "bounds":
                cmd_bounds(cfg, out)
            elif args.command == "spread-exact":
                cmd_spread_exact(cfg, out)
            elif args.command == "extend":
                cmd_extend(cfg, out, args.trace)
        code = out.finish()
        print(f"wrote {len(out.files)} file(s) to {out.dir} ({'partial' if code else 'ok'})")
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except CGFPError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
