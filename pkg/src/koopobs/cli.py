"""Command-line interface: ``koopobs {analyze,simulate,report,validate-koopman,list-models}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import EXIT_CODES, PreconditionError, analyze, check_koopman_set
from .config import AnalysisSettings, ConfigError, ModelConfig, SimulateSettings, load_config, render_config
from .dynamics import IntegrationError, flow, measurement_distance, sample_box
from .koopman import SpanError, build_canonical, expand_measurement
from .models import MODELS, get_model
from .plotting import plot_measurements
from .report import ReportError, render_report
from .symmetry import PermutationSymmetry

EXIT_CONFIG = 1
EXIT_PRECONDITION = 2


def _fail(code: int, message: str) -> int:
    print(f"koopobs: error: {message}", file=sys.stderr)
    return code


def resolve(target: str) -> ModelConfig:
    """A built-in model name or a path to a config file."""
    if target in MODELS:
        model = get_model(target)
        gen_tol = model.kset.generator_tol if model.kset is not None else None
        sim = SimulateSettings((tuple(model.x0),) if model.x0 is not None else (), model.t_final)
        return ModelConfig(model, AnalysisSettings(generator_tol=gen_tol), sim,
                           hashlib.sha256(render_config(model).encode()).hexdigest())
    path = Path(target)
    if not path.exists():
        raise ConfigError(f"{target!r} is neither a built-in model ({', '.join(MODELS)}) nor a config file")
    return load_config(path)


def _settings(cfg: ModelConfig, args) -> AnalysisSettings:
    s = cfg.analysis
    for flag, attr in (("seed", "seed"), ("tol_rank", "tol_rank"), ("tol_group", "tol_group"),
                       ("samples", "samples"), ("lie_max_order", "lie_max_order")):
        val = getattr(args, flag, None)
        if val is not None:
            s = replace(s, **{attr: val})
    return s


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(" ", "").strip("[]").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _perm(text: str) -> PermutationSymmetry:
    try:
        return PermutationSymmetry(tuple(int(v) for v in text.replace(" ", "").strip("[]").split(",")))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analyze(args) -> int:
    cfg = resolve(args.target)
    settings = _settings(cfg, args)
    try:
        bundle = analyze(cfg.model, args.measurement, settings, args.perm or None, cfg.digest)
    except KeyError as exc:
        return _fail(EXIT_CONFIG, exc.args[0])
    except PreconditionError as exc:
        return _fail(EXIT_PRECONDITION, f"precondition failed ({exc})")
    except IntegrationError as exc:
        return _fail(EXIT_PRECONDITION, f"integration failed: {exc}")
    text = _dump(bundle)
    if getattr(args, "out", None):
        (_out_dir(args) / "bundle.json").write_text(text)
    if getattr(args, "format", "json") == "text":
        sys.stdout.write(render_report(bundle))
    else:
        sys.stdout.write(text)
    return EXIT_CODES[bundle["verdict"]]


def _mirror(cfg: ModelConfig, spec: str | None) -> PermutationSymmetry | None:
    if spec is None:
        return None
    if spec == "P":
        if not cfg.model.symmetries:
            raise ConfigError("--mirror P needs a model with a declared symmetry")
        return cfg.model.symmetries[0]
    return _perm(spec)


def cmd_simulate(args) -> int:
    cfg = resolve(args.target)
    try:
        system = cfg.model.with_measurement(args.measurement)
    except KeyError as exc:
        return _fail(EXIT_CONFIG, exc.args[0])
    x0s = [tuple(x) for x in args.x0] if args.x0 else list(cfg.simulate.x0)
    if not x0s:
        return _fail(EXIT_CONFIG, "no initial state: pass --x0 or set [simulate].x0")
    if any(len(x) != system.n for x in x0s):
        return _fail(EXIT_CONFIG, f"initial states need {system.n} entries")
    P = _mirror(cfg, args.mirror)
    if P is not None and P.n != system.n:
        return _fail(EXIT_CONFIG, "mirror permutation has the wrong length")
    t_final = cfg.simulate.t_final if args.t is None else args.t
    dt = cfg.simulate.dt if args.dt is None else args.dt
    stride = cfg.simulate.stride if args.stride is None else args.stride
    out = _out_dir(args)
    runs, summary = [], {"model": cfg.model.name, "measurement": args.measurement, "t_final": t_final,
                         "dt": dt, "files": [], "mirror_distances": []}
    try:
        for k, x0 in enumerate(x0s, start=1):
            label = f"ic{k}"
            traj = flow(system, x0, t_final, dt, stride)
            runs.append((label, traj))
            if P is not None:
                mirrored = flow(system, P.apply(np.asarray(x0)), t_final, dt, stride)
                runs.append((f"{label}_mirror", mirrored))
                summary["mirror_distances"].append({"label": label, "P": list(P.perm),
                                                    "distance": measurement_distance(traj, mirrored)})
    except IntegrationError as exc:
        return _fail(EXIT_PRECONDITION, f"integration failed: {exc}")
    for label, traj in runs:
        path = out / f"traj_{label}.csv"
        traj.to_csv(path)
        summary["files"].append(str(path))
    if args.plot:
        label = "_".join([cfg.model.name, args.measurement])
        path = plot_measurements(runs, out / f"plot_{label}.svg", f"{cfg.model.name} ({args.measurement})")
        summary["files"].append(str(path))
    if getattr(args, "format", "json") == "text":
        for f in summary["files"]:
            print(f"wrote {f}")
        for d in summary["mirror_distances"]:
            print(f"{d['label']}: max |y(x0) - y(P x0)| = {d['distance']:.3e}")
    else:
        sys.stdout.write(_dump(summary))
    return 0


def cmd_report(args) -> int:
    try:
        bundle = json.loads(Path(args.bundle).read_text())
        text = render_report(bundle)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_CONFIG, f"cannot read bundle: {exc}")
    except ReportError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    sys.stdout.write(text)
    return 0


def cmd_validate_koopman(args) -> int:
    cfg = resolve(args.target)
    model = cfg.model
    if model.kset is None:
        return _fail(EXIT_PRECONDITION, f"model {model.name} has no Koopman set")
    settings = _settings(cfg, args)
    kset = replace(model.kset, generator_tol=settings.generator_tol or model.kset.generator_tol)
    rng = np.random.default_rng(settings.seed)
    X = sample_box(model.system.domain_box, settings.samples, rng)
    rows = check_koopman_set(model.system, kset, X)
    result = {"model": model.name, "eigenpairs": rows, "independent": kset.independence_rank(rng) == len(kset)}
    span = {}
    try:
        C = expand_measurement(model.system, kset, rng)
        build_canonical(kset, C, rng)
        span["state"] = span["measurement"] = "ok"
    except SpanError as exc:
        span["error"] = str(exc)
    result["span"] = span
    ok = all(r["passed"] for r in rows) and result["independent"] and "error" not in span
    if getattr(args, "format", "json") == "text":
        for r in rows:
            status = "pass" if r["passed"] else "FAIL"
            print(f"{r['label']:>10}  lambda={complex(*r['lambda']):.6g}  residual={r['max_residual']:.3e}  {status}")
        print(f"independent: {result['independent']}")
        print(f"span: {span.get('error', 'ok')}")
    else:
        sys.stdout.write(_dump(result))
    return 0 if ok else EXIT_PRECONDITION


def cmd_list_models(args) -> int:
    info = {name: (fn.__doc__ or "").strip().splitlines()[0] for name, fn in MODELS.items()}
    if getattr(args, "format", "json") == "json":
        sys.stdout.write(_dump(info))
    else:
        for name, doc in info.items():
            print(f"{name:<22} {doc}")
    return 0


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="root RNG seed (default 42)")
    p.add_argument("--tol-rank", type=float, default=d, help="relative SVD rank cutoff")
    p.add_argument("--tol-group", type=float, default=d, help="eigenvalue grouping tolerance")
    p.add_argument("--samples", type=int, default=d, help="sample points for pointwise checks")
    p.add_argument("--out", default=d, help="directory for output files")
    p.add_argument("--format", choices=("json", "text"), default=argparse.SUPPRESS if suppress else "json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopobs", description=__doc__, allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    sub_kw = {"allow_abbrev": False}

    p = sub.add_parser("analyze", **sub_kw, help="run all observability tests")
    p.add_argument("target", help="built-in model name or config file")
    p.add_argument("--measurement", default="default", help="measurement choice (default, alt, ...)")
    p.add_argument("--perm", type=_perm, action="append", help="symmetry to test, e.g. 2,1,3 (repeatable)")
    p.add_argument("--lie-max-order", type=int, default=None, help="highest Lie derivative order (default n)")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", **sub_kw, help="integrate and write trajectory CSVs")
    p.add_argument("target")
    p.add_argument("--measurement", default="default")
    p.add_argument("--x0", type=_floats, action="append", help="initial state, e.g. 1,2,1 (repeatable)")
    p.add_argument("--mirror", help="also simulate P x0; 'P' for the model symmetry or an index map")
    p.add_argument("--t", type=float, default=None, help="final time")
    p.add_argument("--dt", type=float, default=None, help="RK4 step")
    p.add_argument("--stride", type=int, default=None, help="store every k-th step")
    p.add_argument("--plot", action="store_true", help="write a measurement-vs-time SVG")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", **sub_kw, help="render a bundle as text")
    p.add_argument("bundle")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate-koopman", **sub_kw, help="check a Koopman set against its system")
    p.add_argument("target")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_validate_koopman)

    p = sub.add_parser("list-models", **sub_kw, help="list built-in models")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_list_models)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
