"""Model configuration files (TOML).

::

    [system]
    name = "example2"
    f = ["x1", "x2", "-2*x1^2 - 2*x2^2 + 4*x3"]
    h = ["x1^2 + x2^2 + x3"]
    domain = [[-2, 2], [-2, 2], [-2, 2]]

    [measurements]
    alt = ["2*x1 - x2^2 + x3", "-x1^2 + x2 + x3"]

    [[koopman]]
    lambda = 1
    psi = "x1"
    mode = [1, 0, 0]

    [symmetry]
    P = [2, 1, 3]

    [analysis]
    seed = 42

    [simulate]
    x0 = [[1, 2, 1], [2, 1, 1]]
    t_final = 1

Complex numbers are written as strings such as ``"-1.5+0.866i"`` or as
``[re, im]`` pairs. ``P`` and ``x0`` take one list or a list of lists.
"""
from __future__ import annotations

import hashlib
import json
import sys as _sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

if _sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import DEFAULT_DT, NonlinearSystem
from .exprlang import ExprSyntaxError, ExprVector, parse, to_text
from .koopman import GENERATOR_TOL, KoopmanEigenpair, KoopmanSet
from .models import Model
from .symmetry import PermutationSymmetry


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisSettings:
    seed: int = 42
    tol_rank: float = 1e-12
    tol_group: float = 1e-8
    samples: int = 200
    lie_points: int = 5
    lie_max_order: int | None = None
    gramian_eps: float = 1e-4
    gramian_t: float = 1.0
    gramian_dt: float = DEFAULT_DT
    generator_tol: float | None = None


@dataclass(frozen=True)
class SimulateSettings:
    x0: tuple[tuple[float, ...], ...] = ()
    t_final: float = 1.0
    dt: float = DEFAULT_DT
    stride: int = 1


@dataclass(frozen=True, eq=False)
class ModelConfig:
    model: Model
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    digest: str = ""


_SECTIONS = {"system", "measurements", "koopman", "symmetry", "analysis", "simulate"}
_SYSTEM_KEYS = {"name", "n", "q", "f", "h", "domain", "guard"}
_PAIR_KEYS = {"lambda", "psi", "psi_re", "psi_im", "mode", "label"}
_SYMMETRY_KEYS = {"P", "label"}


def _reject_unknown(table: dict, allowed: set, where: str) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key{'s' if len(extra) > 1 else ''} in {where}: {', '.join(extra)}")


def parse_complex(value, where: str) -> complex:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number")
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return complex(value[0], value[1])
    if isinstance(value, str):
        try:
            return complex(value.replace(" ", "").replace("i", "j"))
        except ValueError:
            pass
    raise ConfigError(f"{where}: cannot read {value!r} as a complex number")


def _exprs(value, n: int, where: str) -> ExprVector:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{where}: expected a list of expression strings")
    try:
        return ExprVector.parse(value, n)
    except ExprSyntaxError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _list_of_lists(value, where: str) -> list[list]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a non-empty list")
    return value if isinstance(value[0], list) else [value]


def _settings(cls, table: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    _reject_unknown(table, set(known), where)
    out = {}
    for k, v in table.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}.{k}: expected a number")
        out[k] = int(v) if k in ("seed", "samples", "lie_points", "lie_max_order") else float(v)
    return cls(**out)


def _build_pair(table: dict, n: int, idx: int) -> KoopmanEigenpair:
    where = f"koopman[{idx + 1}]"
    _reject_unknown(table, _PAIR_KEYS, where)
    if "lambda" not in table or "mode" not in table:
        raise ConfigError(f"{where}: 'lambda' and 'mode' are required")
    lam = parse_complex(table["lambda"], f"{where}.lambda")
    if "psi" in table:
        if "psi_re" in table or "psi_im" in table:
            raise ConfigError(f"{where}: give either psi or psi_re/psi_im")
        re_src, im_src = table["psi"], None
    elif "psi_re" in table:
        re_src, im_src = table["psi_re"], table.get("psi_im")
    else:
        raise ConfigError(f"{where}: an eigenfunction (psi or psi_re) is required")
    try:
        psi_re = parse(re_src, n)
        psi_im = parse(im_src, n) if im_src is not None else None
    except ExprSyntaxError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    mode = table["mode"]
    if not isinstance(mode, list) or len(mode) != n:
        raise ConfigError(f"{where}.mode: expected {n} entries")
    vec = np.array([parse_complex(v, f"{where}.mode") for v in mode])
    if not np.any(vec.imag):
        vec = vec.real
    try:
        return KoopmanEigenpair(lam, psi_re, psi_im, vec, table.get("label", f"psi{idx + 1}"))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config_text(text: str) -> ModelConfig:
    """Parse and validate a configuration; raises :class:`ConfigError`."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    _reject_unknown(doc, _SECTIONS, "config")
    if "system" not in doc:
        raise ConfigError("missing [system] section")
    sysd = doc["system"]
    _reject_unknown(sysd, _SYSTEM_KEYS, "[system]")
    if "f" not in sysd or "h" not in sysd:
        raise ConfigError("[system] needs both f and h")
    f_src = sysd["f"] if isinstance(sysd["f"], list) else [sysd["f"]]
    n = int(sysd.get("n", len(f_src)))
    if n != len(f_src):
        raise ConfigError(f"[system]: n = {n} but f has {len(f_src)} components")
    f = _exprs(f_src, n, "[system].f")
    h = _exprs(sysd["h"], n, "[system].h")
    if "q" in sysd and int(sysd["q"]) != len(h):
        raise ConfigError(f"[system]: q = {sysd['q']} but h has {len(h)} components")
    name = str(sysd.get("name", "custom"))
    try:
        system = NonlinearSystem(f, h, sysd.get("domain"), name, tuple(sysd.get("guard", ())))
        system.check_domain()
    except ValueError as exc:
        raise ConfigError(f"[system]: {exc}") from exc
    except ArithmeticError as exc:
        raise ConfigError(f"[system]: evaluation fails on the domain box ({exc})") from exc

    measurements = {"default": h}
    for key, src in doc.get("measurements", {}).items():
        if key == "default":
            raise ConfigError("[measurements]: 'default' is reserved for [system].h")
        measurements[key] = _exprs(src, n, f"[measurements].{key}")

    analysis = _settings(AnalysisSettings, doc.get("analysis", {}), "[analysis]")
    kset = None
    if "koopman" in doc:
        entries = doc["koopman"]
        if not isinstance(entries, list):
            raise ConfigError("koopman eigenpairs must be given as [[koopman]] blocks")
        pairs = tuple(_build_pair(t, n, i) for i, t in enumerate(entries))
        try:
            kset = KoopmanSet(pairs, n, system.domain_box, analysis.generator_tol or GENERATOR_TOL)
        except ValueError as exc:
            raise ConfigError(f"[[koopman]]: {exc}") from exc

    syms = []
    if "symmetry" in doc:
        symd = doc["symmetry"]
        _reject_unknown(symd, _SYMMETRY_KEYS, "[symmetry]")
        for perm in _list_of_lists(symd.get("P", []), "[symmetry].P"):
            try:
                P = PermutationSymmetry(tuple(perm), str(symd.get("label", "P")))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[symmetry].P: {exc}") from exc
            if P.n != n:
                raise ConfigError(f"[symmetry].P: permutation of length {P.n} for n = {n}")
            syms.append(P)

    simd = dict(doc.get("simulate", {}))
    x0s: tuple = ()
    if "x0" in simd:
        x0s = tuple(tuple(float(v) for v in row) for row in _list_of_lists(simd.pop("x0"), "[simulate].x0"))
        if any(len(r) != n for r in x0s):
            raise ConfigError(f"[simulate].x0: every initial state needs {n} entries")
    simulate = replace(_settings(SimulateSettings, simd, "[simulate]"), x0=x0s)
    if simulate.stride != int(simulate.stride):
        raise ConfigError("[simulate].stride must be an integer")
    simulate = replace(simulate, stride=int(simulate.stride))

    model = Model(name, system, measurements, kset, tuple(syms), x0s[0] if x0s else None, simulate.t_final)
    return ModelConfig(model, analysis, simulate, hashlib.sha256(text.encode()).hexdigest())


def load_config(path: str | Path) -> ModelConfig:
    return load_config_text(Path(path).read_text())


def _toml_value(v) -> str:
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return _toml_value([v.real, v.imag])
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to config")


def render_config(model: Model, analysis: AnalysisSettings | None = None,
                  simulate: SimulateSettings | None = None) -> str:
    """Config text that loads back into an equivalent model."""
    sys = model.system
    lines = ["[system]", f"name = {_toml_value(model.name)}", f"f = {_toml_value(sys.f.texts())}",
             f"h = {_toml_value(sys.h.texts())}", f"domain = {_toml_value([list(b) for b in sys.domain_box])}"]
    if sys.guard:
        lines.append(f"guard = {_toml_value(list(sys.guard))}")
    extra = {k: v for k, v in model.measurements.items() if k != "default"}
    if extra:
        lines += ["", "[measurements]"] + [f"{k} = {_toml_value(v.texts())}" for k, v in extra.items()]
    for p in model.kset or ():
        lam = p.lam.real if p.lam.imag == 0 else p.lam
        lines += ["", "[[koopman]]", f"label = {_toml_value(p.label)}", f"lambda = {_toml_value(lam)}"]
        if p.psi_im is None:
            lines.append(f"psi = {_toml_value(to_text(p.psi_re))}")
        else:
            lines += [f"psi_re = {_toml_value(to_text(p.psi_re))}", f"psi_im = {_toml_value(to_text(p.psi_im))}"]
        mode = p.mode.real.tolist() if not np.any(p.mode.imag) else [complex(v) for v in p.mode]
        lines.append(f"mode = {_toml_value(mode)}")
    if model.symmetries:
        lines += ["", "[symmetry]", f"P = {_toml_value([list(P.perm) for P in model.symmetries])}"]
    analysis = analysis or AnalysisSettings(
        generator_tol=model.kset.generator_tol if model.kset is not None and model.kset.generator_tol != GENERATOR_TOL else None)
    lines += ["", "[analysis]"]
    lines += [f"{f.name} = {_toml_value(getattr(analysis, f.name))}" for f in fields(analysis)
              if getattr(analysis, f.name) is not None]
    simulate = simulate or SimulateSettings((tuple(model.x0),) if model.x0 is not None else (), model.t_final)
    lines += ["", "[simulate]"]
    if simulate.x0:
        lines.append(f"x0 = {_toml_value([list(x) for x in simulate.x0])}")
    lines += [f"t_final = {_toml_value(float(simulate.t_final))}", f"dt = {_toml_value(simulate.dt)}",
              f"stride = {simulate.stride}"]
    return "\n".join(lines) + "\n"
