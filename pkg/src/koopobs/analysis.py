"""End-to-end analysis: symmetry checks, Koopman rank test and the two
local oracles, collected into one JSON-ready bundle."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import __version__
from .config import AnalysisSettings
from .dynamics import flow, measurement_distance, sample_box
from .koopman import KoopmanSet, SpanError, build_canonical, expand_measurement
from .models import Model
from .observability import (INCONCLUSIVE, OBSERVABLE, UNOBSERVABLE, gramian_report, koopman_rank_test,
                            lie_rank_report, min_measurements)
from .symmetry import (ClassificationError, PermutationSymmetry, classify_eigenfunctions, induced_Q,
                       mode_symmetry_check, symmetry_verdict, verify_measurement_symmetry,
                       verify_state_symmetry)

RANK_RULE = "rank-condition"


class PreconditionError(RuntimeError):
    """A numerical precondition of the analysis failed; ``check`` names it."""

    def __init__(self, check: str, message: str):
        super().__init__(f"{check}: {message}")
        self.check = check


@dataclass(frozen=True)
class Streams:
    """Independent generators split from one seed."""

    points: np.random.Generator
    samples: np.random.Generator
    fit: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        return cls(*(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)))


def _cplx(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def check_koopman_set(sys, kset: KoopmanSet, X: np.ndarray) -> list[dict]:
    rows = []
    for i, chk in enumerate(kset.validate(sys, X)):
        rows.append({"index": i + 1, "label": kset[i].label, "lambda": _cplx(kset[i].lam),
                     "max_residual": chk.max_residual, "tolerance": chk.tolerance * chk.scale,
                     "passed": chk.passed})
    return rows


def _symmetry_entry(sys, P: PermutationSymmetry, kset: KoopmanSet | None, X, tol_group) -> dict:
    state = verify_state_symmetry(sys, P, X)
    meas = verify_measurement_symmetry(sys, P, X)
    entry = {"P": list(P.perm), "order": P.order,
             "state": {"passed": state.passed, "max_residual": state.max_residual},
             "measurement": {"passed": meas.passed, "max_residual": meas.max_residual}}
    if kset is not None and state.passed:
        try:
            cl = classify_eigenfunctions(kset, P, X, group_tol=tol_group)
            entry["classification"] = cl.to_json()
            modes = mode_symmetry_check(kset, P, cl)
            entry["modes"] = [{"index": m.index + 1, "kind": m.kind, "residual": m.residual, "passed": m.passed}
                              for m in modes]
            Q = induced_Q(cl, kset.eigenvalues, tol_group)
            entry["Q"] = [q + 1 for q in Q.perm]
            entry["Q_note"] = Q.note()
        except ClassificationError as exc:
            entry["classification_error"] = str(exc)
    entry["verdict"] = symmetry_verdict(sys, P, kset, X, tol_group).to_json()
    return entry


def combine_verdicts(methods: dict[str, str]) -> str:
    """Any unobservable finding wins; otherwise observable needs the exact
    rank test, or the Lie test when no Koopman set exists."""
    if UNOBSERVABLE in methods.values():
        return UNOBSERVABLE
    if methods.get("koopman-rank") == OBSERVABLE:
        return OBSERVABLE
    if "koopman-rank" not in methods and methods.get("lie-rank") == OBSERVABLE:
        return OBSERVABLE
    return INCONCLUSIVE


def analyze(model: Model, measurement: str = "default", settings: AnalysisSettings | None = None,
            symmetries: Sequence[PermutationSymmetry] | None = None, config_hash: str = "",
            trajectory_t: float | None = None) -> dict:
    """Run every applicable test and return the analysis bundle.

    Raises :class:`PreconditionError` when the Koopman set fails its
    generator, independence or span checks.
    """
    settings = settings or AnalysisSettings()
    sys = model.with_measurement(measurement)
    streams = Streams.from_seed(settings.seed)
    kset = model.kset
    if kset is not None and settings.generator_tol is not None:
        kset = replace(kset, generator_tol=settings.generator_tol)
    X = sample_box(sys.domain_box, settings.samples, streams.samples)
    points = sample_box(sys.domain_box, settings.lie_points, streams.points)
    reports, methods, notes = [], {}, list(model.notes)

    koop, mmin = None, None
    if kset is not None:
        checks = check_koopman_set(sys, kset, X)
        bad = [c for c in checks if not c["passed"]]
        if bad:
            raise PreconditionError("generator", f"eigenpair {bad[0]['index']} ({bad[0]['label']}) has residual "
                                                 f"{bad[0]['max_residual']:.3e}")
        try:
            C = expand_measurement(sys, kset, streams.fit)
            cs = build_canonical(kset, C, streams.fit)
        except SpanError as exc:
            raise PreconditionError("span", str(exc)) from exc
        koop = koopman_rank_test(cs, settings.tol_rank, settings.tol_group)
        mmin = min_measurements(koop)
        reports.append(koop.to_json())
        methods["koopman-rank"] = koop.verdict

    syms = list(model.symmetries if symmetries is None else symmetries)
    sym_entries = [_symmetry_entry(sys, P, kset, X, settings.tol_group) for P in syms]

    lie = lie_rank_report(sys, points, settings.lie_max_order, settings.tol_rank)
    gram = gramian_report(sys, points, settings.gramian_eps, settings.gramian_t, settings.gramian_dt)
    reports += [lie.to_json(), gram.to_json()]
    methods["lie-rank"] = lie.verdict
    methods["empirical-gramian"] = gram.verdict
    if any(s["truncated"] for s in lie.samples):
        notes.append("Lie derivatives were cut short by the expression-size budget; the Lie rank is a lower bound")

    rule_verdicts = [e["verdict"] for e in sym_entries if e["verdict"]["verdict"] != INCONCLUSIVE]
    if rule_verdicts:
        methods["symmetry"] = rule_verdicts[0]["verdict"]
    if model.x0 is not None:
        t_ev = model.t_final if trajectory_t is None else trajectory_t
        for e, P in zip(sym_entries, syms):
            if e["state"]["passed"]:
                x0 = np.asarray(model.x0, dtype=float)
                d = measurement_distance(flow(sys, x0, t_ev), flow(sys, P.apply(x0), t_ev))
                e["trajectory_evidence"] = {"x0": [float(v) for v in x0], "t_final": float(t_ev),
                                            "measurement_distance": d}

    verdict = combine_verdicts(methods)
    if verdict == UNOBSERVABLE and rule_verdicts:
        theorem = rule_verdicts[0]["theorem"]
    elif koop is not None:
        theorem = RANK_RULE
    else:
        theorem = "none"
    return {
        "tool": {"name": "koopobs", "version": __version__},
        "provenance": {"model": model.name, "measurement": measurement, "seed": settings.seed,
                       "config_hash": config_hash},
        "system": sys.describe(),
        "verdict": verdict,
        "theorem": theorem,
        "min_measurements": mmin,
        "q": sys.q,
        "methods": methods,
        "reports": reports,
        "symmetries": sym_entries,
        "notes": notes,
    }


EXIT_CODES = {OBSERVABLE: 0, UNOBSERVABLE: 3, INCONCLUSIVE: 4}
