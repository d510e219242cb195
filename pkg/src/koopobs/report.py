"""Plain-text rendering of analysis bundles."""
from __future__ import annotations

METHOD_ORDER = ("koopman-rank", "symmetry", "lie-rank", "empirical-gramian")


class ReportError(ValueError):
    pass


def _fmt_lambda(re: float, im: float) -> str:
    re_s = f"{re:.6g}"
    if abs(im) < 1e-12:
        return re_s
    return f"{re_s}{'+' if im >= 0 else '-'}{abs(im):.6g}j"


def _require(bundle: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in bundle]
    if missing:
        raise ReportError(f"bundle is missing {', '.join(missing)}")


def render_report(bundle: dict) -> str:
    """Deterministic text summary: group table, applied rules, oracle agreement."""
    if not isinstance(bundle, dict):
        raise ReportError("bundle must be a JSON object")
    _require(bundle, "provenance", "verdict", "theorem", "methods", "reports", "q")
    reports = {r.get("method"): r for r in bundle["reports"]}
    if not reports:
        raise ReportError("bundle has no reports")
    prov = bundle["provenance"]
    out = [f"model: {prov.get('model')}   measurement: {prov.get('measurement')}   seed: {prov.get('seed')}",
           f"verdict: {bundle['verdict']} ({bundle['theorem']})"]
    if bundle.get("min_measurements") is not None:
        out.append(f"minimum measurements: {bundle['min_measurements']}")

    koop = reports.get("koopman-rank")
    if koop is not None:
        if not koop.get("groups"):
            raise ReportError("Koopman rank report has no eigenvalue groups")
        out += ["", "Koopman rank condition", f"  {'lambda':<22}{'r':>3}{'rank':>6}  result"]
        for g in koop["groups"]:
            ok = g["rank"] == g["multiplicity"]
            out.append(f"  {_fmt_lambda(g['lambda_re'], g['lambda_im']):<22}{g['multiplicity']:>3}{g['rank']:>6}  "
                       f"{'pass' if ok else 'FAIL'}")

    out += ["", "Rules applied"]
    rules = 0
    for s in bundle.get("symmetries", []):
        v = s["verdict"]
        out.append(f"  P={s['P']}: {v['verdict']} [{v['theorem']}] {v['rationale']}")
        ev = s.get("trajectory_evidence")
        if ev:
            out.append(f"    max |y(x0) - y(P x0)| over [0, {ev['t_final']:g}] = {ev['measurement_distance']:.3e}")
        rules += 1
    mm = bundle.get("min_measurements")
    if mm is not None and bundle["q"] < mm:
        out.append(f"  q={bundle['q']} < max multiplicity {mm} (multiplicity bound)")
        rules += 1
    if koop is not None:
        out.append(f"  rank condition: {koop['verdict']}")
        rules += 1
    if not rules:
        out.append("  none")

    methods = bundle["methods"]
    names = [m for m in METHOD_ORDER if m in methods]
    width = max(len(m) for m in names) + 2
    out += ["", "Oracle agreement", " " * width + "".join(f"{m:>{width}}" for m in names)]
    for a in names:
        cells = "".join(f"{('agree' if methods[a] == methods[b] else 'DIFFER'):>{width}}" for b in names)
        out.append(f"{a:<{width}}{cells}")
    out.append("  " + ", ".join(f"{m}: {methods[m]}" for m in names))
    for note in bundle.get("notes", []):
        out.append(f"note: {note}")
    return "\n".join(out) + "\n"
