"""Configuration ingestion, pipeline orchestration, and result export.

Pipeline: screen for noteworthy scenarios, estimate their indices (skipping
the redundancy side where the reliability index alone clears the threshold),
classify each against the threshold, and export tables and the scatter
diagram. Identical config and seed produce byte-identical CSV/JSON/SVG
artifacts; wall-clock timings are logged to stderr only.

Exit codes: 0 success, 2 configuration error, 3 non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .probcore import ConfigurationError, Marginal, RandomModel, std_normal_cdf, std_normal_inv_cdf
from .relengines import ConvergenceError, estimate_scenario_indices, make_engine
from .scenarios import (
    FailurePattern,
    ResilienceThreshold,
    check_resilient,
    enumerate_scenarios,
)
from .screening import (
    AdaptiveConfig,
    ScreeningReport,
    nball_screen,
    sequential_search,
    surrogate_adaptive_screen,
)
from .structmodels import (
    DanielsBar,
    DanielsConfig,
    DanielsSystem,
    LoadTerm,
    ShearFrameConfig,
    ShearFrameModel,
    TrussConfig,
    TrussMember,
    TrussModel,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------


def _require_keys(section, allowed, required, path):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(section)
    if missing:
        raise ConfigurationError(f"{path}: missing keys {sorted(missing)}")


def _parse_marginal(d, path):
    _require_keys(d, {"kind", "mean", "cov"}, {"kind", "mean", "cov"}, path)
    return Marginal(d["kind"], float(d["mean"]), float(d["cov"]))


def _parse_daniels(section, path):
    _require_keys(section, {"type", "layers", "load", "system_rule"}, {"type", "layers", "load"}, path)
    layers = []
    for i, layer in enumerate(section["layers"]):
        bars = []
        for j, bar in enumerate(layer):
            _require_keys(bar, {"area", "yield"}, {"area", "yield"}, f"{path}.layers[{i}][{j}]")
            bars.append(DanielsBar(float(bar["area"]), _parse_marginal(bar["yield"], f"{path}.layers[{i}][{j}].yield")))
        layers.append(tuple(bars))
    cfg = DanielsConfig(tuple(layers), float(section["load"]), section.get("system_rule", "layer_collapse"))
    model = DanielsSystem(cfg)
    implied = [bar.yield_marginal for layer in cfg.layers for bar in layer]
    return model, implied


def _parse_truss(section, path):
    allowed = {
        "type", "nodes", "members", "supports", "loads", "n_load_rvs",
        "member_yield_rvs", "damage_stiffness_factor", "system_rule",
    }
    _require_keys(section, allowed, allowed - {"system_rule"}, path)
    members = tuple(
        TrussMember(int(m["i"]), int(m["j"]), float(m["area"]), float(m["modulus"]))
        for m in section["members"]
    )
    loads = tuple(
        LoadTerm(int(t["node"]), int(t["dof"]), float(t["scale"]), t.get("rv"))
        for t in section["loads"]
    )
    rule = section.get("system_rule", {"name": "instability"})
    if rule.get("name") == "instability":
        system_rule = ("instability",)
    elif rule.get("name") == "max_failed":
        system_rule = ("max_failed", int(rule["count"]))
    else:
        raise ConfigurationError(f"{path}.system_rule: unknown rule {rule!r}")
    cfg = TrussConfig(
        nodes=tuple((float(x), float(y)) for x, y in section["nodes"]),
        members=members,
        supports=tuple((int(n), int(d)) for n, d in section["supports"]),
        loads=loads,
        n_load_rvs=int(section["n_load_rvs"]),
        member_yield_rv=tuple(int(i) for i in section["member_yield_rvs"]),
        damage_stiffness_factor=float(section["damage_stiffness_factor"]),
        system_rule=system_rule,
    )
    return TrussModel(cfg), None


def _parse_shear_frame(section, path):
    allowed = {"type", "story_stiffness", "story_capacity", "load_signs", "drift_limit"}
    _require_keys(section, allowed, allowed, path)
    cfg = ShearFrameConfig(
        story_stiffness=tuple(float(v) for v in section["story_stiffness"]),
        story_capacity=tuple(float(v) for v in section["story_capacity"]),
        load_signs=tuple(float(v) for v in section["load_signs"]),
        drift_limit=float(section["drift_limit"]),
    )
    return ShearFrameModel(cfg), None


@dataclass
class AnalysisConfig:
    model: object
    random_model: RandomModel
    threshold: ResilienceThreshold
    screening: dict
    engine: dict
    estimation: dict
    seed: int
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def parse_config(data: dict) -> AnalysisConfig:
    _require_keys(
        data,
        {"model", "random_variables", "threshold", "method", "seed", "output"},
        {"model", "threshold", "method"},
        "config",
    )
    model_section = data["model"]
    mtype = model_section.get("type")
    if mtype == "daniels":
        model, implied = _parse_daniels(model_section, "model")
    elif mtype == "truss":
        model, implied = _parse_truss(model_section, "model")
    elif mtype == "shear_frame":
        model, implied = _parse_shear_frame(model_section, "model")
    else:
        raise ConfigurationError(f"model.type: unknown model type {mtype!r}")

    rv = data.get("random_variables", {}) or {}
    _require_keys(rv, {"marginals", "correlation"}, set(), "random_variables")
    if "marginals" in rv:
        marginals = [_parse_marginal(m, f"random_variables.marginals[{i}]") for i, m in enumerate(rv["marginals"])]
    elif implied is not None:
        marginals = implied
    else:
        raise ConfigurationError("random_variables.marginals required for this model type")
    corr = None
    if rv.get("correlation"):
        d = len(marginals)
        corr = np.eye(d)
        for item in rv["correlation"]:
            i, j, r = int(item[0]), int(item[1]), float(item[2])
            if not (0 <= i < d and 0 <= j < d and i != j):
                raise ConfigurationError(f"random_variables.correlation: bad pair ({i}, {j})")
            corr[i, j] = corr[j, i] = r
    random_model = RandomModel(marginals, corr)
    if hasattr(model, "margins"):
        probe = np.zeros((1, random_model.dim))
        try:
            model.margins(random_model.to_physical(probe))
        except Exception as exc:
            raise ConfigurationError(f"model/random_variables dimension mismatch: {exc}") from exc

    thr = data["threshold"]
    _require_keys(thr, {"p_threshold", "p_dm", "lambda_h", "n_scenarios"}, set(), "threshold")
    if "p_threshold" in thr and ("p_dm" in thr or "lambda_h" in thr or "n_scenarios" in thr):
        raise ConfigurationError("threshold: give either p_threshold or the de-minimis triple, not both")
    if "p_threshold" in thr:
        threshold = ResilienceThreshold.from_probability(float(thr["p_threshold"]))
    elif {"p_dm", "lambda_h", "n_scenarios"} <= set(thr):
        threshold = ResilienceThreshold.from_de_minimis(
            float(thr["p_dm"]), float(thr["lambda_h"]), int(thr["n_scenarios"])
        )
    else:
        raise ConfigurationError("threshold: incomplete specification")

    method = data["method"]
    _require_keys(method, {"screening", "engine", "estimation"}, {"screening"}, "method")
    screening = dict(method["screening"])
    if screening.get("name") not in ("sequential", "nball", "adaptive", "enumerate"):
        raise ConfigurationError(f"method.screening.name: unknown method {screening.get('name')!r}")
    engine = dict(method.get("engine", {"name": "mcs", "n": 100_000}))
    estimation = dict(method.get("estimation", {"engine": {"name": "mcs_survey", "n": 1_000_000}}))
    return AnalysisConfig(
        model=model,
        random_model=random_model,
        threshold=threshold,
        screening=screening,
        engine=engine,
        estimation=estimation,
        seed=int(data.get("seed", 0)),
        output=dict(data.get("output", {}) or {}),
        raw=data,
    )


def load_config(path) -> AnalysisConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data)


def bundled_config_path(name):
    """Path of a packaged example configuration (daniels2, daniels1, bridge25,
    building6, frame3)."""
    return resources.files("resilscreen.configs").joinpath(f"{name}.json")


def load_bundled_config(name) -> AnalysisConfig:
    with resources.files("resilscreen.configs").joinpath(f"{name}.json").open() as fh:
        return parse_config(json.load(fh))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    screening: ScreeningReport
    rows: list  # (pattern, ResilienceIndices, resilient flag)
    threshold: ResilienceThreshold
    screening_calls: int
    estimation_calls: int
    timings: dict = field(default_factory=dict)

    @property
    def critical(self):
        return [(p, idx) for p, idx, ok in self.rows if not ok]


def run_screening(config: AnalysisConfig) -> ScreeningReport:
    name = config.screening.get("name")
    opts = {k: v for k, v in config.screening.items() if k != "name"}
    model, rm, thr = config.model, config.random_model, config.threshold
    if name == "sequential":
        engine = make_engine(
            config.engine.get("name", "ce_gm"),
            model,
            rm,
            {k: v for k, v in config.engine.items() if k != "name"},
        )
        return sequential_search(model, rm, thr, engine, seed=config.seed, **opts)
    if name == "nball":
        return nball_screen(model, rm, thr, seed=config.seed, **opts)
    if name == "adaptive":
        adaptive = AdaptiveConfig(seed=config.seed, **opts)
        return surrogate_adaptive_screen(model, rm, thr, adaptive)
    if name == "enumerate":
        patterns = enumerate_scenarios(model.n_components, include_null=bool(opts.get("include_null", False)))
        if not opts.get("include_null", False):
            patterns = [p for p in patterns if not p.is_null]
        return ScreeningReport(patterns, [], 0, 0, "enumerate", [])
    raise ConfigurationError(f"unknown screening method {name!r}")


def run_pipeline(config: AnalysisConfig) -> RunReport:
    t0 = time.perf_counter()
    screen = run_screening(config)
    t1 = time.perf_counter()
    est_engine = config.estimation.get("engine", {"name": "mcs_survey", "n": 1_000_000})
    engine_name = est_engine.get("name", "mcs_survey")
    engine_opts = {k: v for k, v in est_engine.items() if k != "name"}
    assessments, est_calls = estimate_scenario_indices(
        config.model,
        config.random_model,
        screen.noteworthy,
        config.threshold,
        engine=engine_name,
        engine_options=engine_opts,
        seed=config.seed + 1_000_003,
    )
    t2 = time.perf_counter()
    rows = [(a.pattern, a.indices, check_resilient(a.indices, config.threshold)) for a in assessments]
    return RunReport(
        screening=screen,
        rows=rows,
        threshold=config.threshold,
        screening_calls=screen.n_model_calls,
        estimation_calls=est_calls,
        timings={"screening_s": t1 - t0, "estimation_s": t2 - t1},
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _fmt(x):
    """Six significant digits, stable across runs; empty for missing."""
    if x is None:
        return ""
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def export_csv(report: RunReport, path):
    lines = ["scenario_id,failed_components,beta,pi,combined,resilient,beta_cov,pi_cov"]
    for pattern, idx, ok in report.rows:
        failed = ";".join(str(i + 1) for i in pattern.failed_indices)
        lines.append(
            ",".join(
                [
                    str(pattern.failed_mask),
                    failed,
                    _fmt(idx.beta),
                    _fmt(idx.pi),
                    _fmt(idx.combined),
                    "true" if ok else "false",
                    _fmt(idx.beta_cov),
                    _fmt(idx.pi_cov if idx.pi_computed else None),
                ]
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def report_to_dict(report: RunReport):
    def _num(x):
        if x is None:
            return None
        if isinstance(x, float) and math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.6g}")

    return {
        "threshold": {"p_threshold": _num(report.threshold.p_threshold), "radius": _num(report.threshold.radius)},
        "screening": {
            "method": report.screening.method,
            "n_model_calls": report.screening.n_model_calls,
            "n_surrogate_calls": report.screening.n_surrogate_calls,
            "noteworthy": [list(p.failed_indices) for p in report.screening.noteworthy],
            "excluded_events": [list(e.failed_indices) for e in report.screening.excluded_events],
        },
        "ledger": {
            "screening_calls": report.screening_calls,
            "estimation_calls": report.estimation_calls,
            "total_calls": report.screening_calls + report.estimation_calls,
        },
        "scenarios": [
            {
                "scenario_id": pattern.failed_mask,
                "failed_components": [i + 1 for i in pattern.failed_indices],
                "beta": _num(idx.beta),
                "pi": _num(idx.pi),
                "combined": _num(idx.combined),
                "resilient": bool(ok),
                "beta_cov": _num(idx.beta_cov),
                "pi_cov": _num(idx.pi_cov) if idx.pi_computed else None,
            }
            for pattern, idx, ok in report.rows
        ],
    }


def export_json(report: RunReport, path):
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Scatter diagram (hand-emitted SVG, fixed 800x600 viewport)
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H = 800, 600
_MARGIN = 60


def _threshold_curve(threshold, beta_lo, beta_hi, n=200):
    """Points of the boundary Phi(-pi) Phi(-beta) = p_threshold."""
    pts = []
    for beta in np.linspace(beta_lo, min(beta_hi, threshold.radius - 1e-9), n):
        pb = float(std_normal_cdf(-beta))
        ratio = threshold.p_threshold / pb
        if not 0.0 < ratio < 1.0:
            continue
        pts.append((float(beta), -float(std_normal_inv_cdf(ratio))))
    return pts


def render_beta_pi_svg(report: RunReport, path):
    threshold = report.threshold
    finite = [
        (idx.beta, idx.pi if idx.pi_computed and not math.isinf(idx.pi) else None)
        for _, idx, _ in report.rows
        if not math.isinf(idx.beta)
    ]
    betas = [b for b, _ in finite] + [threshold.radius]
    pis = [p for _, p in finite if p is not None] + [threshold.radius]
    blo, bhi = min(betas + [-1.0]) - 0.5, max(betas) + 0.5
    plo, phi_ = min(pis + [-4.0]) - 0.5, max(pis) + 0.5

    def sx(b):
        return _MARGIN + (b - blo) / (bhi - blo) * (_SVG_W - 2 * _MARGIN)

    def sy(p):
        return _SVG_H - _MARGIN - (p - plo) / (phi_ - plo) * (_SVG_H - 2 * _MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<line x1="{_MARGIN}" y1="{_SVG_H - _MARGIN}" x2="{_SVG_W - _MARGIN}" '
        f'y2="{_SVG_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" y2="{_SVG_H - _MARGIN}" stroke="black"/>',
        f'<text x="{_SVG_W // 2}" y="{_SVG_H - 15}" text-anchor="middle" '
        f'font-size="16">reliability index</text>',
        f'<text x="18" y="{_SVG_H // 2}" text-anchor="middle" font-size="16" '
        f'transform="rotate(-90 18 {_SVG_H // 2})">redundancy index</text>',
    ]
    curve = _threshold_curve(threshold, blo, bhi)
    curve = [(b, p) for b, p in curve if plo <= p <= phi_]
    if curve:
        d = " ".join(f"{sx(b):.2f},{sy(p):.2f}" for b, p in curve)
        parts.append(f'<polyline points="{d}" fill="none" stroke="orange" stroke-width="2" stroke-dasharray="8 5"/>')
    for pattern, idx, ok in report.rows:
        if math.isinf(idx.beta):
            continue
        pi_val = idx.pi if idx.pi_computed and not math.isinf(idx.pi) else phi_ - 0.25
        color = "red" if not ok else "steelblue"
        x, y = sx(idx.beta), sy(pi_val)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="5" fill="{color}"/>')
        if not ok:
            parts.append(
                f'<text x="{x + 7:.2f}" y="{y - 7:.2f}" font-size="12" fill="red">{pattern.label()}</text>'
            )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to a JSON analysis configuration")
    sub.add_argument("--method", help="override method.screening.name")
    sub.add_argument("--threshold", type=float, help="override threshold.p_threshold")
    sub.add_argument("--seed", type=int, help="override the run seed")
    sub.add_argument("--out", help="output directory for artifacts")


def _load_with_overrides(args) -> AnalysisConfig:
    with open(args.config) as fh:
        data = json.load(fh)
    if args.method:
        data.setdefault("method", {}).setdefault("screening", {})["name"] = args.method
    if args.threshold is not None:
        data["threshold"] = {"p_threshold": args.threshold}
    if args.seed is not None:
        data["seed"] = args.seed
    return parse_config(data)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="resilscreen", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "screen", "estimate"):
        sub = subs.add_parser(name)
        _add_common(sub)
    plot = subs.add_parser("plot")
    plot.add_argument("--config", required=True)
    plot.add_argument("--from-json", required=True, help="previously exported JSON report")
    plot.add_argument("--out", required=True, help="SVG output path")
    args = parser.parse_args(argv)

    try:
        if args.command == "plot":
            return _cmd_plot(args)
        config = _load_with_overrides(args)
        if args.command == "screen":
            report = run_screening(config)
            print(f"method={report.method} noteworthy={len(report.noteworthy)} "
                  f"model_calls={report.n_model_calls}")
            for p in report.noteworthy:
                print(f"  {p.label()}")
            return EXIT_OK
        if args.command == "estimate":
            config.screening = {"name": "enumerate"}
        report = run_pipeline(config)
        _emit_outputs(config, report, args.out)
        n_crit = len(report.critical)
        print(
            f"noteworthy={len(report.rows)} critical={n_crit} "
            f"calls={report.screening_calls}+{report.estimation_calls}"
        )
        print(
            f"timings: screening {report.timings['screening_s']:.2f}s, "
            f"estimation {report.timings['estimation_s']:.2f}s",
            file=sys.stderr,
        )
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def _emit_outputs(config, report, out_dir):
    import os

    output = dict(config.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        output.setdefault("csv", os.path.join(out_dir, "results.csv"))
        output.setdefault("json", os.path.join(out_dir, "results.json"))
        output.setdefault("svg", os.path.join(out_dir, "beta_pi.svg"))
    if output.get("csv"):
        export_csv(report, output["csv"])
    if output.get("json"):
        export_json(report, output["json"])
    if output.get("svg"):
        render_beta_pi_svg(report, output["svg"])


def _cmd_plot(args):
    config = load_config(args.config)
    try:
        with open(args.from_json) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read report: {exc}", file=sys.stderr)
        return EXIT_IO
    rows = []
    nc = config.model.n_components

    from .scenarios import ResilienceIndices

    def _val(v):
        if v in ("inf", "-inf"):
            return math.inf if v == "inf" else -math.inf
        return v

    for row in data["scenarios"]:
        pattern = FailurePattern.from_indices(nc, [i - 1 for i in row["failed_components"]])
        idx = ResilienceIndices(
            _val(row["beta"]),
            _val(row["pi"]) if row["pi"] is not None else None,
            _val(row["combined"]),
            row.get("beta_cov") or 0.0,
            row.get("pi_cov") or 0.0,
        )
        rows.append((pattern, idx, bool(row["resilient"])))
    report = RunReport(
        screening=ScreeningReport([], [], 0, 0, data["screening"]["method"], []),
        rows=rows,
        threshold=config.threshold,
        screening_calls=0,
        estimation_calls=0,
    )
    render_beta_pi_svg(report, args.out)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
