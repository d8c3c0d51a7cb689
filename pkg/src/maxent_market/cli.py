"""Command-line entry point: ``maxent-market --scenario <name> --out <dir>``.

Exit status is 0 when every check passes, 2 when an acceptance check fails
and 1 on an execution or configuration error (``error.json`` is written).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
import traceback
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .activity import ActivityProfile, connect_markets, equilibrium_maximize, relative_entropy_analytic
from .density import GammaLaw
from .gop import GeneralMarketSpec, NoGop, ReferenceWeights, benchmarked_drift_test, gop_solve, market_of_reference, prices_of_risk_invariance
from .maxent import theorem1_report
from .params import ModelParams
from .plotting import emit_plot_data, render_figures
from .reporting import sha256_file, sha256_json, to_jsonable, write_csv, write_json
from .sde import WORKERS_ENV, simulate_basis_market
from .stats import TestReport, moment_reports, stationary_defect_oracle, supermartingale_defect
from .verify import TITLES, CriterionResult, Verifier, VerifyConfig

SCENARIOS = ("simulate", "theorem1", "equilibrium", "theorem3", "gop", "reference-transform", "full-verify")
FORMATS = ("csv", "json")

_number_list = {"type": "array", "items": {"type": "number"}}
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "paths": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "formats": {"type": "array", "items": {"enum": list(FORMATS)}, "minItems": 1, "uniqueItems": True},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "activities": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "activity": {"type": "number", "minimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "gamma_e": {"type": "number"},
                "y_bar": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "mode": {"enum": ["entropy-maximizing", "free"]},
            },
        },
        "record_times": _number_list,
        "csv_paths": {"type": "integer", "minimum": 0},
        "max_degree": {"type": "integer", "minimum": 1, "maximum": 6},
        "starts": {"type": "integer", "minimum": 1},
        "profile": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "connect": {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}, "minItems": 2, "maxItems": 2},
        "market": {
            "type": "object",
            "required": ["mu", "sigma"],
            "properties": {"mu": _number_list, "sigma": {"type": "array", "items": _number_list}},
        },
        "weights": {
            "oneOf": [
                _number_list,
                {"type": "array", "items": _number_list},
                {"type": "object", "required": ["random"], "properties": {"random": {"type": "integer", "minimum": 1}}, "additionalProperties": False},
            ]
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
    },
}



class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str
    model: ModelParams
    paths: int
    output_dir: Path
    formats: tuple
    seed: int
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "model": self.model.to_dict(),
            "paths": self.paths,
            "seed": self.seed,
            "formats": list(self.formats),
            **self.options,
        }


DEFAULT_PATHS = 100_000


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors (exit 1); 2 is reserved for failed checks
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="maxent-market", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--scenario", choices=SCENARIOS, help="scenario to run (overrides the config)")
    p.add_argument("--seed", type=int, help="root seed, unsigned 64-bit")
    p.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    p.add_argument("--out", type=Path, help="output directory (default: ./out/<scenario>)")
    p.add_argument("--format", default=None, help="comma-separated subset of csv,json")
    p.add_argument("--print-schema", action="store_true", help="print the JSON config schema and exit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def load_config(args: argparse.Namespace) -> RunConfig:
    import jsonschema

    doc = {}
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if args.scenario is not None:
        doc["scenario"] = args.scenario
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.paths is not None:
        doc["paths"] = args.paths
    if args.out is not None:
        doc["output_dir"] = str(args.out)
    if args.format is not None:
        doc["formats"] = [f.strip() for f in args.format.split(",") if f.strip()]
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc

    scenario = doc["scenario"]
    seed = int(doc.get("seed", 0))
    model_doc = dict(doc.get("model", {}))
    model_doc["seed"] = seed
    try:
        model = ModelParams.from_dict(model_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc
    reserved = {"scenario", "seed", "paths", "output_dir", "formats", "model"}
    options = {k: v for k, v in doc.items() if k not in reserved}
    return RunConfig(
        scenario=scenario,
        model=model,
        paths=int(doc.get("paths", DEFAULT_PATHS)),
        output_dir=Path(doc.get("output_dir", Path("out") / scenario)),
        formats=tuple(doc.get("formats", FORMATS)),
        seed=seed,
        options=options,
    )


# ------------------------------------------------------------------ scenarios

class Outputs:
    """Collects written files; honours the requested formats."""

    def __init__(self, root: Path, formats):
        self.root = root
        self.formats = set(formats)
        self.files: list[Path] = []

    def json(self, name: str, obj):
        if "json" in self.formats:
            self.files.append(write_json(self.root / name, obj))

    def csv(self, name: str, header, rows):
        if "csv" in self.formats:
            self.files.append(write_csv(self.root / name, header, rows))

    def plot_data(self, artifacts, keys=None):
        if "csv" in self.formats:
            self.files += emit_plot_data(artifacts, self.root, keys)


def _criteria_doc(results: list[CriterionResult]) -> list:
    return [
        {"number": r.number, "title": r.title, "passed": r.passed, "error": r.error, "reports": [to_jsonable(t) for t in r.reports]}
        for r in results
    ]


def _as_result(number: int, title: str, reports) -> CriterionResult:
    return CriterionResult(number, title, list(reports))


def _verifier(cfg: RunConfig) -> Verifier:
    paths = cfg.paths
    vc = VerifyConfig(
        seed=cfg.seed,
        paths=paths,
        activity=cfg.model.activities[0],
        dt=cfg.model.dt,
        leverage_paths=min(1_000, paths),
        theorem3_paths=min(1_000, paths),
    )
    return Verifier(vc)


def scenario_simulate(cfg: RunConfig, out: Outputs):
    p = cfg.model
    record = cfg.options.get("record_times") or sorted({0.0, *np.arange(1.0, p.horizon + 1e-9, 1.0).tolist(), p.horizon})
    sim = simulate_basis_market(p, cfg.paths, cfg.seed, record_times=record)
    summary = {"seed": cfg.seed, "paths": cfg.paths, "scheme": sim.scheme, "clipped": sim.clipped, "times": sim.times, "components": []}
    from scipy import stats as sps

    for j in range(p.n):
        y = sim.y[:, j, :]
        rows = []
        for k, t in enumerate(sim.times):
            ks = sps.kstest(y[:, k], "gamma", args=(2.0, 0.0, p.y_bar / 2.0))
            rows.append({
                "t": t,
                "mean_y": float(y[:, k].mean()),
                "mean_log_y": float(np.log(y[:, k]).mean()),
                "mean_inv_y": float((1.0 / y[:, k]).mean()),
                "mean_b_hat": float(sim.b_hat[:, j, k].mean()),
                "ks_statistic": float(ks.statistic),
                "ks_pvalue": float(ks.pvalue),
            })
        summary["components"].append(rows)
    # the acceptance check uses component 0 at t = 1, 5, 10 (or the last record)
    check = [t for t in (1.0, 5.0, 10.0) if np.any(np.isclose(sim.times, t))] or [float(sim.times[-1])]
    reports = moment_reports(sim.y[:, 0, :], sim.times, check, p.y_bar, cfg.seed)
    summary["mean_log_lambda"] = sim.log_lambda.mean(axis=0)
    out.json("summary.json", summary)

    limit = min(int(cfg.options.get("csv_paths", 100)), cfg.paths)
    header = ["path_id", "t", "component", "y", "tau", "theta", "b_hat", "log_lambda", "s0_hat"]
    rows = (
        (i, sim.times[k], j, sim.y[i, j, k], sim.tau[i, j, k], sim.theta[i, j, k], sim.b_hat[i, j, k], sim.log_lambda[i, k], sim.s0_hat[i, k])
        for i in range(limit)
        for k in range(len(sim.times))
        for j in range(p.n)
    )
    out.csv("paths.csv", header, rows)
    curve = supermartingale_defect(sim, sim.times, confidence=0.99)
    artifacts = {
        "density_overlay": {"y": sim.y[:, 0, -1], "y_bar": p.y_bar},
        "defect_curve": {"curve": curve, "analytic": stationary_defect_oracle(p.activities[0], sim.times)},
    }
    out.plot_data(artifacts)
    return [_as_result(4, TITLES[4], reports)]


def scenario_theorem1(cfg: RunConfig, out: Outputs):
    v = _verifier(cfg)
    if "max_degree" in cfg.options:
        v.config.phi_degree = cfg.options["max_degree"]
    if "starts" in cfg.options:
        v.config.phi_starts = cfg.options["starts"]
    results = v.run_all([1, 2, 3])
    report = theorem1_report(cfg.model, phi_search=False)
    minima = v.artifacts.get("phi_minima", [])
    report["phi_match"] = {
        "max_degree": v.config.phi_degree,
        "starts": v.config.phi_starts,
        "distinct_minima": [{"coefficients": c, "objective": f} for c, f in minima],
    }
    out.json("theorem1_report.json", report)
    gamma = GammaLaw(2.0, 2.0 / report["y_bar"])
    grid = np.geomspace(1e-3, gamma.working_support()[1], 400)
    out.csv("stationary_density.csv", ["y", "q"], zip(grid, gamma.pdf(grid)))
    out.plot_data(v.artifacts, ["phi_trace"] if "phi_trace" in v.artifacts else [])
    return results


def scenario_equilibrium(cfg: RunConfig, out: Outputs):
    v = _verifier(cfg)
    results = v.run_all([5, 6])
    p = cfg.model
    profile = ActivityProfile(cfg.options.get("profile", p.activities))
    doc = {"profile": list(profile.activities), "market_activity": profile.market_activity, "analytic": relative_entropy_analytic(profile, 1.0)}
    eq = equilibrium_maximize(profile.market_activity, profile.n, restarts=v.config.equilibrium_restarts, seed=cfg.seed)
    doc["equilibrium"] = {"profile": list(eq.profile.activities), "objective": eq.objective, "max_deviation": eq.max_deviation}
    if "connect" in cfg.options:
        first, second = (ActivityProfile(a) for a in cfg.options["connect"])
        joined = connect_markets(first, second, seed=cfg.seed)
        doc["connected"] = {"market_activity": joined.profile.market_activity, "profile": list(joined.profile.activities), "objective": joined.objective}
    out.json("equilibrium_report.json", doc)
    n = profile.n
    out.csv(
        "equilibrium_trace.csv",
        ["restart", "iteration", "objective", "constraint_residual"] + [f"a{j}" for j in range(n)],
        ((r, i, obj, res, *prof) for r, i, prof, obj, res in eq.trace),
    )
    out.plot_data(v.artifacts, ["relative_entropy"] if "relative_entropy" in v.artifacts else [])
    return results


def scenario_theorem3(cfg: RunConfig, out: Outputs):
    v = _verifier(cfg)
    results = v.run_all([10])
    out.json("theorem3_diagnostics.json", {"diagnostics": v.artifacts.get("theorem3_diagnostics", [])})
    return results


def scenario_gop(cfg: RunConfig, out: Outputs):
    theta = 0.2
    market = cfg.options.get("market", {"mu": [theta**2, 0.0], "sigma": [[theta], [0.0]]})
    try:
        spec = GeneralMarketSpec(market["mu"], market["sigma"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    doc = {"market": spec.to_json()}
    try:
        sol = gop_solve(spec)
    except NoGop as exc:
        doc["no_gop"] = True
        doc["image_residual"] = exc.image_residual
        out.json("gop_solution.json", doc)
        return [_as_result(11, "GOP existence", [TestReport("gop_exists", exc.image_residual, (exc.image_residual, exc.image_residual), False, "(mu; 1) in the image of M", seed=cfg.seed)])]
    M, rhs = spec.first_order_system()
    lam_gap = abs(sol.lambda_star - (sol.weights @ spec.mu - sol.v @ sol.v))
    doc.update({"no_gop": False, "solution": sol})
    reports = [
        TestReport("image_residual", sol.image_residual, (0.0, sol.image_residual), sol.image_residual <= 1e-10 * float(np.linalg.norm(rhs)), "residual <= 1e-10 |(mu; 1)|", seed=cfg.seed),
        TestReport("budget", abs(sol.weights.sum() - 1.0), (0.0, 0.0), abs(sol.weights.sum() - 1.0) <= 1e-12, "sum of weights within 1e-12 of one", seed=cfg.seed),
        TestReport("lambda_identity", lam_gap, (0.0, lam_gap), lam_gap <= 1e-12, "lambda* = pi.mu - v.v within 1e-12", seed=cfg.seed),
    ]
    if "weights" in cfg.options and isinstance(cfg.options["weights"], list) and not isinstance(cfg.options["weights"][0], list):
        est = benchmarked_drift_test(spec, cfg.options["weights"], cfg.paths, float(cfg.options.get("horizon", 1.0)), cfg.seed, solution=sol)
        doc["drift_test"] = est
        reports.append(TestReport("benchmarked_drift", est.drift, (est.drift - 3 * est.se, est.drift + 3 * est.se), abs(est.z_score) < 3, "|drift| < 3 SE", cfg.paths, cfg.seed))
    out.json("gop_solution.json", doc)
    return [_as_result(11, "GOP solver", reports)]


def scenario_reference(cfg: RunConfig, out: Outputs):
    p = cfg.model
    w = cfg.options.get("weights", {"random": 1})
    if isinstance(w, dict):
        rng = np.random.default_rng(cfg.seed)
        weight_sets = [ReferenceWeights.random(p.n, rng) for _ in range(w["random"])]
    else:
        try:
            weight_sets = [ReferenceWeights(np.asarray(w, dtype=float))]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    path = simulate_basis_market(p, 1, cfg.seed)[0]
    reports, docs = [], []
    for i, ws in enumerate(weight_sets):
        market = market_of_reference(ws, path)
        chk = prices_of_risk_invariance(market)
        ok = chk.checked > 0 and chk.max_error < 1e-8
        reports.append(TestReport(f"prices_of_risk_{i}", chk.max_error, (0.0, chk.max_error), ok, "|v - theta| < 1e-8 at every non-singular grid point", chk.checked, cfg.seed, {"flagged": len(chk.flagged)}))
        docs.append({"tilde_pi": ws.tilde_pi, "max_error": chk.max_error, "checked": chk.checked, "flagged": list(chk.flagged)})
        rows = (
            (market.times[k], j, market.mu[k, j], market.s_hat[j, k], market.cond[k], bool(market.singular[k]), *market.sigma[k, j])
            for k in range(len(market.times))
            for j in range(p.n + 1)
        )
        out.csv(f"reference_market_{i}.csv", ["t", "security", "mu", "s_hat", "cond_u", "singular"] + [f"sigma{k}" for k in range(p.n)], rows)
    out.json("reference_transform.json", {"weights": docs})
    return [_as_result(12, "market-of-reference invariance", reports)]


def scenario_full_verify(cfg: RunConfig, out: Outputs):
    v = _verifier(cfg)
    results = []
    for k in range(1, 14):
        r = v.run(k)
        print(r.line(), flush=True)
        results.append(r)
    out.plot_data(v.artifacts)
    return results


RUNNERS = {
    "simulate": scenario_simulate,
    "theorem1": scenario_theorem1,
    "equilibrium": scenario_equilibrium,
    "theorem3": scenario_theorem3,
    "gop": scenario_gop,
    "reference-transform": scenario_reference,
    "full-verify": scenario_full_verify,
}


def _versions() -> dict:
    import matplotlib
    import scipy

    return {"maxent_market": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def run(cfg: RunConfig) -> int:
    """Execute a scenario and write its reports, plot data, figures and manifest."""
    root = cfg.output_dir
    root.mkdir(parents=True, exist_ok=True)
    out = Outputs(root, cfg.formats)
    t0 = time.perf_counter()
    results = RUNNERS[cfg.scenario](cfg, out)
    passed = all(r.passed for r in results)
    out.json("reports.json", {"scenario": cfg.scenario, "seed": cfg.seed, "passed": passed, "criteria": _criteria_doc(results)})
    figures = render_figures(root) if "csv" in cfg.formats else []
    status = 0 if passed else 2
    manifest = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_sha256": sha256_json(cfg.to_dict()),
        "versions": _versions(),
        "workers": os.environ.get(WORKERS_ENV, "1"),
        "files": [{"path": str(f.relative_to(root)), "sha256": sha256_file(f)} for f in out.files],
        "figures": [{"path": str(f.relative_to(root)), "sha256": sha256_file(f)} for f in figures],
        "exit_status": status,
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    write_json(root / "manifest.json", manifest)
    for r in results:
        if cfg.scenario != "full-verify":
            print(r.line())
    return status


def _write_error(root: Path | None, exc: BaseException) -> None:
    doc = {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
    print(json.dumps({"error": doc["error"], "message": doc["message"]}), file=sys.stderr)
    if root is not None:
        try:
            write_json(root / "error.json", doc)
        except OSError:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_schema:
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return 0
    root = args.out
    try:
        cfg = load_config(args)
        root = cfg.output_dir
        return run(cfg)
    except Exception as exc:  # exit code 1 with a machine-readable report
        _write_error(root, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
