"""Command-line front end.

Exit codes::

    0  converged (run/compare) or every check passed (verify)
    1  malformed configuration or rejected parameters
    2  round budget exhausted
    3  divergence guard tripped
    4  centralized oracle failed
    5  one or more verification checks failed
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import OmegaMetric, ReferencePoint, oracle_reference, reference_point, verification_report
from .dga import VARIANTS, Hyperparameters, default_params, run, validate_params
from .harness import Harness, StopCriteria
from .problem import CoupledProblem, InfeasibleProblemError, OracleError
from .scenarios import KINDS, ScenarioSpec, generate

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_DIVERGED, EXIT_ORACLE, EXIT_CHECKS = range(6)
STATUS_CODES = {"converged": EXIT_OK, "max_rounds": EXIT_BUDGET, "diverged": EXIT_DIVERGED}
OUTPUT_ENV = "DGA_OUTPUT_DIR"
VERIFY_ROUNDS = 2000

log = logging.getLogger("coupled_dga")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem_file: str | None = None
    scenario: ScenarioSpec | None = None
    params: Hyperparameters | None = None
    safety: float = 0.9
    force: bool = False
    stop: StopCriteria = field(default_factory=StopCriteria)
    variant: str = "dga"
    output_dir: str = "."
    name: str = "run"
    threads: int = 1
    reference: str | None = None
    log_messages: str | None = None
    timing: bool = True

    def validate(self) -> None:
        if (self.problem_file is None) == (self.scenario is None):
            raise ConfigError("exactly one problem source is required: a problem file or a scenario")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def load_problem(self) -> CoupledProblem:
        if self.scenario is not None:
            return self.scenario.build()
        return CoupledProblem.load(self.problem_file)

    def path(self, suffix: str) -> Path:
        return Path(self.output_dir) / f"{self.name}.{suffix}"


def _stop_from(data: dict, base: StopCriteria) -> StopCriteria:
    unknown = set(data) - {"max_rounds", "feasibility_tol", "step_tol"}
    if unknown:
        raise ConfigError(f"unknown stop fields {sorted(unknown)}")
    return replace(base, **data)


def build_config(args: argparse.Namespace, stop_default: StopCriteria | None = None) -> RunConfig:
    """Merge the optional JSON config file with command-line overrides."""
    cfg = RunConfig(stop=stop_default or StopCriteria(), output_dir=os.environ.get(OUTPUT_ENV, "."))
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    known = {"problem", "scenario", "params", "safety", "force", "stop", "variant", "output_dir", "name",
             "threads", "reference", "log_messages", "timing"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")

    if "problem" in data:
        cfg.problem_file = str(Path(args.config).parent / data["problem"])
    if "scenario" in data:
        cfg.scenario = ScenarioSpec.from_json(data["scenario"])
    params = data.get("params", "auto")
    if params != "auto":
        if not isinstance(params, dict) or set(params) != {"alpha", "eta", "rho"}:
            raise ConfigError('params must be "auto" or an object with alpha, eta and rho')
        cfg.params = Hyperparameters(**{k: float(v) for k, v in params.items()})
    if "stop" in data:
        cfg.stop = _stop_from(data["stop"], cfg.stop)
    for key in ("safety", "force", "variant", "output_dir", "name", "threads", "reference", "log_messages", "timing"):
        if key in data:
            setattr(cfg, key, data[key])

    if args.problem:
        cfg.problem_file, cfg.scenario = args.problem, None
    if args.scenario:
        overrides = dict(cfg.scenario.overrides) if cfg.scenario and cfg.scenario.kind == args.scenario else {}
        overrides.update(_parse_overrides(args.set))
        cfg.scenario, cfg.problem_file = ScenarioSpec(args.scenario, args.seed, overrides), None
    elif args.set:
        raise ConfigError("--set requires --scenario")

    explicit = {k: getattr(args, k) for k in ("alpha", "eta", "rho") if getattr(args, k) is not None}
    if args.auto_params:
        if explicit:
            raise ConfigError("--auto-params cannot be combined with --alpha/--eta/--rho")
        cfg.params = None
    elif explicit:
        base = cfg.params.to_json() if cfg.params else {}
        merged = {**base, **explicit}
        if set(merged) != {"alpha", "eta", "rho"}:
            missing = sorted({"alpha", "eta", "rho"} - set(merged))
            raise ConfigError(f"explicit parameters need all of alpha, eta, rho (missing {', '.join(missing)})")
        cfg.params = Hyperparameters(**merged)
    if args.safety is not None:
        cfg.safety = args.safety
    stop = {k: v for k, v in (("max_rounds", args.max_rounds), ("feasibility_tol", args.feas_tol),
                              ("step_tol", args.step_tol)) if v is not None}
    cfg.stop = _stop_from(stop, cfg.stop)
    for key in ("variant", "output_dir", "name", "threads", "reference", "log_messages"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.force = cfg.force or args.force
    if args.no_timing:
        cfg.timing = False
    cfg.validate()
    return cfg


def _parse_overrides(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must look like key=value")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _clean(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")


def _resolve_params(cfg: RunConfig, problem: CoupledProblem) -> Hyperparameters:
    if cfg.params is None:
        return default_params(problem, cfg.safety)
    report = validate_params(problem, cfg.params, "lemma1")
    if not report.passed:
        names = "; ".join(str(c) for c in report.failed)
        if not cfg.force:
            raise ConfigError(f"parameters rejected: {names} (use --force to run anyway)")
        log.warning("running with invalid parameters: %s", names)
    strong = validate_params(problem, cfg.params, "theorem1")
    if report.passed and not strong.passed:
        log.warning("convergence guarantee not covered: %s", "; ".join(str(c) for c in strong.failed))
    return cfg.params


def _load_reference(cfg: RunConfig, problem: CoupledProblem) -> ReferencePoint | None:
    if cfg.reference is None:
        return None
    if cfg.reference == "oracle":
        ref = oracle_reference(problem)
        _write_json(cfg.path("reference.json"), {"x": ref.x.tolist(), "delta": ref.delta.tolist()})
        return ref
    try:
        data = json.loads(Path(cfg.reference).read_text())
        return reference_point(problem, data["x"], data["delta"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read reference {cfg.reference}: {exc}") from exc


def _execute(cfg: RunConfig, problem: CoupledProblem, hp: Hyperparameters, variant: str,
             reference: ReferencePoint | None, suffix: str = ""):
    metric = OmegaMetric.build(problem, hp) if reference is not None else None
    sink = None
    if cfg.log_messages:
        target = Path(cfg.log_messages)
        if suffix:
            target = target.with_name(f"{target.stem}.{suffix}{target.suffix.lstrip('.') or 'jsonl'}")
        target.parent.mkdir(parents=True, exist_ok=True)
        sink = open(target, "w")
    try:
        with Harness(problem.graph, threads=cfg.threads, message_log=sink) as h:
            trace = run(problem, hp, cfg.stop, variant=variant, harness=h, reference=reference, metric=metric)
            messages, reals = h.messages_sent, h.reals_sent
    finally:
        if sink is not None:
            sink.close()
    trace.to_csv(cfg.path(f"{suffix}trace.csv"), timing=cfg.timing)
    summary = trace.summary()
    if not cfg.timing:
        summary["wall_time_s"] = None
    summary.update(
        exit_code=STATUS_CODES[trace.status],
        params=hp.to_json(),
        validity=validate_params(problem, hp, "theorem1").to_json(),
        stop={"max_rounds": cfg.stop.max_rounds, "feasibility_tol": cfg.stop.feasibility_tol,
              "step_tol": cfg.stop.step_tol},
        problem={"n": problem.n, "m": problem.m, "p": problem.p, "edges": len(problem.graph.edges),
                 "l_f": problem.global_l_f, "mu": problem.global_mu, "lambda_max": problem.graph.lambda_max},
        messages_sent=messages,
        reals_sent=reals,
        threads=cfg.threads,
    )
    _write_json(cfg.path(f"{suffix}summary.json"), summary)
    return trace, summary


def cmd_generate(args) -> int:
    spec = ScenarioSpec(args.scenario, args.seed, _parse_overrides(args.set))
    out = Path(args.output) if args.output else Path(os.environ.get(OUTPUT_ENV, ".")) / f"{args.scenario}.json"
    problem_path, sidecar = generate(spec, out)
    print(f"wrote {problem_path} and {sidecar}")
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    problem = cfg.load_problem()
    hp = _resolve_params(cfg, problem)
    reference = _load_reference(cfg, problem)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    trace, summary = _execute(cfg, problem, hp, cfg.variant, reference)
    print(f"{cfg.variant}: {trace.status} after {trace.completed_rounds} rounds "
          f"(feas_sq={summary['feas_sq']:.3e}); trace at {cfg.path('trace.csv')}")
    return summary["exit_code"]


def cmd_verify(cfg: RunConfig) -> int:
    problem = cfg.load_problem()
    hp = _resolve_params(cfg, problem)
    reference = _load_reference(replace(cfg, reference="oracle"), problem)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    trace, summary = _execute(cfg, problem, hp, cfg.variant, reference)
    report = verification_report(problem, hp, trace, reference)
    report["status"] = trace.status
    report["rounds"] = trace.completed_rounds
    _write_json(cfg.path("verify.json"), report)
    for name, ok in report["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    for cond in validate_params(problem, hp, "theorem1").failed:
        print(f"violated: {cond}")
    return EXIT_OK if report["passed"] else EXIT_CHECKS


def cmd_compare(cfg: RunConfig) -> int:
    problem = cfg.load_problem()
    hp = _resolve_params(cfg, problem)
    reference = _load_reference(cfg, problem)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    results = {}
    for variant in ("dga", "exact_mm"):
        trace, summary = _execute(cfg, problem, hp, variant, reference, suffix=f"{variant}.")
        wall = trace.column("wall_time_s")
        results[variant] = {
            "status": trace.status,
            "rounds": trace.completed_rounds,
            "wall_time_s": float(wall[-1]),
            "per_round_s": float(wall[-1]) / max(trace.completed_rounds, 1),
            "cumulative": wall,
            "exit_code": summary["exit_code"],
        }
    dga, mm = results["dga"], results["exact_mm"]
    k = min(len(dga["cumulative"]), len(mm["cumulative"]))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dga["cumulative"][1:k] / mm["cumulative"][1:k]
    lines = ["round,dga_wall_time_s,exact_mm_wall_time_s,ratio"]
    lines += [f"{r + 1},{dga['cumulative'][r + 1]!r},{mm['cumulative'][r + 1]!r},{ratio[r]!r}" for r in range(k - 1)]
    cfg.path("compare.csv").write_text("\n".join(lines) + "\n")
    report = {
        variant: {key: value for key, value in res.items() if key != "cumulative"}
        for variant, res in results.items()
    }
    report["per_round_ratio"] = dga["per_round_s"] / mm["per_round_s"] if mm["per_round_s"] > 0 else None
    report["dga_faster"] = bool(dga["per_round_s"] < mm["per_round_s"])
    _write_json(cfg.path("compare.json"), report)
    print(f"per-round wall time: dga {dga['per_round_s']:.3e} s, exact_mm {mm['per_round_s']:.3e} s, "
          f"ratio {report['per_round_ratio']}")
    return max(dga["exit_code"], mm["exit_code"])


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="run-config JSON file")
    src = p.add_argument_group("problem source")
    src.add_argument("--problem", help="problem JSON file")
    src.add_argument("--scenario", choices=KINDS, help="built-in scenario")
    src.add_argument("--seed", type=int, default=0)
    src.add_argument("--set", action="append", metavar="KEY=VALUE", help="scenario override (repeatable)")
    hp = p.add_argument_group("hyperparameters")
    hp.add_argument("--alpha", type=float)
    hp.add_argument("--eta", type=float)
    hp.add_argument("--rho", type=float)
    hp.add_argument("--auto-params", action="store_true", help="use the default parameter rule")
    hp.add_argument("--safety", type=float, help="fraction of the step-size bound used by --auto-params")
    hp.add_argument("--force", action="store_true", help="run even if the parameters fail validation")
    stop = p.add_argument_group("stopping")
    stop.add_argument("--max-rounds", type=int)
    stop.add_argument("--feas-tol", type=float)
    stop.add_argument("--step-tol", type=float)
    out = p.add_argument_group("execution and output")
    out.add_argument("--variant", choices=VARIANTS)
    out.add_argument("--threads", type=int)
    out.add_argument("--reference", help='optimum JSON {"x", "delta"} or "oracle"')
    out.add_argument("--log-messages", metavar="FILE", help="write every message as a JSON line")
    out.add_argument("--no-timing", action="store_true", help="leave the wall-time column blank")
    out.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or .)")
    out.add_argument("--name", help="output file prefix")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupled-dga", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog=__doc__.split("\n", 1)[1])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", help="write a scenario instance and its manifest")
    gen.add_argument("--scenario", choices=KINDS, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--set", action="append", metavar="KEY=VALUE")
    gen.add_argument("-o", "--output", help="problem JSON path")
    for name, text in (("run", "run one solver variant"),
                       ("verify", "run and check the Lyapunov and rate properties"),
                       ("compare", "run dga and exact_mm on the same instance")):
        _add_run_options(sub.add_parser(name, help=text))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            return cmd_generate(args)
        verify_stop = StopCriteria(VERIFY_ROUNDS, 0.0, 0.0) if args.command == "verify" else None
        cfg = build_config(args, verify_stop)
        return {"run": cmd_run, "verify": cmd_verify, "compare": cmd_compare}[args.command](cfg)
    except (OracleError, InfeasibleProblemError) as exc:
        print(f"error: oracle failed: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (ConfigError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
