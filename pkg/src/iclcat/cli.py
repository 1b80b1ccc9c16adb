"""Command-line front end: ``iclcat {verify,solve,train,risk,sweep}``.

Exit codes: 0 success, 1 a verification check failed, 2 usage, config or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import logging
import sys
from pathlib import Path

import numpy as np

from . import solver, verify
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .mathcore import SingularMatrixError, sv_stats
from .model import save_params
from .risk import RISK_COLUMNS, mc_clean_risk, mc_robust_path, mc_robust_risk
from .solver import BoundReport
from .trainer import TRAJECTORY_COLUMNS, TrainingDivergedError, init_params, train_surrogate

log = logging.getLogger("iclcat")

SWEEP_PARAMS = ("eps", "rho", "m", "n", "beta", "we_scale")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return "%.17g" % float(v)


class CsvWriter:
    """Comma-separated output with LF endings and an optional timestamp comment line."""

    def __init__(self, deterministic: bool):
        self.deterministic = deterministic

    def write(self, path: Path, header, rows) -> None:
        lines = []
        if not self.deterministic:
            lines.append(f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}")
        lines.append(",".join(header))
        lines.extend(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) for row in rows)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _prepare(args) -> tuple[ExperimentConfig, Path, CsvWriter]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_updates(mc={"seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8", newline="\n")
    return cfg, out, CsvWriter(args.deterministic)


def _bound_or_none(cfg: ExperimentConfig, we) -> BoundReport | None:
    if not cfg.bound_checks or we.shape[0] > we.shape[1]:
        return None
    return solver.robust_bound(we, cfg.lam(), cfg.n, cfg.eps, cfg.m, cfg.rho)


def cmd_verify(args) -> int:
    cfg, out, _ = _prepare(args)
    results = verify.run_checks(cfg, seed=cfg.mc.seed, threads=args.threads)
    report = verify.format_report(results)
    (out / "verify_report.csv").write_text(report, encoding="utf-8", newline="\n")
    sys.stdout.write(report)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=sys.stderr)
    return 1 if failed else 0


def cmd_solve(args) -> int:
    cfg, out, csv = _prepare(args)
    we, lam = cfg.embedding(), cfg.lam()
    b = solver.optimal_predictor_matrix(we, lam, cfg.n, cfg.eps)
    csv.write(out / "predictor.csv", [f"b{j}" for j in range(b.d0)], b.b.tolist())
    rows = [["surrogate_minimum", solver.surrogate_minimum(we, lam, cfg.n, cfg.eps)],
            ["clean_risk_exact", solver.clean_risk_exact(b, lam, cfg.n)]]
    csv.write(out / "solution.csv", ["quantity", "value"], rows)
    bound = _bound_or_none(cfg, we)
    if bound is not None:
        csv.write(out / "bound.csv", ["eps", "m", "rho"] + bound.csv_header(),
                  [[cfg.eps, cfg.m, cfg.rho] + bound.csv_values()])
    return 0


def cmd_train(args) -> int:
    cfg, out, csv = _prepare(args)
    lam = cfg.lam()
    res = train_surrogate(init_params(cfg.d, cfg.d0, cfg.init_spec(), lam), lam, cfg.n, cfg.train_config())
    csv.write(out / "trajectory.csv", TRAJECTORY_COLUMNS, res.trajectory)
    save_params(res.params, out / "params.csv")
    return 0


def cmd_risk(args) -> int:
    cfg, out, csv = _prepare(args)
    b = solver.optimal_predictor_matrix(cfg.embedding(), cfg.lam(), cfg.n, cfg.eps)
    tc = cfg.task_config()
    clean = mc_clean_risk(b, tc, cfg.mc, args.threads)
    robust = mc_robust_risk(b, tc, cfg.m, cfg.rho, cfg.mc, cfg.eval_attack(), args.threads)
    csv.write(out / "risk.csv", ("kind",) + RISK_COLUMNS,
              [["clean"] + clean.csv_values(), ["robust"] + robust.csv_values()])
    return 0


def _sweep_point(cfg: ExperimentConfig, param: str, value: float) -> ExperimentConfig:
    if param == "we_scale":
        return cfg.with_updates(we_init={"kind": "scaled", "scale": value})
    if param == "beta":
        return cfg.with_updates(train={"beta": value})
    if param in ("m", "n"):
        if float(value) != int(value):
            raise ConfigError(f"{param} must be an integer, got {value}")
        value = int(value)
    return cfg.with_updates(**{param: value})


def _predictor_for(cfg: ExperimentConfig):
    """Trained predictor when the config trains the embedding, else the closed-form optimum."""
    lam = cfg.lam()
    if cfg.train.train_we:
        res = train_surrogate(init_params(cfg.d, cfg.d0, cfg.init_spec(), lam), lam, cfg.n, cfg.train_config())
        return solver.lsae_predictor_matrix(res.params), res.params.we
    we = cfg.embedding()
    return solver.optimal_predictor_matrix(we, lam, cfg.n, cfg.eps), we


def run_sweep(cfg: ExperimentConfig, param: str, values, threads=None) -> tuple[list[str], list[list]]:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    points = [_sweep_point(cfg, param, v) for v in values]
    header = ["param", "value"] + [f.name for f in dataclasses.fields(BoundReport)] + [
        "clean_risk", "clean_stderr", "robust_risk", "robust_stderr", "sv_min", "sv_max", "sv_var"]
    rows = []
    rho_path = None
    if param == "rho":
        # one predictor, warm-started attacks along the radius list
        pred, we = _predictor_for(points[0])
        rho_path = mc_robust_path([(pred, p.rho) for p in points], points[0].task_config(), cfg.m, cfg.mc,
                                  cfg.attack.eval_steps, threads)
    for i, (pt, v) in enumerate(zip(points, values)):
        if rho_path is None:
            pred, we = _predictor_for(pt)
        tc = pt.task_config()
        clean = mc_clean_risk(pred, tc, cfg.mc, threads)
        robust = rho_path[i] if rho_path else mc_robust_risk(pred, tc, pt.m, pt.rho, cfg.mc, pt.eval_attack(), threads)
        bound = _bound_or_none(pt, we)
        bvals = bound.csv_values() if bound else [None] * len(dataclasses.fields(BoundReport))
        st = sv_stats(we)
        rows.append([param, v] + bvals + [clean.value, clean.stderr, robust.value, robust.stderr,
                                          st.sv_min, st.sv_max, st.variance])
    return header, rows


def cmd_sweep(args) -> int:
    cfg, out, csv = _prepare(args)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    header, rows = run_sweep(cfg, args.param, values, args.threads)
    csv.write(out / f"sweep_{args.param}.csv", header, rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override mc.seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (default: $ICLCAT_THREADS or 1)")
    common.add_argument("--deterministic", action="store_true", help="omit the timestamp line from CSV outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="iclcat", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    sub.add_parser("verify", parents=[common], help="run the self-check suite").set_defaults(fn=cmd_verify)
    sub.add_parser("solve", parents=[common], help="closed-form predictor and robust bound").set_defaults(fn=cmd_solve)
    sub.add_parser("train", parents=[common], help="gradient flow on the surrogate").set_defaults(fn=cmd_train)
    sub.add_parser("risk", parents=[common], help="Monte Carlo clean and robust risk").set_defaults(fn=cmd_risk)
    sw = sub.add_parser("sweep", parents=[common], help="sweep one parameter")
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (ConfigError, OSError, SingularMatrixError, TrainingDivergedError, solver.InfeasibleFactorizationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
