"""Command-line entry point.

Subcommands:

* ``sample``: one reconstruction (degrade the configured image, run the
  guided sampler, write images and a report).
* ``degrade``: forward model only; writes the measurement and the truth.
* ``bench``: one reconstruction per covariance mode on identical input,
  written as a single report table.
* ``oracle-check``: the exact linear-Gaussian cross-validation battery;
  exit code 1 when any check fails.
* ``lemma-b1``: spectral-folding vs spatial-subsampling equivalence over
  a size/factor grid; exit code 1 when any error exceeds 1e-10.

Flags shared by the run-producing subcommands: ``--config`` (strict
key = value file, see the README grammar), ``--seed``, ``--cov-mode``,
``--solver``, ``--out``, ``--report``, ``--trajectory``. Flags override
file settings; file settings override task presets. Exit code is 0 only
when every requested run succeeded.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import parse_config_file
from .errors import LflowError
from .fields import COV_MODE_KINDS
from .imageio import write_image
from .operators import MaskOperator, block_downsample_check
from .oracle import run_oracle_checks
from .report import write_reports_csv, write_reports_json
from .tasks import (
    ODE_SOLVER_NAMES,
    TASK_KINDS,
    TaskConfig,
    bench_cov_modes,
    default_task_config,
    degrade,
    reconstruct,
    resolve_truth,
    task_config_from_sections,
)

LEMMA_B1_SIZES = (8, 16, 64)
LEMMA_B1_FACTORS = (2, 4)
LEMMA_B1_TOL = 1e-10


def _add_run_flags(parser: argparse.ArgumentParser, trajectory: bool) -> None:
    parser.add_argument("--task", choices=TASK_KINDS, default=None,
                        help="task preset (when no --config is given)")
    parser.add_argument("--config", default=None, metavar="PATH",
                        help="run configuration file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--cov-mode", choices=COV_MODE_KINDS, default=None)
    parser.add_argument("--solver", choices=ODE_SOLVER_NAMES, default=None)
    parser.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default from config)")
    parser.add_argument("--report", choices=("csv", "json"), default=None)
    if trajectory:
        parser.add_argument("--trajectory", default=None, metavar="PATH",
                            help="write per-step solver trace as CSV")


def _resolve_config(args) -> TaskConfig:
    if args.config is not None:
        cfg = task_config_from_sections(parse_config_file(args.config))
        if args.task is not None and args.task != cfg.kind:
            raise LflowError(
                f"--task {args.task} conflicts with config kind {cfg.kind}"
            )
    else:
        cfg = default_task_config(args.task or "gaussian-deblur")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.cov_mode is not None:
        overrides["cov_mode"] = args.cov_mode
    if args.solver is not None:
        overrides["ode_solver"] = args.solver
    if args.out is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "report", None) is not None:
        overrides["report_format"] = args.report
    return replace(cfg, **overrides) if overrides else cfg


def _out_dir(cfg: TaskConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _measurement_field(cfg: TaskConfig, y):
    """Measurements as a writable image (masks are zero-filled back)."""
    op, _ = cfg.build_operator()
    if isinstance(op, MaskOperator):
        return op.adjoint(y)
    return y


def _write_reports(cfg: TaskConfig, reports, path_base: str) -> str:
    if cfg.report_format == "json":
        path = path_base + ".json"
        write_reports_json(reports, path)
    else:
        path = path_base + ".csv"
        write_reports_csv(reports, path)
    return path


def _cmd_sample(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    x_true = resolve_truth(cfg)
    y = degrade(cfg, x_true)
    x_hat, report = reconstruct(cfg, y, x_true=x_true,
                                trajectory_path=args.trajectory)
    base = os.path.join(out, report.run_id)
    write_image(base + "-input.pgm", _measurement_field(cfg, y))
    write_image(base + "-truth.pgm", x_true)
    if x_hat is not None:
        write_image(base + "-recon.pgm", x_hat)
    report_path = _write_reports(cfg, [report], base + "-report")
    print(f"{report.run_id}: status={report.status} nfe={report.nfe} "
          f"psnr={report.psnr_db:.2f} dB ssim={report.ssim:.4f} "
          f"-> {report_path}")
    return 0 if report.ok else 1


def _cmd_degrade(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    x_true = resolve_truth(cfg)
    y = degrade(cfg, x_true)
    base = os.path.join(out, cfg.run_id)
    write_image(base + "-input.pgm", _measurement_field(cfg, y))
    write_image(base + "-truth.pgm", x_true)
    print(f"{cfg.run_id}: wrote measurement and truth under {out}")
    return 0


def _cmd_bench(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    modes = [args.cov_mode] if args.cov_mode else list(COV_MODE_KINDS)
    reports = bench_cov_modes(cfg, modes)
    path = _write_reports(cfg, reports,
                          os.path.join(out, f"bench-{cfg.kind}-{cfg.seed}"))
    for rep in reports:
        print(f"{rep.cov_mode:>6}: status={rep.status} nfe={rep.nfe} "
              f"psnr={rep.psnr_db:.2f} dB ssim={rep.ssim:.4f}")
    print(f"report -> {path}")
    return 0 if all(r.ok for r in reports) else 1


def _cmd_oracle_check(args) -> int:
    checks = run_oracle_checks(seed=args.seed if args.seed is not None else 0)
    failed = 0
    for check in checks:
        tag = "ok " if check.passed else "FAIL"
        print(f"[{tag}] {check.name}: {check.detail}")
        failed += 0 if check.passed else 1
    print(f"{len(checks) - failed}/{len(checks)} oracle checks passed")
    return 0 if failed == 0 else 1


def _cmd_lemma_b1(_args) -> int:
    worst_overall = 0.0
    failed = 0
    for n in LEMMA_B1_SIZES:
        for s in LEMMA_B1_FACTORS:
            err = block_downsample_check(n, s)
            passed = err < LEMMA_B1_TOL
            failed += 0 if passed else 1
            worst_overall = max(worst_overall, err)
            tag = "ok " if passed else "FAIL"
            print(f"[{tag}] n={n:<3} s={s}: max error {err:.3e}")
    print(f"worst {worst_overall:.3e} (tolerance {LEMMA_B1_TOL:.0e})")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lflow",
        description="Posterior-guided flow sampling for linear inverse problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run one reconstruction")
    _add_run_flags(p, trajectory=True)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("degrade", help="apply the forward model only")
    _add_run_flags(p, trajectory=False)
    p.set_defaults(fn=_cmd_degrade)

    p = sub.add_parser("bench", help="sweep covariance modes on one input")
    _add_run_flags(p, trajectory=False)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("oracle-check", help="exact-model cross-validation suite")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_oracle_check)

    p = sub.add_parser("lemma-b1", help="downsampling equivalence check")
    p.set_defaults(fn=_cmd_lemma_b1)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except LflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
