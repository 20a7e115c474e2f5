# fishergrad/cli.py
"""
Command-line surface: sample, pmf, kstest, fit, oracle-check.

Each subcommand resolves its flags into a RunConfig first (any problem is a
ConfigError before computation starts), runs, writes its primary output
atomically plus a <stem>.config.json sidecar with the fully resolved
configuration, and returns an exit code.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from fishergrad.config import Settings
from fishergrad.errors import ConfigError, DomainError, FishergradError, PropertyFailure
from fishergrad.fit import (
    FitConfig,
    dataset_from_seed,
    expected_counts,
    fit_omega,
    reference_val_loss,
    split_dataset,
)
from fishergrad.hypergeom import (
    DrawVector,
    UrnSpec,
    central_multi_log_pmf,
    central_uni_log_pmf,
    chain_log_pmf_vector,
    fisher_uni_log_pmf_table,
    joint_log_pmf_vector,
    merge_bias,
)
from fishergrad.reparam import STREAM_SAMPLE, make_rng, sample_batch
from fishergrad.stats import SWEEP_PARAMS, SweepConfig, ks_sensitivity_sweep
from fishergrad.utils import atomic_write_json, sidecar_path, write_config_sidecar, write_table

EXPECTED_COUNT_DRAWS = 2000


# -------------------------------------------------------------------------
# Resolved configuration
# -------------------------------------------------------------------------
@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    seed: int
    out: Optional[Path]
    fmt: str = "csv"
    urn: Optional[UrnSpec] = None
    tau: Optional[float] = None
    count: Optional[int] = None
    mode: Optional[str] = None
    sweep: Optional[SweepConfig] = None
    fit: Optional[FitConfig] = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d: dict = {"subcommand": self.subcommand, "seed": self.seed, "format": self.fmt}
        d["out"] = str(self.out) if self.out is not None else None
        if self.urn is not None:
            d["urn"] = {
                "class_counts": list(self.urn.class_counts),
                "draws": self.urn.draws,
                "log_weights": list(self.urn.log_weights),
                "weights": list(self.urn.weights),
            }
        for key in ("tau", "count", "mode"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        if self.sweep is not None:
            d["sweep"] = self.sweep.as_dict()
        if self.fit is not None:
            d["fit"] = self.fit.as_dict()
        d.update(self.extra)
        return d


# -------------------------------------------------------------------------
# Flag parsing helpers
# -------------------------------------------------------------------------
def _parse_list(raw: Optional[str], cast: Callable, name: str) -> Optional[tuple]:
    if raw is None:
        return None
    try:
        return tuple(cast(x.strip()) for x in raw.split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"--{name}: cannot parse {raw!r}") from e


def _urn_from_args(m_raw: Optional[str], n: Optional[int], omega_raw: Optional[str], flag: str = "omega") -> UrnSpec:
    m = _parse_list(m_raw, int, "m")
    if not m:
        raise ConfigError("--m is required (comma-separated class counts)")
    if n is None:
        raise ConfigError("--n is required")
    omega = _parse_list(omega_raw, float, flag) or (1.0,) * len(m)
    try:
        return UrnSpec.from_weights(m, n, omega)
    except DomainError as e:
        raise ConfigError(str(e)) from e


def _resolve_out(args: argparse.Namespace, settings: Settings, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return settings.out_dir / default_name


def _seed(args: argparse.Namespace, settings: Settings) -> int:
    seed = settings.seed if args.seed is None else args.seed
    if seed < 0:
        raise ConfigError(f"--seed must be non-negative, got {seed}")
    return seed


def _positive(value: float, flag: str) -> float:
    if not value > 0:
        raise ConfigError(f"{flag} must be positive, got {value}")
    return value


# -------------------------------------------------------------------------
# sample
# -------------------------------------------------------------------------
def resolve_sample(args: argparse.Namespace, settings: Settings) -> RunConfig:
    if args.count < 0:
        raise ConfigError(f"--count must be >= 0, got {args.count}")
    return RunConfig(
        subcommand="sample",
        seed=_seed(args, settings),
        out=_resolve_out(args, settings, f"sample.{args.format}"),
        fmt=args.format,
        urn=_urn_from_args(args.m, args.n, args.omega),
        tau=_positive(args.tau, "--tau"),
        count=args.count,
        mode=args.mode,
    )


def cmd_sample(cfg: RunConfig) -> int:
    urn = cfg.urn
    c = urn.num_classes
    batch = sample_batch(urn, cfg.count, make_rng(cfg.seed, STREAM_SAMPLE), mode=cfg.mode, tau=cfg.tau)
    header = ["draw_index"] + [f"x_{i + 1}" for i in range(c)]
    if batch.soft is not None:
        header += [f"soft_{i + 1}" for i in range(c)]
    rows = []
    for d in range(cfg.count):
        row = [d, *batch.hard[d].tolist()]
        if batch.soft is not None:
            row += batch.soft[d].tolist()
        rows.append(row)
    write_table(cfg.out, header, rows, cfg.fmt)
    logging.info("[Cli] sample: %d %s draws from m=%s", cfg.count, cfg.mode, urn.class_counts)
    return 0


# -------------------------------------------------------------------------
# pmf
# -------------------------------------------------------------------------
def resolve_pmf(args: argparse.Namespace, settings: Settings) -> RunConfig:
    return RunConfig(
        subcommand="pmf",
        seed=_seed(args, settings),
        out=_resolve_out(args, settings, f"pmf.{args.format}"),
        fmt=args.format,
        urn=_urn_from_args(args.m, args.n, args.omega),
    )


def cmd_pmf(cfg: RunConfig) -> int:
    urn = cfg.urn
    support, joint = joint_log_pmf_vector(urn)
    _, chain = chain_log_pmf_vector(urn)
    header = [f"x_{i + 1}" for i in range(urn.num_classes)] + ["log_p_joint", "log_p_chain"]
    rows = [[*x, j, ch] for x, j, ch in zip(support.tolist(), joint.tolist(), chain.tolist())]
    write_table(cfg.out, header, rows, cfg.fmt)
    return 0


# -------------------------------------------------------------------------
# kstest
# -------------------------------------------------------------------------
def resolve_kstest(args: argparse.Namespace, settings: Settings) -> RunConfig:
    seed = _seed(args, settings)
    samples = settings.ks_samples if args.samples is None else args.samples
    threshold = settings.threshold if args.threshold is None else args.threshold
    if not 0 < threshold < 1:
        raise ConfigError(f"--threshold must lie in (0, 1), got {threshold}")
    try:
        sweep = SweepConfig.standard(
            args.sweep,
            values=_parse_list(args.values, float, "values"),
            class_counts=_parse_list(args.m, int, "m"),
            draws=args.n,
            weights=_parse_list(args.omega, float, "omega"),
            samples=samples,
            seed=seed,
            tau=args.tau,
        )
    except (DomainError, TypeError) as e:
        raise ConfigError(str(e)) from e
    return RunConfig(
        subcommand="kstest",
        seed=seed,
        out=_resolve_out(args, settings, f"kstest_{args.sweep}.{args.format}"),
        fmt=args.format,
        sweep=sweep,
        extra={
            "threshold": threshold,
            "assert": bool(args.assert_pass),
            "allow_failures": args.allow_failures,
            "workers": args.workers,
        },
    )


def cmd_kstest(cfg: RunConfig) -> int:
    result = ks_sensitivity_sweep(cfg.sweep, workers=cfg.extra["workers"])
    header = ["sweep_param", "sweep_value", "class", "D", "p_raw", "p_adjusted", "n_samples", "seed"]
    rows = [
        [r.sweep_param, r.sweep_value, r.cls, r.statistic, r.p_raw, r.p_adjusted, r.n_samples, r.seed]
        for r in result.rows
    ]
    write_table(cfg.out, header, rows, cfg.fmt)
    hist_header = ["sweep_param", "sweep_value", "arm", "class", "count_value", "frequency"]
    hist_rows = [
        [h.sweep_param, h.sweep_value, h.arm, h.cls, h.count_value, h.frequency] for h in result.histograms
    ]
    write_table(sidecar_path(cfg.out, f".hist{cfg.out.suffix}"), hist_header, hist_rows, cfg.fmt)

    threshold = cfg.extra["threshold"]
    passed = result.passes(threshold)
    logging.info("[Cli] kstest: %d/%d corrected p-values above %.3g", passed, len(result.rows), threshold)
    if cfg.extra["assert"]:
        failures = len(result.rows) - passed
        if failures > cfg.extra["allow_failures"]:
            logging.error(
                "[Cli] kstest: %d of %d tests have corrected p <= %.3g (allowed %d)",
                failures, len(result.rows), threshold, cfg.extra["allow_failures"],
            )
            return PropertyFailure.exit_code
    return 0


# -------------------------------------------------------------------------
# fit
# -------------------------------------------------------------------------
def load_draws_csv(path: Path) -> list[DrawVector]:
    """Draw vectors from a CSV with x_1..x_c columns (the `sample` output works as-is)."""
    try:
        with Path(path).open("r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            fields = reader.fieldnames or []
            cols = sorted((c for c in fields if c.startswith("x_")), key=lambda c: int(c[2:]))
            if not cols:
                cols = list(fields)
            return [DrawVector(tuple(int(row[c]) for c in cols)) for row in reader]
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read draws from {path}: {e}") from e


def resolve_fit(args: argparse.Namespace, settings: Settings) -> RunConfig:
    seed = _seed(args, settings)
    if args.format != "csv":
        raise ConfigError("fit writes its trace as csv only; --format json is not supported")
    m = _parse_list(args.m, int, "m")
    if not m:
        raise ConfigError("--m is required (comma-separated class counts)")
    if (args.omega_gt is None) == (args.data is None):
        raise ConfigError("pass exactly one of --omega-gt (generate) or --data (load CSV)")
    grid = _parse_list(args.omega2_grid, float, "omega2-grid")
    if grid and args.omega_gt is None:
        raise ConfigError("--omega2-grid needs --omega-gt for the fixed classes")
    urn_gt = None
    if args.omega_gt is not None:
        urn_gt = _urn_from_args(args.m, args.n, args.omega_gt, flag="omega-gt")
    if args.train < 1 or args.val < 0:
        raise ConfigError(f"--train must be >= 1 and --val >= 0, got {args.train}, {args.val}")
    init = _parse_list(args.init_log_omega, float, "init-log-omega")
    if init is not None and len(init) != len(m):
        raise ConfigError(f"--init-log-omega has {len(init)} entries for {len(m)} classes")
    fit_cfg = FitConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        tau_init=args.tau_init,
        tau_final=args.tau_final,
        anneal_steps=args.anneal_steps,
        seed=seed,
        init_log_weights=init,
    )
    return RunConfig(
        subcommand="fit",
        seed=seed,
        out=_resolve_out(args, settings, "fit_trace.csv"),
        fmt="csv",
        urn=urn_gt,
        fit=fit_cfg,
        extra={
            "class_counts": list(m),
            "data": str(args.data) if args.data else None,
            "train": args.train,
            "val": args.val,
            "omega2_grid": list(grid) if grid else None,
        },
    )


class _FitJob(NamedTuple):
    label: Optional[float]
    urn_gt: Optional[UrnSpec]
    train: list
    val: list


def _fit_jobs(cfg: RunConfig) -> list[_FitJob]:
    train_n, val_n = cfg.extra["train"], cfg.extra["val"]
    if cfg.extra["data"]:
        data = load_draws_csv(Path(cfg.extra["data"]))
        try:
            train, val = split_dataset(data, train_n, val_n)
        except DomainError as e:
            raise ConfigError(str(e)) from e
        return [_FitJob(None, None, train, val)]
    grid = cfg.extra["omega2_grid"]
    if not grid:
        data = dataset_from_seed(cfg.urn, train_n + val_n, cfg.seed)
        return [_FitJob(None, cfg.urn, *split_dataset(data, train_n, val_n))]
    jobs = []
    for index, w2 in enumerate(grid):
        weights = list(cfg.urn.weights)
        weights[1] = w2
        try:
            urn_gt = UrnSpec.from_weights(cfg.urn.class_counts, cfg.urn.draws, weights)
        except DomainError as e:
            raise ConfigError(f"--omega2-grid value {w2}: {e}") from e
        data = dataset_from_seed(urn_gt, train_n + val_n, cfg.seed, index)
        jobs.append(_FitJob(w2, urn_gt, *split_dataset(data, train_n, val_n)))
    return jobs


def _trace_path(out: Path, label: Optional[float]) -> Path:
    if label is None:
        return out
    return sidecar_path(out, f".omega2_{label:g}{out.suffix}")


def cmd_fit(cfg: RunConfig) -> int:
    m = tuple(cfg.extra["class_counts"])
    header = ["step", "epoch", "train_loss", "val_loss", "tau"] + [f"log_omega_{i + 1}" for i in range(len(m))]
    traces: list[tuple[Path, list]] = []
    summaries = []
    for job in _fit_jobs(cfg):
        trace = fit_omega(job.train, cfg.fit, m, validation=job.val or None)
        path = _trace_path(cfg.out, job.label)
        traces.append((path, trace.rows()))

        draws = sum(job.train[0].counts)
        fitted = UrnSpec(m, draws, trace.final_log_weights)
        record = {
            "trace": str(path),
            "final_log_omega": list(trace.final_log_weights),
            "final_val_loss": trace.final_val_loss,
            "expected_counts": expected_counts(fitted, EXPECTED_COUNT_DRAWS, cfg.seed).tolist(),
            "train_means": np.mean([x.counts for x in job.train], axis=0).tolist(),
        }
        if job.urn_gt is not None:
            record["omega_gt"] = list(job.urn_gt.weights)
            if job.val:
                record["reference_val_loss"] = reference_val_loss(job.urn_gt, job.val, cfg.seed)
        if job.label is not None:
            record["omega2_gt"] = job.label
        summaries.append(record)

    # nothing is written until every job has finished
    for path, rows in traces:
        write_table(path, header, rows, "csv")
    summary = summaries[0] if cfg.extra["omega2_grid"] is None else summaries
    atomic_write_json(sidecar_path(cfg.out, ".summary.json"), summary)
    return 0


# -------------------------------------------------------------------------
# oracle-check
# -------------------------------------------------------------------------
class OracleCheck(NamedTuple):
    name: str
    passed: bool
    detail: str


DEFAULT_ORACLE_URNS: tuple[tuple[tuple[int, ...], int, tuple[float, ...]], ...] = (
    ((3, 5, 4), 5, (1.0, 1.0, 1.0)),
    ((3, 5, 4), 5, (1.0, 2.0, 4.0)),
    ((2, 2), 2, (2.0, 1.0)),
    ((1, 1), 2, (1.0, 3.0)),
    ((4, 3, 2, 5), 6, (0.5, 1.0, 2.0, 3.0)),
)


def _within(diff: float, tol: float) -> bool:
    return abs(diff) <= tol


def run_oracle_suite(urns: Sequence[UrnSpec], tolerance: float) -> list[OracleCheck]:
    checks: list[OracleCheck] = []
    for urn in urns:
        label = f"m={list(urn.class_counts)} n={urn.draws} ω={[round(w, 4) for w in urn.weights]}"
        support, joint = joint_log_pmf_vector(urn)
        _, chain = chain_log_pmf_vector(urn)

        for name, logp in (("joint", joint), ("chain", chain)):
            dev = math.fsum(np.exp(logp)) - 1.0
            checks.append(OracleCheck(f"normalization[{name}] {label}", _within(dev, tolerance), f"|Σp-1|={abs(dev):.3g}"))

        uniform = np.allclose(urn.log_weights, urn.log_weights[0], rtol=0, atol=0)
        if uniform:
            central = np.array([central_multi_log_pmf(urn, DrawVector(x)) for x in support.tolist()])
            dev = float(np.max(np.abs(joint - central)))
            checks.append(OracleCheck(f"central-reduction {label}", _within(dev, tolerance), f"max|Δ|={dev:.3g}"))
        if uniform or urn.num_classes == 2:
            dev = float(np.max(np.abs(joint - chain)))
            checks.append(OracleCheck(f"joint==chain {label}", _within(dev, tolerance), f"max|Δ|={dev:.3g}"))
        else:
            tv = merge_bias(urn)
            # informational: the merged chain is a different law when later weights differ
            checks.append(OracleCheck(f"merge-bias-report {label}", True, f"TV={tv:.6g}"))

        if urn.num_classes >= 2:
            m_left, m_right = urn.class_counts[0], urn.total - urn.class_counts[0]
            table = fisher_uni_log_pmf_table(m_left, m_right, 0.0, 0.0, urn.draws)
            ref = np.array([central_uni_log_pmf(urn.total, m_left, urn.draws, x) for x in range(m_left + 1)])
            mask = table.feasible_mask
            dev = float(np.max(np.abs(table.normalized()[mask] - ref[mask])))
            mask_ok = bool(np.array_equal(mask, np.isfinite(ref)))
            checks.append(
                OracleCheck(f"univariate-central {label}", mask_ok and _within(dev, tolerance), f"max|Δ|={dev:.3g}")
            )
    return checks


def resolve_oracle(args: argparse.Namespace, settings: Settings) -> RunConfig:
    seed = _seed(args, settings)
    if math.isnan(args.tolerance):
        raise ConfigError("--tolerance must be a number")
    if args.random_urns < 0:
        raise ConfigError(f"--random-urns must be >= 0, got {args.random_urns}")
    return RunConfig(
        subcommand="oracle-check",
        seed=seed,
        out=Path(args.out) if args.out else None,
        fmt=args.format,
        extra={"tolerance": args.tolerance, "random_urns": args.random_urns},
    )


def oracle_urns(seed: int, random_urns: int) -> list[UrnSpec]:
    urns = [UrnSpec.from_weights(m, n, w) for m, n, w in DEFAULT_ORACLE_URNS]
    rng = make_rng(seed, STREAM_SAMPLE, 99)
    for _ in range(random_urns):
        c = int(rng.integers(2, 5))
        m = tuple(int(x) for x in rng.integers(1, 9, size=c))
        n = int(rng.integers(0, sum(m) + 1))
        w = tuple(float(x) for x in rng.uniform(0.2, 5.0, size=c))
        urns.append(UrnSpec.from_weights(m, n, w))
    return urns


def cmd_oracle_check(cfg: RunConfig) -> int:
    checks = run_oracle_suite(oracle_urns(cfg.seed, cfg.extra["random_urns"]), cfg.extra["tolerance"])
    for chk in checks:
        print(f"{'PASS' if chk.passed else 'FAIL'}  {chk.name}  {chk.detail}")
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if cfg.out is not None:
        write_table(cfg.out, list(OracleCheck._fields), [list(c) for c in checks], cfg.fmt)
    if failed:
        logging.error("[Cli] %d oracle checks failed", len(failed))
        return PropertyFailure.exit_code
    return 0


# -------------------------------------------------------------------------
# Registration
# -------------------------------------------------------------------------
COMMANDS: dict[str, tuple[Callable, Callable]] = {
    "sample": (resolve_sample, cmd_sample),
    "pmf": (resolve_pmf, cmd_pmf),
    "kstest": (resolve_kstest, cmd_kstest),
    "fit": (resolve_fit, cmd_fit),
    "oracle-check": (resolve_oracle, cmd_oracle_check),
}


def _add_common(p: argparse.ArgumentParser, default_format: str = "csv") -> None:
    p.add_argument("--seed", type=int, default=None, help="root seed (default: FGRAD_SEED or 0)")
    p.add_argument("--out", default=None, help="primary output path (default: under FGRAD_OUT_DIR)")
    p.add_argument("--format", choices=("csv", "json"), default=default_format)


def _add_urn(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--m", required=required, help="class counts, e.g. 200,200,200")
    p.add_argument("--n", type=int, required=required, default=None, help="number of draws")
    p.add_argument("--omega", default=None, help="class importance weights (default: all 1)")


def setup_commands(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("sample", help="draw from the differentiable or the exact sampler")
    _add_common(p)
    _add_urn(p)
    p.add_argument("--mode", choices=("differentiable", "exact"), default="differentiable")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--count", type=int, default=1000)

    p = sub.add_parser("pmf", help="joint and chain PMFs over an enumerable support")
    _add_common(p)
    _add_urn(p)

    p = sub.add_parser("kstest", help="KS sensitivity sweep: differentiable vs exact sampler")
    _add_common(p)
    p.add_argument("--sweep", choices=SWEEP_PARAMS, default="omega2")
    p.add_argument("--values", default=None, help="override the grid, e.g. 1,2,3")
    _add_urn(p, required=False)
    p.add_argument("--samples", type=int, default=None, help="draws per arm (default: FGRAD_KS_SAMPLES or 20000)")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=None, help="significance threshold (default 0.05)")
    p.add_argument("--assert", dest="assert_pass", action="store_true", help="exit 1 unless all corrected p > threshold")
    p.add_argument("--allow-failures", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("fit", help="recover class importance with SGD")
    _add_common(p)
    p.add_argument("--m", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--omega-gt", default=None, help="generate the dataset from these weights")
    p.add_argument("--data", default=None, help="load draw vectors from CSV instead")
    p.add_argument("--omega2-grid", default=None, help="one fit per ω_2 value, e.g. 1,2,...,10")
    p.add_argument("--train", type=int, default=800)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--tau-init", type=float, default=1.0)
    p.add_argument("--tau-final", type=float, default=0.1)
    p.add_argument("--anneal-steps", type=int, default=250)
    p.add_argument("--init-log-omega", default=None)

    p = sub.add_parser("oracle-check", help="brute-force PMF property suite")
    _add_common(p, default_format="json")
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--random-urns", type=int, default=20)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fishergrad",
        description="Differentiable Fisher noncentral hypergeometric sampling and experiments.",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: FGRAD_LOG_LEVEL)")
    parser.add_argument("--no-ledger", action="store_true", help="do not record this run in the sqlite ledger")
    sub = parser.add_subparsers(dest="command", required=True)
    setup_commands(sub)
    return parser


def dispatch(args: argparse.Namespace, settings: Settings) -> tuple[int, Optional[RunConfig]]:
    """Resolve, run and write the config echo. Never raises."""
    resolve, command = COMMANDS[args.command]
    cfg: Optional[RunConfig] = None
    try:
        cfg = resolve(args, settings)
        code = command(cfg)
        if cfg.out is not None and cfg.subcommand != "oracle-check":
            write_config_sidecar(cfg.out, {**cfg.as_dict(), "settings": settings.as_dict()})
        return code, cfg
    except FishergradError as e:
        logging.error("[Cli] %s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code, cfg
    except Exception as e:
        logging.exception("[Cli] %s crashed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return 1, cfg
