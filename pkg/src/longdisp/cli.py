"""Command-line interface for the disparity decomposition pipeline.

Subcommands: summarize, select-bandwidths, decompose, scb, simulate, and
run (the end-to-end pipeline, which writes a manifest, delimited tables,
and figures into an output directory).

The CLI formats and routes; every number in an artifact comes from a
library call.  Floats are written with 17 significant digits so that
files round-trip exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from .bandwidth import BandwidthGrid, CVResult, select_bandwidths_cv
from .config import (
    RunConfig,
    config_lines,
    infer_covariates,
    read_config_file,
    resolve_config,
    validate_config,
)
from .data import (
    ColumnSchema,
    ModifierSpec,
    format_float,
    load_dataset,
    summarize,
    write_datasets,
)
from .decomposition import (
    METHODS,
    Bandwidths,
    DecompositionCurve,
    GroupBandwidths,
    TimeGrid,
    estimate_decomposition,
)
from .errors import ConfigError, DataError, EstimationError
from .inference import SCBResult, bootstrap_scb
from .kernels import KernelSpec
from .simulation import SCENARIOS, generate, scenario, true_decomposition

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ESTIMATION = 4
EXIT_IO = 5

_CFG_FIELDS = {f.name for f in dc_fields(RunConfig)}
_KERNELS = ("epanechnikov", "triweight", "uniform")

_SUMMARY_HEADER = (
    "group",
    "n_subjects",
    "total_obs",
    "variable",
    "kind",
    "level",
    "count",
    "percent",
    "mean",
    "sd",
)
_BANDWIDTH_HEADER = ("group", "target", "r", "b1", "b2", "score", "n_terms", "n_skipped", "source")
_CURVE_HEADER = ("t", "D", "D1", "D2", "D3", "missing")
_BAND_HEADER = ("t", "estimate", "se", "lower", "upper")
_TRUTH_HEADER = ("t", "D", "D1", "D2", "D3")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the normal error path."""

    def error(self, message):
        raise ConfigError(message)


def _fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def _write_rows(path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(cell) for cell in row) for row in rows)
    text = "\n".join(lines) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _csv_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _float_list(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") from None


def _delim(raw: str) -> str:
    return "\t" if raw in ("tab", "\\t") else raw


def _add_data_flags(p) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--input", help="long-format delimited data file")
    p.add_argument("--delimiter", type=_delim, help="field delimiter (',' default, or 'tab')")
    p.add_argument("--id-column")
    p.add_argument("--group-column")
    p.add_argument("--time-column")
    p.add_argument("--outcome-column")
    p.add_argument("--modifier-column")
    p.add_argument(
        "--covariates",
        type=_csv_list,
        help="comma-separated covariate columns (default: every non-role column)",
    )
    p.add_argument("--majority", help="group label treated as the majority")
    p.add_argument("--minority", help="group label treated as the minority")
    p.add_argument("--modifier-kind", choices=("continuous", "discrete"))
    p.add_argument("--modifier-levels", type=_float_list, help="declared discrete levels")


def _add_estimation_flags(p, *, bootstrap: bool = False) -> None:
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--kernel", choices=_KERNELS)
    p.add_argument("--b1", type=float, help="fixed time bandwidth (skips CV)")
    p.add_argument("--b2", type=float, help="fixed modifier bandwidth")
    p.add_argument("--cv-grid", type=int, help="candidates per bandwidth axis")
    p.add_argument("--cv-subsample", type=float, help="fraction of subjects scored in CV")
    p.add_argument("--grid-points", type=int, help="evaluation grid size")
    p.add_argument("--trim", type=float, help="fraction trimmed from each end of the grid")
    p.add_argument("--zM", type=float, help="majority conditioning value (cmldd)")
    p.add_argument("--zm", type=float, help="minority conditioning value (cmldd)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="parallel workers for the bootstrap")
    p.add_argument(
        "--ridge",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="stabilize singular local fits with a recorded ridge",
    )
    if bootstrap:
        p.add_argument("--boot-B", type=int, help="bootstrap replicates")
        p.add_argument("--alpha", type=float, help="simultaneous band level")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="longdisp",
        description="Estimate and decompose time-varying group disparities "
        "from longitudinal data.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("summarize", help="descriptive statistics per group")
    _add_data_flags(p)
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("select-bandwidths", help="leave-one-subject-out CV")
    _add_data_flags(p)
    _add_estimation_flags(p)
    p.add_argument("--out", help="score table file (default stdout)")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("decompose", help="point estimates of D, D1, D2, D3")
    _add_data_flags(p)
    _add_estimation_flags(p)
    p.add_argument("--out", help="curve table file (default stdout)")
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("scb", help="decomposition with simultaneous confidence bands")
    _add_data_flags(p)
    _add_estimation_flags(p, bootstrap=True)
    p.add_argument("--out", help="band table file (default stdout)")
    p.set_defaults(func=_cmd_scb)

    p = sub.add_parser("simulate", help="draw a synthetic dataset plus its truth table")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--n-majority", type=int, default=100)
    p.add_argument("--n-minority", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--obs-min", type=int, default=3, help="fewest observations per subject")
    p.add_argument("--obs-max", type=int, default=6, help="most observations per subject")
    p.add_argument("--grid-points", type=int, default=50)
    p.add_argument("--trim", type=float, default=0.05)
    p.add_argument("--delimiter", type=_delim, default=",")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--truth-out", help="truth table file (default: <out>_truth<ext>)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("run", help="end-to-end pipeline with manifest and figures")
    _add_data_flags(p)
    _add_estimation_flags(p, bootstrap=True)
    p.add_argument("--out-dir", help="directory for all artifacts")
    p.add_argument(
        "--plots",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="render figures alongside the tables",
    )
    p.set_defaults(func=_cmd_run)
    return parser


def _resolve(args) -> RunConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    flag_values = {k: v for k, v in vars(args).items() if k in _CFG_FIELDS and v is not None}
    return resolve_config(file_values, flag_values)


def _load_groups(cfg: RunConfig):
    covariates = cfg.covariates or infer_covariates(cfg.input, cfg)
    schema = ColumnSchema(
        id=cfg.id_column,
        group=cfg.group_column,
        time=cfg.time_column,
        outcome=cfg.outcome_column,
        modifier=cfg.modifier_column,
        covariates=covariates,
        delimiter=cfg.delimiter,
    )
    try:
        spec = ModifierSpec(cfg.modifier_kind, cfg.modifier_levels or ())
    except ValueError as err:
        raise ConfigError(str(err)) from None
    major = load_dataset(cfg.input, schema, cfg.majority, spec)
    minor = load_dataset(cfg.input, schema, cfg.minority, spec)
    return major, minor


def _selected_cell(result: CVResult):
    for cell in result.score_table:
        if (cell.b1, cell.b2) == result.selected:
            return cell
    raise RuntimeError("selected pair missing from its own score table")


def _select_group(cfg: RunConfig, dataset, kernel):
    """CV for one group: the coefficient target plus one per conditional mean."""
    if cfg.method == "ldd":
        beta_target, mean_target = "beta_time", "time_mean"
        grid = BandwidthGrid.default(dataset, cfg.cv_grid, include_b2=False)
    else:
        beta_target, mean_target = "beta", "cond_mean"
        grid = BandwidthGrid.default(dataset, cfg.cv_grid)
    kwargs = dict(cv_subsample=cfg.cv_subsample, ridge=cfg.ridge)
    results = [select_bandwidths_cv(dataset, grid, beta_target, kernel, **kwargs)]
    for r in range(1, dataset.p + 1):
        results.append(
            select_bandwidths_cv(dataset, grid, mean_target, kernel, r=r, **kwargs)
        )
    beta_sel = results[0].selected
    cond = [res.selected for res in results[1:]]
    group_bw = GroupBandwidths(
        b1=beta_sel[0],
        b2=beta_sel[1],
        cond_b1=tuple(b1 for b1, _ in cond),
        cond_b2=tuple(b2 for _, b2 in cond) if beta_sel[1] is not None else (),
    )
    return group_bw, results


def resolve_bandwidths(cfg: RunConfig, major, minor, kernel):
    """Fixed (b1, b2) when given, otherwise per-group, per-target CV.

    Returns (Bandwidths, table rows in _BANDWIDTH_HEADER order).
    """
    if cfg.b1 is not None:
        b2 = None if (cfg.method == "ldd" or cfg.modifier_kind == "discrete") else cfg.b2
        group_bw = GroupBandwidths(b1=cfg.b1, b2=b2)
        rows = [
            (ds.group, "all", "", cfg.b1, b2, "", "", "", "fixed")
            for ds in (major, minor)
        ]
        return Bandwidths(majority=group_bw, minority=group_bw), rows
    rows = []
    selected = {}
    for ds in (major, minor):
        group_bw, results = _select_group(cfg, ds, kernel)
        selected[ds.group] = group_bw
        for res in results:
            cell = _selected_cell(res)
            rows.append(
                (
                    ds.group,
                    res.target,
                    "" if res.r is None else res.r,
                    cell.b1,
                    cell.b2,
                    cell.score,
                    cell.n_terms,
                    cell.n_skipped,
                    "cv",
                )
            )
    return Bandwidths(majority=selected[major.group], minority=selected[minor.group]), rows


def _summary_rows(summaries):
    rows = []
    for s in summaries:
        for variable, kind, level, count, pct, mean, sd in s.rows():
            rows.append(
                (s.group, s.n_subjects, s.total_obs, variable, kind, level, count, pct, mean, sd)
            )
    return rows


def _curve_rows(curve: DecompositionCurve):
    return [
        (t, curve.D[i], curve.D1[i], curve.D2[i], curve.D3[i], bool(curve.missing[i]))
        for i, t in enumerate(curve.grid.points)
    ]


def _band_rows(res: SCBResult):
    return [
        (t, res.point[i], res.se[i], res.lower[i], res.upper[i])
        for i, t in enumerate(res.grid.points)
    ]


def emit_plot_data(curves: list[SCBResult], path) -> None:
    """One tidy table for external plotting: component, t, estimate, lower, upper."""
    rows = []
    for res in curves:
        for i, t in enumerate(res.grid.points):
            rows.append((res.component, t, res.point[i], res.lower[i], res.upper[i]))
    _write_rows(path, ("component", "t", "estimate", "lower", "upper"), rows)


def _cmd_summarize(args) -> int:
    cfg = _resolve(args)
    validate_config(cfg)
    major, minor = _load_groups(cfg)
    _write_rows(args.out, _SUMMARY_HEADER, _summary_rows([summarize(major), summarize(minor)]))
    return EXIT_OK


def _cmd_select(args) -> int:
    cfg = _resolve(args)
    validate_config(cfg)
    if cfg.b1 is not None:
        raise ConfigError("bandwidths are fixed by b1/b2; nothing to select")
    major, minor = _load_groups(cfg)
    _, rows = resolve_bandwidths(cfg, major, minor, KernelSpec(cfg.kernel))
    _write_rows(args.out, _BANDWIDTH_HEADER, rows)
    return EXIT_OK


def _prepare(cfg: RunConfig):
    """Shared front half of decompose/scb/run: load, grid, bandwidths."""
    kernel = KernelSpec(cfg.kernel)
    major, minor = _load_groups(cfg)
    grid = TimeGrid.default(major, minor, cfg.grid_points, cfg.trim)
    bandwidths, bw_rows = resolve_bandwidths(cfg, major, minor, kernel)
    return kernel, major, minor, grid, bandwidths, bw_rows


def _cmd_decompose(args) -> int:
    cfg = _resolve(args)
    validate_config(cfg)
    kernel, major, minor, grid, bandwidths, _ = _prepare(cfg)
    curve = estimate_decomposition(
        cfg.method,
        major,
        minor,
        grid,
        bandwidths,
        kernel,
        zM=cfg.zM,
        zm=cfg.zm,
        ridge=cfg.ridge,
    )
    _write_rows(args.out, _CURVE_HEADER, _curve_rows(curve))
    return EXIT_OK


def _cmd_scb(args) -> int:
    cfg = _resolve(args)
    validate_config(cfg)
    kernel, major, minor, grid, bandwidths, _ = _prepare(cfg)
    results = bootstrap_scb(
        major,
        minor,
        cfg.method,
        grid,
        bandwidths,
        kernel,
        B=cfg.boot_B,
        alpha=cfg.alpha,
        seed=cfg.seed,
        zM=cfg.zM,
        zm=cfg.zm,
        workers=cfg.workers,
        ridge=cfg.ridge,
    )
    rows = []
    for res in results:
        rows.extend((res.component,) + row for row in _band_rows(res))
    _write_rows(args.out, ("component",) + _BAND_HEADER, rows)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.obs_min < 1 or args.obs_max < args.obs_min:
        raise ConfigError("need 1 <= obs-min <= obs-max")
    config = scenario(
        args.scenario,
        n_majority=args.n_majority,
        n_minority=args.n_minority,
        seed=args.seed,
        obs_per_subject=(args.obs_min, args.obs_max),
    )
    major, minor = generate(config)
    write_datasets((major, minor), args.out, delimiter=args.delimiter)
    grid = TimeGrid.default(major, minor, args.grid_points, args.trim)
    truth = true_decomposition(config, grid)
    out = Path(args.out)
    truth_path = args.truth_out or out.with_name(out.stem + "_truth" + out.suffix)
    rows = [
        (t, truth.D[i], truth.D1[i], truth.D2[i], truth.D3[i])
        for i, t in enumerate(grid.points)
    ]
    _write_rows(truth_path, _TRUTH_HEADER, rows)
    return EXIT_OK


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(cfg: RunConfig) -> int:
    """Load, select bandwidths, decompose, band, and write every artifact.

    The manifest echoes the resolved configuration in loadable form (minus
    the worker count and output directory, which must not affect artifact
    bytes), the selected bandwidths, and run diagnostics.  It is written
    last so it can list the other artifacts' checksums.
    """
    validate_config(cfg)
    if not cfg.out_dir:
        raise ConfigError("run needs an output directory (--out-dir)")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    kernel, major, minor, grid, bandwidths, bw_rows = _prepare(cfg)
    artifacts: list[Path] = []

    def emit(name, header, rows):
        path = out_dir / name
        _write_rows(path, header, rows)
        artifacts.append(path)

    emit("summary.csv", _SUMMARY_HEADER, _summary_rows([summarize(major), summarize(minor)]))
    emit("bandwidths.csv", _BANDWIDTH_HEADER, bw_rows)

    curve = estimate_decomposition(
        cfg.method,
        major,
        minor,
        grid,
        bandwidths,
        kernel,
        zM=cfg.zM,
        zm=cfg.zm,
        ridge=cfg.ridge,
    )
    emit("decomposition.csv", _CURVE_HEADER, _curve_rows(curve))

    results = bootstrap_scb(
        major,
        minor,
        cfg.method,
        grid,
        bandwidths,
        kernel,
        B=cfg.boot_B,
        alpha=cfg.alpha,
        seed=cfg.seed,
        zM=cfg.zM,
        zm=cfg.zm,
        workers=cfg.workers,
        ridge=cfg.ridge,
    )
    for res in results:
        emit(f"band_{res.component}.csv", _BAND_HEADER, _band_rows(res))
    plot_path = out_dir / "plot_data.csv"
    emit_plot_data(results, plot_path)
    artifacts.append(plot_path)

    if cfg.plots:
        from .plotting import plot_bands, plot_decomposition

        fig_curve = out_dir / "decomposition.png"
        fig_bands = out_dir / "bands.png"
        plot_decomposition(curve, fig_curve)
        plot_bands(results, fig_bands, method=cfg.method)
        artifacts.extend([fig_curve, fig_bands])

    lines = ["# run manifest; reload with: longdisp run --config manifest.txt --out-dir DIR"]
    lines.extend(config_lines(cfg, exclude=("workers", "out_dir")))
    lines.append("# selected bandwidths")
    for group, target, r, b1, b2, score, _terms, skipped, source in bw_rows:
        lines.append(
            f"# bandwidth group={group} target={target} r={r or '-'} "
            f"b1={_fmt(b1)} b2={_fmt(b2) or '-'} score={_fmt(score) or '-'} "
            f"skipped={_fmt(skipped) or '0'} source={source}"
        )
    lines.append("# diagnostics")
    lines.append(f"# grid points={len(grid)} start={_fmt(grid.points[0])} end={_fmt(grid.points[-1])}")
    lines.append(f"# decomposition missing={curve.n_missing}")
    lines.append(
        f"# bootstrap B={results[0].B} failed={results[0].n_failed} "
        f"degraded={results[0].n_degraded}"
    )
    for res in results:
        lines.append(f"# band component={res.component} Q_alpha={_fmt(res.Q_alpha)}")
    lines.append("# artifacts")
    for path in artifacts:
        lines.append(f"# sha256 {path.name} {_sha256(path)}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _resolve(args)
    return run_pipeline(cfg)


def _single_line(err) -> str:
    return " ".join(str(err).split()) or err.__class__.__name__


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as err:
        return _fail("usage", err, EXIT_USAGE)
    except DataError as err:
        return _fail("data", err, EXIT_DATA)
    except EstimationError as err:
        return _fail("estimation", err, EXIT_ESTIMATION)
    except ValueError as err:
        return _fail("usage", err, EXIT_USAGE)
    except OSError as err:
        return _fail("io", err, EXIT_IO)


def _fail(kind: str, err, code: int) -> int:
    print(f"error:{kind}:{code}: {_single_line(err)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
