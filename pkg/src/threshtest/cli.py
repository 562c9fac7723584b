"""Command-line surface: test, calibrate, region, power, level.

Inputs are CSV data files with a header (response column picked by
--response) and JSON hypothesis files; every output file is accompanied
by a ``<out>.manifest.json`` run manifest. Exit codes: 0 completed
inference, 2 parse/validation error, 3 untestable/not-applicable,
4 internal error.
"""

import argparse
import csv
import hashlib
import json
import sys
import time

import numpy as np

from . import __version__, _svg
from .calibration import calibrate, gaussian_pivotal_null, glm_plugin_null
from .core import DesignMatrix, LinearHypothesis, SubsetHypothesis, build_reduction
from .exceptions import (
    DimensionMismatch,
    DomainError,
    InsufficientDraws,
    InvalidSpec,
    NotApplicable,
    OverflowGuard,
    RankDeficient,
    StatisticMismatch,
    UnsupportedDimension,
    Untestable,
)
from .inference import McConfig, confidence_region, run_composite, run_test
from .simulate import DesignSpec, ExperimentConfig, estimate_level, estimate_power
from .statistics import GLM_FAMILIES, StatisticSpec, build_evaluator

_PARSE_ERRORS = (InvalidSpec, InsufficientDraws, DimensionMismatch, RankDeficient,
                 StatisticMismatch, DomainError, OverflowGuard, UnsupportedDimension,
                 ValueError, KeyError, OSError, json.JSONDecodeError)
_SKIP_ERRORS = (Untestable, NotApplicable)


def _canonical_digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_manifest(out_path, command, config, seed, elapsed):
    manifest = {
        "command": command,
        "config_digest": _canonical_digest(config),
        "seed": seed,
        "tool_version": __version__,
        "timing_seconds": round(elapsed, 6),
    }
    with open(f"{out_path}.manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_data(path, response, intercept):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if response not in header:
        raise InvalidSpec(f"response column {response!r} not in {header}")
    data = np.asarray(rows, dtype=float)
    if data.shape[1] != len(header):
        raise InvalidSpec("ragged CSV data")
    y_idx = header.index(response)
    y = data[:, y_idx]
    x = np.delete(data, y_idx, axis=1)
    names = [h for i, h in enumerate(header) if i != y_idx]
    if intercept:
        x = np.hstack([np.ones((x.shape[0], 1)), x])
        names = ["(intercept)"] + names
        return DesignMatrix(x, column_names=names, intercept_column=0), y
    return DesignMatrix(x, column_names=names), y


def _read_hypothesis(path, p):
    with open(path) as fh:
        doc = json.load(fh)
    if "subset" in doc:
        sub = doc["subset"]
        return SubsetHypothesis(int(sub["j0"]), np.asarray(sub["c"], dtype=float)).expand(
            p, row_partition=doc.get("groups"))
    a = np.asarray(doc["A"], dtype=float)
    c = np.asarray(doc["c"], dtype=float)
    return LinearHypothesis(a, c, row_partition=doc.get("groups"))


def _resolve_stat(name, hyp, family_tag):
    """Map a CLI statistic name to a StatisticSpec; group variants default
    to a single block over all tested rows."""
    if name in ("glm_score_sup", "glm_score_group"):
        if family_tag is None:
            raise InvalidSpec(f"{name} requires --family")
        if name == "glm_score_group":
            return StatisticSpec(name, glm_family=family_tag,
                                 row_partition=None)  # resolved at evaluation
        return StatisticSpec(name, glm_family=family_tag)
    if name in ("affine_group_lasso", "sqrt_affine_group_lasso"):
        part = hyp.row_partition if hyp is not None and len(hyp.row_partition) < hyp.r \
            else ((tuple(range(hyp.r)),) if hyp is not None else None)
        return StatisticSpec(name, row_partition=part)
    return StatisticSpec(name)


def _write_record_csv(path, record):
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(record.keys()))
        writer.writerow([repr(v) if isinstance(v, float) else v
                         for v in record.values()])


def _cmd_test(args):
    started = time.time()
    x, y = _read_data(args.data, args.response, args.intercept)
    hyp = _read_hypothesis(args.hypothesis, x.p)
    mc = McConfig(m_draws=args.mc, seed=args.seed)
    if args.stat == "composite":
        result = run_composite(y, x, hyp, alpha=args.alpha, mc=mc)
    else:
        stat = _resolve_stat(args.stat, hyp, args.family)
        result = run_test(y, x, hyp, stat, alpha=args.alpha, mc=mc)
    _write_record_csv(args.out, result.to_record())
    config = {"data": args.data, "hypothesis": args.hypothesis, "stat": args.stat,
              "alpha": args.alpha, "mc": args.mc, "response": args.response,
              "intercept": args.intercept}
    _write_manifest(args.out, "test", config, args.seed, time.time() - started)
    return 0


def _cmd_calibrate(args):
    started = time.time()
    x, y = _read_data(args.data, args.response, args.intercept)
    hyp = _read_hypothesis(args.hypothesis, x.p)
    stat = _resolve_stat(args.stat, hyp, args.family)
    if stat.family in GLM_FAMILIES:
        model = glm_plugin_null(x, stat.glm_family, y)
        evaluator = build_evaluator(stat, x)
    else:
        red = build_reduction(x, hyp)
        model = gaussian_pivotal_null(x, hyp, red)
        evaluator = build_evaluator(stat, x, hyp=hyp, red=red)
    cal = calibrate(evaluator, model, args.mc, args.alpha, args.seed)
    cal.save(args.out)
    config = {"data": args.data, "hypothesis": args.hypothesis, "stat": args.stat,
              "alpha": args.alpha, "mc": args.mc}
    _write_manifest(args.out, "calibrate", config, args.seed, time.time() - started)
    return 0


def _parse_axis(spec):
    lo, hi, num = spec.split(":")
    return np.linspace(float(lo), float(hi), int(num))


def _cmd_region(args):
    started = time.time()
    x, y = _read_data(args.data, args.response, args.intercept)
    hyp = _read_hypothesis(args.hypothesis, x.p)
    a = hyp.a_matrix
    r = a.shape[0]
    if r > 2:
        raise UnsupportedDimension(f"region grids support R <= 2, got R = {r}")
    if len(args.grid) != r:
        raise InvalidSpec(f"need {r} --grid axes for an R = {r} hypothesis")
    stat = _resolve_stat(args.stat, hyp, args.family)
    region = confidence_region(y, x, a, stat=stat, alpha=args.alpha,
                               mc=McConfig(m_draws=args.mc, seed=args.seed))
    axes = [_parse_axis(g) for g in args.grid]
    with open(args.out, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if r == 1:
            writer.writerow(["c", "lambda_cr", "member"])
            lam_vals = []
            for c in axes[0]:
                lam = region.evaluator(np.array([c]))
                lam_vals.append(lam)
                writer.writerow([repr(float(c)), repr(float(lam)),
                                 int(lam <= region.lambda_alpha)])
        else:
            writer.writerow(["c1", "c2", "member"])
            for c1 in axes[0]:
                for c2 in axes[1]:
                    lam = region.evaluator(np.array([c1, c2]))
                    writer.writerow([repr(float(c1)), repr(float(c2)),
                                     int(lam <= region.lambda_alpha)])
    if args.plot and r == 1:
        _svg.line_panels([{
            "title": f"lambda_CR(c), threshold {region.lambda_alpha:.4g}",
            "series": [
                ("lambda_CR", list(axes[0]), lam_vals),
                ("lambda_alpha", [axes[0][0], axes[0][-1]],
                 [region.lambda_alpha, region.lambda_alpha]),
            ],
        }], args.plot)
    config = {"data": args.data, "hypothesis": args.hypothesis, "stat": args.stat,
              "alpha": args.alpha, "mc": args.mc, "grid": args.grid}
    _write_manifest(args.out, "region", config, args.seed, time.time() - started)
    return 0


def _scenario_config(doc, seed_override):
    design = doc.get("design", {})
    stats = []
    for entry in doc.get("statistics", []):
        if isinstance(entry, str):
            if entry in ("composite", "fisher", "lrt"):
                stats.append(entry)
            elif entry in GLM_FAMILIES:
                if entry == "glm_score_group":
                    stats.append(StatisticSpec(
                        entry, glm_family=doc.get("family", "gaussian"),
                        row_partition=(tuple(range(int(doc["p"]))),)))
                else:
                    stats.append(StatisticSpec(
                        entry, glm_family=doc.get("family", "gaussian")))
            elif entry in ("affine_group_lasso", "sqrt_affine_group_lasso"):
                stats.append(StatisticSpec(
                    entry, row_partition=(tuple(range(int(doc["p"]))),)))
            else:
                stats.append(StatisticSpec(entry))
        else:
            stats.append(StatisticSpec(
                entry["family"],
                row_partition=entry.get("groups"),
                glm_family=entry.get("glm_family")))
    return ExperimentConfig(
        n=int(doc["n"]),
        p=int(doc["p"]),
        family=doc.get("family", "gaussian"),
        beta0=float(doc.get("beta0", -2.0)),
        alpha=float(doc.get("alpha", 0.05)),
        m_calib=int(doc.get("m_calib", 2000)),
        n_reps=int(doc.get("n_reps", 1000)),
        theta_grid=tuple(float(t) for t in doc.get("theta_grid", [0.0])),
        s_values=tuple(int(s) for s in doc.get("s_values", [1])),
        design_spec=DesignSpec(
            kind=design.get("kind", "ar1"),
            rho=float(design.get("rho", 0.5)),
            standardize=bool(design.get("standardize", True))),
        statistics=tuple(stats),
        seed=int(doc["seed"] if seed_override is None else seed_override),
    )


def _write_power_csv(path, rows):
    from .simulate import PowerRow

    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(PowerRow.HEADER))
        for row in rows:
            writer.writerow(list(row.as_csv_row()))


def _plot_power(rows, path):
    panels = []
    keys = sorted({(r.family, r.s) for r in rows})
    for family, s in keys:
        series = []
        stat_ids = sorted({r.statistic_id for r in rows
                           if r.family == family and r.s == s})
        for sid in stat_ids:
            pts = sorted((r.theta, r.power_estimate) for r in rows
                         if r.family == family and r.s == s
                         and r.statistic_id == sid and r.status == "ok")
            if pts:
                series.append((sid, [p[0] for p in pts], [p[1] for p in pts]))
        panels.append({"title": f"{family}, s = {s}", "series": series})
    _svg.line_panels(panels, path)


def _cmd_power(args, level_only=False):
    started = time.time()
    with open(args.config) as fh:
        doc = json.load(fh)
    scenarios = doc["scenarios"] if "scenarios" in doc else [doc]
    all_rows = []
    for i, scenario in enumerate(scenarios):
        cfg = _scenario_config(scenario, args.seed)
        runner = estimate_level if level_only else estimate_power
        rows = runner(cfg, threads=args.threads)
        all_rows.extend(rows)
        path = args.out if len(scenarios) == 1 else f"{args.out}.scenario{i + 1}.csv"
        _write_power_csv(path, rows)
    if args.plot:
        _plot_power(all_rows, args.plot)
    _write_manifest(args.out, "level" if level_only else "power", doc,
                    args.seed, time.time() - started)
    return 0


def _add_common(parser):
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--mc", type=int, default=2000,
                        help="number of Monte-Carlo calibration draws")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--stat", default="sqrt_affine_lasso")
    parser.add_argument("--out", required=True)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--plot", default=None, help="optional SVG output path")


def _add_data_args(parser):
    parser.add_argument("--data", required=True, help="CSV data file with header")
    parser.add_argument("--response", required=True, help="response column name")
    parser.add_argument("--intercept", action="store_true",
                        help="prepend an unpenalized all-ones column")
    parser.add_argument("--hypothesis", required=True, help="hypothesis JSON file")
    parser.add_argument("--family", default=None,
                        help="glm family for glm_score statistics")


def build_parser():
    parser = argparse.ArgumentParser(prog="threshtest")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("test", "calibrate", "region"):
        sp = sub.add_parser(name)
        _add_common(sp)
        _add_data_args(sp)
        if name == "region":
            sp.add_argument("--grid", action="append", default=[],
                            help="axis as lo:hi:count (repeat for R = 2)")
    for name in ("power", "level"):
        sp = sub.add_parser(name)
        _add_common(sp)
        sp.add_argument("--config", required=True, help="experiment config JSON")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = 0 if args.command in ("test", "calibrate", "region") else None
    try:
        if args.command == "test":
            return _cmd_test(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command == "region":
            return _cmd_region(args)
        if args.command == "power":
            return _cmd_power(args)
        return _cmd_power(args, level_only=True)
    except _SKIP_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
