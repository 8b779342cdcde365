"""Command-line interface.

Every subcommand resolves its settings from flags, an optional --config JSON
file, and defaults (in that precedence), then writes the resolved values to
``resolved-config.json`` in the output directory.  Replaying that file with
``--config`` reproduces every artifact byte for byte; ``--threads`` and
``--out`` are execution details and are deliberately not part of it.

Exit codes: 0 success, 2 malformed input data, 3 configuration errors,
1 runtime failures (for example a singular moment matrix).  Progress goes to
standard error; summaries are printed to standard output as JSON.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .estimator import LloydConfig, canonical_labels, lloyd_fit, lloyd_starts
from .inference import InferenceError, hac_covariance
from .io import PanelFormatError, dump_json, read_panel, write_csv
from .panel import BlockSpec, ClusterConfig
from .selection import cp_select
from .simulation import (
    McReport,
    convergence_diagnostics,
    design_clusters,
    design_dimension,
    design_imbalance,
    design_misspec,
    design_model_select,
    design_sample_size,
    design_separation,
    run_mc,
    run_mc_selection,
    start_convergence,
)
from .transforms import fe_fit

_DESIGNS = (
    "separation",
    "sample-size",
    "clusters",
    "misspec",
    "imbalance",
    "dimension",
    "model-select",
    "convergence",
)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _counts(value: object, name: str) -> tuple[int, ...] | None:
    """Accept '2,3' from the command line or [2, 3] from a config file."""
    if value is None:
        return None
    if isinstance(value, str):
        parts = [s for s in value.split(",") if s.strip() != ""]
        try:
            out = tuple(int(s) for s in parts)
        except ValueError:
            raise ValueError(f"{name} must be comma-separated integers, got {value!r}")
    else:
        out = tuple(int(v) for v in value)  # type: ignore[union-attr]
    if not out:
        raise ValueError(f"{name} must contain at least one integer")
    return out


def _load_config_file(args: argparse.Namespace, command: str) -> dict:
    if args.config is None:
        return {}
    with open(args.config) as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    recorded = cfg.get("command")
    if recorded is not None and recorded != command:
        raise ValueError(f"config file was written by {recorded!r}, not {command!r}")
    return cfg


def _pick(args: argparse.Namespace, cfg: dict, key: str, default=None, required=False):
    value = getattr(args, key, None)
    if value is None:
        value = cfg.get(key)
    if value is None:
        if required:
            flag = "--" + key.replace("_", "-")
            raise ValueError(f"missing required setting {key!r} (pass {flag} or a config file)")
        value = default
    return value


def _resolve_seed(args: argparse.Namespace, cfg: dict) -> int:
    if args.seed is not None:
        return int(args.seed)
    if cfg.get("seed") is not None:
        return int(cfg["seed"])
    env = os.environ.get("MBPC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"MBPC_SEED must be an integer, got {env!r}")
    return 0


def _lloyd_settings(args: argparse.Namespace, cfg: dict) -> dict:
    return {
        "starts": int(_pick(args, cfg, "starts", 50)),
        "tol": float(_pick(args, cfg, "tol", 1e-8)),
        "itermax": int(_pick(args, cfg, "itermax", 400)),
        "seed": _resolve_seed(args, cfg),
    }


def _lloyd_config(resolved: dict) -> LloydConfig:
    return LloydConfig(
        n_starts=resolved["starts"],
        tol=resolved["tol"],
        itermax=resolved["itermax"],
        seed=resolved["seed"],
    )


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out) if args.out is not None else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args: argparse.Namespace) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise ValueError("--threads must be at least 1")
        return args.threads
    return os.cpu_count() or 1


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


# ---------------------------------------------------------------------------
# fit / fe-fit
# ---------------------------------------------------------------------------


def _inference_rows(blocks: BlockSpec, clusters: ClusterConfig, inf) -> list[list]:
    rows = []
    pos = 0
    for l, (d, k) in enumerate(zip(blocks.dims, clusters.counts)):
        for a in range(k):
            for j in range(d):
                rows.append(
                    [
                        l + 1,
                        a + 1,
                        f"x{blocks.starts[l] + j + 1}",
                        inf.coef[pos],
                        inf.se[pos],
                        inf.ci_lower[pos],
                        inf.ci_upper[pos],
                    ]
                )
                pos += 1
    return rows


def _run_fit(args: argparse.Namespace, command: str) -> int:
    cfg = _load_config_file(args, command)
    resolved = {
        "command": command,
        "input": str(_pick(args, cfg, "input", required=True)),
        "blocks": list(_counts(_pick(args, cfg, "blocks", required=True), "blocks")),
        "k": list(_counts(_pick(args, cfg, "k", required=True), "k")),
        "level": float(_pick(args, cfg, "level", 0.95)),
        **_lloyd_settings(args, cfg),
    }
    out = _out_dir(args)
    data, index = read_panel(resolved["input"])
    blocks = BlockSpec(tuple(resolved["blocks"]))
    clusters = ClusterConfig(tuple(resolved["k"]))
    lloyd = _lloyd_config(resolved)
    n_jobs = _threads(args)
    _note(
        f"{command}: N={data.n_units} T={data.n_periods} p={data.n_covariates} "
        f"blocks={blocks.dims} k={clusters.counts} starts={lloyd.n_starts}"
    )
    if command == "fe-fit":
        fe = fe_fit(data, blocks, clusters, lloyd, n_jobs=n_jobs)
        fit, inf_data = fe.fit, fe.demeaned.panel
    else:
        fe = None
        fit = lloyd_fit(data, blocks, clusters, lloyd, n_jobs=n_jobs)
        inf_data = data
    params, assignment = canonical_labels(fit.params, fit.assignment)
    inf = hac_covariance(inf_data, params, assignment, blocks, clusters, level=resolved["level"])

    fit_doc = {
        "risk": fit.risk,
        "best_start": fit.best_start,
        "block_dims": list(blocks.dims),
        "cluster_counts": list(clusters.counts),
        "theta": [t.tolist() for t in params.theta],
        "labels": assignment.one_based().tolist(),
        "units": list(index.units),
        "starts": [
            {
                "start": i,
                "risk": rec.risk,
                "iterations": rec.iterations,
                "converged": rec.converged,
                "n_deficient": rec.n_deficient,
            }
            for i, rec in enumerate(fit.starts)
        ],
    }
    if fe is not None:
        fit_doc["fixed_effects"] = [
            {"unit": u, "alpha": float(a)} for u, a in zip(index.units, fe.fixed_effects)
        ]
    dump_json(out / "fit.json", fit_doc)
    write_csv(
        out / "inference.csv",
        ["block", "cluster", "covariate", "estimate", "se", "ci_lower", "ci_upper"],
        _inference_rows(blocks, clusters, inf),
    )
    dump_json(out / "resolved-config.json", resolved)
    _emit({"command": command, "risk": fit.risk, "best_start": fit.best_start, "out": str(out)})
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    return _run_fit(args, "fit")


def cmd_fe_fit(args: argparse.Namespace) -> int:
    return _run_fit(args, "fe-fit")


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------


def cmd_select(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args, "select")
    resolved = {
        "command": "select",
        "input": str(_pick(args, cfg, "input", required=True)),
        "blocks": list(_counts(_pick(args, cfg, "blocks", required=True), "blocks")),
        "k_max": list(_counts(_pick(args, cfg, "k_max", required=True), "k_max")),
        "epsilon": float(_pick(args, cfg, "epsilon", 0.0)),
        **_lloyd_settings(args, cfg),
    }
    out = _out_dir(args)
    data, _index = read_panel(resolved["input"])
    blocks = BlockSpec(tuple(resolved["blocks"]))
    k_max = tuple(resolved["k_max"])
    lloyd = _lloyd_config(resolved)
    _note(f"select: N={data.n_units} T={data.n_periods} k_max={k_max}")
    sel = cp_select(
        data, blocks, k_max, lloyd, epsilon=resolved["epsilon"], n_jobs=_threads(args)
    )
    n_blocks = blocks.n_blocks
    write_csv(
        out / "selection.csv",
        [f"k{l + 1}" for l in range(n_blocks)] + ["risk", "penalty", "cp"],
        [list(row.counts) + [row.risk, row.penalty, row.cp] for row in sel.rows],
    )
    dump_json(
        out / "selection.json",
        {
            "k_hat": list(sel.k_hat),
            "k_max": list(k_max),
            "sigma2": sel.sigma2,
            "weight": sel.weight,
            "epsilon": resolved["epsilon"],
            "rows": [
                {"k": list(row.counts), "risk": row.risk, "penalty": row.penalty, "cp": row.cp}
                for row in sel.rows
            ],
        },
    )
    dump_json(out / "resolved-config.json", resolved)
    _emit({"command": "select", "k_hat": list(sel.k_hat), "out": str(out)})
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _report_files(out: Path, tagged: list[tuple[str | None, McReport]]) -> None:
    """summary.csv (one row per report) and replications.csv (one per rep)."""
    col_names: list[str] = []
    agg_names: list[str] = []
    for _tag, report in tagged:
        col_names += [c for c in report.columns if c not in col_names]
        agg_names += [a for a in report.aggregates if a not in agg_names]
    col_names.sort()
    agg_names.sort()
    with_tag = any(tag is not None for tag, _ in tagged)
    summary_rows = []
    rep_rows = []
    for tag, report in tagged:
        prefix = [tag] if with_tag else []
        summary_rows.append(prefix + [report.aggregates.get(a, float("nan")) for a in agg_names])
        for r in range(report.n_reps):
            rep_rows.append(
                prefix
                + [r]
                + [
                    report.columns[c][r] if c in report.columns else float("nan")
                    for c in col_names
                ]
            )
    tag_header = ["fit"] if with_tag else []
    write_csv(out / "summary.csv", tag_header + agg_names, summary_rows)
    write_csv(out / "replications.csv", tag_header + ["rep"] + col_names, rep_rows)


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args, "simulate")
    design = _pick(args, cfg, "design", required=True)
    if design not in _DESIGNS:
        raise ValueError(f"unknown design {design!r}; valid names: {', '.join(_DESIGNS)}")
    k_defaults = {"clusters": (2, 2), "misspec": (3, 3), "model-select": (2, 3)}
    resolved = {
        "command": "simulate",
        "design": design,
        "reps": int(_pick(args, cfg, "reps", 500)),
        "errors": str(_pick(args, cfg, "errors", "ar1")),
        "alpha": float(_pick(args, cfg, "alpha", math.pi / 2)),
        "k": list(_counts(_pick(args, cfg, "k", k_defaults.get(design, (2, 2))), "k")),
        "k_max": list(_counts(_pick(args, cfg, "k_max", (6, 6)), "k_max")),
        "m": int(_pick(args, cfg, "m", 1)),
        "p": int(_pick(args, cfg, "p", 3)),
        "n": int(_pick(args, cfg, "n", 150)),
        "t": int(_pick(args, cfg, "t", 10)),
        "level": float(_pick(args, cfg, "level", 0.95)),
        "epsilon": float(_pick(args, cfg, "epsilon", 0.0)),
        **_lloyd_settings(args, cfg),
    }
    out = _out_dir(args)
    lloyd = _lloyd_config(resolved)
    n_jobs = _threads(args)
    seed = resolved["seed"]
    n, t, errors, reps = resolved["n"], resolved["t"], resolved["errors"], resolved["reps"]
    level = resolved["level"]
    k = tuple(resolved["k"])
    _note(f"simulate {design}: reps={reps} errors={errors} seed={seed}")

    summary: dict = {"command": "simulate", "design": design, "out": str(out)}
    if design == "convergence":
        spec = design_sample_size(n, t, errors)
        report = convergence_diagnostics(
            spec,
            n_starts_max=resolved["starts"],
            n_reps=reps,
            config=lloyd,
            seed=seed,
            n_jobs=n_jobs,
        )
        write_csv(
            out / "diagnostics.csv",
            ["starts_used", "r_q", "r_theta"],
            [[s + 1, report.r_q[s], report.r_theta[s]] for s in range(report.n_starts)],
        )
        summary.update(
            {"s_q": report.s_q, "s_theta": report.s_theta, "n_reps": report.n_reps}
        )
    elif design == "model-select":
        if len(k) != 2:
            raise ValueError("model-select expects --k with two entries")
        spec = design_model_select(k[0], k[1], n, t, errors)
        report = run_mc_selection(
            spec,
            tuple(resolved["k_max"]),
            reps,
            lloyd,
            seed=seed,
            epsilon=resolved["epsilon"],
            n_jobs=n_jobs,
        )
        _report_files(out, [(None, report)])
        summary["aggregates"] = report.aggregates
    elif design == "misspec":
        if len(k) != 2:
            raise ValueError("misspec expects --k with two entries")
        spec, one_blocks, one_clusters = design_misspec(k[0], k[1], n, t, errors)
        report_two = run_mc(spec, reps, lloyd, seed=seed, level=level, n_jobs=n_jobs)
        report_one = run_mc(
            spec,
            reps,
            lloyd,
            seed=seed,
            fit_block_spec=one_blocks,
            fit_clusters=one_clusters,
            level=level,
            n_jobs=n_jobs,
        )
        _report_files(out, [("two_block", report_two), ("one_block", report_one)])
        summary["aggregates"] = {
            "two_block": report_two.aggregates,
            "one_block": report_one.aggregates,
        }
    else:
        if design == "separation":
            spec = design_separation(resolved["alpha"], n, t, errors)
        elif design == "sample-size":
            spec = design_sample_size(n, t, errors)
        elif design == "clusters":
            if len(k) != 2:
                raise ValueError("clusters expects --k with two entries")
            spec = design_clusters(k[0], k[1], n, t, errors)
        elif design == "imbalance":
            spec = design_imbalance(resolved["m"], n, t, errors)
        else:
            spec = design_dimension(resolved["p"], n, t, errors)
        report = run_mc(spec, reps, lloyd, seed=seed, level=level, n_jobs=n_jobs)
        _report_files(out, [(None, report)])
        summary["aggregates"] = report.aggregates

    dump_json(out / "resolved-config.json", resolved)
    _emit(summary)
    return 0


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def cmd_diagnose(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args, "diagnose")
    resolved = {
        "command": "diagnose",
        "input": str(_pick(args, cfg, "input", required=True)),
        "blocks": list(_counts(_pick(args, cfg, "blocks", required=True), "blocks")),
        "k": list(_counts(_pick(args, cfg, "k", required=True), "k")),
        **_lloyd_settings(args, cfg),
    }
    out = _out_dir(args)
    data, _index = read_panel(resolved["input"])
    blocks = BlockSpec(tuple(resolved["blocks"]))
    clusters = ClusterConfig(tuple(resolved["k"]))
    lloyd = _lloyd_config(resolved)
    _note(f"diagnose: N={data.n_units} T={data.n_periods} starts={lloyd.n_starts}")
    runs = lloyd_starts(data, blocks, clusters, lloyd)
    r_q, r_theta = start_convergence(runs)
    risks = np.asarray([r.risk for r in runs])
    best = int(np.argmin(risks))
    threshold = 1e-3
    hits_q = np.flatnonzero(r_q < threshold)
    hits_t = np.flatnonzero(r_theta < threshold)
    write_csv(
        out / "diagnostics.csv",
        ["starts_used", "r_q", "r_theta"],
        [[s + 1, r_q[s], r_theta[s]] for s in range(len(runs))],
    )
    dump_json(out / "resolved-config.json", resolved)
    _emit(
        {
            "command": "diagnose",
            "best_start": best,
            "best_risk": float(risks[best]),
            "s_q": int(hits_q[0]) if hits_q.size else len(runs),
            "s_theta": int(hits_t[0]) if hits_t.size else len(runs),
            "out": str(out),
        }
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", type=Path, help="JSON file of previously resolved settings")
    sp.add_argument("--out", type=Path, help="output directory (default: current directory)")
    sp.add_argument(
        "--threads",
        type=int,
        help="cap on worker processes (default: all cores); never affects results",
    )
    sp.add_argument("--seed", type=int, help="RNG seed (default: MBPC_SEED or 0)")
    sp.add_argument("--starts", type=int, help="number of random starts (default 50)")
    sp.add_argument("--tol", type=float, help="coefficient convergence tolerance (default 1e-8)")
    sp.add_argument("--itermax", type=int, help="iteration cap per start (default 400)")


def _add_input(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--input", type=Path, help="panel file (.csv or .json)")
    sp.add_argument("--blocks", help="covariate block widths, e.g. 2,2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbpc",
        description="Clusterwise panel regression with one latent type per covariate block.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="multistart fit with HAC inference")
    _add_input(sp)
    sp.add_argument("--k", help="types per block, e.g. 2,3")
    sp.add_argument("--level", type=float, help="confidence level (default 0.95)")
    _add_common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("fe-fit", help="fit after within-unit demeaning, with fixed effects")
    _add_input(sp)
    sp.add_argument("--k", help="types per block, e.g. 2,3")
    sp.add_argument("--level", type=float, help="confidence level (default 0.95)")
    _add_common(sp)
    sp.set_defaults(func=cmd_fe_fit)

    sp = sub.add_parser("select", help="choose types per block by the Cp criterion")
    _add_input(sp)
    sp.add_argument("--k-max", dest="k_max", help="grid upper bounds, e.g. 6,6")
    sp.add_argument("--epsilon", type=float, help="penalty exponent shift (default 0)")
    _add_common(sp)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("simulate", help="run a Monte Carlo design")
    sp.add_argument("design", nargs="?", help=f"one of: {', '.join(_DESIGNS)}")
    sp.add_argument("--reps", type=int, help="number of replications (default 500)")
    sp.add_argument("--errors", choices=("ar1", "hk", "indep"), help="error process")
    sp.add_argument("--alpha", type=float, help="separation angle in radians (separation)")
    sp.add_argument("--k", help="true types per block (clusters, misspec, model-select)")
    sp.add_argument("--k-max", dest="k_max", help="selection grid bounds (model-select)")
    sp.add_argument("--m", type=int, help="first block width (imbalance)")
    sp.add_argument("--p", type=int, help="number of covariates (dimension)")
    sp.add_argument("--n", type=int, help="number of units (default 150)")
    sp.add_argument("--t", type=int, help="number of periods (default 10)")
    sp.add_argument("--level", type=float, help="confidence level (default 0.95)")
    sp.add_argument("--epsilon", type=float, help="penalty exponent shift (model-select)")
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("diagnose", help="multistart convergence diagnostics on a panel")
    _add_input(sp)
    sp.add_argument("--k", help="types per block, e.g. 2,3")
    _add_common(sp)
    sp.set_defaults(func=cmd_diagnose)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PanelFormatError as exc:
        _note(f"error: {exc}")
        return 2
    except ValueError as exc:
        _note(f"error: {exc}")
        return 3
    except (InferenceError, OSError, RuntimeError) as exc:
        _note(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
