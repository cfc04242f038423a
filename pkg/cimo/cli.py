#!/usr/bin/env python3
"""
CIMO CLI
========
Causal Influence Maximization Operator: batch pipeline for
 🧬 synthetic instance and logged-data generation
 📈 shape-constrained response fitting
 🎯 budgeted seed selection
 🧾 welfare evaluation with error budgets
 🧪 invariant verification and sweeps
"""

from __future__ import annotations

import sys
from pathlib import Path
from textwrap import dedent

import click

from cimo.core.constants import (
    CLI_ICONS,
    DATASET_FILENAME,
    FITTED_FILENAME,
    GRAPH_FILENAME,
    MODEL_FILENAME,
    PROJECT_VERSION,
    REPORT_FILENAME,
    SELECTION_FILENAME,
    SPEC_FILENAME,
    SWEEP_FILENAME,
    TRACE_FILENAME,
)
from cimo.core.errors import ConfigError, VerificationFailure
from cimo.core.estimand import WelfareReport, evaluate
from cimo.core.graph import (
    DirectedGraph,
    ExposureSpec,
    SeedSet,
    exposure_spec_from_dict,
    format_graph,
    parse_graph,
)
from cimo.core.response import (
    IpsWeighting,
    ResponseModel,
    check_shape,
    fit_shape_constrained,
    format_dataset,
    model_from_dict,
    parse_dataset,
)
from cimo.core.selection import baseline_select, greedy_cim
from cimo.core.synth import SWEEP_AXES, gen_instance, gen_logged_data, load_config, sweep
from cimo.core.utils import (
    cli_errors,
    config_digest,
    ensure_dir,
    read_json,
    read_text,
    save_manifest,
    setup_logging,
    utcnow,
    write_json,
    write_text,
)
from cimo.verify import verify


# ────────────────────────────────
# Console banner
# ────────────────────────────────
def banner() -> None:
    click.secho(
        dedent(
            f"""
            ┏━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━┓
            ┃   CIMO v{PROJECT_VERSION} – Causal Influence Maximization   ┃
            ┗━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━┛
            """
        ),
        fg="cyan",
        err=True,
    )


# ────────────────────────────────
# Input helpers
# ────────────────────────────────
def _load_graph(path: str) -> DirectedGraph:
    return parse_graph(read_text(Path(path)))


def _load_spec(path: str | None, g: DirectedGraph) -> ExposureSpec:
    if path is None:
        return ExposureSpec.from_in_neighbors(g)
    return exposure_spec_from_dict(read_json(Path(path)), g.n)


def _load_model(path: str, strict: bool = True) -> ResponseModel:
    return model_from_dict(read_json(Path(path)), strict=strict)


def _parse_ids(raw: str, what: str) -> list[int]:
    try:
        return [int(x) for x in raw.replace(" ", "").split(",") if x]
    except ValueError as e:
        raise ConfigError(f"{what} must be a comma-separated list of node ids, got {raw!r}", what) from e


def _write_text(path: Path, text: str) -> Path:
    write_text(path, text)
    return path


def _inputs(*paths: str | None) -> list[Path]:
    return [Path(p) for p in paths if p is not None]


def _finish(out_dir: Path, command: str, inputs: list[Path], args: dict, seed: int | None,
            outputs: list[Path], started) -> None:
    save_manifest(out_dir, command, config_digest(inputs, args), seed, outputs, started)
    for p in outputs:
        click.echo(f"   📄 {p}")


# ────────────────────────────────
# Command group
# ────────────────────────────────
@click.group()
@click.version_option(PROJECT_VERSION, prog_name="CIMO")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker count (default: CIMO_THREADS or cores)")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, threads: int | None):
    """Causal Influence Maximization Operator (CIMO)"""
    banner()
    setup_logging(verbose)
    ctx.ensure_object(dict)["threads"] = threads


# ────────────────────────────────
# Commands
# ────────────────────────────────
@cli.command("gen", help="🧬 Generate a synthetic instance and logged dataset from a YAML config")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default="cimo_out", show_default=True)
@cli_errors
def gen_cmd(config: str, out: str):
    started = utcnow()
    cfg = load_config(Path(config))
    out_dir = ensure_dir(Path(out))
    inst = gen_instance(cfg)
    sample = gen_logged_data(inst, cfg)
    outputs = [
        _write_text(out_dir / GRAPH_FILENAME, format_graph(inst.graph)),
        write_json(out_dir / SPEC_FILENAME, inst.spec.to_dict()),
        write_json(out_dir / MODEL_FILENAME, inst.model.to_dict()),
        _write_text(out_dir / DATASET_FILENAME, format_dataset(sample.data)),
    ]
    click.secho(
        f"{CLI_ICONS['gen']} n={inst.graph.n} m={inst.graph.m} ε={inst.graph.epsilon:.4g} | "
        f"N={cfg.N} replications | clipped {sample.clip_fraction:.1%}",
        fg="green",
    )
    _finish(out_dir, "gen", _inputs(config), {}, cfg.master_seed, outputs, started)


@cli.command("fit", help="📈 Fit shape-constrained exposure-response curves to a logged dataset")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--strata", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON object mapping node id -> stratum id (default: one stratum)")
@click.option("--nodes", "n", type=click.IntRange(min=1), default=None, help="Node count (default: from data)")
@click.option("--lambda", "lam", type=click.FloatRange(min=0.0), default=0.0, show_default=True,
              help="Total-variation penalty weight")
@click.option("--weighting", type=click.Choice(["uniform", "ips"]), default="uniform", show_default=True)
@click.option("--target", default=None, help="Target seed set for --weighting ips, e.g. '0,3'")
@click.option("--w-max", type=click.FloatRange(min=0.0, min_open=True), default=None, help="IPS weight clip")
@click.option("--Bpos", "B_pos", type=click.IntRange(min=0), default=None, help="Positive grid size")
@click.option("--Bneg", "B_neg", type=click.IntRange(min=0), default=None, help="Negative grid size")
@click.option("--no-shape", is_flag=True, help="Ablation: skip the monotone-concave projection")
@click.option("--out", type=click.Path(file_okay=False), default="cimo_out", show_default=True)
@click.pass_obj
@cli_errors
def fit_cmd(obj, dataset, strata, n, lam, weighting, target, w_max, B_pos, B_neg, no_shape, out):
    started = utcnow()
    data = parse_dataset(read_text(Path(dataset)))
    strata_map = None
    if strata is not None:
        doc = read_json(Path(strata))
        if not isinstance(doc, dict):
            raise ConfigError("strata file must be a JSON object of node -> stratum", "strata")
        try:
            strata_map = {int(k): int(v) for k, v in doc.items()}
        except (TypeError, ValueError) as e:
            raise ConfigError(f"strata file: node ids and strata must be integers ({e})", "strata") from e
    if weighting == "ips":
        if target is None:
            raise ConfigError("--weighting ips needs --target", "target")
        weighting = IpsWeighting(SeedSet.of(_parse_ids(target, "target")), w_max)
    fitted = fit_shape_constrained(
        data, strata=strata_map, B_pos=B_pos, B_neg=B_neg, lam=lam, weighting=weighting,
        shape=not no_shape, n=n, threads=obj["threads"],
    )
    out_dir = ensure_dir(Path(out))
    doc = fitted.to_dict()
    doc["diagnostics"] = dict(fitted.diagnostics)
    path = write_json(out_dir / FITTED_FILENAME, doc)
    click.secho(f"{CLI_ICONS['fit']} fitted {len(fitted.params)} strata on {len(data)} replications", fg="green")
    args = {"lambda": lam, "weighting": str(weighting), "B_pos": B_pos, "B_neg": B_neg, "shape": not no_shape, "n": n}
    _finish(out_dir, "fit", _inputs(dataset, strata), args, None, [path], started)


@cli.command("select", help="🎯 Choose K seeds by greedy CIM or a baseline")
@click.argument("graph", type=click.Path(exists=True, dir_okay=False))
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--spec", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Exposure spec JSON (default: N_i^+ = in-neighbours)")
@click.option("--K", "K", type=click.IntRange(min=1), required=True)
@click.option("--R", "R", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--method", type=click.Choice(["cim", "degree", "random", "greedy_reach"]), default="cim",
              show_default=True)
@click.option("--lazy", is_flag=True, help="Lazy (CELF) marginal-gain evaluation")
@click.option("--no-crn", is_flag=True, help="Fresh samples per candidate instead of common random numbers")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="cimo_out", show_default=True)
@click.pass_obj
@cli_errors
def select_cmd(obj, graph, model, spec, K, R, method, lazy, no_crn, seed, out):
    started = utcnow()
    g = _load_graph(graph)
    exposure = _load_spec(spec, g)
    if method == "cim":
        fitted = _load_model(model)
        result = greedy_cim(g, exposure, fitted, K, R, seed, lazy=lazy, crn=not no_crn, threads=obj["threads"])
    else:
        result = baseline_select(method, g, K, R, seed, threads=obj["threads"])
    out_dir = ensure_dir(Path(out))
    outputs = [
        write_json(out_dir / SELECTION_FILENAME, result.to_dict(timings=False)),
        _write_text(out_dir / TRACE_FILENAME, result.trace_csv(timings=False)),
    ]
    click.secho(
        f"{CLI_ICONS['select']} {method}: seeds={result.order} | {result.evaluations} evaluations | "
        f"{result.wall_time:.2f}s",
        fg="green",
    )
    args = {"K": K, "R": R, "method": method, "lazy": lazy, "crn": not no_crn}
    _finish(out_dir, "select", _inputs(graph, model, spec), args, seed, outputs, started)


@cli.command("evaluate", help="🧾 Welfare report with error budget for a seed set")
@click.argument("graph", type=click.Path(exists=True, dir_okay=False))
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--seeds", required=True, help="Seed set, e.g. '0,3'")
@click.option("--spec", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--true-model", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--epsilon", type=click.FloatRange(min=0.0, max=1.0), default=None, help="Override ε")
@click.option("--R", "R", type=click.IntRange(min=2), default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="cimo_out", show_default=True)
@click.pass_obj
@cli_errors
def evaluate_cmd(obj, graph, model, seeds, spec, true_model, dataset, epsilon, R, seed, out):
    started = utcnow()
    g = _load_graph(graph)
    exposure = _load_spec(spec, g)
    S = SeedSet.of(_parse_ids(seeds, "seeds"))
    report = evaluate(
        S, g, exposure, _load_model(model), R, seed,
        true_model=_load_model(true_model) if true_model else None,
        data=parse_dataset(read_text(Path(dataset))) if dataset else None,
        epsilon=epsilon,
        threads=obj["threads"],
    )
    out_dir = ensure_dir(Path(out))
    outputs = [
        write_json(out_dir / REPORT_FILENAME, report.to_dict()),
        _write_text(out_dir / REPORT_FILENAME.replace(".json", ".csv"),
                      WelfareReport.csv_header() + "\n" + report.csv_row()),
    ]
    lo, hi = report.interval
    click.secho(f"{CLI_ICONS['evaluate']} F̂={report.F_plugin:.6g} | F̃ interval [{lo:.6g}, {hi:.6g}]", fg="green")
    args = {"seeds": S.sorted(), "epsilon": epsilon, "R": R}
    _finish(out_dir, "evaluate", _inputs(graph, model, spec, true_model, dataset), args, seed, outputs, started)


@cli.command("sweep", help="🧹 Run a robustness / sensitivity sweep and write a CSV matrix")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", type=click.Choice(sorted(SWEEP_AXES)), required=True)
@click.option("--values", required=True, help="Comma-separated axis values, e.g. '0.05,0.1,0.2'")
@click.option("--reps", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="cimo_out", show_default=True)
@click.pass_obj
@cli_errors
def sweep_cmd(obj, config, axis, values, reps, out):
    started = utcnow()
    base = load_config(Path(config))
    raw = [v.strip() for v in values.split(",") if v.strip()]
    result = sweep(axis, raw, base, reps, threads=obj["threads"], progress=sys.stderr.isatty())
    out_dir = ensure_dir(Path(out))
    path = _write_text(out_dir / SWEEP_FILENAME, result.to_csv())
    click.secho(f"{CLI_ICONS['sweep']} {axis}: {len(raw)} values x {reps} reps -> {len(result.rows)} rows", fg="green")
    _finish(out_dir, "sweep", _inputs(config), {"axis": axis, "values": raw, "reps": reps}, base.master_seed,
            [path], started)


@cli.command("check-shape", help="📐 Check every curve of a model file against the shape constraints")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@cli_errors
def check_shape_cmd(model):
    fitted = _load_model(model, strict=False)
    problems = []
    for r, par in fitted.params.items():
        for side, curve in (("f_pos", par.f_pos), ("f_neg", par.f_neg)):
            for v in check_shape(curve.values).violations:
                problems.append({"stratum": r, "curve": side, "violation": v.describe()})
                click.secho(f"{CLI_ICONS['error']} stratum {r} {side}: {v.describe()}", fg="red")
    if problems:
        raise VerificationFailure("check-shape", problems)
    click.secho(f"{CLI_ICONS['success']} {len(fitted.params)} strata pass the shape constraints", fg="green")


cli.add_command(verify)


def main():
    cli()


if __name__ == "__main__":
    main()
