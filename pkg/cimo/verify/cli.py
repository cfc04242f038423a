# cimo/verify/cli.py
from __future__ import annotations

import sys
from pathlib import Path

import click

from cimo.core.constants import CLI_ICONS, REPRO_DIRNAME
from cimo.core.errors import ConfigError, VerificationFailure
from cimo.core.rng import RngStream
from cimo.core.utils import cli_errors, config_digest, ensure_dir, read_json, save_manifest, utcnow, write_json

from .suites import SUITES, run_suite

# Suites that draw Monte-Carlo samples and accept --R
_MC_SUITES = ("oracle", "end2end")


def _threads(ctx: click.Context) -> int | None:
    root = ctx.find_root()
    return (root.obj or {}).get("threads")


def suite_options(name: str, R: int | None, full: bool) -> dict:
    """Keyword options for one suite: acceptance sizes under --full, then an explicit --R."""
    options = dict(SUITES[name].full) if full else {}
    if R is not None and name in _MC_SUITES:
        options["R"] = R
    return options


def _dump_reproducers(out: Path, report, inject: str | None) -> list[Path]:
    repro_dir = ensure_dir(out / REPRO_DIRNAME)
    paths = []
    for i, violation in enumerate(report.violations):
        path = repro_dir / f"{report.suite}-{violation['instance']:04d}-{i}.json"
        write_json(path, {"suite": report.suite, "inject": inject, **violation})
        paths.append(path)
    return paths


@click.group(invoke_without_command=True, help="🧪 Check the library's invariants on random small instances")
@click.option(
    "--suite",
    type=click.Choice([*SUITES, "all"]),
    default="all",
    show_default=True,
    help="Which property suite to run",
)
@click.option("--instances", "-M", type=click.IntRange(min=1), default=None, help="Instances per suite")
@click.option("--seed", type=int, default=0, show_default=True, help="Master seed")
@click.option("--R", "R", type=click.IntRange(min=2), default=None, help="Monte-Carlo replicates (oracle, end2end)")
@click.option("--full", is_flag=True, help="Acceptance-size statistical runs (oracle R=1e5, ips 1000 datasets)")
@click.option("--out", type=click.Path(file_okay=False), default="verify_out", show_default=True)
@click.option("--inject", type=click.Choice(["concavity"]), default=None, hidden=True)
@click.pass_context
@cli_errors
def verify(ctx: click.Context, suite: str, instances: int | None, seed: int, R: int | None, full: bool,
           out: str, inject: str | None) -> None:
    """Run one suite or all of them; nonzero exit and reproducers on any violation."""
    if ctx.invoked_subcommand is not None:
        return
    started = utcnow()
    out_dir = ensure_dir(Path(out))
    names = list(SUITES) if suite == "all" else [suite]
    failed = []
    summary = []
    for name in names:
        options = suite_options(name, R, full)
        report = run_suite(name, instances, seed, inject=inject, threads=_threads(ctx),
                           progress=sys.stderr.isatty(), **options)
        summary.append(report.to_dict())
        colour = "green" if report.passed else "red"
        icon = CLI_ICONS["success"] if report.passed else CLI_ICONS["error"]
        click.secho(
            f"{icon} {name}: {report.instances} instances | {report.checks} checks | "
            f"{len(report.violations)} violations (allowed {report.allowed_violations})",
            fg=colour,
        )
        if report.violations:
            paths = _dump_reproducers(out_dir, report, inject)
            click.echo(f"   📦 {len(paths)} reproducer(s) in {paths[0].parent}")
        if not report.passed:
            failed.append(report)
    path = write_json(out_dir / "verify.json", {"seed": seed, "suites": summary})
    args = {"suite": suite, "instances": instances, "R": R, "full": full, "inject": inject}
    save_manifest(out_dir, "verify", config_digest([], args), seed, [path], started)
    if failed:
        raise VerificationFailure(
            ",".join(r.suite for r in failed),
            [v for r in failed for v in r.violations],
        )


# ─────────────────────────────────────────────────────────────
# LIST
# ─────────────────────────────────────────────────────────────
@verify.command("list", help="List available suites and their default instance counts")
def list_cmd() -> None:
    for name, suite in SUITES.items():
        kind = "statistical" if suite.statistical else "exact"
        full = ", ".join(f"{k}={v}" for k, v in suite.full.items())
        note = f"  [--full: {full}]" if full else ""
        click.echo(f"{CLI_ICONS['verify']} {name:<11} {suite.default_instances:>6} instances  ({kind}){note}")


# ─────────────────────────────────────────────────────────────
# REPLAY
# ─────────────────────────────────────────────────────────────
@verify.command("replay", help="Re-run the single instance recorded in a reproducer file")
@click.argument("reproducer", type=click.Path(exists=True, dir_okay=False))
@cli_errors
def replay_cmd(reproducer: str) -> None:
    doc = read_json(Path(reproducer))
    try:
        name, seed, path = doc["suite"], int(doc["seed"]), tuple(int(k) for k in doc["stream_path"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{Path(reproducer).name}: not a reproducer file ({e})") from e
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r} in reproducer", "suite")
    outcome = SUITES[name].check(int(doc["instance"]), RngStream(seed, path), doc.get("inject"))
    if outcome.violations:
        click.secho(f"{CLI_ICONS['error']} still failing: {len(outcome.violations)} violation(s)", fg="red")
        raise VerificationFailure(name, outcome.violations)
    click.secho(f"{CLI_ICONS['success']} instance passes all {outcome.checks} checks", fg="green")
