"""remedbench command line: run benchmarks, lint playbooks, replay episodes, render reports."""
import logging
from pathlib import Path

import click

from remedbench.config import SYSTEM_ALIASES, BackendName, Difficulty, PolicyName, build_run_config
from remedbench.exceptions import ConfigError, RemedBenchError, ReplayError, ReportError, ScenarioError
from remedbench.functions import bench, report
from remedbench.functions.playbook import lint_playbook

logger = logging.getLogger(__name__)

EXIT_FAILED = 1
EXIT_USAGE = 2


def _fail(ctx, message: str, code: int):
    click.echo(f"error: {message}", err=True)
    ctx.exit(code)


def run_options(command):
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     help="TOML file whose keys mirror the flag names; flags win."),
        click.option("--system", type=click.Choice(sorted(SYSTEM_ALIASES), case_sensitive=False)),
        click.option("--difficulty", type=click.Choice([d.value for d in Difficulty] + ["all"])),
        click.option("--policy", type=click.Choice([p.value for p in PolicyName])),
        click.option("--backend", type=click.Choice([b.value for b in BackendName])),
        click.option("--endpoint", help="Chat endpoint URL (remote backend only)."),
        click.option("--model", help="Model name (remote backend only)."),
        click.option("--seed", type=int),
        click.option("--tmax", "t_max", type=int, help="Reflection budget of thinkremed."),
        click.option("--probe-budget", type=int, help="Probe rounds per attempt."),
        click.option("--probe/--no-probe", "use_probe", default=None),
        click.option("--reflection/--no-reflection", "use_reflection", default=None),
        click.option("--count", type=int, help="Scenarios per difficulty (default 23/49/80)."),
        click.option("--out", type=click.Path(file_okay=False)),
        click.option("--jobs", type=int, help="Episodes run in parallel."),
        click.option("--timeout", "timeout_s", type=float, help="Seconds allowed per model call."),
        click.option("--scenarios", "scenario_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     help="Run the scenarios stored in this file instead of generating them."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _prepare(ctx, config_file, scenario_file, system, **flags):
    try:
        config = build_run_config(config_file, system_id=system, **flags)
        scenario_sets = [bench.load_scenarios(scenario_file)] if scenario_file else None
    except (ConfigError, ScenarioError) as e:
        _fail(ctx, str(e), EXIT_USAGE)
    return config, scenario_sets


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Deterministic microservice remediation benchmark."""


@main.command("run")
@run_options
@click.pass_context
def cmd_run(ctx, config_file, scenario_file, system, **flags):
    """Generate scenarios, run every episode and write the report files."""
    config, scenario_sets = _prepare(ctx, config_file, scenario_file, system, **flags)
    try:
        results = bench.run_benchmark(config, scenario_sets)
        summary = bench.aggregate(results)
        report.emit_report(summary, results, config.out, config)
    except ScenarioError as e:
        _fail(ctx, str(e), EXIT_USAGE)
    except Exception as e:
        logger.exception("benchmark run failed")
        _fail(ctx, str(e), EXIT_FAILED)
    click.echo(report.summary_markdown(summary), nl=False)
    click.echo(f"Reports written to {config.out}")


@main.command("lint")
@click.argument("playbook_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.pass_context
def cmd_lint(ctx, playbook_path):
    """Check a playbook against the supported dialect."""
    errors, warnings = lint_playbook(playbook_path.read_text(encoding="utf-8"))
    for warning in warnings:
        click.echo(f"warning: {playbook_path}: {warning}", err=True)
    if errors:
        for error in errors:
            click.echo(f"error: {playbook_path}: {error}", err=True)
        ctx.exit(EXIT_FAILED)
    click.echo(f"{playbook_path}: ok")


@main.command("replay")
@click.argument("results_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("episode_id")
@click.pass_context
def cmd_replay(ctx, results_path, episode_id):
    """Re-run a stored episode and compare it with what was recorded."""
    try:
        document = report.load_results(results_path)
        identical, diff = report.replay_episode(document, episode_id)
    except (ReplayError, ReportError) as e:
        _fail(ctx, str(e), EXIT_USAGE)
    if not identical:
        click.echo(diff)
        _fail(ctx, f"episode {episode_id} did not replay identically", EXIT_FAILED)
    click.echo(f"{episode_id}: replayed identically")


@main.command("report")
@click.argument("results_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(file_okay=False), help="Directory for the report files "
                                                               "(default: next to the results).")
@click.pass_context
def cmd_report(ctx, results_path, out):
    """Render the summary files again from a results.json."""
    try:
        written = report.rerender(results_path, out or results_path.parent)
    except RemedBenchError as e:
        _fail(ctx, str(e), EXIT_FAILED)
    for path in written:
        click.echo(str(path))


@main.command("scenarios")
@click.option("--system", default="sm", type=click.Choice(sorted(SYSTEM_ALIASES), case_sensitive=False))
@click.option("--difficulty", default=Difficulty.EASY.value, type=click.Choice([d.value for d in Difficulty]))
@click.option("--seed", default=0, type=int)
@click.option("--count", type=int)
@click.option("--export", "export_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Write the scenario set as JSON.")
@click.pass_context
def cmd_scenarios(ctx, system, difficulty, seed, count, export_path):
    """List (and optionally export) the scenarios a run would use."""
    try:
        scenario_set = bench.generate_scenarios(system, difficulty, seed, count)
        if export_path:
            bench.save_scenarios(scenario_set, export_path)
    except (ConfigError, ScenarioError) as e:
        _fail(ctx, str(e), EXIT_USAGE)
    for scenario in scenario_set.scenarios:
        faults = ", ".join(f"{s.type.value}@{s.target_service}" for s in scenario.specs)
        click.echo(f"{scenario.id}\t{faults}")


@main.command("sweep")
@run_options
@click.option("--values", "t_values", default="0,1,2,3", show_default=True,
              help="Comma separated reflection budgets.")
@click.pass_context
def cmd_sweep(ctx, config_file, scenario_file, system, t_values, **flags):
    """Run the same scenarios under several reflection budgets."""
    config, scenario_sets = _prepare(ctx, config_file, scenario_file, system, **flags)
    try:
        values = [int(v) for v in t_values.split(",") if v.strip()]
    except ValueError:
        _fail(ctx, f"--values must be integers: {t_values}", EXIT_USAGE)
    try:
        points = bench.sweep_t_max(config, values, scenario_sets)
        path = report.emit_sweep(points, config.out)
    except ScenarioError as e:
        _fail(ctx, str(e), EXIT_USAGE)
    except Exception as e:
        logger.exception("sweep failed")
        _fail(ctx, str(e), EXIT_FAILED)
    click.echo("t_max\tremediated/injected\tRA")
    for p in points:
        click.echo(f"{p.t_max}\t{p.n_success}/{p.n_injected}\t{report.fmt_value(p.ra)}")
    click.echo(f"Sweep written to {path}")


if __name__ == "__main__":
    main()
