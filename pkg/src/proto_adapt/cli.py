"""Command-line interface for Proto Adapt."""

import logging
import sys
from pathlib import Path

import click
import pandas as pd

from . import gradcheck as gradcheck_suite
from .adaptation import RunLog, adapt as run_adapt
from .config import RunConfig, load_domain_settings, load_run_config
from .errors import CheckpointError, ConfigError, DataError
from .evaluation import DOMAINS, evaluate
from .metrics import format_table
from .pretraining import pretrain_source
from .synth_data import dataset_paths, generate_benchmark, save_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class ProtoAdaptGroup(click.Group):
    """Click group mapping failures onto the documented exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        if not standalone_mode:
            return super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        except ConfigError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_USAGE)
        except (DataError, CheckpointError) as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_DATA)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def _run_config(path: str) -> RunConfig:
    """Config file with its relative paths anchored at the file's directory."""
    return load_run_config(path).resolve_paths(Path(path).parent)


@click.group(cls=ProtoAdaptGroup)
@click.option("--verbose", "-v", is_flag=True, help="Show per-step debug output")
def main(verbose: bool):
    """Source-free adaptation of a pixel classifier with an EMA teacher and class prototypes."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@main.command("gen-data")
@click.argument("spec_file", type=click.Path(dir_okay=False))
@click.argument("out_prefix")
def gen_data(spec_file: str, out_prefix: str):
    """Generate a synthetic source/target benchmark.

    Writes OUT_PREFIX.src.bin and OUT_PREFIX.tgt.bin.
    """
    settings = load_domain_settings(spec_file)
    source, target = generate_benchmark(settings)
    src_path, tgt_path = dataset_paths(out_prefix)
    save_dataset(src_path, source, settings.num_classes)
    save_dataset(tgt_path, target, settings.num_classes)
    click.echo(f"Source dataset: {src_path} ({len(source)} images)")
    click.echo(f"Target dataset: {tgt_path} ({len(target)} images)")


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
def pretrain(config: str):
    """Stage 1: supervised training on the labeled source dataset."""
    run_config = _run_config(config)
    path, report = pretrain_source(run_config, progress=True)
    click.echo(f"Source checkpoint: {path}")
    click.echo(format_table({"source (train)": report}))


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--resume", is_flag=True, help="Continue from the saved run state")
def adapt(config: str, resume: bool):
    """Stage 2: adapt the source checkpoint to the unlabeled target dataset."""
    run_config = _run_config(config)
    path, log = run_adapt(run_config, resume=resume, progress=True)
    click.echo(f"Adapted checkpoint: {path}")
    click.echo(f"Run log: {run_config.run_log} ({len(log)} steps)")
    if log:
        last = log[-1]
        click.echo(f"  Final L_ce: {last.loss_ce:.6f}  L_pce: {last.loss_pce:.6f}")


@main.command("eval")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.option("--domain", type=click.Choice(DOMAINS), default="target", show_default=True)
@click.option("--csv", "as_csv", is_flag=True, help="Emit class,iou_percent CSV")
def eval_command(checkpoint: str, dataset: str, domain: str, as_csv: bool):
    """Per-class and overall IoU of CHECKPOINT on DATASET."""
    report = evaluate(checkpoint, dataset, domain)
    if as_csv:
        click.echo(report.to_csv(), nl=False)
    else:
        click.echo(format_table({Path(checkpoint).name: report}))


@main.command()
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.argument("checkpoints", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--domain", type=click.Choice(DOMAINS), default="target", show_default=True)
def compare(dataset: str, checkpoints: tuple[str, ...], domain: str):
    """One IoU row per checkpoint on DATASET, e.g. source-only vs adapted."""
    rows = {Path(ckpt).name: evaluate(ckpt, dataset, domain) for ckpt in checkpoints}
    click.echo(format_table(rows))


@main.command()
@click.option("--seed", default=0, show_default=True, help="Seed of the random instances")
@click.option("--instances", default=20, show_default=True, help="Instances per check")
def gradcheck(seed: int, instances: int):
    """Compare analytic gradients with central finite differences."""
    results = gradcheck_suite.run_suite(seed, instances)
    failed = False
    for name, error in results.items():
        status = "ok" if error < gradcheck_suite.TOLERANCE else "FAIL"
        failed |= status == "FAIL"
        click.echo(f"{name:<30} {error:.3e}  {status}")
    if failed:
        click.echo(f"Error: relative error above {gradcheck_suite.TOLERANCE:g}", err=True)
        return EXIT_USAGE
    return EXIT_OK


@main.command()
@click.argument("runlog", type=click.Path(dir_okay=False))
@click.option("--window", default=1, show_default=True, help="Rolling-mean window in steps")
@click.option("--output", "-o", help="Write the CSV here instead of stdout")
def report(runlog: str, window: int, output: str | None):
    """Loss and case-fraction curves of a run log as CSV."""
    if window < 1:
        raise click.BadParameter("window must be >= 1", param_hint="--window")
    log = RunLog.read(runlog)
    if not log:
        raise DataError(f"run log {runlog} holds no records")
    curves = pd.DataFrame([vars(record) for record in log]).set_index("step")
    if window > 1:
        curves = curves.rolling(window, min_periods=1).mean()
    text = curves.to_csv(float_format="%.6g")
    if output:
        Path(output).write_text(text)
        click.echo(f"Curves written to {output}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
