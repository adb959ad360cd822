"""
Command-line entry point: `intsel generate | train | eval | report | serve`.
"""
import logging
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.table import Table
from typing_extensions import Annotated

from . import pipeline
from .artifacts import load_manifest
from .config import RunConfig
from .exceptions import IntselError
from .logging_setup import configure_logging
from .nn import ModelKind
from .schemas import CorpusManifest
from .selection import render_table, write_bars
from .settings import get_settings

logger = logging.getLogger(__name__)

app = typer.Typer(name="intsel", help="Integration sub-algorithm selection workbench", add_completion=False)
console = Console()

ConfigOption = Annotated[Optional[Path], typer.Option("--config", "-c", help="YAML run configuration")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Override the configured seed")]
WorkersOption = Annotated[Optional[int], typer.Option("--workers", min=1, help="Worker processes")]
OutOption = Annotated[Optional[Path], typer.Option("--out", help="Artifact directory")]
OverwriteOption = Annotated[bool, typer.Option("--overwrite", help="Replace existing artifacts")]
VerboseOption = Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")]


def _setup(
    config_path: Optional[Path],
    seed: Optional[int],
    workers: Optional[int],
    out: Optional[Path],
    verbose: bool,
) -> RunConfig:
    settings = get_settings()
    configure_logging("DEBUG" if verbose else settings.log_level, Console(stderr=True))
    config = RunConfig.load(config_path or settings.config_path)
    return config.with_overrides(seed=seed, workers=workers or settings.workers, out_dir=out)


def _fail(exc: IntselError) -> typer.Exit:
    logger.error("%s", exc)
    return typer.Exit(code=exc.exit_code)


def label_histogram_table(manifest: CorpusManifest) -> Table:
    total = manifest.train_count + manifest.test_count
    table = Table(title=f"Optimal-label frequency over {total} records")
    table.add_column("sub-algorithm")
    table.add_column("optimal", justify="right")
    table.add_column("share", justify="right")
    table.add_column("success rate", justify="right")
    for label, count in manifest.label_histogram.items():
        share = f"{100.0 * count / total:.1f}%" if total else "-"
        table.add_row(label, str(count), share, f"{100.0 * manifest.success_rate.get(label, 0.0):.1f}%")
    return table


@app.command()
def generate(
    config: ConfigOption = None,
    seed: SeedOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
    overwrite: OverwriteOption = False,
    verbose: VerboseOption = False,
):
    """Generate, label and split the corpus"""
    try:
        run = _setup(config, seed, workers, out, verbose)
        manifest = pipeline.generate_corpus(run, overwrite)
    except IntselError as exc:
        raise _fail(exc)
    console.print(label_histogram_table(manifest))
    console.print(
        f"multi-label rate {manifest.multi_label_rate:.3f}, "
        f"portfolio disagreement {manifest.disagreement_rate:.3f}, "
        f"vocabulary {manifest.vocabulary_size} tokens"
    )


@app.command()
def train(
    model: Annotated[ModelKind, typer.Argument(help="Classifier architecture")],
    config: ConfigOption = None,
    seed: SeedOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
    overwrite: OverwriteOption = False,
    verbose: VerboseOption = False,
):
    """Train one binary classifier per sub-algorithm"""
    try:
        run = _setup(config, seed, workers, out, verbose)
        curves = pipeline.train_models(run, model, overwrite)
    except IntselError as exc:
        raise _fail(exc)
    table = Table(title=f"{model.value} training loss")
    table.add_column("classifier")
    table.add_column("first epoch", justify="right")
    table.add_column("last epoch", justify="right")
    for label, curve in curves.items():
        table.add_row(label, f"{curve[0]:.4f}", f"{curve[-1]:.4f}")
    console.print(table)


@app.command("eval")
def evaluate(
    models: Annotated[Optional[List[ModelKind]], typer.Argument(help="Models to evaluate (default: all)")] = None,
    suite: Annotated[bool, typer.Option("--suite", help="Also compare on the textbook validation suite")] = False,
    anti_oracle: Annotated[bool, typer.Option("--anti-oracle", help="Add the worst-choice strategy")] = False,
    config: ConfigOption = None,
    seed: SeedOption = None,
    workers: WorkersOption = None,
    out: OutOption = None,
    overwrite: OverwriteOption = False,
    verbose: VerboseOption = False,
):
    """Compare trained models, the fixed-priority baseline and the oracle"""
    try:
        run = _setup(config, seed, workers, out, verbose)
        records = pipeline.evaluate_models(
            run, models or pipeline.EVAL_KINDS, suite=suite, overwrite=overwrite, include_anti_oracle=anti_oracle
        )
    except IntselError as exc:
        raise _fail(exc)
    console.print(render_table(records, title="Selection quality"))


@app.command()
def report(
    bars: Annotated[bool, typer.Option("--bars", help="Rewrite bars.tsv from report.jsonl")] = False,
    config: ConfigOption = None,
    out: OutOption = None,
    verbose: VerboseOption = False,
):
    """Render an existing report and corpus manifest"""
    try:
        run = _setup(config, None, None, out, verbose)
        paths = run.paths
        if paths.manifest.is_file():
            console.print(label_histogram_table(load_manifest(paths.manifest)))
        records = pipeline.load_report(run, check_bars=not bars)
        if bars:
            write_bars(paths.bars, records)
    except IntselError as exc:
        raise _fail(exc)
    console.print(render_table(records, title="Selection quality"))


@app.command()
def serve(
    host: Annotated[str, typer.Option(help="Bind address")] = "127.0.0.1",
    port: Annotated[int, typer.Option(help="Port")] = 8000,
    verbose: VerboseOption = False,
):
    """Run the HTTP service"""
    import uvicorn

    configure_logging("DEBUG" if verbose else get_settings().log_level, Console(stderr=True))
    uvicorn.run("intsel.main:app", host=host, port=port)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
