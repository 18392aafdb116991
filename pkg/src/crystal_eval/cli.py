"""Command-line entry points: eval, ablation, pipeline, agreement, serve."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .embeddings import ProviderDescriptor
from .journal import Journal
from .manifest import load_manifest
from .report import format_fraction, format_percent


@click.group()
def main():
    """Step-level reasoning evaluation toolkit."""


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
def eval_cmd(manifest_path: str):
    """Run the benchmark described by a manifest file."""
    from .runner import run_benchmark

    manifest = load_manifest(manifest_path)
    reports = run_benchmark(manifest)
    for model, report in sorted(reports.items()):
        click.echo(f"{model}: accuracy={format_percent(report.accuracy)} "
                   f"match_f1={format_fraction(report.macro_f1)} "
                   f"ordered_f1={format_fraction(report.macro_ordered_f1)}")
    click.echo(f"reports written to {manifest.output_dir}")


@main.command("ablation")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--encoders", "encoders_path", required=True, type=click.Path(exists=True),
              help="JSON list of provider descriptors")
@click.option("--taus", required=True, help="comma-separated thresholds, e.g. 0.30,0.35")
def ablation_cmd(manifest_path: str, encoders_path: str, taus: str):
    """Recompute metrics over the full encoder x threshold grid."""
    from .runner import run_ablation

    manifest = load_manifest(manifest_path)
    encoder_list = [ProviderDescriptor.from_dict(d)
                    for d in json.loads(Path(encoders_path).read_text(encoding="utf-8"))]
    tau_list = [float(t) for t in taus.split(",") if t.strip()]
    grid = run_ablation(manifest, encoder_list, tau_list)
    click.echo(f"{len(grid['cells'])} cells written to {manifest.output_dir}")
    click.echo(f"rank stability: max Kendall distance "
               f"{grid['rank_stability']['max_distance']:.3f}")


@main.command("pipeline")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--max-examples", type=int, default=None)
def pipeline_cmd(manifest_path: str, max_examples):
    """Run the multi-agent reference-generation pipeline."""
    from .runner import run_pipeline

    manifest = load_manifest(manifest_path)
    journal = Journal(Path(manifest.output_dir) / "journal.jsonl")
    counts = run_pipeline(manifest, journal, max_examples=max_examples)
    click.echo(json.dumps(counts))


@main.command("agreement")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--tau", type=float, default=0.35, show_default=True)
@click.option("--counts", default="34,33,33", show_default=True,
              help="pairs per band: high,mid,low")
def agreement_cmd(run_dir: str, seed: int, tau: float, counts: str):
    """Sample step pairs for the human agreement study."""
    from .runner import agreement_sample

    band_counts = tuple(int(c) for c in counts.split(","))
    sheet, key = agreement_sample(run_dir, seed=seed, tau=tau, band_counts=band_counts)
    click.echo(f"labeling sheet: {sheet}")
    click.echo(f"key file: {key}")


@main.command("serve")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
def serve_cmd(manifest_path: str, host: str, port: int):
    """Serve the review queue, metrics, and reward endpoints."""
    from .service import serve

    manifest = load_manifest(manifest_path)
    serve(manifest, host=host, port=port)


if __name__ == "__main__":
    main()
