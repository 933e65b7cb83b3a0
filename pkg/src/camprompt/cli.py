"""Command-line interface: ingest, train, run, report, serve, demo-data."""
from __future__ import annotations

import json
from pathlib import Path

import click

from .classifier import ClassifierConfig, load_artifact
from .classifier import train as train_classifier
from .dataset import AugmentationConfig, ingest_report, load_split
from .segmenter import FloodFillBackend, Sam2Backend, SegmenterConfig


@click.group()
def main():
    """Weakly supervised segmentation via CAM point prompts."""


@main.command()
@click.option("--data", "root", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--min-pixel-count", default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Write the JSON report here instead of stdout.")
def ingest(root: Path, min_pixel_count: int, out: Path | None):
    """Scan a dataset root and report split sizes and class frequencies."""
    report = ingest_report(root, min_pixel_count)
    text = json.dumps(report, indent=2, sort_keys=True)
    if out is None:
        click.echo(text)
    else:
        out.write_text(text + "\n")
        click.echo(f"wrote {out}")


@main.command()
@click.option("--data", "root", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              default=None, help="JSON training config (classifier/backbone/seed).")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--split", default="train", show_default=True)
def train(root: Path, config_path: Path | None, out: Path, split: str):
    """Fine-tune the multi-label classifier on image-level labels."""
    spec = json.loads(config_path.read_text()) if config_path else {}
    view = load_split(root, split, min_pixel_count=spec.get("min_pixel_count", 1))
    classifier_kwargs = dict(spec.get("classifier", {}))
    classifier_kwargs.setdefault("num_classes", view.catalog.num_classes)
    cfg = ClassifierConfig(**classifier_kwargs)
    augmentation = (
        AugmentationConfig(**spec["augmentation"]) if "augmentation" in spec
        else AugmentationConfig(crop_size=cfg.input_resolution)
    )
    result = train_classifier(
        view,
        cfg,
        out,
        backbone=spec.get("backbone", "swin-b"),
        backbone_kwargs=spec.get("backbone_kwargs"),
        augmentation=augmentation,
        seed=spec.get("seed", 0),
    )
    click.echo(f"trained {cfg.epochs} epochs; final loss {result.epoch_losses[-1]:.4f}")
    click.echo(f"artifact: {result.artifact_dir}")


def _build_backend(name: str, checkpoint: str | None, model_cfg: str | None,
                   device: str):
    if name == "flood":
        return FloodFillBackend()
    if name == "sam2":
        if not checkpoint or not model_cfg:
            raise click.UsageError("--sam2-checkpoint and --sam2-config are required")
        return Sam2Backend(checkpoint, model_cfg, device=device)
    raise click.UsageError(f"unknown backend: {name}")


@main.command()
@click.option("--data", "root", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--split", default="test", show_default=True)
@click.option("--model", "model_dir", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_root", required=True, type=click.Path(path_type=Path))
@click.option("--mode", type=click.Choice(["auto-eval", "review"]), default="auto-eval",
              show_default=True)
@click.option("--input", "input_mode", type=click.Choice(["original", "smoothed"]),
              default="original", show_default=True)
@click.option("--masks", "mask_strategy", type=click.Choice(["single", "multi"]),
              default="single", show_default=True)
@click.option("-k", "k_proposals", default=3, show_default=True)
@click.option("--sigma", "blur_sigma", default=10.0, show_default=True)
@click.option("--backend", default="flood", show_default=True,
              help="flood (no-ML color region) or sam2 (external checkpoint).")
@click.option("--sam2-checkpoint", default=None)
@click.option("--sam2-config", default=None)
@click.option("--device", default="cpu", show_default=True)
@click.option("--threshold", default=None, type=float,
              help="Override the classifier decision threshold.")
@click.option("--run-id", default=None)
@click.option("--figures", "n_figures", default=0, show_default=True,
              help="Render this many qualitative figures after the run.")
def run(root, split, model_dir, out_root, mode, input_mode, mask_strategy,
        k_proposals, blur_sigma, backend, sam2_checkpoint, sam2_config, device,
        threshold, run_id, n_figures):
    """Run classify -> CAM -> prompt -> segment over a split."""
    from .pipeline import run_batch
    from .report import render_run_figures

    view = load_split(root, split)
    model = load_artifact(model_dir, device=device)
    cfg = SegmenterConfig(
        input_mode=input_mode, blur_sigma=blur_sigma,
        mask_strategy=mask_strategy, k_proposals=k_proposals,
    )
    backend_impl = _build_backend(backend, sam2_checkpoint, sam2_config, device)
    result = run_batch(
        view, model, cfg, backend_impl, mode, out_root,
        run_id=run_id, threshold=threshold,
    )
    click.echo(f"run {result.manifest.run_id} -> {result.run_dir}")
    for key, value in sorted(result.manifest.counts.items()):
        click.echo(f"  {key}: {value}")
    if result.miou_result is not None:
        click.echo(f"  mIoU: {result.miou_result.miou:.4f} "
                   f"over {result.miou_result.n_classes} classes")
    if result.manifest.flagged:
        click.echo("  WARNING: run flagged (failure ratio above threshold)")
    if n_figures:
        paths = render_run_figures(result.run_dir, n_qualitative=n_figures)
        click.echo(f"  figures: {len(paths)} file(s) under {result.run_dir}/figures")


@main.command()
@click.option("--run", "run_dir", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--figures", "n_figures", default=4, show_default=True)
def report(run_dir: Path, n_figures: int):
    """Print the run report and render figures to files."""
    from .report import render_run_figures

    report_path = run_dir / "report.md"
    if report_path.exists():
        click.echo(report_path.read_text())
    else:
        click.echo("no metrics report in this run (review mode?)")
    paths = render_run_figures(run_dir, n_qualitative=n_figures)
    for path in paths:
        click.echo(f"wrote {path}")


@main.command()
@click.option("--runs", "runs_root", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(runs_root: Path, port: int, host: str):
    """Serve the review API over the runs directory."""
    from .pipeline import serve as serve_app

    serve_app(runs_root, port=port, host=host)


@main.command("demo-data")
@click.option("--out", "root", required=True, type=click.Path(path_type=Path))
@click.option("--train", "n_train", default=200, show_default=True)
@click.option("--test", "n_test", default=50, show_default=True)
@click.option("--size", default=128, show_default=True)
@click.option("--seed", default=0, show_default=True)
def demo_data(root: Path, n_train: int, n_test: int, size: int, seed: int):
    """Generate the synthetic colored-shapes dataset."""
    from .synthetic import generate_shapes_dataset

    generate_shapes_dataset(root, n_train=n_train, n_test=n_test, size=size, seed=seed)
    click.echo(f"wrote shapes dataset under {root}")


if __name__ == "__main__":
    main()
