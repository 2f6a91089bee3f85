"""Command-line entry points.

Subcommands: train, eval, score, analyze-frequency, make-synthetic,
decompose. Every invocation writes its fully resolved configuration (or
argument set) into the output directory so runs are reproducible from
their artifacts alone.
"""

import functools
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import evalkit, pyramid
from .config import ConfigError, RunConfig
from .data import (
    DatasetLayoutError,
    DatasetSpec,
    load_folder_dataset,
    load_image,
    load_image_folder,
    make_synthetic_dataset,
)
from .objectives import write_score_csv
from .trainer import Trainer, TrainingDivergedError, load_models

_USER_ERRORS = (
    ConfigError,
    DatasetLayoutError,
    TrainingDivergedError,
    FileNotFoundError,
    ValueError,
)


def _fail_on_user_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _USER_ERRORS as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _write_invocation(out_dir: Path, payload: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "invocation.yaml", "w") as f:
        yaml.safe_dump(payload, f, sort_keys=True)


def _resolve_config(config_path, overrides, out_dir=None) -> RunConfig:
    cfg = RunConfig.from_yaml(config_path) if config_path else RunConfig()
    if overrides:
        cfg = cfg.with_overrides(list(overrides))
    if out_dir:
        cfg = cfg.with_overrides([f"out_dir={out_dir}"])
    return cfg


@click.group()
def main():
    """Frequency-decoupled reconstruction GAN for image anomaly detection."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="YAML config file (flat RunConfig keys).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config field; repeatable.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Output directory (overrides config out_dir).")
@click.option("--resume", "resume_from", type=click.Path(exists=True),
              default=None, help="Checkpoint to resume from.")
@_fail_on_user_errors
def train(config_path, overrides, out_dir, resume_from):
    """Train a model; writes checkpoints and a metrics log."""
    cfg = _resolve_config(config_path, overrides, out_dir)
    if not cfg.data_root:
        raise ConfigError("data_root must be set (config file or --set)")

    def progress(record):
        if record["step"] % 50 == 0 or record["step"] == 1:
            click.echo(
                f"step {record['step']:6d}  loss_d {record['loss_d']:+.4f}  "
                f"loss_g {record['loss_g']:.4f}  l_con {record['l_con']:.4f}"
            )

    result = Trainer(cfg).train(resume_from=resume_from, log_fn=progress)
    click.echo(f"finished {result['steps']} steps in {result['seconds']:.1f}s")
    click.echo(f"checkpoint: {result['checkpoint']}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--histogram-buckets", type=int, default=20, show_default=True)
@_fail_on_user_errors
def eval_cmd(checkpoint, overrides, out_dir, histogram_buckets):
    """Score a labeled test split and write report + exports."""
    gen, disc, cfg = load_models(checkpoint)
    if overrides:
        cfg = cfg.with_overrides(list(overrides))
    out = Path(out_dir) if out_dir else Path(checkpoint).parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_yaml(out / "config.yaml")

    samples = load_folder_dataset(
        DatasetSpec(cfg.data_root, cfg.category, "test",
                    image_size=cfg.image_size, channels=cfg.channels)
    )
    records = evalkit.score_dataset(gen, disc, samples, cfg)
    report = evalkit.EvalReport.from_records(records)
    report.to_json(out / "report.json")
    write_score_csv(out / "scores.csv", records)
    evalkit.write_histogram_csv(
        out / "histogram.csv", evalkit.export_histogram(records, histogram_buckets)
    )
    evalkit.write_latents_csv(
        out / "latents.csv", evalkit.export_latents(disc, samples)
    )
    click.echo(
        f"AUC {report.auc:.4f} over {report.n_normal} normal / "
        f"{report.n_abnormal} abnormal samples"
    )
    click.echo(f"report: {out / 'report.json'}")


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--input", "input_dir", type=click.Path(exists=True), required=True,
              help="Flat folder of images to score.")
@click.option("--out", "out_dir", type=click.Path(), default=None)
@_fail_on_user_errors
def score(checkpoint, input_dir, out_dir):
    """Score an arbitrary image folder; labels are reported as unknown."""
    gen, disc, cfg = load_models(checkpoint)
    out = Path(out_dir) if out_dir else Path(checkpoint).parent / "score"
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_yaml(out / "config.yaml")
    samples = load_image_folder(input_dir, cfg.image_size, cfg.channels)
    records = evalkit.score_dataset(gen, disc, samples, cfg)
    write_score_csv(out / "scores.csv", records)
    click.echo(f"scored {len(records)} images -> {out / 'scores.csv'}")


@main.command("analyze-frequency")
@click.option("--data-root", type=click.Path(exists=True), required=True)
@click.option("--category", required=True)
@click.option("--image-size", type=int, default=256, show_default=True)
@click.option("--channels", type=click.Choice(["1", "3"]), default="3")
@click.option("--bins", type=int, default=32, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
@_fail_on_user_errors
def analyze_frequency(data_root, category, image_size, channels, bins, out_dir,
                      plot):
    """Radial spectrum profiles for the normal vs abnormal test sets."""
    out = Path(out_dir)
    _write_invocation(out, {
        "command": "analyze-frequency", "data_root": data_root,
        "category": category, "image_size": image_size,
        "channels": int(channels), "bins": bins,
    })
    samples = load_folder_dataset(
        DatasetSpec(data_root, category, "test", image_size=image_size,
                    channels=int(channels))
    )
    groups = {
        "normal": [s.image for s in samples if s.label == "normal"],
        "abnormal": [s.image for s in samples if s.label == "abnormal"],
    }
    profiles = {}
    for label, images in groups.items():
        if not images:
            raise DatasetLayoutError(f"test split has no {label} samples")
        profiles[label] = evalkit.frequency_energy_profile(images, bins, label)
        evalkit.write_profile_csv(out / f"profile_{label}.csv", profiles[label])
    if plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for label, profile in profiles.items():
            radii = [r for r, _ in profile.radial_bins]
            amps = [a for _, a in profile.radial_bins]
            ax.plot(radii, amps, label=label)
        ax.set_xlabel("radial frequency (pixels)")
        ax.set_ylabel("mean amplitude (DC-normalized)")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "profile.png", dpi=120)
        plt.close(fig)
    click.echo(f"profiles written under {out}")


@main.command("make-synthetic")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-train", type=int, default=200, show_default=True)
@click.option("--n-test-normal", type=int, default=50, show_default=True)
@click.option("--n-test-abnormal", type=int, default=50, show_default=True)
@click.option("--image-size", type=int, default=64, show_default=True)
@click.option("--channels", type=click.Choice(["1", "3"]), default="3")
@click.option("--category", default="synthetic", show_default=True)
@_fail_on_user_errors
def make_synthetic(out_dir, seed, n_train, n_test_normal, n_test_abnormal,
                   image_size, channels, category):
    """Generate a synthetic defect dataset in the standard folder layout."""
    out = Path(out_dir)
    _write_invocation(out, {
        "command": "make-synthetic", "seed": seed, "n_train": n_train,
        "n_test_normal": n_test_normal, "n_test_abnormal": n_test_abnormal,
        "image_size": image_size, "channels": int(channels),
        "category": category,
    })
    category_dir = make_synthetic_dataset(
        out, seed, n_train, n_test_normal, n_test_abnormal,
        image_size=image_size, channels=int(channels), category=category,
    )
    click.echo(f"dataset written to {category_dir}")


def _to_png_array(img: np.ndarray) -> np.ndarray:
    arr = np.clip((img + 1.0) / 2.0 * 255.0, 0, 255).astype(np.uint8)
    return arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)


@main.command()
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--branches", type=int, default=2, show_default=True)
@click.option("--image-size", type=int, default=None,
              help="Optional square resize before decomposition.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_fail_on_user_errors
def decompose(image_path, branches, image_size, out_dir):
    """Dump per-band PNGs plus the recomposition of one image."""
    from PIL import Image

    out = Path(out_dir)
    _write_invocation(out, {
        "command": "decompose", "image": str(image_path),
        "branches": branches, "image_size": image_size,
    })
    if image_size is None:
        with Image.open(image_path) as probe:
            image_size = min(probe.size)
    img = load_image(image_path, image_size, channels=3)
    bands = pyramid.decompose(img, branches)
    recomposed = pyramid.recompose(bands)
    # the shared [-1,1] -> [0,255] mapping renders the signed higher bands
    # around mid-gray
    for k, band in enumerate(bands, start=1):
        Image.fromarray(_to_png_array(band)).save(out / f"band_{k}.png")
    Image.fromarray(_to_png_array(recomposed)).save(out / "recomposed.png")
    err = float(np.abs(recomposed - img).max())
    click.echo(f"wrote {branches} bands; max reconstruction error {err:.2e}")


if __name__ == "__main__":
    sys.exit(main())
