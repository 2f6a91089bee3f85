"""Alternating adversarial training loop.

Each step updates the discriminator on (real, detached reconstruction,
forged) batches, then the generator on content + adversarial + latent
terms. Band decompositions of the training set are precomputed once, all
randomness flows from the run seed, and checkpoints carry enough RNG state
to make resumption bit-faithful.
"""

import json
import time
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import ConfigError, RunConfig
from .data import DatasetSpec, load_folder_dataset
from .forgery import forge_batch
from .networks import (
    BranchedGenerator,
    Discriminator,
    load_checkpoint,
    save_checkpoint,
)
from .objectives import (
    LossWeights,
    content_loss,
    discriminator_loss,
    generator_adv_loss,
    latent_loss,
    total_generator_loss,
)
from .pyramid import decompose_arrays

__all__ = [
    "TrainingDivergedError",
    "Trainer",
    "train",
    "build_models",
    "load_models",
    "prepare_model_inputs",
]

METRIC_KEYS = ("loss_d", "loss_g", "l_con", "l_adv", "l_lat")


class TrainingDivergedError(RuntimeError):
    def __init__(self, step, term, value=None):
        detail = f": {value}" if value is not None else ""
        super().__init__(f"non-finite {term} at step {step}{detail}")
        self.step = step
        self.term = term


def build_models(config: RunConfig):
    gen = BranchedGenerator(
        n_branches=config.effective_branches,
        in_channels=config.channels,
        base_channels=config.base_channels,
        use_cs=config.use_cs,
        cs_reduce_ratio=config.cs_reduce_ratio,
    )
    disc = Discriminator(
        in_channels=config.channels,
        base_channels=config.disc_channels,
        latent_stage=config.latent_stage,
    )
    return gen, disc


def load_models(checkpoint_path):
    """Rebuild generator/discriminator from a checkpoint, in eval mode."""
    state = load_checkpoint(checkpoint_path)
    config = RunConfig.from_dict(state["config"])
    gen, disc = build_models(config)
    gen.load_state_dict(state["generator"])
    disc.load_state_dict(state["discriminator"])
    gen.eval()
    disc.eval()
    return gen, disc, config


def prepare_model_inputs(images: np.ndarray, config: RunConfig):
    """Decompose a (B, C, H, W) batch into generator inputs and the target.

    With one branch the raw image passes through undecomposed; with a
    band_subset the target is the sum of the selected input bands so the
    content term compares like with like.
    """
    if config.effective_branches == 1 and config.band_subset is None:
        return [images], images
    bands = decompose_arrays(images, config.n_branches)
    if config.band_subset is not None:
        selected = [bands[i] for i in config.band_subset]
        if len(selected) == config.n_branches:
            target = images
        else:
            target = np.sum(selected, axis=0, dtype=np.float32)
        return selected, target
    return bands, images


class Trainer:
    """Owns the models, optimizer state, and the deterministic data order."""

    def __init__(self, config: RunConfig, train_images: Optional[np.ndarray] = None):
        if config.use_cs and config.effective_branches < 2:
            raise ConfigError("use_cs requires >= 2 effective branches")
        self.config = config
        torch.manual_seed(config.seed)
        self.gen, self.disc = build_models(config)
        self.opt_g = torch.optim.Adam(
            self.gen.parameters(), lr=config.lr,
            betas=(config.beta1, config.beta2), weight_decay=config.weight_decay,
        )
        self.opt_d = torch.optim.Adam(
            self.disc.parameters(), lr=config.lr,
            betas=(config.beta1, config.beta2), weight_decay=config.weight_decay,
        )
        self.weights = LossWeights(config.lambda_con, config.lambda_adv,
                                   config.lambda_lat)

        if train_images is None:
            spec = DatasetSpec(config.data_root, config.category, "train",
                               image_size=config.image_size,
                               channels=config.channels)
            samples = load_folder_dataset(spec)
            train_images = np.stack([s.image for s in samples])
        self.val_images = None
        if config.val_fraction > 0.0 and len(train_images) > 1:
            split_rng = np.random.default_rng([config.seed, 5])
            order = split_rng.permutation(len(train_images))
            n_val = max(int(round(config.val_fraction * len(train_images))), 1)
            self.val_images = train_images[order[:n_val]]
            train_images = train_images[order[n_val:]]
        self.train_images = np.ascontiguousarray(train_images, dtype=np.float32)
        inputs, target = prepare_model_inputs(self.train_images, config)
        self.train_inputs = inputs
        self.train_targets = np.ascontiguousarray(target)

        self.data_rng = np.random.default_rng([config.seed, 1])
        self.forge_rng = np.random.default_rng([config.seed, 2])
        self.step = 0
        self.epoch = 0
        self._perm = np.empty(0, dtype=np.int64)
        self._batch_ptr = 0

    # -- batching ----------------------------------------------------------

    def _next_batch_indices(self) -> np.ndarray:
        n = len(self.train_images)
        bs = self.config.batch_size
        if n >= bs:
            n_batches = n // bs
            if self._perm.size == 0 or self._batch_ptr >= n_batches * bs:
                self._perm = self.data_rng.permutation(n)
                self._batch_ptr = 0
                self.epoch += 1
            sel = self._perm[self._batch_ptr : self._batch_ptr + bs]
            self._batch_ptr += bs
            return sel
        # tiny datasets: one tiled batch per epoch
        if self._batch_ptr > 0 or self._perm.size == 0:
            self._perm = self.data_rng.permutation(n)
            self._batch_ptr = 0
            self.epoch += 1
        self._batch_ptr = 1
        return np.resize(self._perm, bs)

    # -- updates -----------------------------------------------------------

    def _forge(self, images: np.ndarray) -> Optional[torch.Tensor]:
        cfg = self.config
        if not (cfg.use_cutout or cfg.use_cutpaste):
            return None
        forged = forge_batch(
            list(images), self.forge_rng,
            use_cutout=cfg.use_cutout, use_cutpaste=cfg.use_cutpaste,
            both=cfg.forge_both,
            area_range=(cfg.patch_area_min, cfg.patch_area_max),
            aspect_range=(cfg.patch_aspect_min, cfg.patch_aspect_max),
        )
        return torch.from_numpy(np.stack(forged))

    def _update_discriminator(self, real, recon_detached, forged):
        d_real, _ = self.disc(real)
        d_recon, _ = self.disc(recon_detached)
        d_forged = self.disc(forged)[0] if forged is not None else None
        loss_d = discriminator_loss(d_real, d_recon, d_forged)
        self.opt_d.zero_grad()
        loss_d.backward()
        self.opt_d.step()
        return loss_d

    def _update_generator(self, real, recon):
        d_recon, lat_recon = self.disc(recon)
        with torch.no_grad():
            _, lat_real = self.disc(real)
        l_con = content_loss(real, recon)
        l_adv = generator_adv_loss(d_recon)
        l_lat = latent_loss(lat_real, lat_recon)
        loss_g = total_generator_loss(l_con, l_adv, l_lat, self.weights)
        self.opt_g.zero_grad()
        loss_g.backward()
        self.opt_g.step()
        return loss_g, l_con, l_adv, l_lat

    def train_step(self, indices: np.ndarray) -> dict:
        """One D update then one G update on the indexed training batch."""
        target = torch.from_numpy(self.train_targets[indices])
        bands = [torch.from_numpy(b[indices]) for b in self.train_inputs]
        forged = self._forge(self.train_targets[indices])

        try:
            _, recon = self.gen(bands)
            loss_d = self._update_discriminator(target, recon.detach(), forged)
            loss_g, l_con, l_adv, l_lat = self._update_generator(target, recon)
        except (ValueError, RuntimeError) as exc:
            if "non-finite" in str(exc):
                raise TrainingDivergedError(self.step, str(exc)) from exc
            raise

        metrics = {
            "loss_d": loss_d.item(),
            "loss_g": loss_g.item(),
            "l_con": l_con.item(),
            "l_adv": l_adv.item(),
            "l_lat": l_lat.item(),
        }
        for term, value in metrics.items():
            if not np.isfinite(value):
                raise TrainingDivergedError(self.step, term, value)
        return metrics

    # -- checkpointing -----------------------------------------------------

    def _rng_state(self) -> dict:
        return {
            "torch": torch.get_rng_state(),
            "data": self.data_rng.bit_generator.state,
            "forge": self.forge_rng.bit_generator.state,
            "perm": self._perm.copy(),
            "batch_ptr": self._batch_ptr,
        }

    def save(self, path):
        save_checkpoint(
            path, self.gen, self.disc, self.opt_g, self.opt_d,
            self.config.to_dict(), self.step, self.epoch, self._rng_state(),
        )

    def restore(self, checkpoint_path):
        state = load_checkpoint(checkpoint_path)
        self.gen.load_state_dict(state["generator"])
        self.disc.load_state_dict(state["discriminator"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        self.step = state["step"]
        self.epoch = state["epoch"]
        rng = state["rng_state"]
        torch.set_rng_state(rng["torch"])
        self.data_rng.bit_generator.state = rng["data"]
        self.forge_rng.bit_generator.state = rng["forge"]
        self._perm = np.asarray(rng["perm"])
        self._batch_ptr = rng["batch_ptr"]

    # -- main loop ---------------------------------------------------------

    def _total_steps(self) -> Optional[int]:
        cfg = self.config
        if cfg.max_steps > 0:
            return cfg.max_steps
        n = len(self.train_images)
        per_epoch = max(n // cfg.batch_size, 1)
        return cfg.epochs * per_epoch

    def validation_content_loss(self) -> Optional[float]:
        if self.val_images is None or len(self.val_images) == 0:
            return None
        inputs, target = prepare_model_inputs(self.val_images, self.config)
        was_training = self.gen.training
        self.gen.eval()
        with torch.no_grad():
            _, recon = self.gen([torch.from_numpy(b) for b in inputs])
            loss = content_loss(torch.from_numpy(target), recon).item()
        if was_training:
            self.gen.train()
        return loss

    def train(self, resume_from=None, log_fn=None) -> dict:
        """Run the configured schedule; returns paths of emitted artifacts."""
        cfg = self.config
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.to_yaml(out_dir / "config.yaml")
        metrics_path = out_dir / "metrics.jsonl"
        if resume_from is not None:
            self.restore(resume_from)
            metrics_file = open(metrics_path, "a")
        else:
            metrics_file = open(metrics_path, "w")

        total = self._total_steps()
        self.gen.train()
        self.disc.train()
        start = time.perf_counter()
        try:
            while self.step < total:
                indices = self._next_batch_indices()
                step_start = time.perf_counter()
                metrics = self.train_step(indices)
                self.step += 1
                record = {
                    "step": self.step,
                    "epoch": self.epoch,
                    **metrics,
                    "wall_time": time.perf_counter() - step_start,
                }
                metrics_file.write(json.dumps(record) + "\n")
                metrics_file.flush()
                if log_fn is not None:
                    log_fn(record)
                if cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                    self.save(out_dir / f"checkpoint_step{self.step:08d}.pt")
        finally:
            metrics_file.close()
        final_path = out_dir / "checkpoint_final.pt"
        self.save(final_path)
        return {
            "steps": self.step,
            "checkpoint": str(final_path),
            "metrics": str(metrics_path),
            "seconds": time.perf_counter() - start,
        }


def train(config: RunConfig, resume_from=None, log_fn=None) -> dict:
    return Trainer(config).train(resume_from=resume_from, log_fn=log_fn)
