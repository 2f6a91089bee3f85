"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. The end-to-end criteria
(5, 6) train small models on a synthetic dataset and dominate the runtime.
"""

import json
import time

import numpy as np
import pytest
import torch

from freqad import pyramid
from freqad.attention import ChannelSelect
from freqad.config import RunConfig
from freqad.data import DatasetSpec, load_folder_dataset, make_synthetic_dataset
from freqad.evalkit import (
    auc_from_scores,
    compute_auc,
    frequency_energy_profile,
    score_dataset,
)
from freqad.objectives import (
    LossWeights,
    anomaly_score,
    content_loss,
    discriminator_loss,
    generator_adv_loss,
    latent_loss,
    normalize_scores,
    total_generator_loss,
)
from freqad.trainer import Trainer, train

from oracles import auc_pairwise, conv5_reflect, pyr_down_oracle, pyr_up_oracle


def report(criterion, detail):
    print(f"\nPASS criterion {criterion}: {detail}")


@pytest.fixture(scope="module")
def synth_root(tmp_path_factory):
    """The criterion-5 dataset: seed 0, 200 train, 50 + 50 test, 64x64."""
    root = tmp_path_factory.mktemp("acceptance_data")
    make_synthetic_dataset(root, seed=0, n_train=200, n_test_normal=50,
                           n_test_abnormal=50, image_size=64)
    return root


@pytest.fixture(scope="module")
def synth_test_samples(synth_root):
    return load_folder_dataset(
        DatasetSpec(str(synth_root), "synthetic", "test", image_size=64)
    )


def test_criterion_1_pyramid_exactness():
    rng = np.random.default_rng(1)
    # warm the jit outside the timed window
    pyramid.decompose(np.zeros((1, 32, 32), np.float32), 2)
    start = time.perf_counter()
    worst = 0.0
    for i in range(50):
        channels = 1 if i % 2 else 3
        size = int(rng.integers(32, 257))
        n = 2 + (i % 2)
        img = rng.uniform(-1, 1, size=(channels, size, size)).astype(np.float32)
        err = float(np.abs(pyramid.recompose(pyramid.decompose(img, n)) - img).max())
        worst = max(worst, err)
    elapsed = time.perf_counter() - start
    assert worst < 1e-5
    assert elapsed < 10.0
    report(1, f"max recompose error {worst:.2e} over 50 images in {elapsed:.2f}s")


def test_criterion_2_convolution_oracles():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        h, w = (int(rng.integers(6, 40)) for _ in range(2))
        img = rng.uniform(-1, 1, size=(2, h, w)).astype(np.float32)
        worst = max(worst, float(np.abs(
            pyramid.blur(img) - conv5_reflect(img, pyramid.GAU1.effective)
        ).max()))
        worst = max(worst, float(np.abs(
            pyramid.pyr_down(img) - pyr_down_oracle(img, pyramid.GAU1.effective)
        ).max()))
        half = img[:, : (h + 1) // 2, : (w + 1) // 2]
        worst = max(worst, float(np.abs(
            pyramid.pyr_up(half, (h, w))
            - pyr_up_oracle(half, (h, w), pyramid.GAU2.effective)
        ).max()))
    assert worst < 1e-6
    report(2, f"blur/pyr_down/pyr_up max deviation {worst:.2e} on 20 cases each")


def test_criterion_3_cs_closure_and_gradients():
    # softmax closure for 2 and 3 branches
    for n in (2, 3):
        torch.manual_seed(n)
        cs = ChannelSelect(channels=12, n_branches=n)
        feats = [torch.randn(2, 12, 4, 4) for _ in range(n)]
        weights, _ = cs(feats)
        closure = (weights.sum(dim=1) - 1.0).abs().max().item()
        assert closure < 1e-6

    # analytic vs central finite differences, float64, C=4 d=3
    torch.manual_seed(3)
    cs = ChannelSelect(channels=4, n_branches=2, reduced_dim=3).double()
    rng = np.random.default_rng(3)
    feats = [
        torch.tensor(rng.standard_normal((1, 4, 4, 4))) for _ in range(2)
    ]

    def loss_value():
        _, aug = cs(feats)
        return sum(a.sum() for a in aug)

    loss_value().backward()
    h = 1e-4
    worst_rel = 0.0
    for p in cs.parameters():
        flat = p.data.view(-1)
        grad = p.grad.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = loss_value().item()
            flat[i] = orig - h
            down = loss_value().item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            an = grad[i].item()
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-10)
            worst_rel = max(worst_rel, rel)
    assert worst_rel < 1e-4
    report(3, f"closure < 1e-6; gradient rel err {worst_rel:.2e} vs finite differences")


def test_criterion_4_loss_and_score_algebra():
    rng = np.random.default_rng(4)
    # loss oracles
    a = rng.standard_normal((2, 3, 5, 5))
    b = rng.standard_normal((2, 3, 5, 5))
    assert content_loss(torch.tensor(a), torch.tensor(b)).item() == pytest.approx(
        np.abs(a - b).mean(), abs=1e-9
    )
    assert latent_loss(torch.tensor(a), torch.tensor(b)).item() == pytest.approx(
        ((a - b) ** 2).mean(), abs=1e-9
    )
    r, g, f = (torch.tensor(rng.standard_normal(8)) for _ in range(3))
    assert discriminator_loss(r, g, f).item() == pytest.approx(
        r.numpy().mean() - g.numpy().mean() - f.numpy().mean(), abs=1e-12
    )
    assert generator_adv_loss(g).item() == pytest.approx(g.numpy().mean(), abs=1e-12)
    assert total_generator_loss(1.0, 1.0, 1.0, LossWeights(50, 1, 1)) == 52.0
    assert anomaly_score(1.0, 0.0, 0.9) == pytest.approx(0.9)
    assert anomaly_score(0.25, 0.25, 0.4) == pytest.approx(0.25)

    # normalization affine invariance
    s = rng.standard_normal(40)
    np.testing.assert_allclose(
        normalize_scores(5.0 * s + 3.0), normalize_scores(s), atol=1e-12
    )

    # AUC vs pairwise-counting oracle, 100 random labeled sets
    for _ in range(100):
        n = int(rng.integers(2, 51))
        labels = (rng.uniform(size=n) > rng.uniform(0.2, 0.8)).astype(int)
        if labels.sum() == 0:
            labels[0] = 1
        if labels.sum() == n:
            labels[0] = 0
        scores = np.round(rng.uniform(0, 1, n), 1)
        assert auc_from_scores(scores, labels) == auc_pairwise(scores, labels)
    report(4, "loss/score operations match oracles; AUC exact on 100 random sets")


def _train_and_score(root, test_samples, **overrides):
    params = dict(
        seed=0, data_root=str(root), category="synthetic", image_size=64,
        base_channels=16, disc_channels=16, batch_size=16,
        epochs=0, out_dir="unused",
    )
    params.update(overrides)
    cfg = RunConfig(**params)
    trainer = Trainer(cfg)
    trainer.gen.train()
    trainer.disc.train()
    while trainer.step < cfg.max_steps:
        indices = trainer._next_batch_indices()
        trainer.train_step(indices)
        trainer.step += 1
    records = score_dataset(trainer.gen, trainer.disc, test_samples, cfg)
    return records, trainer


def _permutation_null_sigma(labels, scores, n_perm=1000, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    aucs = np.empty(n_perm)
    for i in range(n_perm):
        aucs[i] = auc_from_scores(scores, rng.permutation(labels))
    return float(aucs.std())


@pytest.mark.slow
def test_criterion_5_end_to_end_synthetic_run(synth_root, synth_test_samples):
    start = time.perf_counter()
    records, _ = _train_and_score(
        synth_root, synth_test_samples, max_steps=1200
    )
    elapsed = time.perf_counter() - start
    assert elapsed < 20 * 60

    auc = compute_auc(records)
    labels = [1 if r.label == "abnormal" else 0 for r in records]
    scores = [r.raw_score for r in records]
    sigma = _permutation_null_sigma(labels, scores)
    assert auc >= 0.80, f"AUC {auc:.3f} below 0.80"
    assert auc > 0.5 + 3 * sigma

    # the frequency phenomenon motivating the method must hold on this data
    normal = [s.image for s in synth_test_samples if s.label == "normal"]
    abnormal = [s.image for s in synth_test_samples if s.label == "abnormal"]
    n_bins = 16
    p_norm = frequency_energy_profile(normal, n_bins, "normal")
    p_abn = frequency_energy_profile(abnormal, n_bins, "abnormal")
    upper = list(range(n_bins // 2, n_bins))
    wins = sum(p_abn.radial_bins[i][1] > p_norm.radial_bins[i][1] for i in upper)
    assert wins >= 0.8 * len(upper)
    report(
        5,
        f"AUC {auc:.3f} (null 3-sigma bound {0.5 + 3 * sigma:.3f}) in "
        f"{elapsed / 60:.1f} min; abnormal high-frequency mass exceeds normal "
        f"in {wins}/{len(upper)} upper bins",
    )


@pytest.mark.slow
def test_criterion_6_ablation_direction(synth_root, synth_test_samples):
    seeds = (0, 1, 2)
    steps = 300
    common = dict(base_channels=8, disc_channels=8, max_steps=steps)
    variants = {
        "full": dict(),
        "fd_only": dict(use_cs=False, use_cutout=False, use_cutpaste=False),
        "baseline": dict(n_branches=1, use_cs=False, use_cutout=False,
                         use_cutpaste=False),
    }
    averages = {}
    for name, extra in variants.items():
        aucs = []
        for seed in seeds:
            records, _ = _train_and_score(
                synth_root, synth_test_samples, seed=seed, **common, **extra
            )
            aucs.append(compute_auc(records))
        averages[name] = float(np.mean(aucs))
    assert averages["full"] >= averages["fd_only"] - 0.02, averages
    assert averages["fd_only"] >= averages["baseline"] - 0.02, averages
    report(
        6,
        "mean AUC over 3 seeds: full {full:.3f} >= fd_only {fd_only:.3f} "
        ">= baseline {baseline:.3f} (ties within 0.02)".format(**averages),
    )


def test_criterion_7_determinism_and_resumption(synth_root, tmp_path):
    def cfg_for(out, max_steps, **kw):
        return RunConfig(
            seed=0, data_root=str(synth_root), category="synthetic",
            image_size=64, base_channels=8, disc_channels=8, batch_size=8,
            epochs=0, max_steps=max_steps, out_dir=str(out), **kw,
        )

    def losses(path):
        return [
            {k: rec[k] for k in ("loss_d", "loss_g", "l_con", "l_adv", "l_lat")}
            for rec in map(json.loads, open(path))
        ]

    res_a = train(cfg_for(tmp_path / "a", 10))
    res_b = train(cfg_for(tmp_path / "b", 10))
    assert losses(res_a["metrics"]) == losses(res_b["metrics"])

    train(cfg_for(tmp_path / "part", 5, checkpoint_every=5))
    resumed = Trainer(cfg_for(tmp_path / "part", 6)).train(
        resume_from=tmp_path / "part" / "checkpoint_step00000005.pt"
    )
    full = losses(res_a["metrics"])
    resumed_losses = losses(resumed["metrics"])
    for key, val in resumed_losses[-1].items():
        assert val == pytest.approx(full[5][key], abs=1e-5)
    report(7, "10-step logs bit-identical across runs; resumed step matches")


@pytest.mark.slow
def test_criterion_8_memorization_smoke(tmp_path):
    rng = np.random.default_rng(8)
    from freqad.data import render_texture

    image = (render_texture(123, 32, 3) * 2.0 - 1.0).astype(np.float32)
    cfg = RunConfig(
        seed=0, image_size=32, base_channels=16, disc_channels=16,
        batch_size=4, epochs=0, max_steps=300, out_dir=str(tmp_path / "mem"),
    )
    trainer = Trainer(cfg, train_images=image[None])
    trainer.gen.train()
    trainer.disc.train()
    first = None
    best = float("inf")
    best_step = 0
    for step in range(300):
        indices = trainer._next_batch_indices()
        metrics = trainer.train_step(indices)
        trainer.step += 1
        if first is None:
            first = metrics["l_con"]
        if metrics["l_con"] < best:
            best = metrics["l_con"]
            best_step = step + 1
        if best <= 0.5 * first:
            break
    assert best <= 0.5 * first, (first, best)
    report(
        8,
        f"single-image L1 fell from {first:.4f} to {best:.4f} "
        f"by step {best_step} (<= 300)",
    )
