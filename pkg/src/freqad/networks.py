"""Generators and discriminator.

One skip-connected encoder/decoder generator per frequency band, with a
channel-selection module exchanging information across branches after every
encoder stage. The discriminator is a strided spectral-norm conv stack with
a scalar critic head and a latent feature tap on its penultimate layer.
"""

from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn
from torch.nn.utils import spectral_norm

from .attention import ChannelSelect
from .pyramid import recompose

__all__ = [
    "N_STAGES",
    "NonFiniteActivationError",
    "GeneratorBranch",
    "BranchedGenerator",
    "Discriminator",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT",
]

N_STAGES = 5
CHECKPOINT_FORMAT = "freqad-checkpoint-v1"


class NonFiniteActivationError(RuntimeError):
    """A forward pass produced NaN/Inf activations."""


def _init_weights(module):
    if hasattr(module, "weight_orig"):  # spectral-norm layers init before wrapping
        return
    if isinstance(module, nn.Conv2d):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


def _encoder_channels(base: int) -> List[int]:
    """Per-stage channel counts: doubling from base, capped at 8x base."""
    return [min(base * 2**i, base * 8) for i in range(N_STAGES)]


class GeneratorBranch(nn.Module):
    """Skip-connected encoder/decoder for one frequency band.

    Encoder stages are stride-2 4x4 convs (BatchNorm + LeakyReLU); decoder
    stages are nearest-upsample + 3x3 conv (BatchNorm + ReLU) with skip
    concatenation; the head is a tanh conv, so outputs live in [-1, 1] and
    match the input resolution (which must be divisible by 2**5).
    """

    def __init__(self, in_channels: int = 3, base_channels: int = 64):
        super().__init__()
        chans = _encoder_channels(base_channels)
        self.stage_channels = chans
        enc = []
        prev = in_channels
        for c in chans:
            enc.append(
                nn.Sequential(
                    nn.Conv2d(prev, c, 4, stride=2, padding=1, bias=False),
                    nn.BatchNorm2d(c),
                    nn.LeakyReLU(0.2, inplace=True),
                )
            )
            prev = c
        self.encoder = nn.ModuleList(enc)

        dec = []
        prev = chans[-1]
        for i in range(N_STAGES - 1, 0, -1):
            dec.append(self._up_block(prev, chans[i - 1]))
            prev = 2 * chans[i - 1]  # after skip concatenation
        dec.append(self._up_block(prev, chans[0]))
        self.decoder = nn.ModuleList(dec)
        self.head = nn.Sequential(
            nn.Conv2d(chans[0], in_channels, 3, padding=1), nn.Tanh()
        )
        self.apply(_init_weights)

    @staticmethod
    def _up_block(in_c, out_c):
        return nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(in_c, out_c, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_c),
            nn.ReLU(inplace=True),
        )

    def encode_stage(self, index: int, x: torch.Tensor) -> torch.Tensor:
        return self.encoder[index](x)

    def decode(self, stage_features: Sequence[torch.Tensor]) -> torch.Tensor:
        """Reconstruct from the per-stage encoder features (skips included)."""
        x = stage_features[-1]
        for i, block in enumerate(self.decoder[:-1]):
            x = block(x)
            x = torch.cat([x, stage_features[N_STAGES - 2 - i]], dim=1)
        x = self.decoder[-1](x)
        return self.head(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = []
        for stage in self.encoder:
            x = stage(x)
            feats.append(x)
        return self.decode(feats)


class BranchedGenerator(nn.Module):
    """N parallel generator branches coupled by per-stage channel selection."""

    def __init__(self, n_branches: int = 2, in_channels: int = 3,
                 base_channels: int = 64, use_cs: bool = True,
                 cs_reduce_ratio: int = 16):
        super().__init__()
        if n_branches < 1:
            raise ValueError("need at least one branch")
        if use_cs and n_branches < 2:
            raise ValueError("channel selection needs >= 2 branches")
        self.n_branches = n_branches
        self.use_cs = use_cs
        self.branches = nn.ModuleList(
            GeneratorBranch(in_channels, base_channels) for _ in range(n_branches)
        )
        if use_cs:
            self.cs_stages = nn.ModuleList(
                ChannelSelect(c, n_branches, reduce_ratio=cs_reduce_ratio)
                for c in _encoder_channels(base_channels)
            )
        else:
            self.cs_stages = nn.ModuleList()

    def forward(self, bands: Sequence[torch.Tensor]):
        """Reconstruct each band and their sum.

        Returns (band_outputs, image). Skip connections carry the post-CS
        features, and the CS output feeds the next encoder stage.
        """
        if len(bands) != self.n_branches:
            raise ValueError(
                f"got {len(bands)} bands for {self.n_branches} branches"
            )
        h, w = bands[0].shape[-2:]
        if h % 2**N_STAGES or w % 2**N_STAGES:
            raise ValueError(
                f"spatial dims ({h}, {w}) must be divisible by {2 ** N_STAGES}"
            )
        xs = list(bands)
        skips = [[] for _ in range(self.n_branches)]
        for s in range(N_STAGES):
            xs = [br.encode_stage(s, x) for br, x in zip(self.branches, xs)]
            if self.use_cs:
                _, xs = self.cs_stages[s](xs)
            for k, x in enumerate(xs):
                skips[k].append(x)
        outputs = [br.decode(sk) for br, sk in zip(self.branches, skips)]
        image = recompose(outputs)
        if not torch.isfinite(image).all():
            raise NonFiniteActivationError(
                "generator produced non-finite activations"
            )
        return outputs, image


class Discriminator(nn.Module):
    """Strided spectral-norm conv critic with a latent feature tap.

    forward returns (per-sample scalar scores, latent feature map); the
    latent tap defaults to the activation entering the scalar head.
    """

    def __init__(self, in_channels: int = 3, base_channels: int = 64,
                 latent_stage: int = -1):
        super().__init__()
        chans = [base_channels * 2**i for i in range(4)]
        stages = []
        prev = in_channels
        for c in chans:
            conv = nn.Conv2d(prev, c, 4, stride=2, padding=1, bias=False)
            nn.init.normal_(conv.weight, 0.0, 0.02)
            stages.append(
                nn.Sequential(spectral_norm(conv), nn.LeakyReLU(0.2, inplace=True))
            )
            prev = c
        self.stages = nn.ModuleList(stages)
        head = nn.Conv2d(prev, 1, 4, stride=1, padding=1)
        nn.init.normal_(head.weight, 0.0, 0.02)
        nn.init.zeros_(head.bias)
        self.head = spectral_norm(head)
        self.latent_stage = latent_stage

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if x.dim() != 4:
            raise ValueError(f"expected (B, C, H, W) input, got {tuple(x.shape)}")
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        latent = feats[self.latent_stage]
        score = self.head(x).mean(dim=(1, 2, 3))
        return score, latent


def save_checkpoint(path, generator, discriminator, opt_g, opt_d, config_dict,
                    step: int, epoch: int, rng_state: Optional[dict] = None):
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "generator": generator.state_dict(),
            "discriminator": discriminator.state_dict(),
            "opt_g": opt_g.state_dict() if opt_g is not None else None,
            "opt_d": opt_d.state_dict() if opt_d is not None else None,
            "config": config_dict,
            "step": step,
            "epoch": epoch,
            "rng_state": rng_state,
        },
        path,
    )


def load_checkpoint(path) -> dict:
    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(
            f"unrecognized checkpoint format: {state.get('format')!r}"
        )
    return state
