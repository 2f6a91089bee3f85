"""Channel Selection: softmax-gated channel attention across frequency branches.

Branch feature maps are fused by summation, squeezed to channel statistics,
reduced through a small FC layer, and regressed into one logit per
(branch, channel). A softmax across branches yields attention weights that
sum to one per channel and rescale each branch's channels.
"""

import torch
import torch.nn.functional as F
from torch import nn

__all__ = ["fuse", "global_average_pool", "ChannelSelect"]


def fuse(features) -> torch.Tensor:
    """Element-wise sum of branch feature maps."""
    if len(features) < 2:
        raise ValueError(f"fuse needs >= 2 branches, got {len(features)}")
    shape = features[0].shape
    for f in features[1:]:
        if f.shape != shape:
            raise ValueError(f"branch shape mismatch: {f.shape} vs {shape}")
    out = features[0]
    for f in features[1:]:
        out = out + f
    return out


def global_average_pool(feature_map: torch.Tensor) -> torch.Tensor:
    """Per-channel spatial mean over the last two axes."""
    if feature_map.shape[-1] < 1 or feature_map.shape[-2] < 1:
        raise ValueError("feature map needs spatial extent")
    return feature_map.mean(dim=(-2, -1))


class ChannelSelect(nn.Module):
    """Regress per-branch per-channel attention that sums to 1 across branches.

    Args:
        channels: channel count C of every branch feature map.
        n_branches: number of frequency branches N (>= 2).
        reduced_dim: bottleneck width d; default max(channels // reduce_ratio, 8).
        reduce_ratio: divisor used when reduced_dim is not given.
    """

    def __init__(self, channels: int, n_branches: int, reduced_dim: int = None,
                 reduce_ratio: int = 16):
        super().__init__()
        if n_branches < 2:
            raise ValueError("channel selection needs >= 2 branches")
        if reduced_dim is None:
            reduced_dim = max(channels // reduce_ratio, 8)
        if reduced_dim < 1:
            raise ValueError(f"reduced_dim must be >= 1, got {reduced_dim}")
        self.channels = channels
        self.n_branches = n_branches
        self.reduced_dim = reduced_dim
        self.reduce = nn.Linear(channels, reduced_dim)
        self.branch_weights = nn.Parameter(
            torch.empty(n_branches, channels, reduced_dim)
        )
        nn.init.normal_(self.reduce.weight, 0.0, 0.02)
        nn.init.zeros_(self.reduce.bias)
        nn.init.normal_(self.branch_weights, 0.0, 0.02)

    def attention(self, features) -> torch.Tensor:
        """Attention weights (B, N, C) for a list of (B, C, H, W) branch maps."""
        if len(features) != self.n_branches:
            raise ValueError(
                f"expected {self.n_branches} branches, got {len(features)}"
            )
        for f in features:
            if f.dim() != 4 or f.shape[1] != self.channels:
                raise ValueError(
                    f"expected (B, {self.channels}, H, W) maps, got {tuple(f.shape)}"
                )
            if not torch.isfinite(f).all():
                raise ValueError("non-finite values in branch features")
        fused = fuse(features)
        z1 = global_average_pool(fused)           # (B, C)
        z2 = F.relu(self.reduce(z1))              # (B, d)
        logits = torch.einsum("ncd,bd->bnc", self.branch_weights, z2)
        return torch.softmax(logits, dim=1)       # (B, N, C)

    def forward(self, features):
        """Returns (attention weights (B, N, C), list of reweighted maps)."""
        weights = self.attention(features)
        augmented = [
            feat * weights[:, k, :, None, None] for k, feat in enumerate(features)
        ]
        return weights, augmented
