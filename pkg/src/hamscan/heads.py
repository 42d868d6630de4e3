"""Phase-space readout heads.

Structured operations over the oscillator scan's PhaseState: an SE-style
per-channel energy combination, energy-conditioned gating of skip
features, momentum attention, decoder fusion and the pooled phase vector
feeding the classifier. All ops take channel-first batched tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import NegativeEnergyInput, ShapeMismatch

__all__ = [
    "weighted_energy_map",
    "EnergyMapSE",
    "energy_gate",
    "phase_space_attention",
    "decoder_fusion",
    "StatMLP",
    "PhaseVector",
    "phase_pool",
    "ClassifierHead",
]


def weighted_energy_map(H: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """Scalar energy map (1/D) sum_c w_c H_c from per-channel energies.

    H: [B, D, h, w] non-negative, w: [B, D] weights in (0, 1).
    Returns [B, 1, h, w].
    """
    if H.dim() != 4 or w.shape != H.shape[:2]:
        raise ShapeMismatch(f"H {tuple(H.shape)} vs weights {tuple(w.shape)}")
    return (w[:, :, None, None] * H).mean(dim=1, keepdim=True)


class EnergyMapSE(nn.Module):
    """Squeeze-excitation weighting of per-channel energies.

    w = sigmoid(MLP(GAP(H))) with a D -> D/r -> D bottleneck; the map is
    the w-weighted channel mean of H. Rejects negative energy input.

    Args:
        channels: number of energy channels D.
        reduction: bottleneck reduction factor r.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def weights(self, H: torch.Tensor) -> torch.Tensor:
        if torch.any(H < 0):
            raise NegativeEnergyInput("energy map input must be non-negative")
        s = H.mean(dim=(-2, -1))
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(s))))

    def forward(self, H: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        w = self.weights(H)
        return weighted_energy_map(H, w), w


def energy_gate(H_l: torch.Tensor, gamma: torch.Tensor, e_l: torch.Tensor) -> torch.Tensor:
    """Gate skip features by centered energy: sigmoid(gamma (H - mean H)) * e.

    H_l: [B, 1, h, w] energy map at the skip's resolution, e_l: [B, C, h, w].
    A constant energy field gates everything by exactly 1/2. The mean is
    per sample, over space.
    """
    if H_l.shape[-2:] != e_l.shape[-2:] or H_l.shape[1] != 1:
        raise ShapeMismatch(f"H_l {tuple(H_l.shape)} vs e_l {tuple(e_l.shape)}")
    centered = H_l - H_l.mean(dim=(-2, -1), keepdim=True)
    return torch.sigmoid(gamma * centered) * e_l


def phase_space_attention(
    H: torch.Tensor,
    gamma_ps: torch.Tensor,
    p: torch.Tensor,
    W_ps: torch.Tensor,
    d_l: torch.Tensor,
) -> torch.Tensor:
    """Energy-placed momentum attention: d + alpha * (W_ps p).

    alpha = sigmoid(gamma_ps (H - mean H)) broadcasts over channels;
    W_ps: [C, D] projects momentum onto the decoder width. Residual form,
    so zero momentum or W_ps = 0 leaves d_l unchanged.
    """
    if W_ps.shape != (d_l.shape[1], p.shape[1]):
        raise ShapeMismatch(
            f"W_ps {tuple(W_ps.shape)} vs C={d_l.shape[1]}, D={p.shape[1]}"
        )
    alpha = torch.sigmoid(gamma_ps * (H - H.mean(dim=(-2, -1), keepdim=True)))
    proj = torch.einsum("cd,bdhw->bchw", W_ps, p)
    return d_l + alpha * proj


def decoder_fusion(
    e_gated: torch.Tensor,
    d_up: torch.Tensor,
    p_l: torch.Tensor,
    W_p: torch.Tensor,
    block: nn.Module,
) -> torch.Tensor:
    """Fuse gated skip, upsampled decoder state and projected momentum.

    Concatenates [e_gated; d_up; W_p p_l] (3C channels) and applies the
    given 3C -> C block.
    """
    if e_gated.shape != d_up.shape:
        raise ShapeMismatch(
            f"e_gated {tuple(e_gated.shape)} vs d_up {tuple(d_up.shape)}"
        )
    proj = torch.einsum("cd,bdhw->bchw", W_p, p_l)
    return block(torch.cat([e_gated, d_up, proj], dim=1))


class StatMLP(nn.Module):
    """Scalar energy statistics head: 1 -> 16 -> 16 with GELU."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.fc1 = nn.Linear(1, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(s)))


@dataclass
class PhaseVector:
    """Pooled phase-space descriptor [f_bar; p_bar; h_bar]."""

    f_bar: torch.Tensor
    p_bar: torch.Tensor
    h_bar: torch.Tensor

    @property
    def vector(self) -> torch.Tensor:
        return torch.cat([self.f_bar, self.p_bar, self.h_bar], dim=-1)


def phase_pool(
    f: torch.Tensor,
    p: torch.Tensor,
    H_map: torch.Tensor,
    stat_mlp: StatMLP,
    pool_source: str = "fused",
) -> PhaseVector:
    """Global pooling of (features, |momentum|, energy statistics).

    f_bar averages the fused features (or the raw positions when
    pool_source="position" and a q field is passed as f), p_bar averages
    |p| per channel, h_bar embeds the scalar mean of the energy map
    through the statistics MLP. Vector width is 2D + 16.
    """
    if pool_source not in ("fused", "position"):
        raise ValueError(f"unknown pool_source {pool_source!r}")
    if f.shape != p.shape:
        raise ShapeMismatch(f"f {tuple(f.shape)} vs p {tuple(p.shape)}")
    f_bar = f.mean(dim=(-2, -1))
    p_bar = p.abs().mean(dim=(-2, -1))
    h_bar = stat_mlp(H_map.mean(dim=(-3, -2, -1), keepdim=False)[:, None])
    return PhaseVector(f_bar, p_bar, h_bar)


class ClassifierHead(nn.Module):
    """logits = W2 GELU(Dropout(W1 LN(v) + b1)) + b2.

    Args:
        in_dim: pooled vector width (2D + 16).
        hidden: bottleneck width (the channel width D at full scale).
        classes: number of output classes.
        dropout: dropout probability (active in training mode only).
    """

    def __init__(self, in_dim: int, hidden: int, classes: int, dropout: float = 0.1):
        super().__init__()
        self.norm = nn.LayerNorm(in_dim)
        self.fc1 = nn.Linear(in_dim, hidden)
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(hidden, classes)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.drop(self.fc1(self.norm(v)))))
