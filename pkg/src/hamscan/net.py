"""Toy encoder/decoder vision network with an oscillator-scan bottleneck.

A ConvNeXt-style encoder (stem /2, three stages, two stride-2 stage
transitions) feeds a bottleneck at 1/8 resolution whose blocks run a
convolutional path and a four-direction oscillator scan in parallel,
fused by a learned per-pixel gate. Momentum and an SE-combined energy map
from the scan condition the decoder (energy-gated skips, momentum
injection, phase-space attention at the coarsest level) or the pooled
classification head.

Scaled down from the full-size design: base width C=8 (bottleneck
D = 8C = 64), 64x64 inputs, one block per stage.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidConfig
from .heads import (
    ClassifierHead,
    EnergyMapSE,
    StatMLP,
    decoder_fusion,
    energy_gate,
    phase_pool,
    phase_space_attention,
)

__all__ = [
    "ToyConfig",
    "LayerNorm2d",
    "ConvNeXtBlock",
    "OscillatorBank2d",
    "GatedBottleneckBlock",
    "Bottleneck",
    "HamSeg",
    "HamCls",
    "build_model",
    "parameter_count",
]

_TASKS = ("segmentation", "classification")


@dataclass
class ToyConfig:
    """Training/architecture configuration for the toy models.

    bottleneck width is always 8 * base_channels; input_size must be
    divisible by 8 (three /2 reductions reach the bottleneck).
    """

    task: str = "segmentation"
    base_channels: int = 8
    input_size: int = 64
    classes: int = 1
    seed: int = 0
    epochs: int = 30
    lr: float = 5e-4
    weight_decay: float = 0.01
    batch_size: int = 16
    dropout: float = 0.1
    train_samples: int = 2000
    val_samples: int = 200
    momentum_injection: bool = True
    pool_source: str = "fused"
    disable_oscillator: bool = False
    class_weights: str = "none"
    texture_band_lo: float = 0.10
    texture_band_hi: float = 0.34

    @property
    def bottleneck_channels(self) -> int:
        return 8 * self.base_channels

    def validate(self) -> "ToyConfig":
        if self.task not in _TASKS:
            raise InvalidConfig(f"task must be one of {_TASKS}, got {self.task!r}")
        if self.base_channels < 1:
            raise InvalidConfig(f"base_channels must be >= 1, got {self.base_channels}")
        if self.input_size < 16 or self.input_size % 8 != 0:
            raise InvalidConfig(
                f"input_size must be a multiple of 8 and >= 16, got {self.input_size}"
            )
        if self.classes < 1:
            raise InvalidConfig(f"classes must be >= 1, got {self.classes}")
        if self.task == "classification" and self.classes < 2:
            raise InvalidConfig("classification requires classes >= 2")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be >= 1")
        if not (0 <= self.lr < 1):
            raise InvalidConfig(f"lr out of range: {self.lr}")
        if not (0 <= self.dropout < 1):
            raise InvalidConfig(f"dropout out of range: {self.dropout}")
        if self.train_samples < self.batch_size or self.val_samples < 1:
            raise InvalidConfig("need at least one full training batch and one val sample")
        if self.pool_source not in ("fused", "position"):
            raise InvalidConfig(f"pool_source must be fused|position, got {self.pool_source!r}")
        if self.class_weights not in ("none", "inverse"):
            raise InvalidConfig(f"class_weights must be none|inverse, got {self.class_weights!r}")
        if not (0 < self.texture_band_lo < self.texture_band_hi < 0.5):
            raise InvalidConfig(
                "texture bands must satisfy 0 < lo < hi < 0.5 (Nyquist), got "
                f"({self.texture_band_lo}, {self.texture_band_hi})"
            )
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ToyConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**d)
        except TypeError as e:
            raise InvalidConfig(str(e)) from e
        return cfg.validate()


class LayerNorm2d(nn.Module):
    """Channelwise LayerNorm for NCHW tensors."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, (x.shape[-1],), self.weight, self.bias, self.eps)
        return x.permute(0, 3, 1, 2)


class ConvNeXtBlock(nn.Module):
    """Depthwise 7x7 -> LayerNorm -> 4x pointwise expansion -> GELU -> contract.

    Residual; when in/out widths differ the shortcut is a 1x1 projection.
    """

    def __init__(self, in_ch: int, out_ch: int | None = None, expansion: int = 4):
        super().__init__()
        out_ch = in_ch if out_ch is None else out_ch
        self.dw = nn.Conv2d(in_ch, in_ch, 7, padding=3, groups=in_ch)
        self.norm = LayerNorm2d(in_ch)
        self.pw1 = nn.Conv2d(in_ch, expansion * out_ch, 1)
        self.pw2 = nn.Conv2d(expansion * out_ch, out_ch, 1)
        self.shortcut = nn.Identity() if in_ch == out_ch else nn.Conv2d(in_ch, out_ch, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.pw2(F.gelu(self.pw1(self.norm(self.dw(x)))))
        return self.shortcut(x) + y


class OscillatorBank2d(nn.Module):
    """Differentiable four-direction oscillator scan over feature maps.

    Runs z_t = exp((-nu_t + i omega) delta_t) z_{t-1} + x_t along both
    image axes in both orders (fresh state per line), then merges the
    four position/momentum stacks with bias-free [D, 4D] matrices
    initialized to direction averaging. nu/delta are softplus maps of the
    input, nu clamped at nu_max; |A| < 1 everywhere, so the plain
    recurrence is stable in linear space.

    Args:
        channels: feature width D.
        omega_range: geometric ladder of per-channel rotation rates.
        nu0/delta0: decay and step size realized at zero input.
    """

    def __init__(
        self,
        channels: int,
        omega_range: tuple[float, float] = (0.1, 0.9 * math.pi),
        nu0: float = 0.25,
        delta0: float = 0.7,
        nu_max: float = 5.0,
    ):
        super().__init__()
        self.nu_max = nu_max
        omega = torch.from_numpy(np.geomspace(omega_range[0], omega_range[1], channels))
        self.omega = nn.Parameter(omega.float())

        def inv_softplus(y: float) -> float:
            return math.log(math.expm1(y))

        self.s_nu = nn.Parameter(0.01 * torch.randn(channels))
        self.b_nu = nn.Parameter(torch.full((channels,), inv_softplus(nu0)))
        self.s_delta = nn.Parameter(0.01 * torch.randn(channels))
        self.b_delta = nn.Parameter(torch.full((channels,), inv_softplus(delta0)))
        eye = torch.eye(channels)
        self.merge_q = nn.Parameter(0.25 * eye.repeat(1, 4))
        self.merge_p = nn.Parameter(0.25 * eye.repeat(1, 4))

    def coefficient_fields(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-position (nu, delta); x is [B, D, H, W]."""
        c = (None, slice(None), None, None)
        nu = F.softplus(x * self.s_nu[c] + self.b_nu[c]).clamp(max=self.nu_max)
        delta = F.softplus(x * self.s_delta[c] + self.b_delta[c])
        return nu, delta

    @staticmethod
    def _scan_axis(a: torch.Tensor, u: torch.Tensor, axis: int, reverse: bool) -> torch.Tensor:
        if reverse:
            a, u = a.flip(axis), u.flip(axis)
        steps_a = a.unbind(axis)
        steps_u = u.unbind(axis)
        z = torch.zeros_like(steps_u[0])
        out = []
        for at, ut in zip(steps_a, steps_u):
            z = at * z + ut
            out.append(z)
        res = torch.stack(out, dim=axis)
        return res.flip(axis) if reverse else res

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        nu, delta = self.coefficient_fields(x)
        omega = self.omega[None, :, None, None]
        a = torch.exp(torch.complex(-nu * delta, omega * delta))
        u = torch.complex(x, torch.zeros_like(x))
        zs = [
            self._scan_axis(a, u, 3, False),  # left-to-right
            self._scan_axis(a, u, 3, True),   # right-to-left
            self._scan_axis(a, u, 2, False),  # top-to-bottom
            self._scan_axis(a, u, 2, True),   # bottom-to-top
        ]
        q_stack = torch.cat([z.real for z in zs], dim=1)
        p_stack = torch.cat([z.imag for z in zs], dim=1)
        q = torch.einsum("od,bdhw->bohw", self.merge_q, q_stack)
        p = torch.einsum("od,bdhw->bohw", self.merge_p, p_stack)
        return q, p


class GatedBottleneckBlock(nn.Module):
    """Parallel ConvNeXt and oscillator paths fused by a per-pixel gate.

    g = sigmoid(w [f_conv; f_osc] + b_g) is a single channel broadcast
    across features; b_g starts at +2.0 so the convolutional path
    dominates early (mean gate ~ sigmoid(2) ~ 0.88). The fused output is
    f = g f_conv + (1-g) q with dropout. Oscillator parameters are
    per-block (not shared).
    """

    def __init__(self, channels: int, dropout: float = 0.1, gate_bias: float = 2.0):
        super().__init__()
        self.conv = ConvNeXtBlock(channels)
        self.osc = OscillatorBank2d(channels)
        self.gate = nn.Conv2d(2 * channels, 1, 1)
        nn.init.normal_(self.gate.weight, std=0.01)
        nn.init.constant_(self.gate.bias, gate_bias)
        self.drop = nn.Dropout(dropout)
        self.disable_oscillator = False

    def forward(self, x: torch.Tensor):
        f_conv = self.conv(x)
        if self.disable_oscillator:
            q = torch.zeros_like(x)
            p = torch.zeros_like(x)
            g = torch.ones_like(x[:, :1])
        else:
            q, p = self.osc(x)
            g = torch.sigmoid(self.gate(torch.cat([f_conv, q], dim=1)))
        f = self.drop(g * f_conv + (1.0 - g) * q)
        return f, q, p, g


class Bottleneck(nn.Module):
    """Two gated oscillator blocks plus the SE energy map of the last block."""

    def __init__(self, channels: int, dropout: float = 0.1, se_reduction: int = 4):
        super().__init__()
        self.block0 = GatedBottleneckBlock(channels, dropout)
        self.block1 = GatedBottleneckBlock(channels, dropout)
        self.se = EnergyMapSE(channels, se_reduction)

    def forward(self, x: torch.Tensor):
        f, q0, p0, g0 = self.block0(x)
        f, q1, p1, g1 = self.block1(f)
        H_c = 0.5 * (q1 * q1 + p1 * p1)
        H_map, se_w = self.se(H_c)
        internals = {
            "gates": (g0, g1),
            "q": (q0, q1),
            "p": (p0, p1),
            "H_c": H_c,
            "se_weights": se_w,
        }
        return f, p1, H_map, internals


class _Encoder(nn.Module):
    """Stem (/2) + three ConvNeXt stages with stride-2 transitions (/8 total)."""

    def __init__(self, c: int):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(1, c, 3, stride=2, padding=1), LayerNorm2d(c), nn.GELU(),
            nn.Conv2d(c, c, 3, stride=1, padding=1), LayerNorm2d(c), nn.GELU(),
        )
        self.stage1 = ConvNeXtBlock(c)
        self.down1 = nn.Sequential(LayerNorm2d(c), nn.Conv2d(c, 2 * c, 3, stride=2, padding=1))
        self.stage2 = ConvNeXtBlock(2 * c)
        self.down2 = nn.Sequential(LayerNorm2d(2 * c), nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1))
        self.stage3 = ConvNeXtBlock(4 * c)
        self.expand = nn.Sequential(LayerNorm2d(4 * c), nn.Conv2d(4 * c, 8 * c, 1))

    def forward(self, x: torch.Tensor):
        e1 = self.stage1(self.stem(x))
        e2 = self.stage2(self.down1(e1))
        e3 = self.stage3(self.down2(e2))
        return e1, e2, e3, self.expand(e3)


class _DecoderLevel(nn.Module):
    """Energy-gated skip + upsampled state + projected momentum -> fusion block."""

    def __init__(self, ch: int, state_ch: int, with_attention: bool = False):
        super().__init__()
        self.gamma = nn.Parameter(torch.tensor(1.0))
        self.W_p = nn.Parameter(torch.randn(ch, state_ch) * (1.0 / math.sqrt(state_ch)))
        self.block = ConvNeXtBlock(3 * ch, ch)
        self.with_attention = with_attention
        if with_attention:
            self.gamma_ps = nn.Parameter(torch.tensor(1.0))
            self.W_ps = nn.Parameter(torch.randn(ch, state_ch) * (1.0 / math.sqrt(state_ch)))

    def forward(self, e_l, d_up, p_l, H_l):
        e_gated = energy_gate(H_l, self.gamma, e_l)
        out = decoder_fusion(e_gated, d_up, p_l, self.W_p, self.block)
        if self.with_attention:
            out = phase_space_attention(H_l, self.gamma_ps, p_l, self.W_ps, out)
        return out


def _resize(t: torch.Tensor, hw) -> torch.Tensor:
    if t.shape[-2:] == tuple(hw):
        return t
    return F.interpolate(t, size=hw, mode="bilinear", align_corners=False)


class HamSeg(nn.Module):
    """Segmentation model: encoder, oscillator bottleneck, gated decoder."""

    def __init__(self, cfg: ToyConfig):
        super().__init__()
        cfg.validate()
        c, d = cfg.base_channels, cfg.bottleneck_channels
        self.cfg = cfg
        self.encoder = _Encoder(c)
        self.bottleneck = Bottleneck(d, cfg.dropout)
        self.proj_b = nn.Conv2d(d, 4 * c, 1)
        self.level3 = _DecoderLevel(4 * c, d, with_attention=True)
        self.up2 = nn.ConvTranspose2d(4 * c, 2 * c, 2, stride=2)
        self.level2 = _DecoderLevel(2 * c, d)
        self.up1 = nn.ConvTranspose2d(2 * c, c, 2, stride=2)
        self.level1 = _DecoderLevel(c, d)
        self.up0 = nn.ConvTranspose2d(c, c, 2, stride=2)
        self.head = nn.Sequential(
            nn.Conv2d(c, c, 3, padding=1), nn.GELU(), nn.Conv2d(c, cfg.classes, 1)
        )
        if cfg.disable_oscillator:
            self.bottleneck.block0.disable_oscillator = True
            self.bottleneck.block1.disable_oscillator = True

    def forward(self, x: torch.Tensor, return_internals: bool = False):
        e1, e2, e3, b_in = self.encoder(x)
        f, p, H_map, internals = self.bottleneck(b_in)
        inject = self.cfg.momentum_injection and not self.cfg.disable_oscillator
        levels = []
        d_state = self.proj_b(f)
        for level, e_l, up in (
            (self.level3, e3, None),
            (self.level2, e2, self.up2),
            (self.level1, e1, self.up1),
        ):
            if up is not None:
                d_state = up(d_state)
            hw = e_l.shape[-2:]
            p_l = _resize(p, hw) if inject else torch.zeros(
                (x.shape[0], p.shape[1], *hw), dtype=p.dtype, device=p.device
            )
            H_l = _resize(H_map, hw)
            d_state = level(e_l, d_state, p_l, H_l)
            levels.append((H_l, level.gamma))
        logits = self.head(self.up0(d_state))
        if return_internals:
            internals = dict(internals)
            internals["H_map"] = H_map
            internals["level_energy"] = levels
            return logits, internals
        return logits


class HamCls(nn.Module):
    """Classification model: encoder, oscillator bottleneck, pooled phase head."""

    def __init__(self, cfg: ToyConfig):
        super().__init__()
        cfg.validate()
        d = cfg.bottleneck_channels
        self.cfg = cfg
        self.encoder = _Encoder(cfg.base_channels)
        self.bottleneck = Bottleneck(d, cfg.dropout)
        self.stat_mlp = StatMLP(16)
        self.head = ClassifierHead(2 * d + 16, d, cfg.classes, cfg.dropout)
        if cfg.disable_oscillator:
            self.bottleneck.block0.disable_oscillator = True
            self.bottleneck.block1.disable_oscillator = True

    def forward(self, x: torch.Tensor, return_internals: bool = False):
        *_, b_in = self.encoder(x)
        f, p, H_map, internals = self.bottleneck(b_in)
        source = f
        if self.cfg.pool_source == "position":
            source = internals["q"][1]
        pooled = phase_pool(source, p, H_map, self.stat_mlp, self.cfg.pool_source)
        logits = self.head(pooled.vector)
        if return_internals:
            internals = dict(internals)
            internals["H_map"] = H_map
            internals["phase_vector"] = pooled
            return logits, internals
        return logits


def build_model(cfg: ToyConfig) -> nn.Module:
    """Deterministically build the model for a config (seeds parameter init)."""
    cfg.validate()
    torch.manual_seed(cfg.seed)
    if cfg.task == "segmentation":
        return HamSeg(cfg)
    return HamCls(cfg)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
