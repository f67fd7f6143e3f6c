"""The prediction network and its losses.

Each channel's feature stream is projected to the model width, passed
through a per-channel causal self-attention layer, then through a stack of
causal cross-attention layers in which channel A queries channel B while B
simultaneously queries A.  The two channel states are concatenated and
three linear heads read out the joint future-activity state distribution
(256-way), per-speaker voice activity (2-way, sigmoid), and optionally a
language posterior.

All attention is causal: the output at frame t sees frames <= t of both
channels, in training and in eval mode alike.  Positions enter through a
learned additive embedding.  Transformer blocks use pre-normalization with
a 4x feed-forward expansion.

Channel weights are untied by default (two parameter sets).  The tied
profile shares one trunk between channels and uses speaker-symmetric
heads, which makes the whole network equivariant under swapping the input
channels: vap logits permute under the speaker nibble-swap map and vad
columns exchange.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import DEFAULT_BINS, N_STATES, SWAP_PERM
from .errors import ConfigError, DimensionError
from .frames import VadStream

_INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The defaults are the full-scale profile: width 256, one self-attention
    layer and three cross-attention layers per channel, 4 heads, inputs of
    at most 1000 frames (20 s).  input_dim is the incoming feature width;
    a learned projection maps it to d_model, so toy profiles can shrink
    d_model while still accepting 256-wide encoder features.
    """

    d_model: int = 256
    self_layers: int = 1
    cross_layers: int = 3
    heads: int = 4
    dropout: float = 0.1
    max_frames: int = 1000
    lid_classes: int = 0
    state_classes: int = N_STATES
    input_dim: int = 256
    tied_channels: bool = False
    ffn_mult: int = 4

    def __post_init__(self) -> None:
        if min(self.d_model, self.self_layers, self.cross_layers, self.heads) < 1:
            raise ConfigError("d_model, layer counts, and heads must be positive")
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_frames < 1 or self.input_dim < 1 or self.ffn_mult < 1:
            raise ConfigError("max_frames, input_dim, and ffn_mult must be positive")
        if self.lid_classes < 0:
            raise ConfigError("lid_classes must be 0 (off) or the class count")
        if self.state_classes != N_STATES:
            raise ConfigError(f"state_classes is fixed at {N_STATES} by the codec")

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "self_layers": self.self_layers,
            "cross_layers": self.cross_layers,
            "heads": self.heads,
            "dropout": self.dropout,
            "max_frames": self.max_frames,
            "lid_classes": self.lid_classes,
            "state_classes": self.state_classes,
            "input_dim": self.input_dim,
            "tied_channels": self.tied_channels,
            "ffn_mult": self.ffn_mult,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass
class NetworkOutput:
    """Per-frame head outputs; leading dims match the input batch shape."""

    vap_logits: torch.Tensor
    vad_logits: torch.Tensor
    lid_logits: torch.Tensor | None = None

    @property
    def vad_probs(self) -> torch.Tensor:
        return torch.sigmoid(self.vad_logits)

    def vap_probs(self) -> torch.Tensor:
        return torch.softmax(self.vap_logits, dim=-1)


@dataclass
class LossBreakdown:
    """Loss terms as 0-d tensors; total stays differentiable."""

    l_vap: torch.Tensor
    l_vad: torch.Tensor
    l_lid: torch.Tensor | None
    total: torch.Tensor

    def detached(self) -> dict[str, float]:
        out = {
            "l_vap": float(self.l_vap.detach()),
            "l_vad": float(self.l_vad.detach()),
            "total": float(self.total.detach()),
        }
        if self.l_lid is not None:
            out["l_lid"] = float(self.l_lid.detach())
        return out


class _Attention(nn.Module):
    """Multi-head attention, causal, with query and key/value inputs.

    Attention probabilities are never dropped: on CPU a nonzero dropout_p
    disables the fused causal kernel and materializes (T, T) score matrices
    for the backward pass, which is an order of magnitude slower at T=1000.
    Regularization comes from the residual dropout in the enclosing blocks.
    """

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.wq = nn.Linear(d_model, d_model)
        self.wk = nn.Linear(d_model, d_model)
        self.wv = nn.Linear(d_model, d_model)
        self.wo = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        hd = d // self.heads
        q = self.wq(x).view(b, t, self.heads, hd).transpose(1, 2)
        k = self.wk(y).view(b, t, self.heads, hd).transpose(1, 2)
        v = self.wv(y).view(b, t, self.heads, hd).transpose(1, 2)
        o = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        return self.wo(o.transpose(1, 2).reshape(b, t, d))


class _Ffn(nn.Module):
    def __init__(self, d_model: int, mult: int):
        super().__init__()
        self.up = nn.Linear(d_model, mult * d_model)
        self.down = nn.Linear(mult * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down(F.gelu(self.up(x)))


class _SelfBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = _Attention(cfg.d_model, cfg.heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ffn = _Ffn(cfg.d_model, cfg.ffn_mult)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.drop(self.attn(h, h))
        x = x + self.drop(self.ffn(self.ln2(x)))
        return x


class _CrossBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln_q = nn.LayerNorm(cfg.d_model)
        self.ln_kv = nn.LayerNorm(cfg.d_model)
        self.attn = _Attention(cfg.d_model, cfg.heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ffn = _Ffn(cfg.d_model, cfg.ffn_mult)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, other: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.ln_q(x), self.ln_kv(other)))
        x = x + self.drop(self.ffn(self.ln2(x)))
        return x


class _ChannelTrunk(nn.Module):
    """Input projection, positional embedding, and self-attention stack."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(cfg.input_dim, cfg.d_model)
        self.pos = nn.Embedding(cfg.max_frames, cfg.d_model)
        self.blocks = nn.ModuleList(_SelfBlock(cfg) for _ in range(cfg.self_layers))
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[1]
        pos = self.pos(torch.arange(t, device=x.device))
        x = self.drop(self.proj(x) + pos)
        for block in self.blocks:
            x = block(x)
        return x


class _SymmetricHeads(nn.Module):
    """Speaker-equivariant readout used in the tied-channel profile.

    vap: logit[i] = q[i].h_a + q[swap(i)].h_b with a symmetrized bias, so
    swapping (h_a, h_b) permutes the logits under the nibble-swap map.
    vad: (u.h_self + v.h_other + beta) per speaker.  lid reads h_a + h_b.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.q = nn.Parameter(torch.empty(cfg.state_classes, d))
        self.q_bias = nn.Parameter(torch.zeros(cfg.state_classes))
        self.vad_self = nn.Parameter(torch.empty(d))
        self.vad_other = nn.Parameter(torch.empty(d))
        self.vad_bias = nn.Parameter(torch.zeros(1))
        self.lid = nn.Linear(d, cfg.lid_classes) if cfg.lid_classes else None
        self.register_buffer("swap_perm", torch.from_numpy(SWAP_PERM.copy()))

    def forward(self, ha: torch.Tensor, hb: torch.Tensor) -> NetworkOutput:
        q_sw = self.q[self.swap_perm]
        bias = 0.5 * (self.q_bias + self.q_bias[self.swap_perm])
        vap = ha @ self.q.T + hb @ q_sw.T + bias
        vad_a = ha @ self.vad_self + hb @ self.vad_other + self.vad_bias
        vad_b = hb @ self.vad_self + ha @ self.vad_other + self.vad_bias
        vad = torch.stack([vad_a, vad_b], dim=-1)
        lid = self.lid(ha + hb) if self.lid is not None else None
        return NetworkOutput(vap_logits=vap, vad_logits=vad, lid_logits=lid)


class _PlainHeads(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d2 = 2 * cfg.d_model
        self.vap = nn.Linear(d2, cfg.state_classes)
        self.vad = nn.Linear(d2, 2)
        self.lid = nn.Linear(d2, cfg.lid_classes) if cfg.lid_classes else None

    def forward(self, ha: torch.Tensor, hb: torch.Tensor) -> NetworkOutput:
        h = torch.cat([ha, hb], dim=-1)
        lid = self.lid(h) if self.lid is not None else None
        return NetworkOutput(
            vap_logits=self.vap(h), vad_logits=self.vad(h), lid_logits=lid
        )


class VapNet(nn.Module):
    """Dual-channel causal transformer with multitask heads."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        if cfg.tied_channels:
            self.trunk_a = self.trunk_b = _ChannelTrunk(cfg)
            shared = nn.ModuleList(_CrossBlock(cfg) for _ in range(cfg.cross_layers))
            self.cross_a = self.cross_b = shared
            self.ln_f_a = self.ln_f_b = nn.LayerNorm(cfg.d_model)
            self.heads: nn.Module = _SymmetricHeads(cfg)
        else:
            self.trunk_a = _ChannelTrunk(cfg)
            self.trunk_b = _ChannelTrunk(cfg)
            self.cross_a = nn.ModuleList(
                _CrossBlock(cfg) for _ in range(cfg.cross_layers)
            )
            self.cross_b = nn.ModuleList(
                _CrossBlock(cfg) for _ in range(cfg.cross_layers)
            )
            self.ln_f_a = nn.LayerNorm(cfg.d_model)
            self.ln_f_b = nn.LayerNorm(cfg.d_model)
            self.heads = _PlainHeads(cfg)
        self._init_weights(seed)

    def _init_weights(self, seed: int) -> None:
        # Small gaussian init everywhere keeps untrained logits near zero,
        # so the initial vap loss sits at ln(state_classes).
        g = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if p.ndim >= 2 or name.endswith((".q", "pos.weight")):
                with torch.no_grad():
                    p.normal_(0.0, _INIT_STD, generator=g)
            elif "vad_self" in name or "vad_other" in name:
                with torch.no_grad():
                    p.normal_(0.0, _INIT_STD, generator=g)
            elif "ln" in name and name.endswith(".weight"):
                with torch.no_grad():
                    p.fill_(1.0)
            else:
                with torch.no_grad():
                    p.zero_()

    def forward(self, features: torch.Tensor | np.ndarray) -> NetworkOutput:
        """Map features (2, T, input_dim) or (B, 2, T, input_dim) to outputs.

        Output tensors carry the same leading batch shape: vap_logits is
        (..., T, state_classes), vad_logits (..., T, 2).
        """
        if isinstance(features, np.ndarray):
            features = torch.from_numpy(np.ascontiguousarray(features))
        param = next(self.parameters())
        features = features.to(dtype=param.dtype)
        squeeze = features.ndim == 3
        if squeeze:
            features = features.unsqueeze(0)
        if features.ndim != 4 or features.shape[1] != 2:
            raise DimensionError(
                f"features must be (B, 2, T, {self.cfg.input_dim}) or "
                f"(2, T, {self.cfg.input_dim}), got {tuple(features.shape)}"
            )
        b, _, t, dim = features.shape
        if dim != self.cfg.input_dim:
            raise DimensionError(
                f"feature dim {dim} != configured input_dim {self.cfg.input_dim}"
            )
        if t > self.cfg.max_frames:
            raise DimensionError(f"{t} frames exceed max_frames {self.cfg.max_frames}")
        if t < 1:
            raise DimensionError("need at least one frame")
        a = self.trunk_a(features[:, 0])
        bb = self.trunk_b(features[:, 1])
        for block_a, block_b in zip(self.cross_a, self.cross_b):
            a, bb = block_a(a, bb), block_b(bb, a)
        a = self.ln_f_a(a)
        bb = self.ln_f_b(bb)
        out = self.heads(a, bb)
        if squeeze:
            out = NetworkOutput(
                vap_logits=out.vap_logits.squeeze(0),
                vad_logits=out.vad_logits.squeeze(0),
                lid_logits=None if out.lid_logits is None
                else out.lid_logits.squeeze(0),
            )
        return out


def masked_losses(
    out: NetworkOutput,
    vap_labels: torch.Tensor,
    vad_truth: torch.Tensor,
    frame_mask: torch.Tensor | None = None,
    lang_tags: torch.Tensor | None = None,
) -> LossBreakdown:
    """Loss terms over a (possibly padded) batch.

    vap_labels: (B, T - window) int64 with -1 marking padded label slots.
    vad_truth: (B, T, 2) float targets.  frame_mask: (B, T) bool marking
    real frames (None means all real).  lang_tags: (B,) int64 per-dialogue
    language indices, required iff the network has a language head.

    Every term is a frame-weighted mean: sums over all valid frames in the
    batch divided by the valid-frame count, matching the single-dialogue
    definition when B == 1.
    """
    vap_logits = out.vap_logits
    if vap_logits.ndim != 3:
        raise DimensionError("masked_losses expects batched outputs (B, T, C)")
    b, t, _ = vap_logits.shape
    n_labels = vap_labels.shape[1]
    if vap_labels.shape[0] != b or n_labels > t:
        raise DimensionError(
            f"labels {tuple(vap_labels.shape)} incompatible with outputs (B={b}, T={t})"
        )
    if frame_mask is None:
        frame_mask = torch.ones(b, t, dtype=torch.bool, device=vap_logits.device)
    flat_logits = vap_logits[:, :n_labels].reshape(-1, vap_logits.shape[-1])
    flat_labels = vap_labels.reshape(-1)
    valid = flat_labels >= 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DimensionError("no labeled frames in batch")
    l_vap = F.cross_entropy(
        flat_logits[valid], flat_labels[valid], reduction="sum"
    ) / n_valid

    if vad_truth.shape != (b, t, 2):
        raise DimensionError(
            f"vad_truth must be (B, T, 2), got {tuple(vad_truth.shape)}"
        )
    n_frames = int(frame_mask.sum())
    l_vad = F.binary_cross_entropy_with_logits(
        out.vad_logits[frame_mask], vad_truth.to(out.vad_logits.dtype)[frame_mask],
        reduction="sum",
    ) / n_frames

    l_lid = None
    if out.lid_logits is not None and lang_tags is not None:
        tags = lang_tags.view(b, 1).expand(b, t)
        l_lid = F.cross_entropy(
            out.lid_logits[frame_mask], tags[frame_mask], reduction="sum"
        ) / n_frames
    elif lang_tags is not None:
        raise ConfigError("language tags given but the network has no language head")

    total = l_vap + l_vad
    if l_lid is not None:
        total = total + l_lid
    return LossBreakdown(l_vap=l_vap, l_vad=l_vad, l_lid=l_lid, total=total)


def compute_losses(
    out: NetworkOutput,
    labels: torch.Tensor | np.ndarray,
    vad_truth: VadStream | np.ndarray,
    lang_tag: int | None = None,
    window_frames: int = DEFAULT_BINS.window_frames,
) -> LossBreakdown:
    """Losses for one unbatched dialogue.

    labels must hold exactly n_frames - window_frames entries (the codec's
    labeled prefix).  vad_truth is the dialogue's activity stream or a
    (2, n_frames) boolean array.
    """
    if out.vap_logits.ndim != 2:
        raise DimensionError("compute_losses expects unbatched outputs (T, C)")
    t = out.vap_logits.shape[0]
    if isinstance(labels, np.ndarray):
        labels = torch.from_numpy(np.ascontiguousarray(labels))
    labels = labels.to(torch.int64)
    if labels.ndim != 1 or labels.shape[0] != t - window_frames:
        raise DimensionError(
            f"expected {t - window_frames} labels for {t} frames, got "
            f"{tuple(labels.shape)}"
        )
    act = vad_truth.activity if isinstance(vad_truth, VadStream) else np.asarray(vad_truth)
    if act.shape != (2, t):
        raise DimensionError(f"vad truth must be (2, {t}), got {act.shape}")
    truth = torch.from_numpy(np.ascontiguousarray(act.T, dtype=np.float32))
    batched = NetworkOutput(
        vap_logits=out.vap_logits.unsqueeze(0),
        vad_logits=out.vad_logits.unsqueeze(0),
        lid_logits=None if out.lid_logits is None else out.lid_logits.unsqueeze(0),
    )
    tags = None
    if lang_tag is not None:
        tags = torch.tensor([lang_tag], dtype=torch.int64)
    return masked_losses(
        batched, labels.unsqueeze(0), truth.unsqueeze(0), None, tags
    )


def gradient_check(
    cfg: ModelConfig | None = None,
    n_frames: int = 8,
    seed: int = 0,
    coords_per_tensor: int = 3,
    h: float = 1e-5,
) -> float:
    """Compare analytic gradients with central finite differences.

    Runs the full loss (all heads) on a toy profile in double precision
    and returns the max relative error over sampled parameter coordinates.
    Rejects non-toy sizes and nonzero dropout, both of which would make
    the check meaningless or painfully slow.
    """
    if cfg is None:
        cfg = ModelConfig(
            d_model=16, heads=2, dropout=0.0, max_frames=16, lid_classes=3,
            input_dim=16,
        )
    if cfg.d_model > 16 or n_frames > 8:
        raise ConfigError("gradient check requires d_model <= 16 and n_frames <= 8")
    if cfg.dropout != 0.0:
        raise ConfigError("gradient check requires dropout == 0")
    window = n_frames // 2
    model = VapNet(cfg, seed=seed).double()
    model.eval()
    g = torch.Generator().manual_seed(seed + 1)
    feats = torch.randn(1, 2, n_frames, cfg.input_dim, generator=g, dtype=torch.float64)
    labels = torch.randint(0, cfg.state_classes, (1, n_frames - window), generator=g)
    truth = torch.randint(0, 2, (1, n_frames, 2), generator=g).double()
    tags = None
    if cfg.lid_classes:
        tags = torch.randint(0, cfg.lid_classes, (1,), generator=g)

    def loss_value() -> torch.Tensor:
        out = model(feats)
        return masked_losses(out, labels, truth, None, tags).total

    model.zero_grad()
    loss_value().backward()
    if any(
        p.grad is not None and not torch.isfinite(p.grad).all()
        for p in model.parameters()
    ):
        raise ConfigError("non-finite analytic gradient")

    max_rel = 0.0
    pick = torch.Generator().manual_seed(seed + 2)
    with torch.no_grad():
        for p in model.parameters():
            if p.grad is None:
                continue
            flat = p.view(-1)
            n = flat.numel()
            idx = torch.randperm(n, generator=pick)[: min(coords_per_tensor, n)]
            for i in idx.tolist():
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_value().item()
                flat[i] = orig - h
                down = loss_value().item()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                analytic = p.grad.view(-1)[i].item()
                denom = max(abs(analytic), abs(numeric), 1e-4)
                max_rel = max(max_rel, abs(analytic - numeric) / denom)
    return max_rel
