"""Affordance segmentation network.

A frozen patch-transformer backbone carries the image tokens; depth tokens
from a small convolutional stem are injected ahead of each backbone block
through gated cross-attention, low-rank adapters ride on every attention
projection, and a cosine-similarity classifier with an implicit background
produces the per-label score maps.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import MissingDepth, ShapeMismatch

DFI_MODES = ("train_and_infer", "train_only", "off")
COSINE_EPS = 1e-8


@dataclass
class ModelConfig:
    input_size: int = 64
    patch_size: int = 8
    channels: int = 64
    encoder_depth: int = 8
    encoder_heads: int = 4
    num_blocks: int = 4
    dfi_enabled: str = "train_and_infer"
    dfi_heads: int = 1
    lora_rank: int = 4
    background_threshold: float = 0.8
    classifier_source: str = "learnable"
    num_labels: int = 2
    upsample_mode: str = "nearest"  # x4 feature upsample before the cosine head

    def __post_init__(self):
        if self.input_size % self.patch_size != 0:
            raise ShapeMismatch(
                f"input size {self.input_size} not divisible by patch size {self.patch_size}"
            )
        if self.encoder_depth % self.num_blocks != 0:
            raise ValueError("num_blocks must divide encoder depth")
        if self.channels % self.encoder_heads != 0:
            raise ValueError("encoder_heads must divide channels")
        if self.dfi_enabled not in DFI_MODES:
            raise ValueError(f"dfi_enabled must be one of {DFI_MODES}")
        if self.classifier_source not in ("learnable", "external"):
            raise ValueError("classifier_source must be 'learnable' or 'external'")
        if self.upsample_mode not in ("nearest", "bilinear"):
            raise ValueError("upsample_mode must be 'nearest' or 'bilinear'")

    @property
    def grid(self) -> int:
        return self.input_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid


class LoRALinear(nn.Module):
    """Frozen linear layer with a trainable low-rank update (B zero-initialized)."""

    def __init__(self, in_features: int, out_features: int, rank: int):
        super().__init__()
        self.base = nn.Linear(in_features, out_features)
        self.base.weight.requires_grad_(False)
        self.base.bias.requires_grad_(False)
        self.rank = rank
        if rank > 0:
            max_rank = min(in_features, out_features) // 4
            if rank > max_rank:
                raise ValueError(
                    f"rank {rank} too large for {out_features}x{in_features} (max {max_rank})"
                )
            self.lora_a = nn.Parameter(torch.randn(rank, in_features) * 0.02)
            self.lora_b = nn.Parameter(torch.zeros(out_features, rank))

    def forward(self, x):
        if x.shape[-1] != self.base.in_features:
            raise ShapeMismatch(
                f"expected last dim {self.base.in_features}, got {x.shape[-1]}"
            )
        y = F.linear(x, self.base.weight, self.base.bias)
        if self.rank > 0:
            y = y + F.linear(F.linear(x, self.lora_a), self.lora_b)
        return y

    def delta_weight(self):
        if self.rank == 0:
            return torch.zeros_like(self.base.weight)
        return self.lora_b @ self.lora_a


def lora_linear(x, w0, a, b):
    """Functional form: w0 @ x + b @ a @ x, for an x vector or batch of rows."""
    x = torch.as_tensor(x)
    if x.shape[-1] != w0.shape[1] or a.shape[1] != w0.shape[1] or b.shape[0] != w0.shape[0]:
        raise ShapeMismatch("inconsistent lora_linear shapes")
    return x @ w0.T + (x @ a.T) @ b.T


class DepthFeatureInjector(nn.Module):
    """Cross-attention from image tokens (queries) into depth tokens, gated by
    a zero-initialized per-channel vector so it is exactly inert at init."""

    def __init__(self, channels: int, heads: int = 1):
        super().__init__()
        if channels % heads != 0:
            raise ValueError("heads must divide channels")
        self.heads = heads
        self.query_proj = nn.Linear(channels, channels)
        self.key_proj = nn.Linear(channels, channels)
        self.value_proj = nn.Linear(channels, channels)
        self.beta = nn.Parameter(torch.zeros(channels))

    def forward(self, f_img, f_depth):
        if f_img.shape != f_depth.shape:
            raise ShapeMismatch(f"image tokens {tuple(f_img.shape)} vs depth tokens {tuple(f_depth.shape)}")
        b, n, c = f_img.shape
        d_k = c // self.heads
        q = self.query_proj(f_img).reshape(b, n, self.heads, d_k).transpose(1, 2)
        k = self.key_proj(f_depth).reshape(b, n, self.heads, d_k).transpose(1, 2)
        v = self.value_proj(f_depth).reshape(b, n, self.heads, d_k).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d_k), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.beta * out + f_img


class DepthStem(nn.Module):
    """3x3 conv stack on the depth map, then 1x1 projection to token channels."""

    def __init__(self, channels: int):
        super().__init__()
        mid = max(channels // 2, 8)
        # replicate padding keeps constant inputs constant across the map
        self.conv1 = nn.Conv2d(1, mid, 3, stride=2, padding=1, padding_mode="replicate")
        self.conv2 = nn.Conv2d(mid, mid, 3, stride=2, padding=1, padding_mode="replicate")
        self.proj = nn.Conv2d(mid, channels, 1)

    def forward(self, depth, grid: int):
        x = F.relu(self.conv1(depth))
        x = F.relu(self.conv2(x))
        x = self.proj(x)
        x = F.adaptive_avg_pool2d(x, (grid, grid))
        return x.flatten(2).transpose(1, 2)  # (B, N, C)


class EncoderLayer(nn.Module):
    """Pre-LN transformer layer; only the LoRA updates on q/k/v are trainable."""

    def __init__(self, channels: int, heads: int, lora_rank: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(channels)
        self.q = LoRALinear(channels, channels, lora_rank)
        self.k = LoRALinear(channels, channels, lora_rank)
        self.v = LoRALinear(channels, channels, lora_rank)
        self.out = nn.Linear(channels, channels)
        self.norm2 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Linear(channels, channels * 2), nn.GELU(), nn.Linear(channels * 2, channels)
        )
        for p in [self.out, self.norm1, self.norm2, self.mlp]:
            for param in p.parameters():
                param.requires_grad_(False)

    def forward(self, x):
        b, n, c = x.shape
        d = c // self.heads
        h = self.norm1(x)
        q = self.q(h).reshape(b, n, self.heads, d).transpose(1, 2)
        k = self.k(h).reshape(b, n, self.heads, d).transpose(1, 2)
        v = self.v(h).reshape(b, n, self.heads, d).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
        x = x + self.out((attn @ v).transpose(1, 2).reshape(b, n, c))
        return x + self.mlp(self.norm2(x))


class PatchEncoder(nn.Module):
    """Small frozen patch transformer standing in for a foundation encoder.

    A real frozen backbone can be swapped in by implementing the same
    (image tokens in, tokens out) block interface.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(3, cfg.channels, cfg.patch_size, stride=cfg.patch_size)
        # unit-scale positions: shared with the depth tokens, they give the
        # injector's attention a usable spatial key from the very first step
        self.pos_embed = nn.Parameter(torch.randn(1, cfg.num_patches, cfg.channels))
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.channels, cfg.encoder_heads, cfg.lora_rank)
            for _ in range(cfg.encoder_depth)
        )
        self.patch_embed.weight.requires_grad_(False)
        self.patch_embed.bias.requires_grad_(False)
        self.pos_embed.requires_grad_(False)

    def embed(self, image):
        x = self.patch_embed(image)
        x = x.flatten(2).transpose(1, 2)
        return x + self.pos_embed

    def block_layers(self, block: int):
        per = self.cfg.encoder_depth // self.cfg.num_blocks
        return self.layers[block * per:(block + 1) * per]


@dataclass
class SegmentationOutput:
    scores: np.ndarray  # L x H x W cosine similarities in [-1, 1]
    labels: np.ndarray  # H x W label indices, BACKGROUND_LABEL where all below tau


BACKGROUND_LABEL = -1


class AffordanceModel(nn.Module):
    def __init__(self, cfg: ModelConfig, external_embeddings=None):
        super().__init__()
        self.cfg = cfg
        self.encoder = PatchEncoder(cfg)
        c = cfg.channels
        if cfg.dfi_enabled != "off":
            self.depth_stem = DepthStem(c)
            self.dfi = nn.ModuleList(
                DepthFeatureInjector(c, cfg.dfi_heads) for _ in range(cfg.num_blocks)
            )
            # identity-initialized query/key projections make the cross-attention
            # near-diagonal at init (positions dominate both token streams), so
            # the zero-initialized beta gate sees a useful signal immediately
            # instead of having to discover the spatial routing from scratch
            with torch.no_grad():
                for dfi in self.dfi:
                    dfi.query_proj.weight.copy_(torch.eye(c))
                    dfi.query_proj.bias.zero_()
                    dfi.key_proj.weight.copy_(torch.eye(c))
                    dfi.key_proj.bias.zero_()
        self.embedder = nn.Sequential(nn.Linear(c, c), nn.GELU(), nn.Linear(c, c))
        if cfg.classifier_source == "learnable":
            m = torch.randn(cfg.num_labels, c)
            self.class_embeddings = nn.Parameter(F.normalize(m, dim=1))
        else:
            if external_embeddings is None:
                raise ValueError("external classifier_source requires embeddings")
            m = torch.as_tensor(np.asarray(external_embeddings), dtype=torch.get_default_dtype())
            if m.shape != (cfg.num_labels, c):
                raise ShapeMismatch(f"expected embeddings {(cfg.num_labels, c)}, got {tuple(m.shape)}")
            if (m.norm(dim=1) < COSINE_EPS).any():
                raise ValueError("zero-norm classifier embedding row")
            self.register_buffer("class_embeddings", m)

    # ------------------------------------------------------------------
    def dfi_active(self) -> bool:
        mode = self.cfg.dfi_enabled
        return mode == "train_and_infer" or (mode == "train_only" and self.training)

    def _check_inputs(self, image, depth):
        s = self.cfg.input_size
        if image.shape[-2:] != (s, s):
            raise ShapeMismatch(f"expected {s}x{s} input, got {tuple(image.shape[-2:])}")
        if self.dfi_active() and depth is None:
            raise MissingDepth("depth map required while the injector is active")

    def encoder_forward(self, image, depth=None):
        """Image (B,3,H,W) -> patch tokens (B,N,C); depth injected per block."""
        self._check_inputs(image, depth)
        x = self.encoder.embed(image)
        use_dfi = self.dfi_active()
        if use_dfi:
            # depth tokens borrow the backbone's positional embedding so the
            # injector can attend position-to-position
            f_depth = self.depth_stem(depth, self.cfg.grid) + self.encoder.pos_embed
        for b in range(self.cfg.num_blocks):
            if use_dfi:
                x = self.dfi[b](x, f_depth)
            for layer in self.encoder.block_layers(b):
                x = layer(x)
        return x

    def score_maps(self, image, depth=None):
        """Cosine score maps at full input resolution: (B, L, H, W) in [-1, 1]."""
        tokens = self.encoder_forward(image, depth)
        feats = self.embedder(tokens)  # (B, N, C)
        b, n, c = feats.shape
        g = self.cfg.grid
        feats = feats.transpose(1, 2).reshape(b, c, g, g)
        if self.cfg.upsample_mode == "nearest":
            feats = F.interpolate(feats, scale_factor=4, mode="nearest")
        else:
            feats = F.interpolate(feats, scale_factor=4, mode="bilinear", align_corners=False)
        feats = F.normalize(feats, dim=1, eps=COSINE_EPS)
        m = F.normalize(self.class_embeddings, dim=1, eps=COSINE_EPS)
        scores = torch.einsum("lc,bchw->blhw", m, feats)
        return F.interpolate(scores, size=(self.cfg.input_size,) * 2, mode="bilinear", align_corners=False)

    def segment(self, image, depth=None, tau=None) -> SegmentationOutput:
        """Label map with implicit background below the cosine threshold."""
        if tau is None:
            tau = self.cfg.background_threshold
        with torch.no_grad():
            scores = self.score_maps(image, depth)
        return segmentation_from_scores(scores[0], tau)


def segmentation_from_scores(scores, tau) -> SegmentationOutput:
    scores = scores.detach().cpu()
    best, labels = scores.max(dim=0)
    labels = labels.numpy().astype(np.int64)
    labels[best.numpy() < tau] = BACKGROUND_LABEL
    return SegmentationOutput(scores=scores.numpy(), labels=labels)


def trainable_parameters(model: AffordanceModel):
    return [p for p in model.parameters() if p.requires_grad]


def backbone_state(model: AffordanceModel):
    """Frozen-backbone arrays, for the bit-identity audit after training."""
    out = {}
    for name, p in model.named_parameters():
        if not p.requires_grad:
            out[name] = p.detach().clone()
    return out


# ---------------------------------------------------------------------------
# checkpoint archive: named arrays + config record in one npz file


def save_checkpoint(model: AffordanceModel, vocabulary, path):
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = json.dumps({"config": asdict(model.cfg), "vocabulary": list(vocabulary)})
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())
    return path


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    cfg = ModelConfig(**meta["config"])
    needs_external = cfg.classifier_source == "external"
    model = AffordanceModel(
        cfg,
        external_embeddings=arrays["class_embeddings"] if needs_external else None,
    )
    state = {k: torch.as_tensor(v) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, meta["vocabulary"]


def load_external_embeddings(path):
    """Embedding archive: one 'embeddings' array (L x C) + 'vocabulary' rows."""
    with np.load(path, allow_pickle=False) as data:
        emb = data["embeddings"]
        vocab = [str(v) for v in data["vocabulary"]]
    return emb, vocab
