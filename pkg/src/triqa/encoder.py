"""Quality encoder presets, checkpoints, embedding, and synchronized cropping.

Two presets share one contract (pooled backbone features plus a linear
projection to the 128-d loss space):

* desk-scale: a small convolutional network (~0.4M parameters, 128 feature
  channels) that trains from random init on one CPU core in minutes. All
  tests and the acceptance run use it; no downloads, no accelerators.
* paper-scale: ConvNeXt-Tiny (768 feature channels) via torchvision, for
  runs that match the published configuration. Pretrained weights are loaded
  from a local file when given; nothing is fetched from the network.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import DataError, NumericalError, UsageError
from .images import ensure_image
from .seeds import derive, make_rng

PRESETS = ("desk-scale", "paper-scale")

CHECKPOINT_FORMAT = "triqa-checkpoint"
CHECKPOINT_VERSION = 1

# Suggested training crop per preset; 256 is the paper protocol, the desk
# preset halves the pixel budget to stay inside a single-core time budget.
PRESET_TRAIN_CROP = {"desk-scale": 160, "paper-scale": 256}


@dataclass
class EncoderConfig:
    preset: str = "desk-scale"
    embed_dim: int = 128
    margin: float = 1.5
    learning_rate: float = 5e-4
    adam_eps: float = 1e-8
    adam_betas: tuple[float, float] = (0.9, 0.999)
    schedule: str = "cosine"  # "cosine" | "constant"
    crop: int = 256
    epochs: int = 1
    batch_size: int = 64
    seed: int = 0
    content_weights: str | None = None  # local file for the paper-scale content branch

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.margin <= 0:
            raise UsageError(f"margin must be positive, got {self.margin}")
        if self.embed_dim < 1:
            raise UsageError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.crop < 32:
            raise UsageError(f"crop must be >= 32, got {self.crop}")
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise UsageError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.schedule not in ("cosine", "constant"):
            raise UsageError(f"schedule must be 'cosine' or 'constant', got {self.schedule!r}")


class _EncoderBase(nn.Module):
    """Pooled backbone features plus a projection head to the loss space."""

    feature_dim: int
    embed_dim: int
    min_input_side: int

    def __init__(self, mean, std):
        super().__init__()
        self.register_buffer("input_mean", torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1))

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.input_mean) / self.input_std

    def features(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.features(x))


class DeskEncoder(_EncoderBase):
    """Small stride-8-stem CNN; GroupNorm keeps it batch-size independent."""

    def __init__(self, embed_dim: int = 128):
        super().__init__(mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25))
        self.feature_dim = 128
        self.embed_dim = embed_dim
        self.min_input_side = 32

        def block(cin, cout, stride):
            return [
                nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
                nn.GroupNorm(8, cout),
                nn.ReLU(inplace=True),
            ]

        self.body = nn.Sequential(
            nn.Conv2d(3, 32, kernel_size=8, stride=8),
            nn.GroupNorm(8, 32),
            nn.ReLU(inplace=True),
            *block(32, 64, 2),
            *block(64, 128, 2),
            *block(128, 128, 1),
            *block(128, 128, 1),
        )
        self.proj = nn.Linear(self.feature_dim, embed_dim)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        fmap = self.body(self.normalize(x))
        return fmap.mean(dim=(2, 3))


class PaperEncoder(_EncoderBase):
    """ConvNeXt-Tiny backbone (768 channels) behind the same contract."""

    def __init__(self, embed_dim: int = 128, weights_path: str | os.PathLike | None = None):
        super().__init__(mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225))
        try:
            from torchvision.models import convnext_tiny
        except ImportError as exc:
            raise UsageError(
                "the paper-scale preset needs torchvision (pip install 'triqa[paper]')"
            ) from exc
        backbone = convnext_tiny(weights=None)
        if weights_path is not None:
            weights_path = Path(weights_path)
            if not weights_path.is_file():
                raise DataError(f"backbone weights file not found: {weights_path}")
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            backbone.load_state_dict(state, strict=False)
        self.backbone = backbone.features
        self.feature_dim = 768
        self.embed_dim = embed_dim
        self.min_input_side = 32
        self.proj = nn.Linear(self.feature_dim, embed_dim)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        fmap = self.backbone(self.normalize(x))
        return fmap.mean(dim=(2, 3))


def build_encoder(
    preset: str,
    embed_dim: int = 128,
    *,
    init_seed: int = 0,
    weights_path: str | os.PathLike | None = None,
) -> _EncoderBase:
    """Construct an encoder with deterministic initialization."""
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    torch.manual_seed(init_seed & ((1 << 63) - 1))
    if preset == "desk-scale":
        if weights_path is not None:
            raise UsageError("weights_path applies to the paper-scale preset only")
        model = DeskEncoder(embed_dim)
    else:
        model = PaperEncoder(embed_dim, weights_path=weights_path)
    model.eval()
    return model


@dataclass
class Checkpoint:
    """Encoder parameters plus everything needed to rebuild and trust them."""

    config: EncoderConfig
    state_dict: dict
    step: int = 0
    manifest_fingerprint: str = ""
    history: dict = field(default_factory=dict)
    source_path: Path | None = None

    def quality_model(self) -> _EncoderBase:
        cached = getattr(self, "_quality_model", None)
        if cached is None:
            cached = build_encoder(
                self.config.preset, self.config.embed_dim, init_seed=derive(self.config.seed, "quality-init")
            )
            cached.load_state_dict(self.state_dict)
            cached.eval()
            for p in cached.parameters():
                p.requires_grad_(False)
            object.__setattr__(self, "_quality_model", cached)
        return cached

    def content_model(self) -> _EncoderBase:
        """The frozen content branch paired with this checkpoint.

        Desk scale: a seeded random frozen twin of the backbone. Paper scale:
        ConvNeXt-Tiny with classification weights from config.content_weights.
        """
        cached = getattr(self, "_content_model", None)
        if cached is None:
            cached = build_encoder(
                self.config.preset,
                self.config.embed_dim,
                init_seed=derive(self.config.seed, "content-init"),
                weights_path=self.config.content_weights if self.config.preset == "paper-scale" else None,
            )
            cached.eval()
            for p in cached.parameters():
                p.requires_grad_(False)
            object.__setattr__(self, "_content_model", cached)
        return cached


def new_checkpoint(config: EncoderConfig) -> Checkpoint:
    """Untrained checkpoint: the encoder at its deterministic initialization."""
    model = build_encoder(config.preset, config.embed_dim, init_seed=derive(config.seed, "quality-init"))
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return Checkpoint(config=config, state_dict=state)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(ckpt.config),
        "state_dict": ckpt.state_dict,
        "step": ckpt.step,
        "manifest_fingerprint": ckpt.manifest_fingerprint,
        "history": ckpt.history,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"not a triqa checkpoint: {path}")
    cfg = dict(payload["config"])
    cfg["adam_betas"] = tuple(cfg.get("adam_betas", (0.9, 0.999)))
    return Checkpoint(
        config=EncoderConfig(**cfg),
        state_dict=payload["state_dict"],
        step=int(payload.get("step", 0)),
        manifest_fingerprint=payload.get("manifest_fingerprint", ""),
        history=payload.get("history", {}),
        source_path=path,
    )


def _to_tensor(img: np.ndarray) -> torch.Tensor:
    arr = np.ascontiguousarray(img)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).float() / 255.0


def embed(img: np.ndarray, ckpt: Checkpoint) -> np.ndarray:
    """128-d quality embedding of a full image. Deterministic per (image, ckpt)."""
    ensure_image(img)
    model = ckpt.quality_model()
    if min(img.shape[0], img.shape[1]) < model.min_input_side:
        raise DataError(
            f"image {img.shape[1]}x{img.shape[0]} below backbone minimum side {model.min_input_side}"
        )
    with torch.no_grad():
        vec = model(_to_tensor(img)).squeeze(0).numpy().astype(np.float32)
    if not np.isfinite(vec).all():
        raise NumericalError("non-finite embedding")
    return vec


def synchronized_crop(a_img: np.ndarray, p_img: np.ndarray, n_img: np.ndarray, crop: int, seed: int):
    """One uniform random window applied identically to all three members."""
    for name, img in (("anchor", a_img), ("positive", p_img), ("negative", n_img)):
        ensure_image(img, what=name)
    if not (a_img.shape == p_img.shape == n_img.shape):
        raise DataError(
            f"triplet members disagree in shape: {a_img.shape} / {p_img.shape} / {n_img.shape}"
        )
    h, w = a_img.shape[:2]
    if h < crop or w < crop:
        raise DataError(f"image {w}x{h} smaller than crop {crop}")
    rng = make_rng(seed)
    oy = int(rng.integers(0, h - crop + 1))
    ox = int(rng.integers(0, w - crop + 1))
    window = (slice(oy, oy + crop), slice(ox, ox + crop))
    return a_img[window].copy(), p_img[window].copy(), n_img[window].copy()
