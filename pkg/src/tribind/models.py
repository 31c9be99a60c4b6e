"""Modality encoders and the joint embedding space.

Three encoders (residual conv net over log-mels, transformer over compound
note tokens, transformer over text ids) each end in a modality-specific
linear projection into one 512-dimensional space, followed by l2
normalization. Two presets exist: `paper` mirrors the published scale
(ResNet-style audio stack, 12x768 transformers), `desk` is a ~3M-parameter
configuration sized for CPU test runs; both share the exact same code path.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .audio import MelSpectrogram, N_MELS
from .losses import Temperature
from .midi import SEQ_LEN, TokenSequence
from .text import MAX_TEXT_TOKENS, PAD_ID, TextTokenIds

JOINT_DIM = 512
FIELD_VOCAB_SIZES = (4, 17, 129, 65)  # bar, position, pitch, duration (incl. pad)


class ShapeError(ValueError):
    pass


class AllPadWarning(Warning):
    pass


class Modality(Enum):
    AUDIO = "audio"
    SYMBOLIC = "symbolic"
    TEXT = "text"
    FUSED = "fused"


@dataclass
class JointEmbedding:
    vector: np.ndarray  # [JOINT_DIM], unit norm
    modality: Modality

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.vector.shape != (JOINT_DIM,):
            raise ShapeError(f"embedding must be [{JOINT_DIM}], got {self.vector.shape}")
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-5:
            raise ValueError(f"embedding norm {norm} not unit within 1e-5")


@dataclass
class AudioEncoderConfig:
    stem_channels: int = 32
    block_widths: tuple[int, ...] = (32, 64, 128, 256)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1)
    blur_pool: bool = True
    input_pool: tuple[int, int] = (2, 8)


@dataclass
class SequenceEncoderConfig:
    layers: int = 2
    hidden_dim: int = 32
    heads: int = 2
    ff_mult: int = 2
    dropout: float = 0.0


@dataclass
class EncoderConfig:
    audio: AudioEncoderConfig = field(default_factory=AudioEncoderConfig)
    symbolic: SequenceEncoderConfig = field(default_factory=SequenceEncoderConfig)
    text: SequenceEncoderConfig = field(default_factory=SequenceEncoderConfig)
    text_vocab_size: int = 2000
    field_vocab_sizes: tuple[int, ...] = FIELD_VOCAB_SIZES
    joint_dim: int = JOINT_DIM

    def __post_init__(self):
        mins = FIELD_VOCAB_SIZES
        if len(self.field_vocab_sizes) != 4 or any(
            v < m for v, m in zip(self.field_vocab_sizes, mins)
        ):
            raise ValueError(f"field vocab sizes must cover {mins}")


def desk_config(text_vocab_size: int = 2000) -> EncoderConfig:
    return EncoderConfig(
        audio=AudioEncoderConfig(),
        symbolic=SequenceEncoderConfig(layers=2, hidden_dim=32, heads=2, ff_mult=2),
        text=SequenceEncoderConfig(layers=2, hidden_dim=64, heads=4, ff_mult=4),
        text_vocab_size=text_vocab_size,
    )


def paper_config(text_vocab_size: int = 50000) -> EncoderConfig:
    return EncoderConfig(
        audio=AudioEncoderConfig(
            stem_channels=64,
            block_widths=(64, 128, 256, 512),
            blocks_per_stage=(3, 4, 6, 3),
            blur_pool=True,
            input_pool=(1, 1),
        ),
        symbolic=SequenceEncoderConfig(layers=12, hidden_dim=768, heads=12,
                                       ff_mult=4, dropout=0.1),
        text=SequenceEncoderConfig(layers=12, hidden_dim=768, heads=12,
                                   ff_mult=4, dropout=0.1),
        text_vocab_size=text_vocab_size,
    )


PRESETS = {"desk": desk_config, "paper": paper_config}


def config_digest(config: EncoderConfig) -> str:
    canonical = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _safe_normalize(x: torch.Tensor) -> torch.Tensor:
    """l2-normalize rows; a (pathological) zero row maps to the first basis
    vector. Non-finite rows pass through so failures stay visible."""
    norm = x.norm(dim=-1, keepdim=True)
    degenerate = (norm <= 1e-8) & torch.isfinite(norm)
    fallback = torch.zeros_like(x)
    fallback[..., 0] = 1.0
    return torch.where(degenerate, fallback, x / norm.clamp(min=1e-12))


class BlurPool2d(nn.Module):
    """Anti-aliased stride-2 downsampling with a fixed binomial kernel."""

    def __init__(self, channels: int):
        super().__init__()
        k = torch.tensor([1.0, 2.0, 1.0])
        k = (k[:, None] * k[None, :]) / 16.0
        self.register_buffer("kernel", k.expand(channels, 1, 3, 3).contiguous())
        self.channels = channels

    def forward(self, x):
        return F.conv2d(x, self.kernel, stride=2, padding=1, groups=self.channels)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, blur_pool: bool):
        super().__init__()
        conv1_stride = 1 if (stride == 2 and blur_pool) else stride
        self.conv1 = nn.Conv2d(cin, cout, 3, conv1_stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.blur = BlurPool2d(cout) if (stride == 2 and blur_pool) else nn.Identity()
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        shortcut: list[nn.Module] = []
        if stride == 2:
            shortcut.append(nn.AvgPool2d(2, ceil_mode=True))
        if stride == 2 or cin != cout:
            shortcut += [nn.Conv2d(cin, cout, 1, bias=False), nn.BatchNorm2d(cout)]
        self.shortcut = nn.Sequential(*shortcut) if shortcut else nn.Identity()

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.blur(h)
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.shortcut(x))


class AudioEncoder(nn.Module):
    """Residual conv net over log-mel spectrograms, projected to the joint space."""

    def __init__(self, config: AudioEncoderConfig, joint_dim: int = JOINT_DIM):
        super().__init__()
        stem = config.stem_channels
        self.input_pool = (
            nn.AvgPool2d(config.input_pool)
            if config.input_pool != (1, 1)
            else nn.Identity()
        )
        self.stem = nn.Sequential(
            nn.Conv2d(1, stem // 2, 3, 2, 1, bias=False),
            nn.BatchNorm2d(stem // 2),
            nn.ReLU(inplace=True),
            nn.Conv2d(stem // 2, stem // 2, 3, 1, 1, bias=False),
            nn.BatchNorm2d(stem // 2),
            nn.ReLU(inplace=True),
            nn.Conv2d(stem // 2, stem, 3, 1, 1, bias=False),
            nn.BatchNorm2d(stem),
            nn.ReLU(inplace=True),
            nn.AvgPool2d(2, ceil_mode=True),
        )
        blocks: list[nn.Module] = []
        cin = stem
        for i, (width, depth) in enumerate(
            zip(config.block_widths, config.blocks_per_stage)
        ):
            for j in range(depth):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(ResidualBlock(cin, width, stride, config.blur_pool))
                cin = width
        self.blocks = nn.Sequential(*blocks)
        self.projection = nn.Linear(config.block_widths[-1], joint_dim)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.dim() == 3:
            mel = mel.unsqueeze(1)
        if mel.dim() != 4 or mel.shape[2] != N_MELS:
            raise ShapeError(f"expected [B, 1, {N_MELS}, frames], got {tuple(mel.shape)}")
        h = self.stem(self.input_pool(mel))
        h = self.blocks(h)
        h = h.mean(dim=(2, 3))
        return _safe_normalize(self.projection(h))


class _TransformerPool(nn.Module):
    """Shared transformer trunk with masked mean pooling and projection."""

    def __init__(self, config: SequenceEncoderConfig, max_len: int, joint_dim: int):
        super().__init__()
        d = config.hidden_dim
        self.positions = nn.Embedding(max_len, d)
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=config.heads,
            dim_feedforward=d * config.ff_mult,
            dropout=config.dropout,
            batch_first=True,
        )
        self.transformer = nn.TransformerEncoder(
            layer, config.layers, enable_nested_tensor=False
        )
        self.projection = nn.Linear(d, joint_dim)
        self.max_len = max_len

    def forward(self, token_vecs: torch.Tensor, pad_mask: torch.Tensor,
                return_hidden: bool = False):
        B, T, _ = token_vecs.shape
        if T > self.max_len:
            raise ShapeError(f"sequence length {T} exceeds {self.max_len}")
        h = token_vecs + self.positions(torch.arange(T, device=token_vecs.device))

        all_pad = pad_mask.all(dim=1)
        attn_mask = pad_mask
        if all_pad.any():
            warnings.warn("all-PAD sequence in batch; pooling a zero state",
                          AllPadWarning)
            attn_mask = pad_mask.clone()
            attn_mask[all_pad, 0] = False  # keep attention finite; pooling still skips
        h = self.transformer(h, src_key_padding_mask=attn_mask)

        keep = (~pad_mask).float().unsqueeze(-1)
        pooled = (h * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        z = _safe_normalize(self.projection(pooled))
        if return_hidden:
            return z, h
        return z


class SymbolicEncoder(nn.Module):
    """Transformer over compound note tokens; field embeddings are summed."""

    def __init__(self, config: SequenceEncoderConfig,
                 field_vocab_sizes: tuple[int, ...] = FIELD_VOCAB_SIZES,
                 joint_dim: int = JOINT_DIM):
        super().__init__()
        self.fields = nn.ModuleList(
            [nn.Embedding(v, config.hidden_dim) for v in field_vocab_sizes]
        )
        self.trunk = _TransformerPool(config, SEQ_LEN, joint_dim)

    def forward(self, field_ids: torch.Tensor, pad_mask: torch.Tensor,
                return_hidden: bool = False):
        if field_ids.dim() != 3 or field_ids.shape[1] != SEQ_LEN or field_ids.shape[2] != 4:
            raise ShapeError(f"expected [B, {SEQ_LEN}, 4], got {tuple(field_ids.shape)}")
        vecs = sum(emb(field_ids[:, :, i]) for i, emb in enumerate(self.fields))
        return self.trunk(vecs, pad_mask, return_hidden)


class TextEncoder(nn.Module):
    """Transformer over subword ids with learned positions."""

    def __init__(self, config: SequenceEncoderConfig, vocab_size: int,
                 joint_dim: int = JOINT_DIM):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, config.hidden_dim)
        self.trunk = _TransformerPool(config, MAX_TEXT_TOKENS, joint_dim)

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor,
                return_hidden: bool = False):
        if ids.shape[1] > MAX_TEXT_TOKENS:
            raise ShapeError(f"text length {ids.shape[1]} exceeds {MAX_TEXT_TOKENS}")
        return self.trunk(self.embedding(ids), pad_mask, return_hidden)


class TriBindModel(nn.Module):
    """The three encoders plus the shared learnable temperature."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.audio = AudioEncoder(config.audio, config.joint_dim)
        self.symbolic = SymbolicEncoder(config.symbolic, config.field_vocab_sizes,
                                        config.joint_dim)
        self.text = TextEncoder(config.text, config.text_vocab_size, config.joint_dim)
        self.temperature = Temperature()

    # batch tensor paths (training)

    def forward_audio(self, mels: torch.Tensor) -> torch.Tensor:
        return self.audio(mels)

    def forward_symbolic(self, field_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        return self.symbolic(field_ids, pad_mask)

    def forward_text(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        return self.text(ids, pad_mask)

    # single-item inference paths

    @torch.no_grad()
    def encode_audio(self, mel: MelSpectrogram | np.ndarray) -> JointEmbedding:
        values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
        was_training = self.training
        self.eval()
        z = self.audio(torch.from_numpy(values.astype(np.float32))[None, None])
        self.train(was_training)
        return JointEmbedding(vector=z[0].numpy(), modality=Modality.AUDIO)

    @torch.no_grad()
    def encode_symbolic(self, sequence: TokenSequence) -> JointEmbedding:
        ids = torch.from_numpy(sequence.field_ids())[None]
        mask = torch.tensor(sequence.pad_mask)[None]
        was_training = self.training
        self.eval()
        z = self.symbolic(ids, mask)
        self.train(was_training)
        return JointEmbedding(vector=z[0].numpy(), modality=Modality.SYMBOLIC)

    @torch.no_grad()
    def encode_text(self, token_ids: TextTokenIds) -> JointEmbedding:
        ids = torch.tensor(token_ids.ids)[None]
        mask = ids == PAD_ID
        was_training = self.training
        self.eval()
        z = self.text(ids, mask)
        self.train(was_training)
        return JointEmbedding(vector=z[0].numpy(), modality=Modality.TEXT)

    @property
    def digest(self) -> str:
        return config_digest(self.config)


# --- checkpoint I/O ---------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


class ConfigDigestError(Exception):
    pass


def parameter_digest(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name in sorted(model.state_dict()):
        tensor = model.state_dict()[name]
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(model: TriBindModel, path: str | Path,
                    meta: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config_digest": model.digest,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "meta": meta or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def _config_from_dict(d: dict) -> EncoderConfig:
    return EncoderConfig(
        audio=AudioEncoderConfig(
            stem_channels=d["audio"]["stem_channels"],
            block_widths=tuple(d["audio"]["block_widths"]),
            blocks_per_stage=tuple(d["audio"]["blocks_per_stage"]),
            blur_pool=d["audio"]["blur_pool"],
            input_pool=tuple(d["audio"]["input_pool"]),
        ),
        symbolic=SequenceEncoderConfig(**d["symbolic"]),
        text=SequenceEncoderConfig(**d["text"]),
        text_vocab_size=d["text_vocab_size"],
        field_vocab_sizes=tuple(d["field_vocab_sizes"]),
        joint_dim=d["joint_dim"],
    )


def load_encoder_weights(model: TriBindModel, modality: Modality,
                         path: str | Path) -> None:
    """Load externally provided weights into one encoder.

    The file must hold a state dict matching that encoder's parameter names
    (e.g. exported from a separately pretrained model of the same config).
    """
    encoders = {
        Modality.AUDIO: model.audio,
        Modality.SYMBOLIC: model.symbolic,
        Modality.TEXT: model.text,
    }
    if modality not in encoders:
        raise ValueError(f"no encoder for modality {modality}")
    state = torch.load(path, map_location="cpu", weights_only=True)
    encoders[modality].load_state_dict(state)


def load_checkpoint(path: str | Path,
                    expected_config: EncoderConfig | None = None
                    ) -> tuple[TriBindModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigDigestError(
            f"unsupported checkpoint format {payload.get('format_version')}"
        )
    config = _config_from_dict(payload["config"])
    digest = config_digest(config)
    if digest != payload["config_digest"]:
        raise ConfigDigestError(
            f"checkpoint digest {payload['config_digest']} does not match "
            f"its own config ({digest})"
        )
    if expected_config is not None and config_digest(expected_config) != digest:
        raise ConfigDigestError(
            f"checkpoint built for config {digest}, expected "
            f"{config_digest(expected_config)}"
        )
    model = TriBindModel(config)
    model.load_state_dict(payload["state_dict"])
    return model, payload["meta"]
