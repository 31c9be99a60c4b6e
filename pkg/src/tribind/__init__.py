"""tribind: trimodal (audio / MIDI / text) joint embeddings for piano music."""

__version__ = "0.1.0"

from .corpus import DatasetManifest, MixtureSpec, Source, Split, TrackRecord
from .models import EncoderConfig, JointEmbedding, Modality, TriBindModel
from .text import TextElement, TextKind, Vocab

__all__ = [
    "DatasetManifest",
    "EncoderConfig",
    "JointEmbedding",
    "MixtureSpec",
    "Modality",
    "Source",
    "Split",
    "TextElement",
    "TextKind",
    "TrackRecord",
    "TriBindModel",
    "Vocab",
    "__version__",
]
