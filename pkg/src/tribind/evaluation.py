"""Corpus embedding, fusion, ranking and retrieval metrics.

Track-level item embeddings average the embeddings of sliding 20 s segments
and renormalize; audio and symbolic stores can be fused by averaging
matching rows. Text-to-music retrieval ranks items by dot product (ties
broken by ascending id) and is summarized as Recall@{1,5,10} percentages and
the statistical median of the ground-truth ranks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import TrackRecord
from .features import FeaturePipeline, pad_text_batch
from .models import JOINT_DIM, Modality, TriBindModel

STORE_MAGIC = b"TBND"
STORE_VERSION = 1
RECALL_KS = (1, 5, 10)


class EmptyStore(ValueError):
    pass


class EmptyRanks(ValueError):
    pass


class IdMismatch(ValueError):
    pass


class FusionDegenerate(ValueError):
    def __init__(self, ids: list[str]):
        self.ids = ids
        super().__init__(f"antipodal embeddings fuse to zero for ids: {ids}")


class ConfigError(ValueError):
    pass


@dataclass
class EmbeddingStore:
    ids: list[str]
    matrix: np.ndarray  # [count, JOINT_DIM] float32, unit rows
    modality: Modality

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise ValueError("matrix rows must match id count")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("store ids must be unique")
        if self.matrix.shape[0]:
            norms = np.linalg.norm(self.matrix, axis=1)
            if np.abs(norms - 1.0).max() > 1e-5:
                raise ValueError("store rows must be unit norm within 1e-5")

    def __len__(self) -> int:
        return len(self.ids)

    def save(self, path: str | Path) -> None:
        mod = self.modality.value.encode()
        with open(path, "wb") as fh:
            fh.write(STORE_MAGIC)
            fh.write(struct.pack("<IBI", STORE_VERSION, len(mod), JOINT_DIM))
            fh.write(mod)
            fh.write(struct.pack("<I", len(self.ids)))
            fh.write(self.matrix.astype("<f4").tobytes())
            for track_id in self.ids:
                raw = track_id.encode()
                fh.write(struct.pack("<H", len(raw)) + raw)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        with open(path, "rb") as fh:
            if fh.read(4) != STORE_MAGIC:
                raise ValueError(f"not an embedding store: {path}")
            version, mod_len, dim = struct.unpack("<IBI", fh.read(9))
            if version != STORE_VERSION:
                raise ValueError(f"unsupported store version {version}")
            modality = Modality(fh.read(mod_len).decode())
            (count,) = struct.unpack("<I", fh.read(4))
            matrix = np.frombuffer(fh.read(4 * count * dim), dtype="<f4").reshape(
                count, dim
            )
            ids = []
            for _ in range(count):
                (n,) = struct.unpack("<H", fh.read(2))
                ids.append(fh.read(n).decode())
        return cls(ids=ids, matrix=matrix.copy(), modality=modality)


@dataclass
class MetricsReport:
    r_at: dict[int, float]  # K -> percentage
    medr: float
    n_queries: int
    item_modality: Modality
    dataset: str = ""
    strategy: str = ""
    extras: dict = field(default_factory=dict)


def _batched_embed(forward, inputs, batch_size: int = 64):
    outs = []
    for i in range(0, len(inputs[0]), batch_size):
        args = [x[i : i + batch_size] for x in inputs]
        outs.append(forward(*args))
    return torch.cat(outs) if outs else torch.zeros(0, JOINT_DIM)


@torch.no_grad()
def embed_corpus(
    model: TriBindModel,
    records: list[TrackRecord],
    modality: Modality,
    pipeline: FeaturePipeline,
) -> EmbeddingStore:
    """One unit vector per track: segment embeddings averaged, renormalized."""
    if modality not in (Modality.AUDIO, Modality.SYMBOLIC):
        raise ConfigError(f"embed_corpus expects AUDIO or SYMBOLIC, got {modality}")
    was_training = model.training
    model.eval()
    rows, ids = [], []
    for record in records:
        segs = pipeline.eval_segments(record)
        if modality == Modality.AUDIO:
            mels = torch.from_numpy(np.stack([s[0] for s in segs]))[:, None]
            z = model.forward_audio(mels)
        else:
            fids = torch.from_numpy(np.stack([s[1] for s in segs]))
            mask = torch.from_numpy(np.stack([s[2] for s in segs]))
            z = model.forward_symbolic(fids, mask)
        mean = z.mean(dim=0)
        mean = mean / mean.norm().clamp(min=1e-12)
        rows.append(mean.numpy())
        ids.append(record.id)
    model.train(was_training)
    matrix = np.stack(rows) if rows else np.zeros((0, JOINT_DIM), dtype=np.float32)
    return EmbeddingStore(ids=ids, matrix=matrix, modality=modality)


@torch.no_grad()
def embed_texts(
    model: TriBindModel, records: list[TrackRecord], pipeline: FeaturePipeline
) -> EmbeddingStore:
    """Evaluation text embedding per track (all elements, no dropout)."""
    was_training = model.training
    model.eval()
    token_ids = [pipeline.eval_text(r) for r in records]
    ids_t, mask = pad_text_batch(token_ids)
    z = _batched_embed(model.forward_text, (ids_t, mask))
    model.train(was_training)
    return EmbeddingStore(
        ids=[r.id for r in records], matrix=z.numpy(), modality=Modality.TEXT
    )


def fuse(audio_store: EmbeddingStore, symbolic_store: EmbeddingStore) -> EmbeddingStore:
    """Average matching audio and symbolic rows, renormalize to unit length."""
    if audio_store.ids != symbolic_store.ids:
        raise IdMismatch("stores must hold identical ids in identical order")
    mean = (audio_store.matrix + symbolic_store.matrix) / 2.0
    norms = np.linalg.norm(mean, axis=1)
    degenerate = [audio_store.ids[i] for i in np.nonzero(norms < 1e-7)[0]]
    if degenerate:
        raise FusionDegenerate(degenerate)
    return EmbeddingStore(
        ids=list(audio_store.ids),
        matrix=mean / norms[:, None],
        modality=Modality.FUSED,
    )


def rank(query, store: EmbeddingStore) -> list[str]:
    """Store ids by descending dot product with the query; ties by ascending id."""
    if len(store) == 0:
        raise EmptyStore("cannot rank against an empty store")
    vector = getattr(query, "vector", query)
    scores = store.matrix @ np.asarray(vector, dtype=np.float32)
    order = sorted(range(len(store)), key=lambda i: (-scores[i], store.ids[i]))
    return [store.ids[i] for i in order]


def rank_of(query, store: EmbeddingStore, true_id: str) -> int:
    """1-based rank of true_id under the same ordering as rank()."""
    vector = getattr(query, "vector", query)
    scores = store.matrix @ np.asarray(vector, dtype=np.float32)
    idx = store.ids.index(true_id)
    true_score = scores[idx]
    ahead = int((scores > true_score).sum())
    for i in np.nonzero(scores == true_score)[0]:
        if store.ids[i] < true_id:
            ahead += 1
    return ahead + 1


def compute_metrics(
    ranks: list[int],
    n_items: int,
    item_modality: Modality = Modality.FUSED,
    dataset: str = "",
    strategy: str = "",
) -> MetricsReport:
    """Recall@K percentages and the statistical median rank."""
    if not ranks:
        raise EmptyRanks("no ranks to aggregate")
    for r in ranks:
        if not 1 <= r <= n_items:
            raise ValueError(f"rank {r} outside [1, {n_items}]")
    n = len(ranks)
    r_at = {k: 100.0 * sum(r <= k for r in ranks) / n for k in RECALL_KS}
    return MetricsReport(
        r_at=r_at,
        medr=float(np.median(ranks)),
        n_queries=n,
        item_modality=item_modality,
        dataset=dataset,
        strategy=strategy,
    )


def build_item_store(
    model: TriBindModel,
    records: list[TrackRecord],
    item_modality: Modality,
    pipeline: FeaturePipeline,
) -> EmbeddingStore:
    if item_modality == Modality.FUSED:
        return fuse(
            embed_corpus(model, records, Modality.AUDIO, pipeline),
            embed_corpus(model, records, Modality.SYMBOLIC, pipeline),
        )
    return embed_corpus(model, records, item_modality, pipeline)


def evaluate(
    model_or_stores,
    test_records: list[TrackRecord],
    item_modality: Modality,
    pipeline: FeaturePipeline | None = None,
    dataset: str = "",
    strategy: str = "",
) -> MetricsReport:
    """Text-to-music retrieval over a test set; one query per track.

    `model_or_stores` is either a TriBindModel (items embedded on the fly) or
    a dict {Modality: EmbeddingStore} holding precomputed item stores; in the
    dict case a model is still needed under key "model" to encode queries.
    """
    if isinstance(model_or_stores, TriBindModel):
        if pipeline is None:
            raise ConfigError("evaluate needs a FeaturePipeline to embed tracks")
        model = model_or_stores
        item_store = build_item_store(model, test_records, item_modality, pipeline)
    else:
        stores = dict(model_or_stores)
        model = stores.pop("model", None)
        if model is None or pipeline is None:
            raise ConfigError("store-based evaluate needs 'model' and a pipeline")
        if item_modality == Modality.FUSED:
            if Modality.AUDIO not in stores or Modality.SYMBOLIC not in stores:
                raise ConfigError("FUSED evaluation needs audio and symbolic stores")
            item_store = fuse(stores[Modality.AUDIO], stores[Modality.SYMBOLIC])
        else:
            if item_modality not in stores:
                raise ConfigError(f"no store for item modality {item_modality}")
            item_store = stores[item_modality]

    queries = embed_texts(model, test_records, pipeline)
    ranks = [
        rank_of(queries.matrix[i], item_store, record.id)
        for i, record in enumerate(test_records)
    ]
    return compute_metrics(
        ranks, len(item_store), item_modality, dataset=dataset, strategy=strategy
    )
