"""Read-only text-to-music retrieval service.

Loads a checkpoint plus precomputed item embedding stores once at startup
(verifying they were produced by the same model config), then serves
`POST /v1/query`, `GET /v1/items/{id}` and `GET /v1/health`. Query texts are
encoded per request; nothing on the request path mutates state, so the
service is safe under concurrency and identical requests return identical
rankings.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .evaluation import EmbeddingStore, fuse, rank
from .models import Modality, TriBindModel, load_checkpoint
from .text import Vocab, tokenize_text


class StoreDigestError(Exception):
    pass


class QueryRequest(BaseModel):
    text: str = Field(min_length=1)
    k: int = Field(default=10, ge=1)
    item_modality: str = Field(default="fused", pattern="^(audio|symbolic|fused)$")


def _check_sidecar(store_path: Path, model_digest: str) -> None:
    sidecar = store_path.with_suffix(store_path.suffix + ".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        if meta.get("model_digest") != model_digest:
            raise StoreDigestError(
                f"{store_path} was produced by model {meta.get('model_digest')}, "
                f"checkpoint is {model_digest}"
            )


def create_app(
    model: TriBindModel,
    vocab: Vocab,
    stores: dict[Modality, EmbeddingStore],
    metadata: dict[str, dict] | None = None,
) -> FastAPI:
    if not stores:
        raise ValueError("service needs at least one embedding store")
    id_lists = [s.ids for s in stores.values()]
    if any(ids != id_lists[0] for ids in id_lists[1:]):
        raise ValueError("loaded stores disagree on item ids")
    if Modality.AUDIO in stores and Modality.SYMBOLIC in stores:
        stores = dict(stores)
        stores.setdefault(Modality.FUSED,
                          fuse(stores[Modality.AUDIO], stores[Modality.SYMBOLIC]))
    metadata = metadata or {}
    row_index = {m: {tid: i for i, tid in enumerate(s.ids)} for m, s in stores.items()}
    model.eval()

    app = FastAPI(title="tribind retrieval service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/v1/health")
    def health():
        return {
            "status": "ok",
            "model_digest": model.digest,
            "item_count": len(id_lists[0]),
        }

    @app.get("/v1/items/{item_id}")
    def item(item_id: str):
        if item_id not in metadata:
            raise HTTPException(status_code=404, detail=f"unknown item '{item_id}'")
        return {"id": item_id, **metadata[item_id]}

    @app.post("/v1/query")
    def query(request: QueryRequest):
        t0 = time.perf_counter()
        modality = Modality(request.item_modality)
        store = stores.get(modality)
        if store is None:
            raise HTTPException(
                status_code=409,
                detail=f"item modality '{request.item_modality}' not loaded",
            )
        embedding = model.encode_text(tokenize_text(request.text, vocab))
        ordered = rank(embedding, store)
        index = row_index[modality]
        results = [
            {
                "id": track_id,
                "score": round(float(store.matrix[index[track_id]] @ embedding.vector), 6),
                "metadata": metadata.get(track_id, {}),
            }
            for track_id in ordered[: min(request.k, len(store))]
        ]
        return {
            "results": results,
            "latency_ms": (time.perf_counter() - t0) * 1000.0,
        }

    return app


def load_app(
    checkpoint_path: str | Path,
    vocab_path: str | Path | None = None,
    audio_store_path: str | Path | None = None,
    symbolic_store_path: str | Path | None = None,
    manifest_path: str | Path | None = None,
) -> FastAPI:
    """Build the app from files, verifying store/model digests.

    The vocabulary comes from `vocab_path` when given, else from the token
    list embedded in checkpoints written by the trainer.
    """
    model, meta = load_checkpoint(checkpoint_path)
    if vocab_path is not None:
        vocab = Vocab.load(vocab_path)
    elif "vocab_tokens" in meta:
        vocab = Vocab.from_token_list(meta["vocab_tokens"])
    else:
        raise ValueError(
            "checkpoint carries no vocabulary; pass an explicit vocab file"
        )
    stores: dict[Modality, EmbeddingStore] = {}
    if audio_store_path:
        _check_sidecar(Path(audio_store_path), model.digest)
        stores[Modality.AUDIO] = EmbeddingStore.load(audio_store_path)
    if symbolic_store_path:
        _check_sidecar(Path(symbolic_store_path), model.digest)
        stores[Modality.SYMBOLIC] = EmbeddingStore.load(symbolic_store_path)
    metadata = None
    if manifest_path:
        from .corpus import load_manifest

        manifest = load_manifest(manifest_path)
        metadata = {
            r.id: {
                "texts": [t.content for t in r.texts],
                "duration_sec": r.duration_sec,
            }
            for r in manifest.records
        }
    return create_app(model, vocab, stores, metadata)


def serve(app: FastAPI, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")
