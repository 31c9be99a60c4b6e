"""Optimization loop: combined multi-source training and pretrain/finetune.

Both strategies share one step function (decoupled-weight-decay Adam over
the active encoders plus the temperature). Combined training draws every
batch from the weighted weak/strong mixture; the two-phase strategy trains
on the weak pool, restores the median-rank-best checkpoint and continues on
the strong pool with every parameter still trainable. Validation runs
text-to-music retrieval on the held-out split and checkpoints are selected
by median rank.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import MixtureSpec, Source, TrackRecord, sample_mixed_batch
from .evaluation import MetricsReport, build_item_store, embed_texts, rank_of, compute_metrics
from .features import FeaturePipeline, collate_batch
from .losses import symmetric_loss, trimodal_loss
from .models import (Modality, TriBindModel, parameter_digest, save_checkpoint,
                     load_checkpoint, PRESETS)
from .text import Vocab


class NonFiniteLoss(RuntimeError):
    pass


class EmptyCheckpointList(ValueError):
    pass


_ITEM_MODALITY = {
    "trimodal": Modality.FUSED,
    "audio": Modality.AUDIO,
    "symbolic": Modality.SYMBOLIC,
}


@dataclass
class TrainConfig:
    strategy: str = "combined"  # "combined" | "pt_ft"
    modality: str = "trimodal"  # "trimodal" | "audio" | "symbolic"
    lr: float = 5e-5
    weight_decay: float = 0.2
    batch_size: int = 64
    mixture: MixtureSpec = field(default_factory=lambda: MixtureSpec(7.0, 3.0))
    steps: int = 1000
    pretrain_steps: int = 500
    finetune_steps: int = 500
    seed: int = 0
    eval_every: int = 100
    precision: str = "single"  # "single" | "mixed"
    keep_prob: float = 0.5
    preset: str = "desk"
    run_dir: str = "runs/default"
    stop_when_perfect: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("contrastive training needs batch_size >= 2")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.modality not in _ITEM_MODALITY:
            raise ValueError(f"unknown modality '{self.modality}'")
        if self.precision not in ("single", "mixed"):
            raise ValueError(f"unknown precision '{self.precision}'")

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        data = json.loads(Path(path).read_text())
        if "mixture" in data:
            data["mixture"] = MixtureSpec(*data["mixture"])
        return cls(**data)


@dataclass
class CheckpointMeta:
    step: int
    val_medr: float
    val_recalls: tuple[float, float, float]
    path: str
    phase: str = ""
    param_digest: str = ""

    def __post_init__(self):
        if self.val_medr < 1:
            raise ValueError("median rank cannot be below 1")


def select_checkpoint(metas: list[CheckpointMeta]) -> CheckpointMeta:
    """Lowest validation median rank; ties go to the earliest step."""
    if not metas:
        raise EmptyCheckpointList("no checkpoints to select from")
    return min(metas, key=lambda m: (m.val_medr, m.step))


def build_optimizer(model: TriBindModel, config: TrainConfig) -> torch.optim.AdamW:
    """AdamW over the active encoders; 1-d params (biases, norm gains,
    temperature) are excluded from weight decay."""
    modules = [model.text, model.temperature]
    if config.modality in ("trimodal", "audio"):
        modules.append(model.audio)
    if config.modality in ("trimodal", "symbolic"):
        modules.append(model.symbolic)
    params = [p for m in modules for p in m.parameters()]
    decay = [p for p in params if p.ndim > 1]
    no_decay = [p for p in params if p.ndim <= 1]
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=config.lr,
    )


def compute_loss(model: TriBindModel, batch: dict, modality: str) -> torch.Tensor:
    z_text = model.forward_text(batch["text_ids"], batch["text_pad_mask"])
    tau = model.temperature.tau
    if modality == "audio":
        z_audio = model.forward_audio(batch["mel"])
        return symmetric_loss(z_audio @ z_text.T, tau)
    if modality == "symbolic":
        z_sym = model.forward_symbolic(batch["field_ids"], batch["token_pad_mask"])
        return symmetric_loss(z_sym @ z_text.T, tau)
    z_audio = model.forward_audio(batch["mel"])
    z_sym = model.forward_symbolic(batch["field_ids"], batch["token_pad_mask"])
    return trimodal_loss(z_audio @ z_text.T, z_sym @ z_text.T, tau)


def train_step(
    model: TriBindModel,
    optimizer: torch.optim.Optimizer,
    batch: dict,
    modality: str = "trimodal",
    precision: str = "single",
) -> float:
    """One forward/backward/update; returns the scalar loss."""
    if precision == "mixed":
        with torch.autocast("cpu", dtype=torch.bfloat16):
            loss = compute_loss(model, batch, modality)
    else:
        loss = compute_loss(model, batch, modality)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            f"non-finite loss {loss.item()} (tau={model.temperature.tau.item():.4g})"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.item())


class TrainRun:
    """Owns the model, data pipeline, run directory and log for one run."""

    def __init__(
        self,
        config: TrainConfig,
        vocab: Vocab,
        weak_pool: list[TrackRecord],
        strong_pool: list[TrackRecord],
        val_records: list[TrackRecord],
        data_root=None,
    ):
        self.config = config
        self.vocab = vocab
        self.weak_pool = weak_pool
        self.strong_pool = strong_pool
        self.val_records = val_records
        torch.manual_seed(config.seed)
        self.model = TriBindModel(PRESETS[config.preset](len(vocab)))
        self.optimizer = build_optimizer(self.model, config)
        self.pipeline = FeaturePipeline(vocab, data_root, keep_prob=config.keep_prob)
        self.rng = np.random.default_rng(config.seed)
        self.run_dir = Path(config.run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "checkpoints").mkdir(exist_ok=True)
        self._log_fh = open(self.run_dir / "log.jsonl", "a")
        self.global_step = 0

    def close(self):
        self._log_fh.close()

    def _log(self, record: dict):
        self._log_fh.write(json.dumps(record) + "\n")
        self._log_fh.flush()

    def validate(self) -> MetricsReport:
        item_modality = _ITEM_MODALITY[self.config.modality]
        store = build_item_store(self.model, self.val_records, item_modality,
                                 self.pipeline)
        queries = embed_texts(self.model, self.val_records, self.pipeline)
        ranks = [
            rank_of(queries.matrix[i], store, r.id)
            for i, r in enumerate(self.val_records)
        ]
        return compute_metrics(ranks, len(store), item_modality)

    def _checkpoint(self, phase: str) -> CheckpointMeta:
        report = self.validate()
        path = self.run_dir / "checkpoints" / f"step_{self.global_step}"
        save_checkpoint(
            self.model,
            path,
            meta={"step": self.global_step, "phase": phase,
                  "val_medr": report.medr,
                  "val_recalls": [report.r_at[k] for k in (1, 5, 10)],
                  "vocab_tokens": list(self.vocab.id_to_token)},
        )
        return CheckpointMeta(
            step=self.global_step,
            val_medr=max(report.medr, 1.0),
            val_recalls=(report.r_at[1], report.r_at[5], report.r_at[10]),
            path=str(path),
            phase=phase,
            param_digest=parameter_digest(self.model),
        )

    def _run_phase(self, steps: int, mixture: MixtureSpec, phase: str) -> list[CheckpointMeta]:
        config = self.config
        metas: list[CheckpointMeta] = []
        t0 = time.time()
        for local_step in range(1, steps + 1):
            batch_records = sample_mixed_batch(
                self.weak_pool, self.strong_pool, mixture, config.batch_size, self.rng
            )
            examples = [
                self.pipeline.training_example(r, self.rng) for r in batch_records
            ]
            batch = collate_batch(examples)
            loss = train_step(self.model, self.optimizer, batch,
                              config.modality, config.precision)
            self.global_step += 1
            n_weak = sum(r.source == Source.WEAK for r in batch_records)
            self._log({
                "step": self.global_step,
                "phase": phase,
                "loss": loss,
                "tau": float(self.model.temperature.tau.item()),
                "source_counts": {"weak": n_weak,
                                  "strong": len(batch_records) - n_weak},
            })
            at_eval = self.global_step % config.eval_every == 0
            if at_eval or local_step == steps:
                meta = self._checkpoint(phase)
                metas.append(meta)
                print(f"[{phase}] step {self.global_step} loss {loss:.4f} "
                      f"MedR {meta.val_medr:g} R@1 {meta.val_recalls[0]:.1f} "
                      f"({time.time() - t0:.0f}s)")
                if (config.stop_when_perfect
                        and meta.val_recalls[0] >= 100.0 and meta.val_medr <= 1.0):
                    break
        return metas

    def run_combined(self) -> list[CheckpointMeta]:
        return self._run_phase(self.config.steps, self.config.mixture, "combined")

    def run_pretrain_finetune(self) -> list[CheckpointMeta]:
        metas = self._run_phase(
            self.config.pretrain_steps, MixtureSpec(1.0, 0.0), "pretrain"
        )
        if metas:
            best = select_checkpoint(metas)
            restored, _ = load_checkpoint(best.path, self.model.config)
            self.model.load_state_dict(restored.state_dict())
            self.optimizer = build_optimizer(self.model, self.config)
        metas += self._run_phase(
            self.config.finetune_steps, MixtureSpec(0.0, 1.0), "finetune"
        )
        return metas


def run_combined(
    config: TrainConfig,
    vocab: Vocab,
    weak_pool: list[TrackRecord],
    strong_pool: list[TrackRecord],
    val_records: list[TrackRecord],
    data_root=None,
) -> list[CheckpointMeta]:
    run = TrainRun(config, vocab, weak_pool, strong_pool, val_records, data_root)
    try:
        return run.run_combined()
    finally:
        run.close()


def run_pretrain_finetune(
    config: TrainConfig,
    vocab: Vocab,
    weak_pool: list[TrackRecord],
    strong_pool: list[TrackRecord],
    val_records: list[TrackRecord],
    data_root=None,
) -> list[CheckpointMeta]:
    run = TrainRun(config, vocab, weak_pool, strong_pool, val_records, data_root)
    try:
        return run.run_pretrain_finetune()
    finally:
        run.close()
