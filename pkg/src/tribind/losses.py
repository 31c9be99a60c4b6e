"""Batch similarity and the contrastive objectives.

Similarities are plain dot products between unit-norm embeddings with
positives on the diagonal. The directional loss is InfoNCE over in-batch
negatives; the symmetric loss averages the two directions, and the trimodal
objective averages the audio-text and symbolic-text symmetric losses (no
audio-symbolic term). Temperature is a learnable log-inverse scalar shared
by both pair losses, clamped to tau in [0.01, 10].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch
from torch import nn

TAU_MIN = 0.01
TAU_MAX = 10.0
TAU_INIT = 0.07


class LossDirection(Enum):
    ROW_TO_COL = "row_to_col"
    COL_TO_ROW = "col_to_row"


class BatchMismatch(ValueError):
    pass


@dataclass
class SimilarityMatrix:
    values: torch.Tensor  # [N, N]
    row_modality: str = ""
    col_modality: str = ""


class Temperature(nn.Module):
    """Learnable temperature parameterized as log inverse tau."""

    def __init__(self, init_tau: float = TAU_INIT):
        super().__init__()
        self.log_inv_tau = nn.Parameter(torch.tensor(math.log(1.0 / init_tau)))

    @property
    def tau(self) -> torch.Tensor:
        return torch.exp(-self.log_inv_tau).clamp(TAU_MIN, TAU_MAX)


def similarity(z_row: torch.Tensor, z_col: torch.Tensor,
               row_modality: str = "", col_modality: str = "") -> SimilarityMatrix:
    """Dot-product matrix between two aligned embedding batches."""
    if z_row.shape[0] != z_col.shape[0]:
        raise BatchMismatch(
            f"batch sizes differ: {z_row.shape[0]} vs {z_col.shape[0]}"
        )
    return SimilarityMatrix(values=z_row @ z_col.T,
                            row_modality=row_modality, col_modality=col_modality)


def _values(s: SimilarityMatrix | torch.Tensor) -> torch.Tensor:
    return s.values if isinstance(s, SimilarityMatrix) else s


def info_nce(
    s: SimilarityMatrix | torch.Tensor,
    tau: torch.Tensor | float,
    direction: LossDirection = LossDirection.ROW_TO_COL,
) -> torch.Tensor:
    """Directional InfoNCE: softmax cross-entropy with diagonal positives."""
    logits = _values(s)
    if direction == LossDirection.COL_TO_ROW:
        logits = logits.T
    logits = logits / tau
    log_softmax = logits.diagonal() - torch.logsumexp(logits, dim=1)
    return -log_softmax.mean()


def symmetric_loss(s: SimilarityMatrix | torch.Tensor,
                   tau: torch.Tensor | float) -> torch.Tensor:
    """Average of the two directional InfoNCE losses."""
    return 0.5 * (
        info_nce(s, tau, LossDirection.ROW_TO_COL)
        + info_nce(s, tau, LossDirection.COL_TO_ROW)
    )


def trimodal_loss(
    s_at: SimilarityMatrix | torch.Tensor,
    s_mt: SimilarityMatrix | torch.Tensor,
    tau: torch.Tensor | float,
) -> torch.Tensor:
    """Mean of the audio-text and symbolic-text symmetric losses."""
    v_at, v_mt = _values(s_at), _values(s_mt)
    if v_at.shape != v_mt.shape:
        raise BatchMismatch(f"matrix shapes differ: {v_at.shape} vs {v_mt.shape}")
    return 0.5 * (symmetric_loss(v_at, tau) + symmetric_loss(v_mt, tau))
