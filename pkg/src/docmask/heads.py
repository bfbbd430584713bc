"""Task heads for fine-tuning: per-token labels, document class, extractive QA."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .errors import ConfigError, DataError
from .model import LayoutEncoder

TOKEN_LABEL, DOC_CLASS, EXTRACTIVE_QA = "token-label", "doc-class", "extractive-qa"
TASK_KINDS = (TOKEN_LABEL, DOC_CLASS, EXTRACTIVE_QA)


@dataclass(frozen=True)
class TaskHeadConfig:
    kind: str
    num_classes: int = 2
    shape: str = "linear"  # or "mlp"
    max_answer_len: int = 30

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; choose from {TASK_KINDS}")
        if self.kind != EXTRACTIVE_QA and self.num_classes < 2:
            raise ConfigError(f"{self.kind} needs at least 2 classes, got {self.num_classes}")
        if self.shape not in ("linear", "mlp"):
            raise ConfigError(f"head shape must be 'linear' or 'mlp', got {self.shape!r}")
        if self.max_answer_len < 1:
            raise ConfigError("max_answer_len must be at least 1")

    @property
    def out_features(self) -> int:
        return 2 if self.kind == EXTRACTIVE_QA else self.num_classes


def _make_head(d: int, out: int, shape: str) -> nn.Module:
    if shape == "linear":
        return nn.Linear(d, out)
    return nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, out))


class TaskModel(nn.Module):
    """Encoder plus one task head.

    Document classification always reads the [CLS] vector through an MLP;
    the ``shape`` switch applies to the per-token heads.
    """

    def __init__(self, cfg: ModelConfig, task: TaskHeadConfig, encoder: LayoutEncoder | None = None):
        super().__init__()
        self.cfg = cfg
        self.task = task
        self.encoder = encoder if encoder is not None else LayoutEncoder(cfg)
        shape = "mlp" if task.kind == DOC_CLASS else task.shape
        self.head = _make_head(cfg.hidden, task.out_features, shape)
        for m in self.head.modules():
            if isinstance(m, nn.Linear):
                nn.init.normal_(m.weight, std=cfg.init_std)
                nn.init.zeros_(m.bias)

    @torch.no_grad()
    def zero_head_(self) -> TaskModel:
        for p in self.head.parameters():
            p.zero_()
        return self

    def logits(self, batch) -> torch.Tensor:
        """(B, L, classes) for token labels, (B, classes) for doc class, (B, L, 2) for QA."""
        ctx = self.encoder(batch)
        text = ctx[:, : batch.input_ids.shape[1]]
        if self.task.kind == DOC_CLASS:
            return self.head(text[:, 0])
        return self.head(text)


def token_classify(logits: torch.Tensor, real_text: torch.Tensor) -> list[np.ndarray]:
    """Per document, a (n_real, classes) probability array over its word tokens."""
    probs = torch.softmax(logits, dim=-1)
    return [probs[b][real_text[b]].detach().cpu().numpy() for b in range(probs.shape[0])]


def doc_classify(logits: torch.Tensor) -> np.ndarray:
    return torch.softmax(logits, dim=-1).detach().cpu().numpy()


def decode_spans(
    start_scores: np.ndarray,
    end_scores: np.ndarray,
    k: int = 1,
    max_len: int = 30,
) -> list[tuple[int, int]]:
    """Top-``k`` spans ``(i, j)`` with ``i <= j < i + max_len`` by start+end score.

    Ties go to the smaller ``i``, then the smaller ``j``. Indices refer to
    positions within the given score arrays.
    """
    s = np.asarray(start_scores, dtype=np.float64)
    e = np.asarray(end_scores, dtype=np.float64)
    n = len(s)
    if n == 0 or len(e) != n:
        raise DataError("span decoding needs equally long, non-empty score arrays")
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    valid = (i <= j) & (j - i < max_len)
    total = s[:, None] + e[None, :]
    ii, jj, tt = i[valid], j[valid], total[valid]
    # lexsort: last key is primary
    order = np.lexsort((jj, ii, -tt))
    return [(int(ii[o]), int(jj[o])) for o in order[:k]]


def qa_spans(logits: torch.Tensor, real_text: torch.Tensor, k: int = 1, max_len: int = 30) -> list[list[tuple[int, int]]]:
    """Ranked spans per document, as word indices (0 = first real token)."""
    out = []
    for b in range(logits.shape[0]):
        scores = logits[b][real_text[b]].detach().cpu().double().numpy()
        if len(scores) == 0:
            raise DataError("no real text tokens to extract an answer from")
        out.append(decode_spans(scores[:, 0], scores[:, 1], k, max_len))
    return out


def token_label_loss(logits: torch.Tensor, labels: torch.Tensor, real_text: torch.Tensor) -> torch.Tensor:
    """Per-document mean cross-entropy over word tokens, averaged over documents."""
    ce = F.cross_entropy(logits.transpose(1, 2), labels.clamp(min=0), reduction="none")
    summed = torch.where(real_text, ce, torch.zeros_like(ce)).sum(1)
    return (summed / real_text.sum(1).clamp(min=1).to(ce.dtype)).mean()


def doc_class_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, labels)


def qa_loss(logits: torch.Tensor, starts: torch.Tensor, ends: torch.Tensor, real_text: torch.Tensor) -> torch.Tensor:
    """Start CE + end CE, each over the document's word tokens only. Targets are sequence positions."""
    masked = logits.masked_fill(~real_text[..., None], float("-inf"))
    return F.cross_entropy(masked[..., 0], starts) + F.cross_entropy(masked[..., 1], ends)


def prediction_record(doc_id: str, kind: str, **fields) -> str:
    """One JSON line of the prediction dump."""
    return json.dumps({"id": doc_id, "task": kind, **fields}, ensure_ascii=False)
