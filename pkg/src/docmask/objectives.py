"""MLM, MIM and word-patch alignment losses over one shared forward pass.

Each term is a per-document mean over its contributing positions (zero when
there are none), averaged over the documents of the batch in index order.
The summed forms are recovered by multiplying by the counts reported in
:class:`LossBreakdown`.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .batching import Batch
from .config import ModelConfig
from .errors import DataError
from .masking import NO_LABEL
from .model import LayoutEncoder, split_modalities


class ContractError(DataError, ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSwitches:
    mlm: bool = True
    mim: bool = True
    wpa: bool = True

    @classmethod
    def parse(cls, spec: str) -> ObjectiveSwitches:
        """``"mlm+mim+wpa"``, ``"mlm"``, ``"none"`` ..."""
        parts = {p.strip().lower() for p in spec.split("+") if p.strip()} - {"none"}
        unknown = parts - {"mlm", "mim", "wpa"}
        if unknown:
            raise ValueError(f"unknown objectives {sorted(unknown)}")
        return cls("mlm" in parts, "mim" in parts, "wpa" in parts)

    def __str__(self) -> str:
        on = [n for n in ("mlm", "mim", "wpa") if getattr(self, n)]
        return "+".join(on) if on else "none"

    @property
    def any(self) -> bool:
        return self.mlm or self.mim or self.wpa


@dataclass
class LossBreakdown:
    l_mlm: torch.Tensor
    l_mim: torch.Tensor
    l_wpa: torch.Tensor
    total: torch.Tensor
    n_mlm: int
    n_mim: int
    n_wpa: int

    def floats(self) -> tuple[float, float, float, float]:
        return tuple(float(t.detach()) for t in (self.l_mlm, self.l_mim, self.l_wpa, self.total))

    def log_line(self, step: int) -> str:
        """Tab-separated: step, l_mlm, l_mim, l_wpa, total, n_mlm, n_mim, n_wpa."""
        vals = [repr(v) for v in self.floats()]
        return "\t".join([str(step), *vals, str(self.n_mlm), str(self.n_mim), str(self.n_wpa)])


LOG_HEADER = "step\tl_mlm\tl_mim\tl_wpa\ttotal\tn_mlm\tn_mim\tn_wpa"


class PretrainHeads(nn.Module):
    """MLM (D -> text vocab), MIM (D -> image vocab), WPA (D -> D -> 1 with GELU)."""

    def __init__(self, cfg: ModelConfig, word_embeddings: nn.Embedding | None = None):
        super().__init__()
        self.mlm = nn.Linear(cfg.hidden, cfg.text_vocab_size)
        if cfg.tie_mlm_weights:
            if word_embeddings is None:
                raise ValueError("tied MLM head needs the word embedding table")
            self.mlm.weight = word_embeddings.weight
        self.mim = nn.Linear(cfg.hidden, cfg.image_vocab_size)
        self.wpa = nn.Sequential(nn.Linear(cfg.hidden, cfg.hidden), nn.GELU(), nn.Linear(cfg.hidden, 1))
        self.tied = cfg.tie_mlm_weights
        for lin in (self.mim, self.wpa[0], self.wpa[2]) + (() if self.tied else (self.mlm,)):
            nn.init.normal_(lin.weight, std=cfg.init_std)
        for lin in (self.mlm, self.mim, self.wpa[0], self.wpa[2]):
            nn.init.zeros_(lin.bias)

    @torch.no_grad()
    def zero_(self) -> PretrainHeads:
        for name, p in self.named_parameters():
            if self.tied and name == "mlm.weight":
                continue
            p.zero_()
        return self


class Pretrainer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = LayoutEncoder(cfg)
        self.heads = PretrainHeads(cfg, self.encoder.word_embeddings)

    def forward(self, batch: Batch, switches: ObjectiveSwitches = ObjectiveSwitches()) -> LossBreakdown:
        return total_loss(self, batch, switches)


def _doc_mean(per_pos: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over masked positions per row (0 for empty rows), then mean over rows."""
    summed = torch.where(mask, per_pos, torch.zeros_like(per_pos)).sum(dim=1)
    counts = mask.sum(dim=1).clamp(min=1).to(per_pos.dtype)
    return (summed / counts).mean()


def mlm_loss(text_ctx: torch.Tensor, batch: Batch, head: nn.Linear) -> torch.Tensor:
    mask = batch.text_mask
    if not mask.any():
        return text_ctx.new_zeros(())
    targets = torch.where(mask, batch.token_ids, torch.zeros_like(batch.token_ids))
    if int(targets.max()) >= head.out_features:
        raise DataError(f"MLM target id {int(targets.max())} >= vocabulary {head.out_features}")
    logits = head(text_ctx)
    ce = F.cross_entropy(logits.transpose(1, 2), targets, reduction="none")
    return _doc_mean(ce, mask)


def mim_loss(patch_ctx: torch.Tensor, batch: Batch, head: nn.Linear) -> torch.Tensor:
    mask = batch.patch_mask
    if not mask.any():
        return patch_ctx.new_zeros(())
    targets = torch.where(mask, batch.mim_targets, torch.zeros_like(batch.mim_targets))
    if int(targets.min()) < 0 or int(targets.max()) >= head.out_features:
        raise DataError(f"MIM targets outside [0, {head.out_features})")
    logits = head(patch_ctx)
    ce = F.cross_entropy(logits.transpose(1, 2), targets, reduction="none")
    return _doc_mean(ce, mask)


def wpa_loss(text_ctx: torch.Tensor, batch: Batch, head: nn.Module) -> torch.Tensor:
    labelled = batch.wpa_labels != NO_LABEL
    expected = batch.real_text & ~batch.text_mask
    if not torch.equal(labelled, expected):
        raise ContractError("WPA labels must cover exactly the unmasked real text tokens")
    if not labelled.any():
        return text_ctx.new_zeros(())
    logits = head(text_ctx).squeeze(-1)
    targets = batch.wpa_labels.clamp(min=0).to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    return _doc_mean(bce, labelled)


def total_loss(model: Pretrainer, batch: Batch, switches: ObjectiveSwitches = ObjectiveSwitches()) -> LossBreakdown:
    """One encoder pass, three heads, summed. Disabled terms contribute exactly 0."""
    ctx = model.encoder(batch)
    text_ctx, patch_ctx = split_modalities(ctx, batch.input_ids.shape[1])
    zero = ctx.new_zeros(())
    l_mlm = mlm_loss(text_ctx, batch, model.heads.mlm) if switches.mlm else zero
    l_mim = mim_loss(patch_ctx, batch, model.heads.mim) if switches.mim else zero
    l_wpa = wpa_loss(text_ctx, batch, model.heads.wpa) if switches.wpa else zero
    return LossBreakdown(
        l_mlm=l_mlm,
        l_mim=l_mim,
        l_wpa=l_wpa,
        total=l_mlm + l_mim + l_wpa,
        n_mlm=int(batch.text_mask.sum()) if switches.mlm else 0,
        n_mim=int(batch.patch_mask.sum()) if switches.mim else 0,
        n_wpa=int((batch.wpa_labels != NO_LABEL).sum()) if switches.wpa else 0,
    )
