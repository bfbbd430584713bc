"""Stack encoded documents (and their masking plans) into tensors."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch

from .docmodel import EncodedInput
from .masking import NO_LABEL, NO_TARGET, MaskingPlan


@dataclass
class Batch:
    input_ids: torch.Tensor  # (B, L) ids fed to the encoder (corrupted when a plan is given)
    token_ids: torch.Tensor  # (B, L) original ids
    token_boxes: torch.Tensor  # (B, L, 4)
    attention: torch.Tensor  # (B, L) bool
    real_text: torch.Tensor  # (B, L) bool, word tokens only
    patches: torch.Tensor  # (B, M, C*P*P) float in [0, 1]
    patch_boxes: torch.Tensor  # (M, 4)
    patch_mask: torch.Tensor  # (B, M) bool
    text_mask: torch.Tensor  # (B, L) bool
    mim_targets: torch.Tensor  # (B, M), NO_TARGET off the mask
    wpa_labels: torch.Tensor  # (B, L), NO_LABEL off the labelled set

    @property
    def size(self) -> int:
        return self.input_ids.shape[0]

    def select(self, idx) -> Batch:
        """Sub-batch of the given rows; shared tensors are kept as-is."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v if f.name == "patch_boxes" else v[idx]
        return Batch(**out)


def collate(
    encs: list[EncodedInput],
    plans: list[MaskingPlan] | None = None,
    dtype: torch.dtype = torch.float32,
) -> Batch:
    if not encs:
        raise ValueError("cannot collate an empty batch")
    if plans is not None and len(plans) != len(encs):
        raise ValueError(f"{len(encs)} inputs but {len(plans)} plans")
    token_ids = np.stack([e.token_ids for e in encs])
    real = np.stack([e.real_text for e in encs])
    if plans is None:
        input_ids = token_ids
        L, M = token_ids.shape[1], encs[0].num_patches
        text_mask = np.zeros_like(real)
        patch_mask = np.zeros((len(encs), M), dtype=bool)
        mim = np.full((len(encs), M), NO_TARGET, dtype=np.int64)
        wpa = np.full((len(encs), L), NO_LABEL, dtype=np.int64)
    else:
        input_ids = np.stack([p.input_ids for p in plans])
        text_mask = np.stack([p.text_mask for p in plans])
        patch_mask = np.stack([p.patch_mask for p in plans])
        mim = np.stack([p.mim_targets for p in plans])
        wpa = np.stack([p.wpa_labels for p in plans])
    patches = np.stack([e.patch_pixels for e in encs]).astype(np.float64) / 255.0
    return Batch(
        input_ids=torch.from_numpy(input_ids.astype(np.int64)),
        token_ids=torch.from_numpy(token_ids.astype(np.int64)),
        token_boxes=torch.from_numpy(np.stack([e.token_boxes for e in encs]).astype(np.int64)),
        attention=torch.from_numpy(np.stack([e.attention for e in encs])),
        real_text=torch.from_numpy(real),
        patches=torch.from_numpy(patches).to(dtype),
        patch_boxes=torch.from_numpy(encs[0].patch_boxes.astype(np.int64)),
        patch_mask=torch.from_numpy(patch_mask),
        text_mask=torch.from_numpy(text_mask),
        mim_targets=torch.from_numpy(mim.astype(np.int64)),
        wpa_labels=torch.from_numpy(wpa.astype(np.int64)),
    )
