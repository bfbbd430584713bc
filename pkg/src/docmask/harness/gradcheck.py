"""Finite-difference verification of the pre-training gradients.

Runs in float64 on a tiny model. Every entry of every parameter is checked,
except in tables with more than ``dense_limit`` entries (the 1001-row layout
tables), where all entries with a non-zero analytic gradient plus a random
sample of the zero-gradient ones are checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .. import config as model_presets
from ..batching import Batch, collate
from ..config import ModelConfig
from ..docmodel import DocumentRecord, Vocabulary, encode_document, tokenize_image
from ..geometry import PixelBox
from ..masking import MASK, NO_LABEL, NO_TARGET, MaskingPlan, build_wpa_labels
from ..objectives import ObjectiveSwitches, Pretrainer

FD_STEP = 1e-4
REL_FLOOR = 1e-8

GROUPS = (
    ("relative_bias", ("rel1d_bias", "rel2d_x_bias", "rel2d_y_bias")),
    ("patch_projection", ("patch_projection",)),
    ("attention", (".attn.",)),
    ("ffn", (".fc_in", ".fc_out")),
    ("layer_norm", (".ln_",)),
    ("heads", ("heads.",)),
    ("embeddings", ("embeddings", "positions", "mask_patch")),
)


def param_group(name: str) -> str:
    for group, keys in GROUPS:
        if any(k in name for k in keys):
            return group
    raise KeyError(name)


@dataclass
class GradcheckReport:
    max_rel_err: dict[str, float]
    checked: dict[str, int]
    dead_param_loss_diff: float
    linearity_max_abs_diff: float
    loss: float
    worst: dict[str, str] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return all(v < tol for v in self.max_rel_err.values())

    def lines(self) -> list[str]:
        out = [f"{g}\tmax_rel_err={e:.3e}\tchecked={self.checked[g]}" for g, e in sorted(self.max_rel_err.items())]
        out.append(f"dead_param_loss_diff\t{self.dead_param_loss_diff:.3e}")
        out.append(f"linearity_max_abs_diff\t{self.linearity_max_abs_diff:.3e}")
        return out


WORDS = ["alpha", "beta", "gamma", "delta", "eps", "zeta"]


def tiny_example(cfg: ModelConfig, seed: int) -> tuple[Batch, Vocabulary]:
    """Three words in two segments, one masked word, two masked patches."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(WORDS[: cfg.text_vocab_size - len(Vocabulary().tokens)])
    image = rng.integers(0, 256, size=(cfg.channels, cfg.image_height, cfg.image_width), dtype=np.uint8)
    h, w = cfg.image_height, cfg.image_width
    doc = DocumentRecord(
        id="gradcheck",
        words=["alpha", "beta", "gamma"],
        boxes=[PixelBox(0, 0, w // 2, h // 4), PixelBox(w // 2, 0, w, h // 4), PixelBox(w // 4, h // 2, w, h)],
        segment_ids=[0, 0, 1],
        image=image,
    )
    enc = encode_document(doc, cfg, vocab)
    L, M = enc.text_len, enc.num_patches
    text_mask = np.zeros(L, dtype=bool)
    text_mask[2] = True
    input_ids = enc.token_ids.copy()
    input_ids[2] = Vocabulary.mask_id
    replacement = np.zeros(L, dtype=np.int8)
    replacement[2] = MASK
    patch_mask = np.zeros(M, dtype=bool)
    patch_mask[[0, M - 1]] = True
    mim = np.full(M, NO_TARGET, dtype=np.int64)
    mim[patch_mask] = tokenize_image(enc.patch_pixels, cfg.image_vocab_size, cfg.channels)[patch_mask]
    labels = build_wpa_labels(
        {int(p): enc.incidence[p] for p in np.flatnonzero(enc.real_text)},
        {2}, set(np.flatnonzero(patch_mask).tolist()))
    wpa = np.full(L, NO_LABEL, dtype=np.int64)
    for p, z in labels.items():
        wpa[p] = z
    plan = MaskingPlan(text_mask, replacement, input_ids, patch_mask, mim, wpa)
    return collate([enc], [plan], dtype=torch.float64), vocab


def _grads(model: Pretrainer, batch: Batch, switches: ObjectiveSwitches) -> dict[str, torch.Tensor]:
    model.zero_grad(set_to_none=True)
    model(batch, switches).total.backward()
    return {n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
            for n, p in model.named_parameters()}


def gradcheck(cfg: ModelConfig | None = None, seed: int = 0, dense_limit: int = 2000,
              zero_grad_samples: int = 32) -> GradcheckReport:
    cfg = cfg or model_presets.gradcheck()
    torch.manual_seed(seed)
    model = Pretrainer(cfg).double()
    batch, vocab = tiny_example(cfg, seed)
    on = ObjectiveSwitches()

    def loss_value() -> float:
        with torch.no_grad():
            return float(model(batch, on).total)

    grads = _grads(model, batch, on)
    base = loss_value()
    rng = np.random.default_rng(seed)
    max_err: dict[str, float] = {}
    counts: dict[str, int] = {}
    worst: dict[str, str] = {}
    for name, p in model.named_parameters():
        group = param_group(name)
        flat = p.data.view(-1)
        g = grads[name].view(-1)
        if flat.numel() > dense_limit:
            nz = torch.nonzero(g).view(-1).tolist()
            zeros = torch.nonzero(g == 0).view(-1).numpy()
            sample = rng.choice(zeros, size=min(zero_grad_samples, len(zeros)), replace=False).tolist()
            entries = sorted(set(nz) | set(sample))
        else:
            entries = range(flat.numel())
        for i in entries:
            orig = float(flat[i])
            flat[i] = orig + FD_STEP
            up = loss_value()
            flat[i] = orig - FD_STEP
            down = loss_value()
            flat[i] = orig
            numeric = (up - down) / (2 * FD_STEP)
            analytic = float(g[i])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)
            counts[group] = counts.get(group, 0) + 1
            if err >= max_err.get(group, -1.0):
                max_err[group] = err
                worst[group] = f"{name}[{i}] analytic={analytic:.6e} numeric={numeric:.6e}"

    # a vocabulary row no input or target touches
    dead_row = vocab.token_id(WORDS[-1])
    emb = model.encoder.word_embeddings.weight.data
    saved = emb[dead_row].clone()
    emb[dead_row] += 1.0
    dead_diff = abs(loss_value() - base)
    emb[dead_row] = saved

    summed = None
    for single in (ObjectiveSwitches(True, False, False), ObjectiveSwitches(False, True, False),
                   ObjectiveSwitches(False, False, True)):
        gs = _grads(model, batch, single)
        summed = gs if summed is None else {n: summed[n] + gs[n] for n in gs}
    lin = max(float((grads[n] - summed[n]).abs().max()) for n in grads)

    return GradcheckReport(max_err, counts, dead_diff, lin, base, worst)
