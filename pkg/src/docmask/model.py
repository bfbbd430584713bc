"""Multimodal encoder over the concatenation [text tokens | image patches].

Text positions are embedded from word id, 1D index and the segment box
(x0, x1, y0, y1, width, height tables). Patches are linearly projected and
get a learned 1D index embedding only. Self-attention carries per-head
additive biases from bucketed 1D index offsets and 2D box-centre offsets,
and is computed in the alpha-rescaled form that keeps logits small before
the softmax.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .batching import Batch, collate
from .config import ModelConfig
from .docmodel import EncodedInput
from .errors import NumericError
from .geometry import NORM_MAX
from .masking import MaskingPlan


def relative_bucket_1d(delta: int, buckets: int, max_distance: int) -> int:
    """Sign-aware bucket of a relative offset.

    Half the buckets hold positive offsets. Within each half, the first
    quarter of ``buckets`` are exact and the rest grow logarithmically up to
    ``max_distance``, saturating beyond it.
    """
    half = buckets // 2
    ret = half if delta > 0 else 0
    n = abs(delta)
    max_exact = half // 2
    if n < max_exact:
        return ret + n
    large = max_exact + int(math.log(n / max_exact) / math.log(max_distance / max_exact) * (half - max_exact))
    return ret + min(large, half - 1)


def relative_bucket(delta: torch.Tensor, buckets: int, max_distance: int) -> torch.Tensor:
    """Tensor version of :func:`relative_bucket_1d` (identical results)."""
    half = buckets // 2
    ret = (delta > 0).long() * half
    n = delta.abs()
    max_exact = half // 2
    nf = n.clamp(min=1).double()
    large = max_exact + (
        torch.log(nf / max_exact) / math.log(max_distance / max_exact) * (half - max_exact)
    ).long()
    large = large.clamp(max=half - 1)
    return ret + torch.where(n < max_exact, n, large)


def stabilized_attention_scores(
    q: torch.Tensor,
    k: torch.Tensor,
    alpha: float = 32.0,
    bias: torch.Tensor | None = None,
    key_mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Attention weights ``softmax(q k^T / sqrt(d) + bias)``, computed overflow-safely.

    Logits are formed as ``(q / (alpha sqrt(d))) k^T + bias / alpha``, shifted
    by their row max over unmasked keys, then multiplied back by ``alpha``.
    Returns ``(weights, empty_rows)``; rows whose keys are all masked come
    back as zeros and are flagged in ``empty_rows``.
    """
    d = q.shape[-1]
    scores = torch.matmul(q / (alpha * math.sqrt(d)), k.transpose(-1, -2))
    if bias is not None:
        scores = scores + bias / alpha
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask, float("-inf"))
    rowmax = scores.amax(dim=-1, keepdim=True).detach()
    empty = torch.isneginf(rowmax)
    scores = torch.where(empty, torch.zeros_like(scores), (scores - torch.where(empty, 0.0, rowmax)) * alpha)
    weights = torch.softmax(scores, dim=-1)
    weights = torch.where(empty, torch.zeros_like(weights), weights)
    return weights, empty.squeeze(-1)


class SelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.heads = cfg.heads
        self.alpha = cfg.alpha
        self.query = nn.Linear(cfg.hidden, cfg.hidden)
        # a key bias only adds a per-row constant to the logits, which softmax ignores
        self.key = nn.Linear(cfg.hidden, cfg.hidden, bias=False)
        self.value = nn.Linear(cfg.hidden, cfg.hidden)
        self.out = nn.Linear(cfg.hidden, cfg.hidden)

    def _split(self, t):
        b, n, d = t.shape
        return t.view(b, n, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x, bias, key_mask):
        b, n, d = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        w, _ = stabilized_attention_scores(q, k, self.alpha, bias, key_mask[:, None, None, :])
        ctx = torch.matmul(w, v).transpose(1, 2).reshape(b, n, d)
        return self.out(ctx)


class EncoderLayer(nn.Module):
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln_attn = nn.LayerNorm(cfg.hidden, eps=cfg.layer_norm_eps)
        self.attn = SelfAttention(cfg)
        self.ln_ffn = nn.LayerNorm(cfg.hidden, eps=cfg.layer_norm_eps)
        self.fc_in = nn.Linear(cfg.hidden, cfg.ffn_inner)
        self.fc_out = nn.Linear(cfg.ffn_inner, cfg.hidden)

    def forward(self, x, bias, key_mask):
        x = x + self.attn(self.ln_attn(x), bias, key_mask)
        return x + self.fc_out(F.gelu(self.fc_in(self.ln_ffn(x))))


class LayoutEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.hidden
        self.word_embeddings = nn.Embedding(cfg.text_vocab_size, D)
        self.text_positions = nn.Embedding(cfg.max_text_len, D)
        self.x_embeddings = nn.Embedding(NORM_MAX + 1, D)
        self.y_embeddings = nn.Embedding(NORM_MAX + 1, D)
        self.w_embeddings = nn.Embedding(NORM_MAX + 1, D)
        self.h_embeddings = nn.Embedding(NORM_MAX + 1, D)
        self.patch_projection = nn.Linear(cfg.patch_dim, D)
        self.patch_positions = nn.Embedding(cfg.num_patches, D)
        self.mask_patch = nn.Parameter(torch.zeros(D))
        self.rel1d_bias = nn.Parameter(torch.zeros(cfg.rel1d_buckets, cfg.heads))
        self.rel2d_x_bias = nn.Parameter(torch.zeros(cfg.rel2d_buckets, cfg.heads))
        self.rel2d_y_bias = nn.Parameter(torch.zeros(cfg.rel2d_buckets, cfg.heads))
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.reset_parameters()

    def reset_parameters(self):
        std = self.cfg.init_std
        for m in self.modules():
            if isinstance(m, (nn.Linear, nn.Embedding)):
                nn.init.normal_(m.weight, std=std)
                if isinstance(m, nn.Linear) and m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        for p in (self.mask_patch, self.rel1d_bias, self.rel2d_x_bias, self.rel2d_y_bias):
            nn.init.normal_(p, std=std)

    def embed_text(self, input_ids: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
        if int(input_ids.max()) >= self.cfg.text_vocab_size or int(input_ids.min()) < 0:
            raise IndexError(f"token id outside [0, {self.cfg.text_vocab_size})")
        L = input_ids.shape[-1]
        x0, y0, x1, y1 = boxes.unbind(-1)
        pos = torch.arange(L, device=input_ids.device)
        return (
            self.word_embeddings(input_ids)
            + self.text_positions(pos)
            + self.x_embeddings(x0) + self.x_embeddings(x1)
            + self.y_embeddings(y0) + self.y_embeddings(y1)
            + self.w_embeddings(x1 - x0)
            + self.h_embeddings(y1 - y0)
        )

    def embed_patches(self, patches: torch.Tensor, patch_mask: torch.Tensor | None = None) -> torch.Tensor:
        if patches.shape[-2:] != (self.cfg.num_patches, self.cfg.patch_dim):
            raise ValueError(
                f"expected patches shaped (..., {self.cfg.num_patches}, {self.cfg.patch_dim}), "
                f"got {tuple(patches.shape)}")
        proj = self.patch_projection(patches)
        if patch_mask is not None:
            proj = torch.where(patch_mask[..., None], self.mask_patch.expand_as(proj), proj)
        pos = torch.arange(self.cfg.num_patches, device=patches.device)
        return proj + self.patch_positions(pos)

    def attention_bias(self, token_boxes: torch.Tensor, patch_boxes: torch.Tensor) -> torch.Tensor:
        """(B, heads, L+M, L+M) additive bias, shared by every layer."""
        cfg = self.cfg
        B, L = token_boxes.shape[:2]
        M = patch_boxes.shape[0]
        boxes = torch.cat([token_boxes, patch_boxes.expand(B, M, 4)], dim=1)
        pos = torch.cat([torch.arange(L), torch.arange(M)]).to(token_boxes.device)
        b1 = relative_bucket(pos[None, :] - pos[:, None], cfg.rel1d_buckets, cfg.rel1d_max_distance)
        xc = (boxes[..., 0] + boxes[..., 2]) // 2
        yc = (boxes[..., 1] + boxes[..., 3]) // 2
        bx = relative_bucket(xc[:, None, :] - xc[:, :, None], cfg.rel2d_buckets, cfg.rel2d_max_distance)
        by = relative_bucket(yc[:, None, :] - yc[:, :, None], cfg.rel2d_buckets, cfg.rel2d_max_distance)
        bias = self.rel1d_bias[b1][None] + self.rel2d_x_bias[bx] + self.rel2d_y_bias[by]
        return bias.permute(0, 3, 1, 2)

    def embed(self, batch: Batch) -> torch.Tensor:
        text = self.embed_text(batch.input_ids, batch.token_boxes)
        image = self.embed_patches(batch.patches, batch.patch_mask)
        return torch.cat([text, image], dim=1)

    def forward(self, batch: Batch) -> torch.Tensor:
        x = self.embed(batch)
        if not self.layers:
            return x
        bias = self.attention_bias(batch.token_boxes, batch.patch_boxes)
        B, M = batch.patches.shape[:2]
        key_mask = torch.cat(
            [batch.attention, torch.ones(B, M, dtype=torch.bool, device=x.device)], dim=1)
        for layer in self.layers:
            x = layer(x, bias, key_mask)
        return x

    def check_finite(self):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise NumericError(f"non-finite values in parameter {name}")


def encode(
    enc: EncodedInput,
    plan: MaskingPlan | None,
    model: LayoutEncoder,
) -> torch.Tensor:
    """Contextual vectors (L+M, D) for one document."""
    model.check_finite()
    dtype = next(model.parameters()).dtype
    return model(collate([enc], None if plan is None else [plan], dtype=dtype))[0]


def split_modalities(ctx: torch.Tensor, text_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    return ctx[..., :text_len, :], ctx[..., text_len:, :]
