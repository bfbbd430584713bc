"""Corruption and targets for the three pre-training objectives.

Text is masked in Poisson-length spans, image patches in rectangular blocks.
Every sampler takes a ``numpy.random.Generator`` so a plan is a pure function
of (input, config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .docmodel import EncodedInput, Vocabulary, tokenize_image
from .errors import ConfigError, MaskingError
from .geometry import PatchGrid

KEEP, MASK, RANDOM = 0, 1, 2
REPLACEMENT_NAMES = {KEEP: "KEEP", MASK: "MASK", RANDOM: "RANDOM"}

ALIGNED, UNALIGNED, NO_LABEL = 1, 0, -1
NO_TARGET = -1


@dataclass(frozen=True)
class MaskingConfig:
    text_ratio: float = 0.30
    span_lambda: float = 3.0
    span_max: int = 10
    image_ratio: float = 0.40
    min_block_patches: int = 4
    block_aspect_range: tuple[float, float] = (0.3, 1 / 0.3)
    mask_prob: float = 0.8
    random_prob: float = 0.1
    keep_prob: float = 0.1

    def __post_init__(self):
        for name in ("text_ratio", "image_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.span_lambda <= 0:
            raise ConfigError(f"span_lambda must be positive, got {self.span_lambda}")
        if self.span_max < 1 or self.min_block_patches < 1:
            raise ConfigError("span_max and min_block_patches must be at least 1")
        lo, hi = self.block_aspect_range
        if lo <= 0 or hi < lo or not math.isclose(lo * hi, 1.0, rel_tol=1e-2):
            raise ConfigError(f"aspect range must be positive and reciprocal-symmetric, got {(lo, hi)}")
        probs = (self.mask_prob, self.random_prob, self.keep_prob)
        if min(probs) < 0 or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
            raise ConfigError(f"replacement probabilities must be non-negative and sum to 1, got {probs}")

    @classmethod
    def all_mask(cls, **kw) -> MaskingConfig:
        return cls(mask_prob=1.0, random_prob=0.0, keep_prob=0.0, **kw)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_text_spans(n_maskable: int, cfg: MaskingConfig, rng: np.random.Generator) -> set[int]:
    """Positions in ``range(n_maskable)`` covered by Poisson-length spans.

    Spans are drawn until the masked count reaches ``round(ratio * n)``; the
    last span may overshoot the budget.
    """
    budget = _round_half_up(cfg.text_ratio * n_maskable)
    masked = np.zeros(n_maskable, dtype=bool)
    count = 0
    while count < budget:
        length = min(max(int(rng.poisson(cfg.span_lambda)), 1), cfg.span_max)
        free = np.flatnonzero(~masked)
        start = int(free[rng.integers(len(free))])
        stop = min(start + length, n_maskable)
        count += int((~masked[start:stop]).sum())
        masked[start:stop] = True
    return set(np.flatnonzero(masked).tolist())


@dataclass(frozen=True)
class Block:
    top: int
    left: int
    height: int
    width: int

    def cells(self, grid: PatchGrid) -> list[int]:
        return [grid.index(r, c)
                for r in range(self.top, self.top + self.height)
                for c in range(self.left, self.left + self.width)]


def _admissible_shapes(grid: PatchGrid, cfg: MaskingConfig) -> list[tuple[int, int]]:
    lo, hi = cfg.block_aspect_range
    return [(h, w)
            for h in range(1, grid.rows + 1)
            for w in range(1, grid.cols + 1)
            if h * w >= cfg.min_block_patches and lo <= h / w <= hi]


def sample_image_block_list(grid: PatchGrid, cfg: MaskingConfig, rng: np.random.Generator) -> list[Block]:
    """Rectangular blocks in sampling order; their union covers at least ``ceil(ratio * M)`` patches.

    Block area is drawn uniformly from ``[min_block, max(min_block, remaining)]``
    and the aspect ratio log-uniformly from the configured range. A draw whose
    rounded shape is inadmissible, or that would add no new patch, is redrawn;
    after a bounded number of misses one of the admissible placements that
    adds at least one patch is picked uniformly.
    """
    # round() first so 0.4 * 5 = 2.0000000000000004 does not become 3
    budget = math.ceil(round(cfg.image_ratio * grid.num_patches, 9))
    if budget == 0:
        return []
    shapes = _admissible_shapes(grid, cfg)
    if not shapes:
        raise MaskingError(
            f"no block of >= {cfg.min_block_patches} patches with aspect in "
            f"{cfg.block_aspect_range} fits a {grid.rows}x{grid.cols} grid")
    shape_set = set(shapes)
    lo, hi = cfg.block_aspect_range
    log_lo, log_hi = math.log(lo), math.log(hi)
    mask = np.zeros((grid.rows, grid.cols), dtype=bool)
    blocks: list[Block] = []
    count = 0
    while count < budget:
        remaining = budget - count
        block = None
        for _ in range(20):
            area = rng.uniform(cfg.min_block_patches, max(cfg.min_block_patches, remaining))
            aspect = math.exp(rng.uniform(log_lo, log_hi))
            h = int(round(math.sqrt(area * aspect)))
            w = int(round(math.sqrt(area / aspect)))
            if (h, w) not in shape_set:
                continue
            top = int(rng.integers(grid.rows - h + 1))
            left = int(rng.integers(grid.cols - w + 1))
            if not mask[top:top + h, left:left + w].all():
                block = Block(top, left, h, w)
                break
        if block is None:
            placements = [Block(t, l, h, w)
                          for h, w in shapes
                          for t in range(grid.rows - h + 1)
                          for l in range(grid.cols - w + 1)
                          if not mask[t:t + h, l:l + w].all()]
            block = placements[int(rng.integers(len(placements)))]
        window = mask[block.top:block.top + block.height, block.left:block.left + block.width]
        count += int((~window).sum())
        window[...] = True
        blocks.append(block)
    return blocks


def sample_image_blocks(grid: PatchGrid, cfg: MaskingConfig, rng: np.random.Generator) -> set[int]:
    out: set[int] = set()
    for b in sample_image_block_list(grid, cfg, rng):
        out.update(b.cells(grid))
    return out


def build_wpa_labels(
    incidence: Mapping[int, frozenset[int] | set[int]],
    masked_text: set[int],
    masked_patches: set[int],
) -> dict[int, int]:
    """Aligned (1) iff every incident patch is unmasked; masked text gets no label.

    ``incidence`` is keyed by real text positions. An empty incidence set is
    aligned by vacuity.
    """
    return {
        pos: ALIGNED if masked_patches.isdisjoint(patches) else UNALIGNED
        for pos, patches in incidence.items()
        if pos not in masked_text
    }


@dataclass(eq=False)
class MaskingPlan:
    """Corrupted inputs and targets for one encoded document.

    Array fields are aligned with the encoded sequences: ``text_mask`` and
    friends have length L, the patch fields length M.
    """

    text_mask: np.ndarray  # (L,) bool, L'
    replacement: np.ndarray  # (L,) int8, KEEP/MASK/RANDOM where text_mask
    input_ids: np.ndarray  # (L,) corrupted token ids
    patch_mask: np.ndarray  # (M,) bool, M'
    mim_targets: np.ndarray  # (M,) image-token ids on M', NO_TARGET elsewhere
    wpa_labels: np.ndarray  # (L,) ALIGNED/UNALIGNED/NO_LABEL
    blocks: list[Block] = field(default_factory=list)

    @property
    def masked_text_positions(self) -> set[int]:
        return set(np.flatnonzero(self.text_mask).tolist())

    @property
    def masked_patch_positions(self) -> set[int]:
        return set(np.flatnonzero(self.patch_mask).tolist())

    def wpa_label_map(self) -> dict[int, int]:
        return {int(i): int(self.wpa_labels[i]) for i in np.flatnonzero(self.wpa_labels != NO_LABEL)}

    def to_json(self) -> str:
        L_prime = sorted(self.masked_text_positions)
        return json.dumps({
            "masked_text_positions": L_prime,
            "text_replacements": {
                str(p): (REPLACEMENT_NAMES[int(self.replacement[p])]
                         + (f"({int(self.input_ids[p])})" if self.replacement[p] == RANDOM else ""))
                for p in L_prime
            },
            "masked_patch_positions": sorted(self.masked_patch_positions),
            "mim_targets": {str(m): int(self.mim_targets[m]) for m in sorted(self.masked_patch_positions)},
            "wpa_labels": {str(k): ("aligned" if v == ALIGNED else "unaligned")
                           for k, v in self.wpa_label_map().items()},
            "blocks": [[b.top, b.left, b.height, b.width] for b in self.blocks],
        }, indent=2)


def build_plan(
    enc: EncodedInput,
    cfg: MaskingConfig,
    rng: np.random.Generator | int,
    text_vocab_size: int,
    image_vocab_size: int,
) -> MaskingPlan:
    """Sample text spans, replacements, image blocks, MIM targets and WPA labels.

    RANDOM replacements draw uniformly from the non-special ids below
    ``text_vocab_size``; pass the tokenizer's size, not the embedding size.

    Layout boxes are untouched; only token ids and (in the model) patch
    embeddings are corrupted.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    L, M = enc.text_len, enc.num_patches
    real_positions = np.flatnonzero(enc.real_text)

    span = sample_text_spans(len(real_positions), cfg, rng)
    text_mask = np.zeros(L, dtype=bool)
    text_mask[real_positions[sorted(span)]] = True

    replacement = np.full(L, KEEP, dtype=np.int8)
    input_ids = enc.token_ids.copy()
    first_word_id = Vocabulary.num_special
    for pos in np.flatnonzero(text_mask):
        u = rng.random()
        if u < cfg.mask_prob:
            replacement[pos] = MASK
            input_ids[pos] = Vocabulary.mask_id
        elif u < cfg.mask_prob + cfg.random_prob:
            replacement[pos] = RANDOM
            input_ids[pos] = int(rng.integers(first_word_id, text_vocab_size))
        else:
            replacement[pos] = KEEP

    blocks = sample_image_block_list(enc.grid, cfg, rng)
    patch_mask = np.zeros(M, dtype=bool)
    for b in blocks:
        patch_mask[b.cells(enc.grid)] = True

    mim_targets = np.full(M, NO_TARGET, dtype=np.int64)
    if patch_mask.any():
        tokens = tokenize_image(enc.patch_pixels, image_vocab_size, enc.channels)
        mim_targets[patch_mask] = tokens[patch_mask]

    labels = build_wpa_labels(
        {int(p): enc.incidence[p] for p in real_positions},
        set(np.flatnonzero(text_mask).tolist()),
        set(np.flatnonzero(patch_mask).tolist()),
    )
    wpa = np.full(L, NO_LABEL, dtype=np.int64)
    for pos, z in labels.items():
        wpa[pos] = z

    return MaskingPlan(
        text_mask=text_mask,
        replacement=replacement,
        input_ids=input_ids,
        patch_mask=patch_mask,
        mim_targets=mim_targets,
        wpa_labels=wpa,
        blocks=blocks,
    )


def empty_plan(enc: EncodedInput) -> MaskingPlan:
    L, M = enc.text_len, enc.num_patches
    wpa = np.where(enc.real_text, ALIGNED, NO_LABEL).astype(np.int64)
    return MaskingPlan(
        text_mask=np.zeros(L, dtype=bool),
        replacement=np.full(L, KEEP, dtype=np.int8),
        input_ids=enc.token_ids.copy(),
        patch_mask=np.zeros(M, dtype=bool),
        mim_targets=np.full(M, NO_TARGET, dtype=np.int64),
        wpa_labels=wpa,
    )
