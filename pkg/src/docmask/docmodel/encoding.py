"""Turn a DocumentRecord into fixed-length model inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ModelConfig
from ..errors import ConfigError, FormatError
from ..geometry import PatchGrid, make_patch_grid, normalize_box, word_patches
from .records import DocumentRecord, Tokenizer, Vocabulary


@dataclass(eq=False)
class EncodedInput:
    doc_id: str
    token_ids: np.ndarray  # (L,) int64
    token_boxes: np.ndarray  # (L, 4) int64, normalized
    attention: np.ndarray  # (L,) bool
    word_index: np.ndarray  # (L,) int64, -1 for [CLS]/[SEP]/[PAD]
    patch_pixels: np.ndarray  # (M, C*P*P) uint8, each patch flattened (C, P, P)
    patch_boxes: np.ndarray  # (M, 4) int64
    incidence: tuple[frozenset[int], ...]  # per token; empty for specials
    grid: PatchGrid
    channels: int

    @property
    def real_text(self) -> np.ndarray:
        return self.word_index >= 0

    @property
    def num_words(self) -> int:
        return int(self.real_text.sum())

    @property
    def text_len(self) -> int:
        return len(self.token_ids)

    @property
    def num_patches(self) -> int:
        return len(self.patch_pixels)


def resize_nearest(image: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resize of a (C, H, W) raster using integer index maps."""
    _, hs, ws = image.shape
    rows = (np.arange(h) * hs) // h
    cols = (np.arange(w) * ws) // w
    return image[:, rows][:, :, cols]


def split_patches(image: np.ndarray, p: int) -> np.ndarray:
    """(C, H, W) -> (M, C*P*P) with patches in row-major grid order."""
    c, h, w = image.shape
    r, q = h // p, w // p
    return (
        image.reshape(c, r, p, q, p)
        .transpose(1, 3, 0, 2, 4)
        .reshape(r * q, c * p * p)
    )


def encode_document(d: DocumentRecord, cfg: ModelConfig, vocab: Tokenizer) -> EncodedInput:
    if isinstance(vocab, Vocabulary) and vocab.num_words == 0:
        raise ConfigError("vocabulary has no word tokens")
    if len(vocab) > cfg.text_vocab_size:
        raise ConfigError(f"vocabulary size {len(vocab)} exceeds text_vocab_size {cfg.text_vocab_size}")
    if d.image.shape[0] != cfg.channels:
        raise FormatError(f"{d.id}: image has {d.image.shape[0]} channels, expected {cfg.channels}")

    L = cfg.max_text_len
    grid = make_patch_grid(cfg.image_height, cfg.image_width, cfg.patch_size)
    n = min(len(d.words), L - 2)
    seg_norm = {
        seg: normalize_box(box, d.page_width, d.page_height)
        for seg, box in d.segment_boxes().items()
    }

    ids = np.full(L, Vocabulary.pad_id, dtype=np.int64)
    boxes = np.zeros((L, 4), dtype=np.int64)
    attention = np.zeros(L, dtype=bool)
    word_index = np.full(L, -1, dtype=np.int64)
    incidence: list[frozenset[int]] = [frozenset()] * L

    ids[0] = Vocabulary.cls_id
    for i in range(n):
        pos = i + 1
        box = seg_norm[d.segment_ids[i]]
        ids[pos] = vocab.token_id(d.words[i])
        boxes[pos] = box.as_list()
        word_index[pos] = i
        incidence[pos] = word_patches(box, grid)
    ids[n + 1] = Vocabulary.sep_id
    attention[: n + 2] = True

    img = resize_nearest(d.image, cfg.image_height, cfg.image_width)
    patches = np.ascontiguousarray(split_patches(img, cfg.patch_size))
    patch_boxes = np.array([b.as_list() for b in grid.cell_boxes()], dtype=np.int64)

    return EncodedInput(
        doc_id=d.id,
        token_ids=ids,
        token_boxes=boxes,
        attention=attention,
        word_index=word_index,
        patch_pixels=patches,
        patch_boxes=patch_boxes,
        incidence=tuple(incidence),
        grid=grid,
        channels=cfg.channels,
    )
