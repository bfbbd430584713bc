"""Document records and the word-level vocabulary."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from ..errors import ConfigError, FormatError, InvalidBoxError
from ..geometry import PixelBox


@dataclass(eq=False)
class DocumentRecord:
    """One page: words in reading order, their pixel boxes and segment ids, and the raster.

    ``image`` is a ``uint8`` array shaped ``(C, H, W)``. ``labels`` may carry
    ``word_labels`` (BIO tag strings, one per word), ``doc_class`` (int) and
    ``answer`` (``{"start", "end"}`` word indices, optional ``"question"``).
    """

    id: str
    words: list[str]
    boxes: list[PixelBox]
    segment_ids: list[int]
    image: np.ndarray
    labels: dict | None = None

    def __post_init__(self):
        if not (len(self.words) == len(self.boxes) == len(self.segment_ids)):
            raise FormatError(
                f"{self.id}: {len(self.words)} words, {len(self.boxes)} boxes, "
                f"{len(self.segment_ids)} segment ids")
        img = np.asarray(self.image)
        if img.ndim != 3 or img.dtype != np.uint8:
            raise FormatError(f"{self.id}: image must be uint8 (C, H, W), got {img.dtype} {img.shape}")
        self.image = img
        _, h, w = img.shape
        for b in self.boxes:
            if b.x1 > w or b.y1 > h:
                raise InvalidBoxError(f"{self.id}: box {b.as_list()} outside {w}x{h} page")
        if self.labels and "word_labels" in self.labels:
            if len(self.labels["word_labels"]) != len(self.words):
                raise FormatError(f"{self.id}: word_labels length does not match words")

    @property
    def page_width(self) -> int:
        return self.image.shape[2]

    @property
    def page_height(self) -> int:
        return self.image.shape[1]

    def segment_boxes(self) -> dict[int, PixelBox]:
        out: dict[int, PixelBox] = {}
        for seg, box in zip(self.segment_ids, self.boxes):
            out[seg] = out[seg].union(box) if seg in out else box
        return out

    def __eq__(self, other):
        if not isinstance(other, DocumentRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.words == other.words
            and self.boxes == other.boxes
            and self.segment_ids == other.segment_ids
            and self.image.shape == other.image.shape
            and np.array_equal(self.image, other.image)
            and (self.labels or None) == (other.labels or None)
        )


class Tokenizer(Protocol):
    """Anything that maps a word to one token id."""

    def token_id(self, word: str) -> int: ...

    def __len__(self) -> int: ...


PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, SEP, MASK, UNK)


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        toks = list(self.tokens)
        if tuple(toks[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            toks = list(SPECIAL_TOKENS) + [t for t in toks if t not in SPECIAL_TOKENS]
        if len(set(toks)) != len(toks):
            raise ConfigError("duplicate tokens in vocabulary")
        self.tokens = toks
        self._ids = {t: i for i, t in enumerate(toks)}

    pad_id = 0
    cls_id = 1
    sep_id = 2
    mask_id = 3
    unk_id = 4
    num_special = len(SPECIAL_TOKENS)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def num_words(self) -> int:
        return len(self.tokens) - self.num_special

    def token_id(self, word: str) -> int:
        return self._ids.get(word, self.unk_id)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    @classmethod
    def build(cls, words: Iterable[str], max_size: int | None = None) -> Vocabulary:
        """Most frequent words first, ties broken alphabetically."""
        counts = Counter(w for w in words if w not in SPECIAL_TOKENS)
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        if max_size is not None:
            ranked = ranked[: max(max_size - len(SPECIAL_TOKENS), 0)]
        return cls(list(SPECIAL_TOKENS) + ranked)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.tokens, ensure_ascii=False, indent=0) + "\n")

    @classmethod
    def load(cls, path) -> Vocabulary:
        return cls(json.loads(Path(path).read_text()))
