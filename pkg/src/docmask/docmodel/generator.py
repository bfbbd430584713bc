"""Synthetic form-like documents.

Each page holds 1-8 segments laid out top to bottom; a segment is one line of
1-12 words, each word drawn as a filled rectangle whose colour is a function
of the word. Segments carry an entity type (header / question / answer /
other), words are BIO-tagged from it, and the document class selects which
lexicon the words come from. ``doc_class = seed % num_doc_classes`` so any
contiguous run of seeds is class-balanced.
"""

from __future__ import annotations

import random
import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..geometry import PixelBox
from .records import DocumentRecord

ENTITY_TYPES = ("HEADER", "QUESTION", "ANSWER", "OTHER")
TAGS = ("O", "B-HEADER", "I-HEADER", "B-QUESTION", "I-QUESTION", "B-ANSWER", "I-ANSWER")

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class GeneratorStyle:
    name: str = "synth"
    page_width: int = 512
    page_height: int = 384
    channels: int = 3
    min_segments: int = 1
    max_segments: int = 8
    min_words: int = 1
    max_words: int = 12
    num_doc_classes: int = 4
    words_per_pool: int = 12
    char_width: int = 3
    word_height: int = 10
    line_pitch: int = 20
    word_gap: int = 5
    margin: int = 8


@lru_cache(maxsize=16)
def lexicon(num_doc_classes: int, words_per_pool: int) -> dict[tuple[str, int], tuple[str, ...]]:
    """Disjoint word pools keyed by (entity type, document class)."""
    rng = random.Random(f"lexicon/{num_doc_classes}/{words_per_pool}")
    seen: set[str] = set()
    pools = {}
    for etype in ENTITY_TYPES:
        for cls in range(num_doc_classes):
            pool = []
            while len(pool) < words_per_pool:
                n_syll = rng.randint(2, 4)
                w = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(n_syll))
                if w not in seen:
                    seen.add(w)
                    pool.append(w)
            pools[(etype, cls)] = tuple(pool)
    return pools


def word_color(word: str) -> tuple[int, int, int]:
    h = zlib.crc32(word.encode("utf-8"))
    # keep every channel well below white
    return ((h & 0xFF) * 3 // 4, ((h >> 8) & 0xFF) * 3 // 4, ((h >> 16) & 0xFF) * 3 // 4)


def _segment_types(rng: random.Random, n: int) -> list[str]:
    types = ["HEADER" if rng.random() < 0.7 else "QUESTION"]
    while len(types) < n:
        r = rng.random()
        if types[-1] == "QUESTION" and r < 0.8:
            types.append("ANSWER")
        elif r < 0.6:
            types.append("QUESTION")
        else:
            types.append("OTHER")
    return types


def _tag(etype: str, first: bool) -> str:
    if etype == "OTHER":
        return "O"
    return ("B-" if first else "I-") + etype


def generate_document(seed: int, style: GeneratorStyle = GeneratorStyle()) -> DocumentRecord:
    rng = random.Random(seed)
    doc_class = seed % style.num_doc_classes
    pools = lexicon(style.num_doc_classes, style.words_per_pool)
    n_seg = rng.randint(style.min_segments, style.max_segments)

    words: list[str] = []
    boxes: list[PixelBox] = []
    seg_ids: list[int] = []
    tags: list[str] = []
    segments: list[tuple[int, int, str]] = []

    usable_w = style.page_width - 2 * style.margin
    slack_y = style.page_height - 2 * style.margin - n_seg * style.line_pitch
    y = style.margin
    for seg, etype in enumerate(_segment_types(rng, n_seg)):
        n_words = rng.randint(style.min_words, style.max_words)
        chosen = [rng.choice(pools[(etype, doc_class)]) for _ in range(n_words)]
        widths = [len(w) * style.char_width + 4 for w in chosen]
        line_w = sum(widths) + style.word_gap * (n_words - 1)
        if line_w > usable_w:
            raise ValueError(f"style {style.name}: segment of width {line_w} does not fit the page")
        if slack_y > 0:
            extra = rng.randint(0, slack_y // max(n_seg - seg, 1))
            slack_y -= extra
            y += extra
        x = style.margin + rng.randint(0, usable_w - line_w)
        start = len(words)
        for i, (w, width) in enumerate(zip(chosen, widths)):
            words.append(w)
            boxes.append(PixelBox(x, y, x + width, y + style.word_height))
            seg_ids.append(seg)
            tags.append(_tag(etype, i == 0))
            x += width + style.word_gap
        segments.append((start, len(words) - 1, etype))
        y += style.line_pitch

    image = render(words, boxes, style)
    labels: dict = {"word_labels": tags, "doc_class": doc_class}
    answers = [(s, e) for s, e, t in segments if t == "ANSWER"]
    if answers:
        s, e = answers[0]
        labels["answer"] = {"start": s, "end": e}
    return DocumentRecord(
        id=f"{style.name}-{seed:06d}",
        words=words,
        boxes=boxes,
        segment_ids=seg_ids,
        image=image,
        labels=labels,
    )


def render(words: list[str], boxes: list[PixelBox], style: GeneratorStyle) -> np.ndarray:
    """White page with each word's box [x0, x1) x [y0, y1) filled in its colour."""
    img = np.full((style.channels, style.page_height, style.page_width), 255, dtype=np.uint8)
    for w, b in zip(words, boxes):
        color = word_color(w)
        for c in range(style.channels):
            img[c, b.y0:b.y1, b.x0:b.x1] = color[c % 3]
    return img


def generate_corpus(n: int, style: GeneratorStyle = GeneratorStyle(), start_seed: int = 0) -> list[DocumentRecord]:
    return [generate_document(s, style) for s in range(start_seed, start_seed + n)]
