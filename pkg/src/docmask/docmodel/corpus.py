"""JSON-lines corpus files and the two on-disk image formats.

Corpus line shape::

    {"id": ..., "words": [...], "boxes": [[x0, y0, x1, y1], ...],
     "segment_ids": [...], "image": "<path relative to the corpus file>",
     "labels": {...}}

Images are binary PPM (P6, maxval 255, three channels) or the raw
``LFIMG1`` tensor format: the magic, then C, H, W as little-endian uint32,
then the ``(C, H, W)`` bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

from ..errors import CorpusIOError, CorpusParseError, DataError, FormatError
from ..geometry import PixelBox
from .records import DocumentRecord

LFIMG_MAGIC = b"LFIMG1"
_LFIMG_HEADER = struct.Struct("<III")


def write_image(image: np.ndarray, path) -> None:
    path = Path(path)
    if path.suffix == ".ppm":
        if image.shape[0] != 3:
            raise FormatError(f"PPM needs 3 channels, got {image.shape[0]}")
        Image.fromarray(np.ascontiguousarray(image.transpose(1, 2, 0))).save(path, format="PPM")
    else:
        c, h, w = image.shape
        with open(path, "wb") as f:
            f.write(LFIMG_MAGIC)
            f.write(_LFIMG_HEADER.pack(c, h, w))
            f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise CorpusIOError(path)
    with open(path, "rb") as f:
        head = f.read(len(LFIMG_MAGIC))
        if head == LFIMG_MAGIC:
            c, h, w = _LFIMG_HEADER.unpack(f.read(_LFIMG_HEADER.size))
            data = f.read()
            if len(data) != c * h * w:
                raise FormatError(f"{path}: expected {c * h * w} pixel bytes, found {len(data)}")
            return np.frombuffer(data, dtype=np.uint8).reshape(c, h, w).copy()
    if head[:2] != b"P6":
        raise FormatError(f"{path}: neither P6 PPM nor LFIMG1")
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise FormatError(f"{path}: PPM must be 8-bit RGB, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).transpose(2, 0, 1).copy()


def _record_from_json(obj: dict, base: Path, line_no: int) -> DocumentRecord:
    try:
        words = obj["words"]
        raw_boxes = obj["boxes"]
        seg_ids = obj["segment_ids"]
        image_rel = obj["image"]
        doc_id = obj["id"]
    except (KeyError, TypeError) as e:
        raise CorpusParseError(line_no, f"missing field {e}") from None
    if not (len(words) == len(raw_boxes) == len(seg_ids)):
        raise CorpusParseError(
            line_no, f"{len(words)} words, {len(raw_boxes)} boxes, {len(seg_ids)} segment ids")
    try:
        boxes = [PixelBox(*map(int, b)) for b in raw_boxes]
    except (TypeError, ValueError) as e:
        raise CorpusParseError(line_no, f"bad box: {e}") from None
    image = read_image(base / image_rel)
    try:
        return DocumentRecord(
            id=str(doc_id),
            words=[str(w) for w in words],
            boxes=boxes,
            segment_ids=[int(s) for s in seg_ids],
            image=image,
            labels=obj.get("labels"),
        )
    except DataError as e:
        raise CorpusParseError(line_no, str(e)) from None


def read_corpus(path) -> Iterator[DocumentRecord]:
    """Yield records in file order. Blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise CorpusIOError(path, "missing corpus file")
    base = path.parent
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusParseError(line_no, f"invalid JSON: {e.msg}") from None
            if not isinstance(obj, dict):
                raise CorpusParseError(line_no, "record is not an object")
            yield _record_from_json(obj, base, line_no)


def write_corpus(docs: Iterable[DocumentRecord], path, image_format: str = "ppm") -> Path:
    """Write ``path`` plus one image per record under ``<stem>_images/``."""
    if image_format not in ("ppm", "lfimg"):
        raise FormatError(f"unknown image format {image_format!r}")
    path = Path(path)
    img_dir = path.parent / f"{path.stem}_images"
    img_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for d in docs:
            fmt = image_format if d.image.shape[0] == 3 else "lfimg"
            rel = Path(img_dir.name) / f"{d.id}.{fmt}"
            write_image(d.image, path.parent / rel)
            obj = {
                "id": d.id,
                "words": d.words,
                "boxes": [b.as_list() for b in d.boxes],
                "segment_ids": d.segment_ids,
                "image": rel.as_posix(),
            }
            if d.labels is not None:
                obj["labels"] = d.labels
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")
    return path
