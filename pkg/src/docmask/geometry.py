"""Layout coordinates and the patch grid.

Pixel boxes use a top-left origin. Normalized boxes live on the integer
range [0, 1000]. Patches are indexed row-major: ``k = row * cols + col``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from .errors import GridError, InvalidBoxError, InvalidPageError

NORM_MAX = 1000


@dataclass(frozen=True)
class PixelBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if min(self.x0, self.y0, self.x1, self.y1) < 0:
            raise InvalidBoxError(f"negative coordinate in {self.as_list()}")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise InvalidBoxError(f"inverted box {self.as_list()}")

    def __iter__(self) -> Iterator[int]:
        return iter((self.x0, self.y0, self.x1, self.y1))

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    def union(self, other: PixelBox) -> PixelBox:
        return PixelBox(
            min(self.x0, other.x0),
            min(self.y0, other.y0),
            max(self.x1, other.x1),
            max(self.y1, other.y1),
        )


@dataclass(frozen=True)
class NormBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if any(c < 0 or c > NORM_MAX for c in coords):
            raise InvalidBoxError(f"normalized coordinate outside [0, {NORM_MAX}]: {list(coords)}")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise InvalidBoxError(f"inverted box {list(coords)}")

    def __iter__(self) -> Iterator[int]:
        return iter((self.x0, self.y0, self.x1, self.y1))

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @property
    def is_degenerate(self) -> bool:
        return self.x0 == self.x1 or self.y0 == self.y1


ZERO_BOX = NormBox(0, 0, 0, 0)


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    patch_size: int
    image_height: int
    image_width: int

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def cell(self, k: int) -> tuple[int, int]:
        return divmod(k, self.cols)

    def cell_box(self, k: int) -> NormBox:
        """Largest integer box inside cell ``k``'s normalized extent.

        Cell edges sit at fractional positions (1000/14 = 71.43...), so the
        lower edges round up and the upper edges round down; the resulting
        box overlaps no neighbouring cell.
        """
        r, c = self.cell(k)
        return NormBox(
            -((-c * NORM_MAX) // self.cols),
            -((-r * NORM_MAX) // self.rows),
            ((c + 1) * NORM_MAX) // self.cols,
            ((r + 1) * NORM_MAX) // self.rows,
        )

    def cell_boxes(self) -> list[NormBox]:
        return [self.cell_box(k) for k in range(self.num_patches)]


def _half_up(num: int, den: int) -> int:
    # floor(num/den + 1/2) in exact integer arithmetic
    return (2 * num + den) // (2 * den)


def normalize_box(b: PixelBox, page_w: int, page_h: int) -> NormBox:
    """Scale a pixel box to the [0, 1000] layout range."""
    if page_w <= 0 or page_h <= 0:
        raise InvalidPageError(f"page dimensions must be positive, got {page_w}x{page_h}")
    if b.x1 > page_w or b.y1 > page_h:
        raise InvalidBoxError(f"box {b.as_list()} exceeds page {page_w}x{page_h}")

    def scale(v: int, dim: int) -> int:
        return min(max(_half_up(v * NORM_MAX, dim), 0), NORM_MAX)

    return NormBox(scale(b.x0, page_w), scale(b.y0, page_h), scale(b.x1, page_w), scale(b.y1, page_h))


def make_patch_grid(h: int, w: int, p: int) -> PatchGrid:
    if p <= 0 or h <= 0 or w <= 0:
        raise GridError(f"image and patch sizes must be positive, got h={h} w={w} p={p}")
    if h % p or w % p:
        raise GridError(f"patch size {p} does not divide image {h}x{w}")
    return PatchGrid(rows=h // p, cols=w // p, patch_size=p, image_height=h, image_width=w)


def _overlapping_cells(lo: int, hi: int, n: int) -> range:
    # cells j with [j*1000/n, (j+1)*1000/n) intersecting (lo, hi) with positive length:
    #   lo*n < (j+1)*1000  and  hi*n > j*1000
    first = (lo * n) // NORM_MAX
    last = -((-hi * n) // NORM_MAX) - 1
    return range(max(first, 0), min(last, n - 1) + 1)


def word_patches(b: NormBox, g: PatchGrid) -> frozenset[int]:
    """Patch indices whose cells overlap ``b`` with positive area.

    A zero-area box maps to the single cell holding its top-left corner.
    """
    if b.is_degenerate:
        c = min((b.x0 * g.cols) // NORM_MAX, g.cols - 1)
        r = min((b.y0 * g.rows) // NORM_MAX, g.rows - 1)
        return frozenset({g.index(r, c)})
    cols = _overlapping_cells(b.x0, b.x1, g.cols)
    rows = _overlapping_cells(b.y0, b.y1, g.rows)
    return frozenset(g.index(r, c) for r in rows for c in cols)


def box_center(b: NormBox) -> tuple[int, int]:
    return (b.x0 + b.x1) // 2, (b.y0 + b.y1) // 2


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


__all__ = [
    "NORM_MAX",
    "NormBox",
    "PatchGrid",
    "PixelBox",
    "ZERO_BOX",
    "box_center",
    "ceil_div",
    "make_patch_grid",
    "normalize_box",
    "word_patches",
]
