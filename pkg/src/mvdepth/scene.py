"""Procedural paired building scenes.

A shoebox scene is a handful of axis-aligned boxes resting on the ground
plane (z = 0). Its detailed twin shares the exact same geometry and adds
surface detail (floor bands, window grids, palette, roof treatment) that is
resolved at shading time, so both scenes have identical depth.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FLOOR_HEIGHT = 3.6
_TOL = 1e-9


class Footprint(str, enum.Enum):
    I = "I"
    L = "L"
    U = "U"
    O = "O"
    COMPLEX = "COMPLEX"


class RoofStyle(str, enum.Enum):
    FLAT = "FLAT"
    PARAPET = "PARAPET"


@dataclass(frozen=True)
class Box:
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min_corner)
        hi = tuple(float(v) for v in self.max_corner)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners must be 3-vectors")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate box {lo} -> {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def extent(self) -> np.ndarray:
        return np.subtract(self.max_corner, self.min_corner)

    @property
    def height(self) -> float:
        return self.max_corner[2] - self.min_corner[2]

    def long_axis(self) -> int:
        """Horizontal axis (0 = x, 1 = y) along which the box is longest."""
        ext = self.extent
        return 0 if ext[0] >= ext[1] else 1


@dataclass(frozen=True)
class BoundingSphere:
    center: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class ShoeboxScene:
    scene_id: str
    boxes: tuple[Box, ...]
    footprint_class: Footprint
    seed: int | None = None

    def __post_init__(self):
        if not self.boxes:
            raise ValueError("a scene needs at least one box")
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "footprint_class", Footprint(self.footprint_class))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([b.min_corner for b in self.boxes], axis=0)
        hi = np.max([b.max_corner for b in self.boxes], axis=0)
        return lo, hi

    def centroid(self) -> np.ndarray:
        lo, hi = self.bounds()
        return (lo + hi) / 2.0

    def bounding_sphere(self) -> BoundingSphere:
        lo, hi = self.bounds()
        c = (lo + hi) / 2.0
        return BoundingSphere(tuple(c), float(np.linalg.norm(hi - lo) / 2.0))


@dataclass(frozen=True)
class DetailedScene:
    base: ShoeboxScene
    floor_count_per_box: tuple[int, ...]
    window_grid: tuple[tuple[int, int], ...]
    facade_palette: tuple[tuple[int, int, int], ...]
    roof_style: RoofStyle = RoofStyle.FLAT
    palette_name: str = field(default="", compare=False)

    def __post_init__(self):
        n = len(self.base.boxes)
        if len(self.floor_count_per_box) != n or len(self.window_grid) != n:
            raise ValueError("per-box detail lists must match the box count")
        if any(f < 1 for f in self.floor_count_per_box):
            raise ValueError("floor counts must be >= 1")
        if len(self.facade_palette) != 3:
            raise ValueError("palette needs exactly 3 colors")
        for color in self.facade_palette:
            if len(color) != 3 or not all(0 <= c <= 255 for c in color):
                raise ValueError(f"palette color out of range: {color}")
        for (rows, cols), box in zip(self.window_grid, self.base.boxes):
            if rows < 1 or cols < 1:
                raise ValueError("window grid must be at least 1x1")
            if rows * 0.5 > box.height or cols * 0.5 > float(max(box.extent[:2])):
                raise ValueError("window grid does not fit on the box faces")
        object.__setattr__(self, "roof_style", RoofStyle(self.roof_style))
        if not self.palette_name:
            object.__setattr__(self, "palette_name", nearest_palette(self.facade_palette))

    @property
    def scene_id(self) -> str:
        return self.base.scene_id

    @property
    def boxes(self) -> tuple[Box, ...]:
        return self.base.boxes

    def bounds(self):
        return self.base.bounds()

    def centroid(self):
        return self.base.centroid()

    def bounding_sphere(self):
        return self.base.bounding_sphere()


# Wall, window, roof.
PALETTES: dict[str, tuple[tuple[int, int, int], ...]] = {
    "red brick": ((168, 72, 56), (52, 64, 86), (92, 90, 96)),
    "white stone": ((222, 214, 198), (66, 88, 112), (124, 122, 126)),
    "gray concrete": ((150, 150, 146), (38, 54, 76), (98, 96, 102)),
    "ochre render": ((204, 160, 88), (58, 58, 82), (132, 82, 60)),
    "blue glass": ((108, 140, 172), (28, 48, 80), (198, 198, 204)),
}


def nearest_palette(palette: Sequence[Sequence[int]]) -> str:
    arr = np.asarray(palette, dtype=float)
    return min(PALETTES, key=lambda k: float(np.sum((np.asarray(PALETTES[k], float) - arr) ** 2)))


# -- adjacency ---------------------------------------------------------------


def boxes_touch(a: Box, b: Box) -> bool:
    """True when two boxes share a face patch of positive area."""
    for k in range(3):
        if abs(a.max_corner[k] - b.min_corner[k]) < _TOL or abs(b.max_corner[k] - a.min_corner[k]) < _TOL:
            others = [j for j in range(3) if j != k]
            overlap = [
                min(a.max_corner[j], b.max_corner[j]) - max(a.min_corner[j], b.min_corner[j]) for j in others
            ]
            if all(o > _TOL for o in overlap):
                return True
    return False


def boxes_overlap(a: Box, b: Box) -> bool:
    return all(
        min(a.max_corner[k], b.max_corner[k]) - max(a.min_corner[k], b.min_corner[k]) > _TOL for k in range(3)
    )


def adjacency(boxes: Sequence[Box]) -> dict[int, set[int]]:
    graph: dict[int, set[int]] = {i: set() for i in range(len(boxes))}
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if boxes_touch(boxes[i], boxes[j]):
                graph[i].add(j)
                graph[j].add(i)
    return graph


def _contact_side(middle: Box, other: Box) -> tuple[int, int]:
    """(axis, sign) of the face of ``middle`` that ``other`` touches."""
    for k in range(2):
        if abs(middle.max_corner[k] - other.min_corner[k]) < _TOL:
            return k, 1
        if abs(middle.min_corner[k] - other.max_corner[k]) < _TOL:
            return k, -1
    return 2, 0


def classify_footprint(boxes: Sequence[Box]) -> Footprint:
    graph = adjacency(boxes)
    n = len(boxes)
    if n == 1:
        return Footprint.I
    degrees = {i: len(nb) for i, nb in graph.items()}
    n_edges = sum(degrees.values()) // 2
    if n == 2 and n_edges == 1:
        a, b = boxes
        return Footprint.L if a.long_axis() != b.long_axis() else Footprint.COMPLEX
    if n >= 4 and n_edges == n and all(d == 2 for d in degrees.values()):
        return Footprint.O
    if n == 3 and n_edges == 2:
        middle = next(i for i, d in degrees.items() if d == 2)
        ends = sorted(graph[middle])
        sides = {_contact_side(boxes[middle], boxes[e]) for e in ends}
        if len(sides) == 1 and boxes[ends[0]].long_axis() != boxes[middle].long_axis():
            return Footprint.U
    return Footprint.COMPLEX


# -- generation --------------------------------------------------------------


def _floors_box(x0, x1, y0, y1, floors) -> Box:
    return Box((x0, y0, 0.0), (x1, y1, floors * FLOOR_HEIGHT))


def _footprint_boxes(rng: np.random.Generator, cls: Footprint) -> list[Box]:
    def u(a, b):
        return round(float(rng.uniform(a, b)), 1)

    def floors():
        return int(rng.integers(3, 8))

    depth = u(10, 16)
    if cls is Footprint.I:
        return [_floors_box(0.0, u(30, 56), 0.0, depth, floors())]
    if cls is Footprint.L:
        length = u(30, 56)
        wing_w = u(10, 14)
        wing_d = u(wing_w + 4, wing_w + 14)
        return [
            _floors_box(0.0, length, 0.0, depth, floors()),
            _floors_box(length - wing_w, length, depth, depth + wing_d, floors()),
        ]
    wing_w1, wing_w2 = u(10, 14), u(10, 14)
    length = u(wing_w1 + wing_w2 + 10, wing_w1 + wing_w2 + 30)
    wing_d = u(max(wing_w1, wing_w2) + 4, max(wing_w1, wing_w2) + 16)
    boxes = [
        _floors_box(0.0, length, 0.0, depth, floors()),
        _floors_box(0.0, wing_w1, depth, depth + wing_d, floors()),
        _floors_box(length - wing_w2, length, depth, depth + wing_d, floors()),
    ]
    if cls is Footprint.U:
        return boxes
    if cls is Footprint.O:
        north = u(10, 16)
        boxes.append(_floors_box(0.0, length, depth + wing_d, depth + wing_d + north, floors()))
        return boxes
    # COMPLEX: U plus an annex on the far side of the base bar.
    half = u(5, 8)
    mid = round(length / 2.0, 1)
    boxes.append(_floors_box(mid - half, mid + half, -u(half * 2 + 4, half * 2 + 12), 0.0, floors()))
    return boxes


def _centered(boxes: list[Box]) -> list[Box]:
    lo = np.min([b.min_corner for b in boxes], axis=0)
    hi = np.max([b.max_corner for b in boxes], axis=0)
    shift = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, 0.0])
    return [Box(tuple(np.subtract(b.min_corner, shift)), tuple(np.subtract(b.max_corner, shift))) for b in boxes]


def generate_paired_scene(seed: int, footprint_class: Footprint | str) -> tuple[ShoeboxScene, DetailedScene]:
    """Build a deterministic (shoebox, detailed) pair for ``seed`` and class."""
    cls = Footprint(footprint_class)
    key = int(seed) % (1 << 64)
    rng = np.random.default_rng([key, list(Footprint).index(cls)])
    boxes = _centered(_footprint_boxes(rng, cls))
    scene_id = f"{cls.value.lower()}_{key:016x}"
    shoebox = ShoeboxScene(scene_id, tuple(boxes), cls, seed=int(seed))

    floors = tuple(int(round(b.height / FLOOR_HEIGHT)) for b in boxes)
    bay = float(rng.uniform(3.2, 4.8))
    windows = tuple((f, max(2, int(round(float(max(b.extent[:2])) / bay)))) for f, b in zip(floors, boxes))
    name = list(PALETTES)[int(rng.integers(len(PALETTES)))]
    jitter = rng.integers(-8, 9, size=(3, 3))
    palette = tuple(
        tuple(int(np.clip(c + j, 0, 235)) for c, j in zip(color, jit)) for color, jit in zip(PALETTES[name], jitter)
    )
    roof = RoofStyle.PARAPET if rng.random() < 0.5 else RoofStyle.FLAT
    detailed = DetailedScene(shoebox, floors, windows, palette, roof, palette_name=name)
    return shoebox, detailed


def scene_prompt(scene: DetailedScene) -> str:
    return (
        f"{scene.base.footprint_class.value}-shaped university building, "
        f"{max(scene.floor_count_per_box)} floors, {scene.palette_name} facade, "
        f"{scene.roof_style.value.lower()} roof"
    )


# -- serialization -----------------------------------------------------------


def scene_to_dict(scene: DetailedScene) -> dict:
    base = scene.base
    return {
        "scene_id": base.scene_id,
        "footprint_class": base.footprint_class.value,
        "seed": base.seed,
        "boxes": [{"min": list(b.min_corner), "max": list(b.max_corner)} for b in base.boxes],
        "detail": {
            "floors": list(scene.floor_count_per_box),
            "windows": [list(w) for w in scene.window_grid],
            "palette": [list(c) for c in scene.facade_palette],
            "roof": scene.roof_style.value,
        },
    }


def scene_from_dict(doc: dict) -> tuple[ShoeboxScene, DetailedScene]:
    boxes = tuple(Box(tuple(b["min"]), tuple(b["max"])) for b in doc["boxes"])
    shoebox = ShoeboxScene(doc["scene_id"], boxes, Footprint(doc["footprint_class"]), seed=doc.get("seed"))
    detail = doc["detail"]
    detailed = DetailedScene(
        shoebox,
        tuple(int(f) for f in detail["floors"]),
        tuple((int(r), int(c)) for r, c in detail["windows"]),
        tuple(tuple(int(v) for v in c) for c in detail["palette"]),
        RoofStyle(detail["roof"]),
    )
    return shoebox, detailed


def dumps_scene(scene: DetailedScene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True, indent=1)

