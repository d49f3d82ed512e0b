"""Indoor scene model: floor polygon, categorized furniture, placements.

Scenes are strictly 2D: each furniture object is a footprint polygon plus a
scalar top height.  Sittable categories (sofa, chair) never block free-space
queries so that people can be placed on them.  Scenes are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import geometry as geo
from .errors import GenerationError, InvariantError, ParseError


class ObjectCategory(str, Enum):
    """The closed set of furniture categories a person can attend to.

    Declaration order is the stable feature index for every per-category
    vector in the pipeline.
    """

    SOFA = "sofa"
    CHAIR = "chair"
    TABLE = "table"
    TV = "tv"
    AIR_CONDITIONER = "air_conditioner"
    REFRIGERATOR = "refrigerator"
    SINK = "sink"
    LAMP = "lamp"
    PIANO = "piano"
    CABINET = "cabinet"
    SHELF = "shelf"
    WINDOW = "window"


CATEGORIES: tuple[ObjectCategory, ...] = tuple(ObjectCategory)
CATEGORY_INDEX: dict[ObjectCategory, int] = {c: i for i, c in enumerate(CATEGORIES)}
NUM_CATEGORIES = len(CATEGORIES)
SITTABLE = frozenset({ObjectCategory.SOFA, ObjectCategory.CHAIR})

SIT = "sit"
STAND = "stand"


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(eq=False)
class FurnitureObject:
    """One furniture item: footprint polygon (CCW, meters) + top height."""

    id: str
    category: ObjectCategory
    footprint: np.ndarray
    top_height: float
    attention_point: np.ndarray | None = None

    def __post_init__(self):
        self.footprint = _readonly(geo.as_polygon(self.footprint))
        if self.attention_point is None:
            self.attention_point = geo.polygon_centroid(self.footprint)
        self.attention_point = _readonly(np.asarray(self.attention_point, dtype=np.float64))
        self.top_height = float(self.top_height)
        self.validate()

    def validate(self):
        if not geo.polygon_is_simple(self.footprint):
            raise InvariantError(f"object {self.id!r}: footprint is not a simple polygon")
        if geo.polygon_signed_area(self.footprint) <= 0:
            raise InvariantError(
                f"object {self.id!r}: footprint must be counter-clockwise with positive area"
            )
        if self.top_height < 0:
            raise InvariantError(f"object {self.id!r}: top_height must be >= 0")
        if not geo.point_in_polygon(self.attention_point, self.footprint):
            raise InvariantError(f"object {self.id!r}: attention_point outside footprint")

    @property
    def sittable(self) -> bool:
        return self.category in SITTABLE

    def __eq__(self, other):
        if not isinstance(other, FurnitureObject):
            return NotImplemented
        return (
            self.id == other.id
            and self.category == other.category
            and np.array_equal(self.footprint, other.footprint)
            and self.top_height == other.top_height
            and np.array_equal(self.attention_point, other.attention_point)
        )


@dataclass(eq=False)
class Scene:
    """A single-room scene: floor polygon plus furniture objects."""

    id: str
    floor: np.ndarray
    objects: tuple[FurnitureObject, ...] = ()
    walkable_clearance: float = 0.30

    def __post_init__(self):
        self.floor = _readonly(geo.as_polygon(self.floor))
        self.objects = tuple(self.objects)
        self.validate()

    def validate(self):
        if not geo.polygon_is_simple(self.floor):
            raise InvariantError(f"scene {self.id!r}: floor is not a simple polygon")
        seen = set()
        for obj in self.objects:
            if obj.id in seen:
                raise InvariantError(f"{obj.id}")
            seen.add(obj.id)
            if not geo.polygon_contains_polygon(self.floor, obj.footprint):
                raise InvariantError(f"object {obj.id!r}: footprint outside floor polygon")

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.floor, other.floor)
            and self.walkable_clearance == other.walkable_clearance
            and self.objects == other.objects
        )

    # Cached geometry tables; scene is immutable so these never invalidate.
    @property
    def _blocking(self) -> tuple[FurnitureObject, ...]:
        cached = self.__dict__.get("_blocking_cache")
        if cached is None:
            cached = tuple(o for o in self.objects if not o.sittable)
            self.__dict__["_blocking_cache"] = cached
        return cached

    @property
    def _by_category(self) -> tuple[tuple[FurnitureObject, ...], ...]:
        cached = self.__dict__.get("_by_category_cache")
        if cached is None:
            groups = [[] for _ in CATEGORIES]
            for o in self.objects:
                groups[CATEGORY_INDEX[o.category]].append(o)
            cached = tuple(tuple(g) for g in groups)
            self.__dict__["_by_category_cache"] = cached
        return cached

    def bounds(self) -> tuple[float, float, float, float]:
        return geo.polygon_bounds(self.floor)


@dataclass(eq=False)
class Placement:
    """Position (meters) and heading (radians, normalized into [0, 2pi))."""

    position: np.ndarray
    heading: float

    def __post_init__(self):
        self.position = _readonly(np.asarray(self.position, dtype=np.float64))
        if self.position.shape != (2,):
            raise InvariantError("placement position must be a 2D point")
        self.heading = float(geo.wrap_angle(float(self.heading)))

    def __eq__(self, other):
        if not isinstance(other, Placement):
            return NotImplemented
        return np.array_equal(self.position, other.position) and self.heading == other.heading


# ---------------------------------------------------------------------------
# Geometric queries
# ---------------------------------------------------------------------------

def is_free_batch(scene: Scene, positions: np.ndarray, clearance: float) -> np.ndarray:
    """Mask of positions where a disk of the given radius fits.

    Free means: the disk lies inside the floor polygon and does not touch any
    non-sittable footprint.  Sittable footprints (sofa, chair) never block.
    """
    if clearance < 0:
        raise ValueError("clearance must be >= 0")
    pts = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    free = geo.points_in_polygon(pts, scene.floor)
    free &= geo.points_to_boundary_distance(pts, scene.floor) >= clearance
    for obj in scene._blocking:
        if not free.any():
            break
        xmin, ymin, xmax, ymax = geo.polygon_bounds(obj.footprint)
        near = (
            (pts[:, 0] >= xmin - clearance)
            & (pts[:, 0] <= xmax + clearance)
            & (pts[:, 1] >= ymin - clearance)
            & (pts[:, 1] <= ymax + clearance)
            & free
        )
        if not near.any():
            continue
        idx = np.flatnonzero(near)
        sub = pts[idx]
        blocked = geo.points_in_polygon(sub, obj.footprint)
        blocked |= geo.points_to_boundary_distance(sub, obj.footprint) < clearance
        free[idx[blocked]] = False
    return free


def is_free(scene: Scene, position, clearance: float) -> bool:
    return bool(is_free_batch(scene, np.asarray(position, dtype=np.float64)[None, :], clearance)[0])


def height_at_batch(scene: Scene, positions: np.ndarray) -> np.ndarray:
    """Max top height over objects covering each position; 0 on bare floor."""
    pts = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    heights = np.zeros(pts.shape[0])
    for obj in scene.objects:
        if obj.top_height <= 0:
            continue
        xmin, ymin, xmax, ymax = geo.polygon_bounds(obj.footprint)
        near = (
            (pts[:, 0] >= xmin - geo.BOUNDARY_EPS)
            & (pts[:, 0] <= xmax + geo.BOUNDARY_EPS)
            & (pts[:, 1] >= ymin - geo.BOUNDARY_EPS)
            & (pts[:, 1] <= ymax + geo.BOUNDARY_EPS)
        )
        if not near.any():
            continue
        idx = np.flatnonzero(near)
        covered = geo.points_in_polygon(pts[idx], obj.footprint)
        np.maximum.at(heights, idx[covered], obj.top_height)
    return heights


def height_at(scene: Scene, position) -> float:
    return float(height_at_batch(scene, np.asarray(position, dtype=np.float64)[None, :])[0])


def stance_batch(scene: Scene, positions: np.ndarray) -> np.ndarray:
    """Boolean mask: True where the position is on a sittable footprint."""
    pts = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    sitting = np.zeros(pts.shape[0], dtype=bool)
    for obj in scene.objects:
        if not obj.sittable:
            continue
        idx = np.flatnonzero(~sitting)
        if idx.size == 0:
            break
        sitting[idx] = geo.points_in_polygon(pts[idx], obj.footprint)
    return sitting


def derive_stance(scene: Scene, position) -> str:
    pos = np.asarray(position, dtype=np.float64)[None, :]
    return SIT if bool(stance_batch(scene, pos)[0]) else STAND


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    objects = []
    for o in scene.objects:
        objects.append(
            {
                "id": o.id,
                "category": o.category.value,
                "footprint": [[float(x), float(y)] for x, y in o.footprint],
                "top_height": o.top_height,
                "attention_point": [float(o.attention_point[0]), float(o.attention_point[1])],
            }
        )
    return {
        "id": scene.id,
        "floor": [[float(x), float(y)] for x, y in scene.floor],
        "objects": objects,
    }


def serialize_scene(scene: Scene) -> bytes:
    return json.dumps(scene_to_dict(scene), indent=1).encode("utf-8")


def scene_from_dict(doc: dict) -> Scene:
    try:
        scene_id = doc["id"]
        floor = doc["floor"]
        raw_objects = doc.get("objects", [])
    except (TypeError, KeyError) as exc:
        raise ParseError(f"scene document missing field: {exc}") from exc
    objects = []
    for raw in raw_objects:
        try:
            category = ObjectCategory(raw["category"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"object entry missing field: {exc}") from exc
        except ValueError as exc:
            raise ParseError(f"unknown category {raw.get('category')!r}") from exc
        try:
            obj = FurnitureObject(
                id=str(raw["id"]),
                category=category,
                footprint=raw["footprint"],
                top_height=raw["top_height"],
                attention_point=raw.get("attention_point"),
            )
        except KeyError as exc:
            raise ParseError(f"object entry missing field: {exc}") from exc
        except ValueError as exc:
            raise ParseError(str(exc)) from exc
        objects.append(obj)
    try:
        floor_poly = geo.as_polygon(floor)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    return Scene(id=str(scene_id), floor=floor_poly, objects=tuple(objects))


def load_scene(document: bytes | str) -> Scene:
    """Parse and validate a scene file; raises ParseError / InvariantError."""
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("scene document must be a JSON object")
    return scene_from_dict(doc)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

# Canonical footprint (width x depth, meters) and top height per category.
FOOTPRINT_SIZES: dict[ObjectCategory, tuple[float, float]] = {
    ObjectCategory.SOFA: (1.8, 0.85),
    ObjectCategory.CHAIR: (0.5, 0.5),
    ObjectCategory.TABLE: (1.4, 0.8),
    ObjectCategory.TV: (1.2, 0.35),
    ObjectCategory.AIR_CONDITIONER: (0.8, 0.3),
    ObjectCategory.REFRIGERATOR: (0.7, 0.7),
    ObjectCategory.SINK: (0.6, 0.5),
    ObjectCategory.LAMP: (0.35, 0.35),
    ObjectCategory.PIANO: (1.5, 0.65),
    ObjectCategory.CABINET: (1.1, 0.5),
    ObjectCategory.SHELF: (1.0, 0.35),
    ObjectCategory.WINDOW: (1.2, 0.08),
}

TOP_HEIGHTS: dict[ObjectCategory, float] = {
    ObjectCategory.SOFA: 0.45,
    ObjectCategory.CHAIR: 0.45,
    ObjectCategory.TABLE: 0.75,
    ObjectCategory.TV: 1.10,
    ObjectCategory.AIR_CONDITIONER: 2.20,
    ObjectCategory.REFRIGERATOR: 1.80,
    ObjectCategory.SINK: 0.90,
    ObjectCategory.LAMP: 1.50,
    ObjectCategory.PIANO: 1.00,
    ObjectCategory.CABINET: 1.40,
    ObjectCategory.SHELF: 1.80,
    ObjectCategory.WINDOW: 0.0,
}


@dataclass
class SceneSpec:
    """Request for a generated scene: rectangular floor + per-category counts."""

    floor_width: float = 6.0
    floor_height: float = 6.0
    counts: dict[ObjectCategory, int] = field(default_factory=dict)
    max_attempts: int = 10_000


def _rect_footprint(center, half_w, half_d, angle) -> np.ndarray:
    corners = np.array(
        [[-half_w, -half_d], [half_w, -half_d], [half_w, half_d], [-half_w, half_d]]
    )
    rot = geo.rotation_matrix(angle)
    return corners @ rot.T + np.asarray(center)


def generate_synthetic_scene(seed: int, spec: SceneSpec) -> Scene:
    """Rejection-sample non-overlapping furniture on a rectangular floor.

    New footprints may not overlap non-sittable footprints already placed
    (mirrors the free-space semantics); windows are snapped flush to a wall.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    w, h = float(spec.floor_width), float(spec.floor_height)
    floor = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
    objects: list[FurnitureObject] = []
    attempts = 0
    counters: dict[ObjectCategory, int] = {}

    # Non-sittable categories first so sittables reject against a fixed set.
    order = [c for c in CATEGORIES if c not in SITTABLE] + [c for c in CATEGORIES if c in SITTABLE]
    for category in order:
        count = int(spec.counts.get(category, 0))
        size_w, size_d = FOOTPRINT_SIZES[category]
        for _ in range(count):
            placed = False
            while attempts < spec.max_attempts:
                attempts += 1
                if category is ObjectCategory.WINDOW:
                    footprint = _window_footprint(rng, w, h, size_w, size_d)
                else:
                    cx = rng.uniform(0.0, w)
                    cy = rng.uniform(0.0, h)
                    angle = rng.uniform(0.0, 2.0 * np.pi)
                    footprint = _rect_footprint((cx, cy), size_w / 2, size_d / 2, angle)
                if not geo.polygon_contains_polygon(floor, footprint):
                    continue
                blocked = any(
                    geo.polygons_overlap(footprint, o.footprint)
                    for o in objects
                    if not o.sittable
                )
                if blocked:
                    continue
                index = counters.get(category, 0) + 1
                counters[category] = index
                objects.append(
                    FurnitureObject(
                        id=f"{category.value}{index}",
                        category=category,
                        footprint=footprint,
                        top_height=TOP_HEIGHTS[category],
                    )
                )
                placed = True
                break
            if not placed:
                raise GenerationError(
                    f"could not place {category.value} within {spec.max_attempts} attempts"
                )
    return Scene(id=f"synthetic-{seed}", floor=floor, objects=tuple(objects))


def _window_footprint(rng, w, h, length, depth) -> np.ndarray:
    wall = rng.integers(0, 4)
    span = w if wall in (0, 2) else h
    length = min(length, span * 0.8)
    offset = rng.uniform(length / 2, span - length / 2)
    if wall == 0:  # y = 0 wall
        return np.array(
            [[offset - length / 2, 0.0], [offset + length / 2, 0.0],
             [offset + length / 2, depth], [offset - length / 2, depth]]
        )
    if wall == 2:  # y = h wall
        return np.array(
            [[offset + length / 2, h], [offset - length / 2, h],
             [offset - length / 2, h - depth], [offset + length / 2, h - depth]]
        )
    if wall == 1:  # x = w wall
        return np.array(
            [[w, offset - length / 2], [w, offset + length / 2],
             [w - depth, offset + length / 2], [w - depth, offset - length / 2]]
        )
    return np.array(  # x = 0 wall
        [[0.0, offset + length / 2], [0.0, offset - length / 2],
         [depth, offset - length / 2], [depth, offset + length / 2]]
    )


def free_grid_cells(
    scene: Scene, cell_size: float, clearance: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    """Free cell centers of the axis-aligned grid covering the floor bbox.

    Returns (centers (F,2), rows (F,), cols (F,), n_rows, n_cols) with cells
    enumerated row-major, which is the tie-break order used by the solver.
    """
    xmin, ymin, xmax, ymax = scene.bounds()
    n_cols = max(1, int(np.ceil((xmax - xmin) / cell_size - 1e-9)))
    n_rows = max(1, int(np.ceil((ymax - ymin) / cell_size - 1e-9)))
    rows, cols = np.mgrid[0:n_rows, 0:n_cols]
    rows = rows.ravel()
    cols = cols.ravel()
    centers = np.column_stack(
        [xmin + (cols + 0.5) * cell_size, ymin + (rows + 0.5) * cell_size]
    )
    mask = is_free_batch(scene, centers, clearance)
    return centers[mask], rows[mask], cols[mask], n_rows, n_cols
