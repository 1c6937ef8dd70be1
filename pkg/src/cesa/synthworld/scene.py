"""Procedural rooms: object placement, spatial predicates and point clouds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CATEGORIES = ("chair", "armchair", "sofa", "bed", "table", "desk", "door", "toilet")
ACTIONS = ("walk to", "sit on", "stand up from", "lie on")
RELATIONS = ("near", "far from", "left of", "right of")

SITTABLE = frozenset({"chair", "armchair", "sofa", "toilet", "bed"})
LIEABLE = frozenset({"bed", "sofa"})

# local half extents: x = depth along the facing axis, y = width, z = half height
_GEOMETRY = {
    "chair": ((0.25, 0.25, 0.45), 0.45, (0.80, 0.20, 0.20)),
    "armchair": ((0.40, 0.42, 0.42), 0.42, (0.20, 0.45, 0.85)),
    "sofa": ((0.45, 0.95, 0.42), 0.42, (0.25, 0.70, 0.30)),
    "bed": ((1.00, 0.75, 0.28), 0.56, (0.90, 0.80, 0.35)),
    "table": ((0.45, 0.70, 0.38), 0.0, (0.55, 0.35, 0.20)),
    "desk": ((0.35, 0.60, 0.38), 0.0, (0.60, 0.30, 0.70)),
    "door": ((0.05, 0.45, 1.00), 0.0, (0.95, 0.55, 0.10)),
    "toilet": ((0.30, 0.20, 0.38), 0.42, (0.55, 0.90, 0.90)),
}
FLOOR_COLOR = (0.50, 0.45, 0.40)
WALL_COLOR = (0.85, 0.85, 0.80)


class GenerationError(RuntimeError):
    """Procedural generation could not satisfy a constraint."""


def action_targets(action: str) -> frozenset[str]:
    if action == "walk to":
        return frozenset(CATEGORIES)
    if action in ("sit on", "stand up from"):
        return SITTABLE
    if action == "lie on":
        return LIEABLE
    raise ValueError(f"unknown action {action!r}")


@dataclass(frozen=True)
class ObjectInstance:
    id: int
    category: str
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    yaw: float
    color: tuple[float, float, float]
    seat_height: float = 0.0

    def facing(self) -> np.ndarray:
        return np.array([np.cos(self.yaw), np.sin(self.yaw)])

    def world_half_extents(self) -> np.ndarray:
        hx, hy, hz = self.half_extents
        quarter = int(round(self.yaw / (np.pi / 2))) % 2
        return np.array([hy, hx, hz]) if quarter else np.array([hx, hy, hz])

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        c, h = np.asarray(self.center), self.world_half_extents()
        return c - h, c + h

    def to_dict(self) -> dict:
        return {
            "id": self.id, "category": self.category, "center": list(self.center),
            "half_extents": list(self.half_extents), "yaw": self.yaw,
            "color": list(self.color), "seat_height": self.seat_height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectInstance":
        return cls(int(d["id"]), d["category"], tuple(d["center"]), tuple(d["half_extents"]),
                   float(d["yaw"]), tuple(d["color"]), float(d.get("seat_height", 0.0)))


@dataclass(frozen=True)
class SceneSpec:
    id: str
    extents: tuple[float, float, float]
    objects: tuple[ObjectInstance, ...]

    def object(self, object_id: int) -> ObjectInstance:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(f"scene {self.id} has no object {object_id}")

    def of_category(self, category: str) -> list[ObjectInstance]:
        return [o for o in self.objects if o.category == category]

    def to_dict(self) -> dict:
        return {"id": self.id, "extents": list(self.extents),
                "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(d["id"], tuple(d["extents"]),
                   tuple(ObjectInstance.from_dict(o) for o in d["objects"]))


@dataclass
class SceneConfig:
    width_range: tuple[float, float] = (4.5, 7.0)
    depth_range: tuple[float, float] = (4.5, 7.0)
    height: float = 2.6
    object_count_range: tuple[int, int] = (3, 6)
    min_gap: float = 0.7
    wall_prob: float = 0.5
    size_jitter: float = 0.1
    max_retries: int = 200
    category_weights: dict[str, float] = field(default_factory=lambda: {
        "chair": 1.5, "armchair": 1.2, "sofa": 1.0, "bed": 0.8,
        "table": 1.0, "desk": 0.8, "door": 0.6, "toilet": 0.6,
    })


def boxes_overlap(a: ObjectInstance, b: ObjectInstance, gap: float = 0.0) -> bool:
    alo, ahi = a.aabb()
    blo, bhi = b.aabb()
    return bool(np.all(alo[:2] < bhi[:2] + gap) and np.all(blo[:2] < ahi[:2] + gap))


def _place_one(category, obj_id, room, cfg, rng, placed):
    (hx, hy, hz), seat, color = _GEOMETRY[category]
    scale = 1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter, size=3)
    if category == "door":
        scale[2] = 1.0
    half = (hx * scale[0], hy * scale[1], hz * scale[2])
    seat_h = seat * scale[2] if seat else 0.0
    if category == "bed":
        seat_h = 2 * half[2]
    width, depth, _ = room
    against_wall = category == "door" or rng.random() < cfg.wall_prob
    for _ in range(cfg.max_retries):
        if against_wall:
            wall = int(rng.integers(4))
            # yaw faces away from the wall
            yaw = (0.0, np.pi, np.pi / 2, 3 * np.pi / 2)[wall]
        else:
            wall = -1
            yaw = float(rng.integers(4)) * np.pi / 2
        probe = ObjectInstance(obj_id, category, (0.0, 0.0, half[2]), half, yaw, color, seat_h)
        wh = probe.world_half_extents()
        if wh[0] * 2 + 2 * cfg.min_gap > width or wh[1] * 2 + 2 * cfg.min_gap > depth:
            continue
        lo_x, hi_x = wh[0] + cfg.min_gap, width - wh[0] - cfg.min_gap
        lo_y, hi_y = wh[1] + cfg.min_gap, depth - wh[1] - cfg.min_gap
        x, y = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
        if wall == 0:
            x = wh[0] + 0.01
        elif wall == 1:
            x = width - wh[0] - 0.01
        elif wall == 2:
            y = wh[1] + 0.01
        elif wall == 3:
            y = depth - wh[1] - 0.01
        jitter = np.clip(rng.normal(0.0, 0.03, size=3), -0.08, 0.08)
        tint = tuple(float(np.clip(c + j, 0.0, 1.0)) for c, j in zip(color, jitter))
        cand = ObjectInstance(obj_id, category, (float(x), float(y), float(half[2])),
                              tuple(float(h) for h in half), float(yaw), tint, float(seat_h))
        if all(not boxes_overlap(cand, other, cfg.min_gap) for other in placed):
            return cand
    return None


def generate_scene(cfg: SceneConfig, rng: np.random.Generator, scene_id: str = "scene") -> SceneSpec:
    """Place a random set of non-overlapping objects in a rectangular room."""
    from .planning import OccupancyGrid  # circular at import time

    lo, hi = cfg.object_count_range
    if lo < 1 or hi < lo:
        raise ValueError(f"object_count_range {cfg.object_count_range} invalid")
    names = list(cfg.category_weights)
    weights = np.array([cfg.category_weights[n] for n in names], dtype=float)
    weights /= weights.sum()
    for _ in range(cfg.max_retries):
        width = float(rng.uniform(*cfg.width_range))
        depth = float(rng.uniform(*cfg.depth_range))
        room = (width, depth, cfg.height)
        count = int(rng.integers(lo, hi + 1))
        placed: list[ObjectInstance] = []
        doors = 0
        for i in range(count):
            category = names[int(rng.choice(len(names), p=weights))]
            if category == "door" and doors:
                category = "chair"
            obj = _place_one(category, i, room, cfg, rng, placed)
            if obj is None:
                break
            doors += category == "door"
            placed.append(obj)
        if len(placed) != count:
            continue
        scene = SceneSpec(scene_id, room, tuple(placed))
        if OccupancyGrid(scene).all_objects_reachable():
            return scene
    raise GenerationError(
        f"could not place {lo}-{hi} objects with min gap {cfg.min_gap} m "
        f"after {cfg.max_retries} attempts")


# -- spatial predicates --------------------------------------------------------
def center_distance(a: ObjectInstance, b: ObjectInstance) -> float:
    return float(np.linalg.norm(np.subtract(a.center[:2], b.center[:2])))


def side_sign(obj: ObjectInstance, anchor: ObjectInstance) -> float:
    """Positive when ``obj`` lies to the left of the anchor's facing axis."""
    f = anchor.facing()
    off = np.subtract(obj.center[:2], anchor.center[:2])
    return float(f[0] * off[1] - f[1] * off[0])


def relation_holds(relation: str, obj: ObjectInstance, anchor: ObjectInstance,
                   scene: SceneSpec, tau_near: float = 1.5) -> bool:
    if obj.id == anchor.id:
        return False
    if relation == "near":
        return center_distance(obj, anchor) < tau_near
    if relation == "far from":
        same = scene.of_category(obj.category)
        dists = [center_distance(o, anchor) for o in same if o.id != anchor.id]
        return bool(dists) and center_distance(obj, anchor) >= max(dists)
    if relation == "left of":
        return side_sign(obj, anchor) > 1e-9
    if relation == "right of":
        return side_sign(obj, anchor) < -1e-9
    raise ValueError(f"unknown relation {relation!r}")


def spatial_relations(obj: ObjectInstance, anchor: ObjectInstance, scene: SceneSpec,
                      tau_near: float = 1.5) -> list[str]:
    return [r for r in RELATIONS if relation_holds(r, obj, anchor, scene, tau_near)]


def spatial_relation(obj: ObjectInstance, anchor: ObjectInstance, scene: SceneSpec,
                     tau_near: float = 1.5) -> str | None:
    """First relation (in template order) that holds between obj and anchor."""
    if obj.id == anchor.id:
        raise ValueError("spatial_relation: object and anchor must differ")
    found = spatial_relations(obj, anchor, scene, tau_near)
    return found[0] if found else None


def resolve_targets(scene: SceneSpec, category: str, relation: str | None,
                    anchor_category: str | None, tau_near: float = 1.5) -> tuple[int, ...]:
    """Ids of objects of ``category`` satisfying the relation w.r.t. any anchor instance."""
    out = []
    for obj in scene.of_category(category):
        if relation is None:
            out.append(obj.id)
            continue
        anchors = scene.of_category(anchor_category)
        if any(relation_holds(relation, obj, a, scene, tau_near) for a in anchors):
            out.append(obj.id)
    return tuple(out)


# -- point clouds ---------------------------------------------------------------
def _box_faces(lo, hi, include_bottom=False):
    """Axis-aligned faces as (origin, u, v) with areas."""
    dx, dy, dz = hi - lo
    faces = [
        (np.array([lo[0], lo[1], hi[2]]), np.array([dx, 0, 0]), np.array([0, dy, 0])),
        (np.array([lo[0], lo[1], lo[2]]), np.array([dx, 0, 0]), np.array([0, 0, dz])),
        (np.array([lo[0], hi[1], lo[2]]), np.array([dx, 0, 0]), np.array([0, 0, dz])),
        (np.array([lo[0], lo[1], lo[2]]), np.array([0, dy, 0]), np.array([0, 0, dz])),
        (np.array([hi[0], lo[1], lo[2]]), np.array([0, dy, 0]), np.array([0, 0, dz])),
    ]
    if include_bottom:
        faces.append((np.array(lo), np.array([dx, 0, 0]), np.array([0, dy, 0])))
    return faces


def _sample_faces(faces, n, rng):
    if n == 0:
        return np.zeros((0, 3))
    areas = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v in faces])
    idx = rng.choice(len(faces), size=n, p=areas / areas.sum())
    st = rng.random((n, 2))
    origin = np.stack([faces[i][0] for i in idx])
    u = np.stack([faces[i][1] for i in idx])
    v = np.stack([faces[i][2] for i in idx])
    return origin + st[:, :1] * u + st[:, 1:] * v


def _allocate(areas: np.ndarray, total: int, floor: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation proportional to area with per-surface minimums."""
    counts = floor.copy()
    rest = total - counts.sum()
    if rest < 0:
        raise ValueError("point budget smaller than the per-object minimum")
    share = areas / areas.sum() * rest
    base = np.floor(share).astype(int)
    counts += base
    remainder = rest - base.sum()
    order = np.argsort(-(share - base), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def sample_point_cloud(scene: SceneSpec, n_points: int, rng: np.random.Generator) -> np.ndarray:
    """Colored surface samples ``(P, 6)`` of floor, walls and object boxes.

    Counts are proportional to surface area; when ``P >= 16 * objects`` every
    object is guaranteed ``P // (16 * objects)`` points.
    """
    if n_points <= 0:
        raise ValueError("sample_point_cloud: P must be positive")
    width, depth, height = scene.extents
    room_lo, room_hi = np.zeros(3), np.array([width, depth, height])
    surfaces = [
        ([(room_lo, np.array([width, 0, 0]), np.array([0, depth, 0]))], FLOOR_COLOR),
        ([(room_lo, np.array([width, 0, 0]), np.array([0, 0, height])),
          (np.array([0, depth, 0]), np.array([width, 0, 0]), np.array([0, 0, height])),
          (room_lo, np.array([0, depth, 0]), np.array([0, 0, height])),
          (np.array([width, 0, 0]), np.array([0, depth, 0]), np.array([0, 0, height]))], WALL_COLOR),
    ]
    for obj in scene.objects:
        lo, hi = obj.aabb()
        surfaces.append((_box_faces(lo, hi), obj.color))
    areas = np.array([sum(np.linalg.norm(np.cross(u, v)) for _, u, v in faces)
                      for faces, _ in surfaces])
    n_obj = len(scene.objects)
    floor = np.zeros(len(surfaces), dtype=int)
    if n_obj:
        floor[2:] = n_points // (16 * n_obj) if n_points >= 16 * n_obj else 0
    counts = _allocate(areas, n_points, floor)
    chunks = []
    for (faces, color), n in zip(surfaces, counts):
        xyz = _sample_faces(faces, int(n), rng)
        rgb = np.clip(np.asarray(color) + rng.normal(0.0, 0.02, size=(int(n), 3)), 0.0, 1.0)
        chunks.append(np.hstack([xyz, rgb]))
    cloud = np.vstack(chunks)
    cloud[:, :3] = np.clip(cloud[:, :3], room_lo, room_hi)
    return cloud[rng.permutation(len(cloud))].astype(np.float32)


# -- point/box geometry ---------------------------------------------------------
def box_penetration(points: np.ndarray, obj: ObjectInstance) -> np.ndarray:
    """Depth of ``points (..., 3)`` inside the object's box (0 outside)."""
    c, h = np.asarray(obj.center), obj.world_half_extents()
    inside = h - np.abs(np.asarray(points, dtype=float) - c)
    return np.clip(inside.min(axis=-1), 0.0, None)


def box_distance(points: np.ndarray, obj: ObjectInstance) -> np.ndarray:
    """Euclidean distance from ``points (..., 3)`` to the solid box (0 inside)."""
    lo, hi = obj.aabb()
    p = np.asarray(points, dtype=float)
    d = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    return np.sqrt((d * d).sum(axis=-1))


def max_penetration(points: np.ndarray, scene: SceneSpec, exclude=()) -> np.ndarray:
    """Largest penetration of each point into any object not in ``exclude``."""
    out = np.zeros(np.shape(points)[:-1])
    for obj in scene.objects:
        if obj.id not in exclude:
            out = np.maximum(out, box_penetration(points, obj))
    return out
