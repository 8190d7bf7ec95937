"""Geometric realization of feature vectors and pinhole ground-truth boxes.

Headings are compass-style degrees: 0 looks along +y, 90 along +x.  The
camera sits on the ego car; a car is visible when its centre lies within
``max_range`` metres and within ``view_half_angle`` degrees of the camera
heading (both bounds inclusive).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FRAME_W = 1920
FRAME_H = 1200
CAMERA_HEIGHT = 1.5  # metres above the ground plane
BOX_ASPECT = 0.8     # box height / projected width
MIN_DEPTH = 0.1


class UnknownObject(KeyError):
    pass


@dataclass(frozen=True)
class Camera:
    x: float
    y: float
    heading: float
    view_half_angle: float = 30.0
    max_range: float = 60.0

    @property
    def focal(self) -> float:
        return (FRAME_W / 2) / math.tan(math.radians(self.view_half_angle))


@dataclass(frozen=True)
class CarInstance:
    name: str
    x: float
    y: float
    heading: float
    model: str = "BLISTA"
    color: tuple[int, int, int] = (0, 0, 0)
    length: float = 4.5
    width: float = 1.8

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"degenerate footprint for {self.name}")

    def corners(self) -> np.ndarray:
        h = math.radians(self.heading)
        fwd = np.array([math.sin(h), math.cos(h)])
        right = np.array([math.cos(h), -math.sin(h)])
        c = np.array([self.x, self.y])
        hl, hw = self.length / 2, self.width / 2
        return np.array([c + sl * hl * fwd + sw * hw * right
                         for sl in (1, -1) for sw in (1, -1)])


@dataclass(frozen=True)
class Scene:
    camera: Camera
    cars: tuple[CarInstance, ...] = field(default_factory=tuple)

    def car(self, name: str) -> CarInstance:
        for c in self.cars:
            if c.name == name:
                return c
        raise UnknownObject(name)

    def to_json(self) -> dict:
        cam = self.camera
        return {
            "camera": {"x": cam.x, "y": cam.y, "heading": cam.heading,
                       "viewHalfAngle": cam.view_half_angle, "maxRange": cam.max_range},
            "cars": [{"name": c.name, "x": c.x, "y": c.y, "heading": c.heading,
                      "model": c.model, "color": list(c.color),
                      "length": c.length, "width": c.width} for c in self.cars],
        }


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    object_name: str = ""

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"invalid box {self.as_list()}")

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def bearing(cx, cy, ch, tx, ty):
    """Signed angle in degrees from heading ``ch`` to the target, in (-180, 180]."""
    b = np.degrees(np.arctan2(np.asarray(tx, float) - cx, np.asarray(ty, float) - cy))
    d = np.mod(b - ch + 180.0, 360.0) - 180.0
    return np.where(d == -180.0, 180.0, d)


def visible(cx, cy, ch, tx, ty, view_half_angle: float = 30.0, max_range: float = 60.0):
    """Vectorized centre-in-view-cone test shared by the DSL builtin and scenes."""
    dx = np.asarray(tx, float) - cx
    dy = np.asarray(ty, float) - cy
    rng = np.hypot(dx, dy)
    ang = np.abs(bearing(cx, cy, ch, tx, ty))
    return (rng > 0) & (rng <= max_range) & (ang <= view_half_angle)


def realize(p, f, view_half_angle: float = 30.0, max_range: float = 60.0) -> Scene:
    """Scene for feature vector ``f`` drawn from program ``p``."""
    names = [o.name for o in p.objects]
    cam = Camera(float(f["ego.x"]), float(f["ego.y"]), float(f["ego.heading"]),
                 view_half_angle, max_range)
    cars = tuple(
        CarInstance(
            name=o, x=float(f[f"{o}.x"]), y=float(f[f"{o}.y"]),
            heading=float(f[f"{o}.heading"]), model=str(f[f"{o}.model"]),
            color=(int(f[f"{o}.colorR"]), int(f[f"{o}.colorG"]), int(f[f"{o}.colorB"])),
        )
        for o in names[1:]
    )
    return Scene(cam, cars)


def visible_from(scene: Scene, car_name: str) -> bool:
    c = scene.car(car_name)
    cam = scene.camera
    return bool(visible(cam.x, cam.y, cam.heading, c.x, c.y,
                        cam.view_half_angle, cam.max_range))


def project_car(cam: Camera, car: CarInstance):
    """Unclipped box ``(x0, y0, x1, y1)`` of a car footprint, or None if behind."""
    h = math.radians(cam.heading)
    fwd = np.array([math.sin(h), math.cos(h)])
    right = np.array([math.cos(h), -math.sin(h)])
    rel = car.corners() - np.array([cam.x, cam.y])
    depth = rel @ fwd
    lateral = rel @ right
    if depth.max() <= 0:
        return None
    depth = np.maximum(depth, MIN_DEPTH)
    f = cam.focal
    u = FRAME_W / 2 + f * lateral / depth
    x0, x1 = float(u.min()), float(u.max())
    bottom = FRAME_H / 2 + f * CAMERA_HEIGHT / float(depth.min())
    top = bottom - BOX_ASPECT * (x1 - x0)
    return x0, top, x1, bottom


def clip_box(x0, y0, x1, y1, name=""):
    x0, x1 = max(0.0, x0), min(float(FRAME_W), x1)
    y0, y1 = max(0.0, y0), min(float(FRAME_H), y1)
    if x0 >= x1 or y0 >= y1:
        return None
    return BoundingBox(x0, y0, x1, y1, name)


def ground_truth_boxes(scene: Scene) -> list[BoundingBox]:
    """Boxes of visible cars, nearest first."""
    cam = scene.camera
    found = []
    for car in scene.cars:
        if not visible_from(scene, car.name):
            continue
        raw = project_car(cam, car)
        box = clip_box(*raw, car.name) if raw else None
        if box is not None:
            found.append((math.hypot(car.x - cam.x, car.y - cam.y), car.name, box))
    found.sort(key=lambda t: (t[0], t[1]))
    return [b for _, _, b in found]
