"""
Procedural shapes for desk-scale classification and the labeled dataset type.

Surfaces are sampled uniformly by area. `sample_surface` returns raw points
in the shape's own frame; `gen_shape` returns a normalized PointCloud.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from models.errors import InvalidParameterError
from models.geometry import PointCloud, normalize
from models.perturb import rotate

log = logging.getLogger(__name__)

MIN_POINTS = 8
TRAIN_FRACTION = 0.8


class ShapeKind(str, Enum):
    SPHERE = "sphere"
    CUBE = "cube"
    CYLINDER = "cylinder"
    TORUS = "torus"
    CONE = "cone"
    PLANE = "plane"


DEFAULT_PARAMS = {
    ShapeKind.SPHERE: {"radius": 1.0},
    ShapeKind.CUBE: {"extent": 1.0},
    ShapeKind.CYLINDER: {"radius": 0.6, "height": 2.0},
    ShapeKind.TORUS: {"R": 1.0, "r": 0.3},
    ShapeKind.CONE: {"radius": 1.0, "height": 2.0},
    ShapeKind.PLANE: {"extent": 1.0},
}


def _sphere(n, rng, radius):
    v = rng.normal(size=(n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(n, rng, extent):
    points = rng.uniform(-extent, extent, size=(n, 3))
    # six faces of equal area: pin one coordinate to +-extent
    face = rng.integers(6, size=n)
    rows = np.arange(n)
    points[rows, face % 3] = np.where(face < 3, extent, -extent)
    return points


def _cylinder(n, rng, radius, height):
    side = 2 * np.pi * radius * height
    cap = np.pi * radius ** 2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    # sqrt keeps cap samples uniform over the disc
    rho = np.where(part == 0, radius, radius * np.sqrt(rng.random(n)))
    z = np.select([part == 0, part == 1], [rng.uniform(-height / 2, height / 2, size=n), height / 2],
                  -height / 2)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


def _torus(n, rng, R, r):
    # rejection on the tube angle: surface density is proportional to R + r cos(phi)
    phi = np.empty(0)
    while len(phi) < n:
        cand = rng.uniform(0, 2 * np.pi, size=2 * n)
        accept = rng.random(2 * n) < (R + r * np.cos(cand)) / (R + r)
        phi = np.concatenate([phi, cand[accept]])
    phi = phi[:n]
    theta = rng.uniform(0, 2 * np.pi, size=n)
    ring = R + r * np.cos(phi)
    return np.column_stack([ring * np.cos(theta), ring * np.sin(theta), r * np.sin(phi)])


def _cone(n, rng, radius, height):
    slant = np.hypot(radius, height)
    side = np.pi * radius * slant
    base = np.pi * radius ** 2
    on_side = rng.random(n) < side / (side + base)
    # fraction of the way from apex to rim (side) or centre to rim (base)
    t = np.sqrt(rng.random(n))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    rho = radius * t
    z = np.where(on_side, height / 2 - height * t, -height / 2)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


def _plane(n, rng, extent):
    xy = rng.uniform(-extent, extent, size=(n, 2))
    return np.column_stack([xy, np.zeros(n)])


_SAMPLERS = {
    ShapeKind.SPHERE: _sphere,
    ShapeKind.CUBE: _cube,
    ShapeKind.CYLINDER: _cylinder,
    ShapeKind.TORUS: _torus,
    ShapeKind.CONE: _cone,
    ShapeKind.PLANE: _plane,
}


def shape_kind(kind):
    try:
        return ShapeKind(kind)
    except ValueError:
        raise InvalidParameterError(
            f"unknown shape {kind!r}; expected one of {[k.value for k in ShapeKind]}") from None


def sample_surface(kind, n, rng, params=None):
    """(n, 3) raw points on the surface of `kind`, shape parameters from DEFAULT_PARAMS."""
    kind = shape_kind(kind)
    merged = dict(DEFAULT_PARAMS[kind])
    merged.update(params or {})
    return _SAMPLERS[kind](n, rng, **merged)


def gen_shape(kind, n_points, seed=0, params=None):
    if n_points < MIN_POINTS:
        raise InvalidParameterError(f"n_points must be >= {MIN_POINTS}, got {n_points}")
    rng = np.random.default_rng(seed)
    return normalize(PointCloud.from_points(sample_surface(kind, n_points, rng, params)))


@dataclass(frozen=True)
class LabeledItem:
    cloud: PointCloud
    label: int
    item_id: str
    split: str = "train"

    def with_cloud(self, cloud):
        return replace(self, cloud=cloud)


@dataclass
class LabeledDataset:
    items: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    def train(self):
        return [item for item in self.items if item.split == "train"]

    def test(self):
        return [item for item in self.items if item.split == "test"]

    def __len__(self):
        return len(self.items)

    def label_counts(self):
        return np.bincount([item.label for item in self.items], minlength=len(self.class_names))


def make_dataset(classes=4, per_class=50, n_points=512, seed=0, random_pose=False):
    """Balanced synthetic dataset, split 80/20 within each class by a seeded shuffle."""
    kinds = list(ShapeKind)
    if not 1 <= classes <= len(kinds):
        raise InvalidParameterError(f"classes must lie in 1..{len(kinds)}, got {classes}")
    if per_class < 1:
        raise InvalidParameterError(f"per_class must be >= 1, got {per_class}")

    split_rng = np.random.default_rng(seed)
    n_train = int(round(TRAIN_FRACTION * per_class))
    items = []
    for label, kind in enumerate(kinds[:classes]):
        in_train = np.zeros(per_class, dtype=bool)
        in_train[split_rng.permutation(per_class)[:n_train]] = True
        for index in range(per_class):
            item_seed = np.random.SeedSequence((seed, label, index))
            shape_seed, pose_seed = item_seed.spawn(2)
            cloud = gen_shape(kind, n_points, seed=shape_seed)
            if random_pose:
                cloud = rotate(cloud, seed=pose_seed)
            items.append(LabeledItem(cloud, label, f"{kind.value}_{index:04d}",
                                     "train" if in_train[index] else "test"))
    dataset = LabeledDataset(items, [k.value for k in kinds[:classes]])
    log.info("generated %d items (%d classes, %d train / %d test)",
             len(items), classes, len(dataset.train()), len(dataset.test()))
    return dataset
