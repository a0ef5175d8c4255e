"""
Noise injections for the robustness experiments: random rotation, random
horizontal flip, Gaussian jitter, random input dropout, and all four chained.

Every function takes a seed and returns a new PointCloud; the input is never
modified. Perturbations are applied to raw clouds, before normalization.
"""

import logging
from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial.transform import Rotation

from models.errors import InvalidParameterError

log = logging.getLogger(__name__)

KINDS = ("rotation", "rhf", "jitter", "rid", "all")
APPLY_TO = ("train", "test", "both")

DEFAULT_SIGMA = 0.01
DEFAULT_CLIP = 0.05
DEFAULT_DROP = 0.3


@dataclass(frozen=True)
class PerturbSpec:
    kind: str
    apply_to: str = "test"
    seed: int = 0
    sigma: float = DEFAULT_SIGMA
    clip: float = DEFAULT_CLIP
    p: float = DEFAULT_DROP
    flip_prob: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown perturbation {self.kind!r}; expected one of {KINDS}")
        if self.apply_to not in APPLY_TO:
            raise InvalidParameterError(f"apply_to must be one of {APPLY_TO}, got {self.apply_to!r}")
        if self.sigma < 0 or self.clip < 0:
            raise InvalidParameterError("sigma and clip must be >= 0")
        if not 0 <= self.p < 1:
            raise InvalidParameterError(f"dropout probability must lie in [0, 1), got {self.p}")
        if not 0 <= self.flip_prob <= 1:
            raise InvalidParameterError(f"flip probability must lie in [0, 1], got {self.flip_prob}")

    @property
    def on_train(self):
        return self.apply_to in ("train", "both")

    @property
    def on_test(self):
        return self.apply_to in ("test", "both")

    def to_dict(self):
        return asdict(self)


def rotate(cloud, seed=None, axis=None, angle=None):
    """Rotate about the origin.

    With `axis` and `angle` (radians) the rotation is explicit; otherwise it is
    drawn uniformly over SO(3) from `seed`.
    """
    if axis is not None or angle is not None:
        if axis is None or angle is None:
            raise InvalidParameterError("an explicit rotation needs both axis and angle")
        axis = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise InvalidParameterError("rotation axis must be nonzero")
        rotation = Rotation.from_rotvec(axis / norm * angle)
    else:
        rotation = Rotation.random(None, np.random.default_rng(seed))
    return cloud.with_points(cloud.points @ rotation.as_matrix().T)


def flip_horizontal(cloud, prob=0.5, seed=None):
    """Negate every x coordinate with probability `prob`."""
    if not 0 <= prob <= 1:
        raise InvalidParameterError(f"flip probability must lie in [0, 1], got {prob}")
    if np.random.default_rng(seed).random() >= prob:
        return cloud
    points = cloud.points.copy()
    points[:, 0] = -points[:, 0]
    return cloud.with_points(points)


def jitter(cloud, sigma=DEFAULT_SIGMA, clip=DEFAULT_CLIP, seed=None):
    if sigma < 0 or clip < 0:
        raise InvalidParameterError("sigma and clip must be >= 0")
    if sigma == 0 or clip == 0:
        return cloud
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=cloud.points.shape)
    return cloud.with_points(cloud.points + np.clip(noise, -clip, clip))


def dropout_points(cloud, p=DEFAULT_DROP, seed=None):
    """Drop each point independently with probability p; at least one point survives."""
    if not 0 <= p < 1:
        raise InvalidParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if p == 0:
        return cloud
    rng = np.random.default_rng(seed)
    keep = rng.random(len(cloud)) >= p
    if not keep.any():
        keep[rng.integers(len(cloud))] = True
    return cloud.subset(keep)


def apply(cloud, spec, seed=None):
    """Apply `spec` to one cloud. `seed` defaults to spec.seed; callers vary it per item."""
    seed = spec.seed if seed is None else seed
    # independent streams so "all" draws the same rotation as "rotation" alone
    rot_seed, flip_seed, jit_seed, drop_seed = np.random.SeedSequence(seed).spawn(4)
    if spec.kind in ("rotation", "all"):
        cloud = rotate(cloud, seed=rot_seed)
    if spec.kind in ("rhf", "all"):
        cloud = flip_horizontal(cloud, spec.flip_prob, seed=flip_seed)
    if spec.kind in ("jitter", "all"):
        cloud = jitter(cloud, spec.sigma, spec.clip, seed=jit_seed)
    if spec.kind in ("rid", "all"):
        cloud = dropout_points(cloud, spec.p, seed=drop_seed)
    return cloud


def apply_to_items(items, spec, seed=None):
    """Perturb the .cloud of every labeled item, one derived seed per item."""
    base = spec.seed if seed is None else seed
    out = [item.with_cloud(apply(item.cloud, spec, seed=(base, index)))
           for index, item in enumerate(items)]
    log.debug("applied %s to %d items", spec.kind, len(out))
    return out
