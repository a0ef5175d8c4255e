"""
Turns labeled point clouds into model samples: normalize -> FPS -> kNN -> serialize,
and collates samples into float64 batches.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from models.geometry import normalize, build_patches
from models.serializer import Serialization, serialize
from models.ssm import DTYPE

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSample:
    centers: np.ndarray
    patches: np.ndarray
    serialization: Serialization
    label: int = -1
    item_id: str = ""


@dataclass
class Batch:
    centers: torch.Tensor
    patches: torch.Tensor
    serializations: list
    labels: torch.Tensor

    def __len__(self):
        return len(self.serializations)


def prepare_sample(cloud, config, label=-1, item_id="", ordering=None):
    cloud = normalize(cloud)
    patch_set = build_patches(cloud, config.n_c, config.n_p)
    serialization = serialize(patch_set.centers, ordering or config.ordering,
                              r=config.r, candidate=config.candidate)
    return ModelSample(patch_set.centers, patch_set.patches, serialization, int(label), item_id)


def prepare_items(items, config, ordering=None):
    """`items` are LabeledItem-like objects with .cloud, .label and .item_id."""
    samples = [prepare_sample(item.cloud, config, item.label, item.item_id, ordering) for item in items]
    log.debug("prepared %d samples (ordering=%s)", len(samples), ordering or config.ordering)
    return samples


def collate(samples, dtype=DTYPE):
    return Batch(
        centers=torch.as_tensor(np.stack([s.centers for s in samples]), dtype=dtype),
        patches=torch.as_tensor(np.stack([s.patches for s in samples]), dtype=dtype),
        serializations=[s.serialization for s in samples],
        labels=torch.as_tensor([s.label for s in samples], dtype=torch.long),
    )


def batches(samples, batch_size, generator=None):
    """Yield collated batches; shuffled when a torch.Generator is given."""
    if generator is not None:
        order = torch.randperm(len(samples), generator=generator).tolist()
    else:
        order = list(range(len(samples)))
    for start in range(0, len(order), batch_size):
        yield collate([samples[i] for i in order[start:start + batch_size]])
