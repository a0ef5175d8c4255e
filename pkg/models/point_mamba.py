"""
Point-cloud sequence classifier: patch / center embeddings, a stack of Mamba
blocks (or attention blocks for the baseline), and a pooled classification head.

The model consumes preprocessed samples (see models/pipeline.py): patches
already grouped and center-relative, plus one Serialization per sample.
"""

import json
import logging

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from models.config import ModelConfig
from models.errors import InvalidParameterError, NumericalOverflowError, ParseError
from models.serializer import apply_order
from models.ssm import DTYPE, S6Params, AttnParams, s6_scan, sdpa

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pointseq-checkpoint"
CHECKPOINT_VERSION = 1


class PatchEncoder(nn.Module):
    """Shared pointwise map + max-pool, twice (local feature, then local+global)."""

    def __init__(self, d_e, hidden, dtype=DTYPE):
        super().__init__()
        self.stage1_in = nn.Linear(3, hidden, dtype=dtype)
        self.stage1_out = nn.Linear(hidden, hidden, dtype=dtype)
        self.stage2_in = nn.Linear(2 * hidden, hidden, dtype=dtype)
        self.stage2_out = nn.Linear(hidden, d_e, dtype=dtype)

    def forward(self, patches):
        # patches: (..., n_p, 3) -> (..., d_e)
        if patches.shape[-1] != 3:
            raise InvalidParameterError(f"patch points must be 3D, got width {patches.shape[-1]}")
        f = self.stage1_out(F.gelu(self.stage1_in(patches)))
        g = f.max(dim=-2, keepdim=True).values.expand_as(f)
        f = torch.cat([g, f], dim=-1)
        f = self.stage2_out(F.gelu(self.stage2_in(f)))
        return f.max(dim=-2).values


class CenterEncoder(nn.Module):
    def __init__(self, d_e, hidden, dtype=DTYPE):
        super().__init__()
        self.fc1 = nn.Linear(3, hidden, dtype=dtype)
        self.fc2 = nn.Linear(hidden, d_e, dtype=dtype)

    def forward(self, centers):
        return self.fc2(F.gelu(self.fc1(centers)))


class RMSNorm(nn.Module):
    def __init__(self, d, eps=1e-6, dtype=DTYPE):
        super().__init__()
        self.eps = eps
        self.scale = nn.Parameter(torch.ones(d, dtype=dtype))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.scale


class MambaBlock(nn.Module):
    """x + out_proj(S6(silu(causal_conv(main))) * silu(gate)), with RMS pre-norm."""

    def __init__(self, d, expand=2, conv_kernel=4, d_state=16, skip_mode="constant", dtype=DTYPE):
        super().__init__()
        inner = expand * d
        self.inner = inner
        self.conv_kernel = conv_kernel
        self.norm = RMSNorm(d, dtype=dtype)
        self.in_proj = nn.Linear(d, 2 * inner, bias=False, dtype=dtype)
        self.conv = nn.Conv1d(inner, inner, conv_kernel, groups=inner,
                              padding=conv_kernel - 1, dtype=dtype)
        self.s6 = S6Params(inner, d_state, skip_mode=skip_mode, dtype=dtype)
        self.out_proj = nn.Linear(inner, d, bias=False, dtype=dtype)

    def forward(self, x):
        length = x.shape[1]
        main, gate = self.in_proj(self.norm(x)).chunk(2, dim=-1)
        # left padding + truncation keeps the convolution causal
        main = self.conv(main.transpose(1, 2))[..., :length].transpose(1, 2)
        y = s6_scan(self.s6, F.silu(main)) * F.silu(gate)
        return x + self.out_proj(y)


class AttentionBlock(nn.Module):
    """Pre-norm single-head softmax attention + GELU MLP (Transformer reference block)."""

    def __init__(self, d, expand=2, dtype=DTYPE):
        super().__init__()
        self.norm1 = RMSNorm(d, dtype=dtype)
        self.attn = AttnParams(d, dtype=dtype)
        self.norm2 = RMSNorm(d, dtype=dtype)
        self.mlp = nn.Sequential(
            nn.Linear(d, expand * d, dtype=dtype),
            nn.GELU(),
            nn.Linear(expand * d, d, dtype=dtype),
        )

    def forward(self, x):
        x = x + sdpa(self.attn, self.norm1(x), causal=False)
        return x + self.mlp(self.norm2(x))


class ClassificationHead(nn.Module):
    def __init__(self, d_e, hidden, num_classes, dtype=DTYPE):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Linear(2 * d_e, hidden, dtype=dtype),
            nn.GELU(),
            nn.Linear(hidden, hidden, dtype=dtype),
            nn.GELU(),
            nn.Linear(hidden, num_classes, dtype=dtype),
        )

    @staticmethod
    def pool(encoded):
        return torch.cat([encoded.mean(dim=1), encoded.max(dim=1).values], dim=-1)

    def forward(self, encoded):
        return self.layers(self.pool(encoded))


class PointSequenceClassifier(nn.Module):
    def __init__(self, config=None, dtype=DTYPE):
        super().__init__()
        self.config = config or ModelConfig()
        c = self.config
        self.patch_encoder = PatchEncoder(c.d_e, c.patch_hidden, dtype=dtype)
        self.center_encoder = CenterEncoder(c.d_e, c.pe_hidden, dtype=dtype)
        if c.mixer == "attention":
            blocks = [AttentionBlock(c.d_e, c.expand, dtype=dtype) for _ in range(c.layers)]
        else:
            blocks = [MambaBlock(c.d_e, c.expand, c.conv_kernel, c.d_state, c.skip_mode, dtype=dtype)
                      for _ in range(c.layers)]
        self.blocks = nn.ModuleList(blocks)
        self.final_norm = RMSNorm(c.d_e, dtype=dtype)
        self.head = ClassificationHead(c.d_e, c.head_hidden, c.num_classes, dtype=dtype)

    @property
    def dtype(self):
        return self.final_norm.scale.dtype

    # --- pipeline stages ---
    def embed_patches(self, patches):
        return self.patch_encoder(patches)

    def embed_centers(self, centers):
        return self.center_encoder(centers)

    def tokens(self, centers, patches, serializations):
        """Patch tokens (+ center embedding when enabled) arranged in processing order."""
        tokens = self.embed_patches(patches)
        if self.config.use_positional_embedding:
            tokens = tokens + self.embed_centers(centers)
        return torch.stack([apply_order(t, s) for t, s in zip(tokens, serializations)])

    def encoder_forward(self, tokens):
        x = tokens
        for index, block in enumerate(self.blocks):
            x = block(x)
            if not torch.isfinite(x).all():
                raise NumericalOverflowError(index)
        x = self.final_norm(x)
        if not torch.isfinite(x).all():
            raise NumericalOverflowError(len(self.blocks), where="final norm")
        return x

    def classify(self, encoded):
        if encoded.shape[1] < 1:
            raise InvalidParameterError("cannot classify an empty sequence")
        return self.head(encoded)

    def forward(self, centers, patches, serializations):
        return self.classify(self.encoder_forward(self.tokens(centers, patches, serializations)))

    # --- checkpoint persistence ---
    def to_json(self):
        """Serialize config + named flat parameter arrays; float64 values round-trip exactly."""
        parameters = {}
        for name, tensor in self.state_dict().items():
            array = tensor.detach().cpu().numpy()
            parameters[name] = {"shape": list(array.shape), "data": array.ravel().tolist()}
        return json.dumps({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "parameters": parameters,
        })

    @classmethod
    def load_from_json(cls, json_str, source="<checkpoint>"):
        try:
            data = json.loads(json_str)
        except json.JSONDecodeError as e:
            raise ParseError(source, e.lineno, e.msg) from e
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise ParseError(source, 1, "not a pointseq checkpoint (format/version mismatch)")
        model = cls(ModelConfig.from_dict(data["config"]))
        state = {}
        for name, entry in data["parameters"].items():
            array = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            state[name] = torch.from_numpy(array)
        model.load_state_dict(state)
        return model

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())
        log.info("checkpoint saved to %s", path)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls.load_from_json(f.read(), source=path)


def parameter_count(model):
    return sum(p.numel() for p in model.parameters())
