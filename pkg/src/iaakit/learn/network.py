"""Compact convolutional network with a shared backbone and task heads.

The backbone is a stack of conv -> batchnorm -> relu -> maxpool blocks
ending in global average pooling. Each head maps the pooled feature vector
through affine -> batchnorm -> relu -> dropout -> affine. Both heads, when
present, read the same backbone parameters (shared objects, not copies).

Weight initialization draws from one substream per component, derived from
(seed, component code), so a two-head network and a single-head network
built from the same seed share bit-identical backbone and head parameters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import (
    BatchNorm1d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    ReLU,
)

# Substream codes: one per independent source of randomness.
STREAM_BACKBONE = 0
STREAM_REG_INIT = 1
STREAM_DIAG_INIT = 2
STREAM_SHUFFLE = 3
STREAM_REG_DROPOUT = 4
STREAM_DIAG_DROPOUT = 5
STREAM_SYNTH = 6
STREAM_GRADCHECK = 7

BACKBONE = "backbone"
REGRESSION_HEAD = "regression_head"
DIAGNOSIS_HEAD = "diagnosis_head"


@dataclass(frozen=True)
class NetworkConfig:
    input_side: int = 32
    in_channels: int = 1
    widths: tuple[int, ...] = (8, 16, 32)
    head_hidden: int = 256
    n_classes: int = 2
    dropout: float = 0.5
    with_regression: bool = True
    with_diagnosis: bool = True

    def __post_init__(self) -> None:
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")
        if self.input_side % (2 ** len(self.widths)) != 0:
            raise ValueError(
                f"input side {self.input_side} not divisible by 2^{len(self.widths)}"
            )
        if not (self.with_regression or self.with_diagnosis):
            raise ValueError("network needs at least one head")
        if self.n_classes < 2:
            raise ValueError("need at least 2 diagnosis classes")

    def to_dict(self) -> dict:
        return {
            "input_side": self.input_side,
            "in_channels": self.in_channels,
            "widths": list(self.widths),
            "head_hidden": self.head_hidden,
            "n_classes": self.n_classes,
            "dropout": self.dropout,
            "with_regression": self.with_regression,
            "with_diagnosis": self.with_diagnosis,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


@dataclass(frozen=True)
class Prediction:
    """Per-batch head outputs; fields are None for absent heads."""

    z_hat: np.ndarray | None  # (B,) regression output
    probs: np.ndarray | None  # (B, n_classes) softmax probabilities
    logits: np.ndarray | None  # (B, n_classes) pre-softmax scores


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class _ConvBlock:
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.conv = Conv2d(in_ch, out_ch, rng)
        self.bn = BatchNorm2d(out_ch)
        self.relu = ReLU()
        self.pool = MaxPool2x2()
        self.layers = [self.conv, self.bn, self.relu, self.pool]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        x = self.conv.forward(x)
        x = self.bn.forward(x, train)
        x = self.relu.forward(x)
        return self.pool.forward(x)

    def backward(self, d: np.ndarray) -> np.ndarray:
        d = self.pool.backward(d)
        d = self.relu.backward(d)
        d = self.bn.backward(d)
        return self.conv.backward(d)


class _Backbone:
    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        self.blocks = []
        in_ch = config.in_channels
        for w in config.widths:
            self.blocks.append(_ConvBlock(in_ch, w, rng))
            in_ch = w
        self.gap = GlobalAvgPool()
        self.feature_dim = config.widths[-1]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        for block in self.blocks:
            x = block.forward(x, train)
        return self.gap.forward(x)

    def backward(self, dfeat: np.ndarray) -> None:
        d = self.gap.backward(dfeat)
        for block in reversed(self.blocks):
            d = block.backward(d)

    def layers(self) -> list:
        out = []
        for block in self.blocks:
            out.extend(block.layers)
        return out


class _Head:
    def __init__(self, in_dim: int, hidden: int, out_dim: int, dropout: float,
                 rng: np.random.Generator):
        self.fc1 = Linear(in_dim, hidden, rng)
        self.bn = BatchNorm1d(hidden)
        self.relu = ReLU()
        self.drop = Dropout(dropout)
        self.fc2 = Linear(hidden, out_dim, rng, gain=1.0)

    def forward(self, feat: np.ndarray, train: bool,
                rng: np.random.Generator | None) -> np.ndarray:
        x = self.fc1.forward(feat)
        x = self.bn.forward(x, train)
        x = self.relu.forward(x)
        x = self.drop.forward(x, train, rng)
        return self.fc2.forward(x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        d = self.fc2.backward(dout)
        d = self.drop.backward(d)
        d = self.relu.backward(d)
        d = self.bn.backward(d)
        return self.fc1.backward(d)

    def layers(self) -> list:
        return [self.fc1, self.bn, self.relu, self.drop, self.fc2]


class Network:
    """Shared-backbone network; build with :meth:`build` for seeded init."""

    def __init__(self, config: NetworkConfig, backbone: _Backbone,
                 reg_head: _Head | None, diag_head: _Head | None):
        self.config = config
        self.backbone = backbone
        self.reg_head = reg_head
        self.diag_head = diag_head
        self._feat: np.ndarray | None = None

    @classmethod
    def build(cls, config: NetworkConfig, seed: int) -> "Network":
        backbone = _Backbone(config, np.random.default_rng((seed, STREAM_BACKBONE)))
        reg_head = None
        diag_head = None
        if config.with_regression:
            reg_head = _Head(
                backbone.feature_dim, config.head_hidden, 1, config.dropout,
                np.random.default_rng((seed, STREAM_REG_INIT)),
            )
        if config.with_diagnosis:
            diag_head = _Head(
                backbone.feature_dim, config.head_hidden, config.n_classes,
                config.dropout, np.random.default_rng((seed, STREAM_DIAG_INIT)),
            )
        return cls(config, backbone, reg_head, diag_head)

    # -- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False,
                dropout_rngs: dict[str, np.random.Generator] | None = None) -> Prediction:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels or x.shape[2:] != (
            self.config.input_side,
            self.config.input_side,
        ):
            raise ValueError(
                f"expected batch of shape (B, {self.config.in_channels}, "
                f"{self.config.input_side}, {self.config.input_side}), got {x.shape}"
            )
        rngs = dropout_rngs or {}
        feat = self.backbone.forward(x, train)
        self._feat = feat
        z_hat = None
        logits = None
        if self.reg_head is not None:
            z_hat = self.reg_head.forward(feat, train, rngs.get(REGRESSION_HEAD))[:, 0]
        if self.diag_head is not None:
            logits = self.diag_head.forward(feat, train, rngs.get(DIAGNOSIS_HEAD))
        return Prediction(
            z_hat=z_hat,
            probs=softmax(logits) if logits is not None else None,
            logits=logits,
        )

    def backward(self, d_z_hat: np.ndarray | None, d_logits: np.ndarray | None) -> None:
        """Accumulate gradients; a None head gradient skips that head entirely.

        Skipping keeps the backbone gradient bit-identical to a network
        without that head, which is what makes the loss-weight degeneracies
        exact rather than approximate.
        """
        dfeat = np.zeros_like(self._feat)
        if d_logits is not None:
            if self.diag_head is None:
                raise ValueError("no diagnosis head to backpropagate through")
            dfeat += self.diag_head.backward(d_logits)
        if d_z_hat is not None:
            if self.reg_head is None:
                raise ValueError("no regression head to backpropagate through")
            dfeat += self.reg_head.backward(d_z_hat[:, None])
        self.backbone.backward(dfeat)

    # -- parameter access ---------------------------------------------------

    def components(self) -> dict[str, list]:
        comps = {BACKBONE: self.backbone.layers()}
        if self.reg_head is not None:
            comps[REGRESSION_HEAD] = self.reg_head.layers()
        if self.diag_head is not None:
            comps[DIAGNOSIS_HEAD] = self.diag_head.layers()
        return comps

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat {path: array} map; insertion order is stable by construction."""
        out: dict[str, np.ndarray] = {}
        for comp, layers in self.components().items():
            for i, layer in enumerate(layers):
                for name, p in layer.params.items():
                    out[f"{comp}.{i}.{name}"] = p
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for comp, layers in self.components().items():
            for i, layer in enumerate(layers):
                for name, g in layer.grads.items():
                    out[f"{comp}.{i}.{name}"] = g
        return out

    def zero_grads(self) -> None:
        for layers in self.components().values():
            for layer in layers:
                layer.zero_grads()

    def digest(self, component: str) -> str:
        """SHA-256 over the component's raw parameter bytes, path-sorted."""
        layers = self.components()[component]
        h = hashlib.sha256()
        for i, layer in enumerate(layers):
            for name in sorted(layer.params):
                h.update(f"{i}.{name}".encode())
                h.update(layer.params[name].tobytes())
        return h.hexdigest()

    def digests(self) -> dict[str, str]:
        return {comp: self.digest(comp) for comp in self.components()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {path: p.copy() for path, p in self.parameters().items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(snapshot):
            raise ValueError("snapshot does not match network structure")
        for path, p in params.items():
            p[...] = snapshot[path]

    # -- checkpoint IO ------------------------------------------------------

    def _norm_layers(self) -> list:
        out = []
        for layers in self.components().values():
            for layer in layers:
                if hasattr(layer, "running_mean"):
                    out.append(layer)
        return out

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        """Write a self-describing JSON checkpoint (exact float round trip)."""
        payload = {
            "format": "iaakit-checkpoint-v1",
            "config": self.config.to_dict(),
            "params": {p: arr.tolist() for p, arr in self.parameters().items()},
            "running_stats": [
                {"mean": l.running_mean.tolist(), "var": l.running_var.tolist()}
                for l in self._norm_layers()
            ],
            "extra": extra or {},
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Network":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != "iaakit-checkpoint-v1":
            raise ValueError(f"{path}: not an iaakit checkpoint")
        config = NetworkConfig.from_dict(payload["config"])
        net = cls.build(config, seed=0)
        net.restore({p: np.array(v) for p, v in payload["params"].items()})
        for layer, stats in zip(net._norm_layers(), payload["running_stats"]):
            layer.running_mean = np.array(stats["mean"])
            layer.running_var = np.array(stats["var"])
        return net
