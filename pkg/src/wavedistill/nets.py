"""Desk-scale teacher (ResNet) and student (WaveResNet) backbones.

Both nets share one layout::

    stem:   conv3x3(C_in -> c0) -> BN -> PReLU               (no downsampling)
    stage k:
        down:  teacher  conv3x3 stride 2 (c_{k-1} -> c_k) -> BN -> PReLU
               student  WaveConv -> conv3x3 stride 1 (c_{k-1} -> c_k) -> BN -> PReLU
        blocks: [conv3x3 -> BN -> PReLU -> conv3x3 -> BN] + shortcut
    head:   global average pool -> linear -> embedding

Stage features are taken after each stage's blocks.  The ArcFace classifier
weight lives on the model so that checkpoints carry it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import functional as F
from .io import load_wdt1, read_manifest, save_wdt1, write_manifest
from .tensor import DimensionError, Tensor, as_tensor
from .wavelet import waveconv_downsample

STRIDE_CONV = "stride-conv"
WAVECONV = "waveconv"


@dataclass
class NetworkSpec:
    input_size: int = 32
    in_channels: int = 1
    channels_per_stage: list = field(default_factory=lambda: [16, 32, 64])
    blocks_per_stage: list = field(default_factory=lambda: [1, 1, 1])
    embedding_dim: int = 64
    downsample_kind: str = STRIDE_CONV
    num_classes: int = 20

    def validate(self):
        if self.downsample_kind not in (STRIDE_CONV, WAVECONV):
            raise ValueError(f"unknown downsample_kind {self.downsample_kind!r}")
        if len(self.channels_per_stage) != len(self.blocks_per_stage) or not self.channels_per_stage:
            raise ValueError("channels_per_stage and blocks_per_stage must be non-empty and equal length")
        steps = len(self.channels_per_stage)
        if self.input_size <= 0 or self.input_size % (2 ** steps):
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^{steps} (one halving per stage)")
        if self.num_classes < 1 or self.embedding_dim < 1:
            raise ValueError("num_classes and embedding_dim must be positive")
        return self

    def with_kind(self, kind):
        return dataclasses.replace(self, downsample_kind=kind,
                                   channels_per_stage=list(self.channels_per_stage),
                                   blocks_per_stage=list(self.blocks_per_stage))


class StageFeatures(NamedTuple):
    features: list
    embedding: Tensor


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Model:
    """Parameter container plus forward pass for either backbone."""

    def __init__(self, spec, seed=0):
        self.spec = spec.validate()
        self.seed = int(seed)
        self.training = True
        self.params = {}
        self.buffers = {}
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x6E657473]))
        c0 = spec.channels_per_stage[0]
        self._conv("stem.conv", rng, c0, spec.in_channels, 3)
        self._bn("stem.bn", c0)
        self._prelu("stem.act", c0)
        prev = c0
        for k, (ch, nblocks) in enumerate(zip(spec.channels_per_stage, spec.blocks_per_stage)):
            self._conv(f"stage{k}.down.conv", rng, ch, prev, 3)
            self._bn(f"stage{k}.down.bn", ch)
            self._prelu(f"stage{k}.down.act", ch)
            for b in range(nblocks):
                p = f"stage{k}.block{b}"
                self._conv(f"{p}.conv1", rng, ch, ch, 3)
                self._bn(f"{p}.bn1", ch)
                self._prelu(f"{p}.act", ch)
                self._conv(f"{p}.conv2", rng, ch, ch, 3)
                self._bn(f"{p}.bn2", ch)
            prev = ch
        self.params["embed.weight"] = Tensor(_he(rng, (prev, spec.embedding_dim), prev),
                                             requires_grad=True)
        self.params["arcface.weight"] = Tensor(
            rng.standard_normal((spec.embedding_dim, spec.num_classes)), requires_grad=True)

    # -- construction helpers ------------------------------------------------
    def _conv(self, name, rng, cout, cin, k):
        self.params[f"{name}.weight"] = Tensor(_he(rng, (cout, cin, k, k), cin * k * k),
                                               requires_grad=True)

    def _bn(self, name, c):
        self.params[f"{name}.gamma"] = Tensor(np.ones(c), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(c), requires_grad=True)
        self.buffers[f"{name}.running_mean"] = np.zeros(c)
        self.buffers[f"{name}.running_var"] = np.ones(c)

    def _prelu(self, name, c):
        self.params[f"{name}.slope"] = Tensor(np.full(c, 0.25), requires_grad=True)

    # -- layer application ---------------------------------------------------
    def _apply_bn(self, name, x):
        return F.batch_norm2d(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                              self.buffers[f"{name}.running_mean"],
                              self.buffers[f"{name}.running_var"], self.training)

    def _unit(self, name, x, stride=1):
        x = F.conv2d(x, self.params[f"{name}.conv.weight"], stride=stride, padding=1)
        x = self._apply_bn(f"{name}.bn", x)
        return F.prelu(x, self.params[f"{name}.act.slope"])

    def downsample(self, x):
        """Spatial halving used in front of each stage's conv."""
        return waveconv_downsample(x)

    def _block(self, p, x):
        y = F.conv2d(x, self.params[f"{p}.conv1.weight"], padding=1)
        y = self._apply_bn(f"{p}.bn1", y)
        y = F.prelu(y, self.params[f"{p}.act.slope"])
        y = F.conv2d(y, self.params[f"{p}.conv2.weight"], padding=1)
        y = self._apply_bn(f"{p}.bn2", y)
        return y + x

    def forward(self, x):
        """Run the backbone on ``x: [N, C, S, S]`` (pixel values 0-255)."""
        x = as_tensor(x)
        s = self.spec
        if x.ndim != 4 or x.shape[1] != s.in_channels or x.shape[2:] != (s.input_size, s.input_size):
            raise DimensionError(
                f"expected input [N,{s.in_channels},{s.input_size},{s.input_size}], got {x.shape}")
        x = (x - 127.5) * (1.0 / 127.5)
        x = self._unit("stem", x)
        feats = []
        for k, nblocks in enumerate(s.blocks_per_stage):
            if s.downsample_kind == WAVECONV:
                x = self._unit(f"stage{k}.down", self.downsample(x))
            else:
                x = self._unit(f"stage{k}.down", x, stride=2)
            for b in range(nblocks):
                x = self._block(f"stage{k}.block{b}", x)
            feats.append(x)
        emb = F.linear(F.global_avg_pool(x), self.params["embed.weight"])
        return StageFeatures(feats, emb)

    __call__ = forward

    # -- bookkeeping ---------------------------------------------------------
    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def named_parameters(self):
        return dict(self.params)

    def num_parameters(self, include_head=True):
        return sum(p.size for n, p in self.params.items() if include_head or not n.startswith("arcface."))

    def state_arrays(self):
        out = {n: p.data for n, p in self.params.items()}
        out.update(self.buffers)
        return out

    def checksum(self):
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()


def build_network(spec, seed=0):
    return Model(spec, seed)


def forward(model, x):
    return model.forward(x)


# -- checkpoints ---------------------------------------------------------------

def _spec_items(spec):
    return {
        "input_size": spec.input_size,
        "in_channels": spec.in_channels,
        "channels_per_stage": ",".join(map(str, spec.channels_per_stage)),
        "blocks_per_stage": ",".join(map(str, spec.blocks_per_stage)),
        "embedding_dim": spec.embedding_dim,
        "downsample_kind": spec.downsample_kind,
        "num_classes": spec.num_classes,
    }


def _spec_from_items(m):
    return NetworkSpec(
        input_size=int(m["input_size"]),
        in_channels=int(m["in_channels"]),
        channels_per_stage=[int(v) for v in m["channels_per_stage"].split(",")],
        blocks_per_stage=[int(v) for v in m["blocks_per_stage"].split(",")],
        embedding_dim=int(m["embedding_dim"]),
        downsample_kind=m["downsample_kind"],
        num_classes=int(m["num_classes"]),
    )


def save_checkpoint(model, directory, epoch=0, optimizer=None, extra=None):
    """Write ``manifest.txt`` plus one ``<name>.wdt`` per parameter/buffer.

    Parameter files are named by their dotted parameter name (e.g.
    ``stage0.block0.conv1.weight.wdt``); BN running statistics use the
    ``.running_mean`` / ``.running_var`` suffix; optimizer velocities are
    stored as ``opt.<name>.wdt``.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    items = _spec_items(model.spec)
    items["seed"] = model.seed
    items["epoch"] = epoch
    items["tensors"] = ",".join(sorted(model.state_arrays()))
    if optimizer is not None:
        items["optimizer_lr"] = repr(optimizer.lr)
        items["optimizer_momentum"] = repr(optimizer.momentum)
        items["optimizer_weight_decay"] = repr(optimizer.weight_decay)
    for k, v in (extra or {}).items():
        items[k] = v
    write_manifest(d / "manifest.txt", items)
    for name, arr in model.state_arrays().items():
        save_wdt1(d / f"{name}.wdt", arr)
    if optimizer is not None:
        for name, v in optimizer.velocity.items():
            save_wdt1(d / f"opt.{name}.wdt", v)


def load_checkpoint(directory):
    """Rebuild a model from :func:`save_checkpoint` output.  Returns ``(model, manifest)``."""
    d = Path(directory)
    manifest_path = d / "manifest.txt"
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found at {manifest_path}")
    m = read_manifest(manifest_path)
    model = Model(_spec_from_items(m), int(m["seed"]))
    for name in model.params:
        model.params[name].data = load_wdt1(d / f"{name}.wdt")
    for name in model.buffers:
        model.buffers[name] = load_wdt1(d / f"{name}.wdt")
    return model, m


def restore_optimizer(directory, optimizer):
    """Load the ``opt.<name>.wdt`` velocity buffers saved alongside a checkpoint."""
    d = Path(directory)
    for name in optimizer.velocity:
        optimizer.velocity[name] = load_wdt1(d / f"opt.{name}.wdt")
