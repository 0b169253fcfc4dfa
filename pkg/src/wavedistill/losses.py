"""Training objectives: ArcFace, temperature-scaled KL distillation, wavelet similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .functional import l2_normalize
from .tensor import DimensionError, NonFiniteError, Tensor, as_tensor
from .wavelet import waveconv_downsample

COS_EPS = 1e-7


@dataclass
class ArcFaceHead:
    """Classifier weight ``[embedding_dim, num_classes]`` plus scale ``s`` and margin ``m``."""

    weight: Tensor
    s: float = 64.0
    m: float = 0.5

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError(f"ArcFace scale must be positive, got {self.s}")
        if not 0.0 <= self.m < math.pi / 2:
            raise ValueError(f"ArcFace margin must lie in [0, pi/2), got {self.m}")

    @property
    def num_classes(self):
        return self.weight.shape[1]


@dataclass
class DistillConfig:
    temperature: float = 4.0
    lambda1: float = 1.0
    lambda2: float = 5e-4  # wavesim sums ~10^3 squared elements per sample

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


def cosine_logits(embeddings, head):
    """``cos(theta_j)`` between each normalized embedding and normalized class column."""
    e = l2_normalize(as_tensor(embeddings), axis=1)
    w = l2_normalize(head.weight, axis=0)
    return T.matmul(e, w)


def arcface_logits(embeddings, head, labels):
    """Scaled logits with the additive angular margin applied to the target class."""
    labels = np.asarray(labels, dtype=int)
    cos = cosine_logits(embeddings, head)
    n, k = cos.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch of {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise IndexError(f"label out of range for {k} classes: {labels}")
    onehot = np.zeros((n, k), dtype=bool)
    onehot[np.arange(n), labels] = True
    if head.m == 0.0:
        return cos * head.s
    cos_c = T.clip(cos, -1.0 + COS_EPS, 1.0 - COS_EPS)
    theta = T.arccos(cos_c)
    margin = T.cos(theta + head.m)
    # past theta + m = pi the margin term stops being monotone; use cos - m*sin(m) there
    fallback = cos - head.m * math.sin(head.m)
    target = T.where(theta.data + head.m <= math.pi, margin, fallback)
    return T.where(onehot, target, cos) * head.s


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=int)
    n, k = logits.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    logp = T.log_softmax(logits, axis=1)
    return -(logp * onehot).sum() * (1.0 / n)


def arcface_loss(embeddings, head, labels):
    """Batch-mean ArcFace loss."""
    embeddings = as_tensor(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[0] < 1:
        raise DimensionError(f"embeddings must be [N>=1, D], got {embeddings.shape}")
    return cross_entropy(arcface_logits(embeddings, head, labels), labels)


def distill_kl_loss(z_teacher, z_student, temperature):
    """``T^2 * KL(softmax(z_t / T) || softmax(z_s / T))`` averaged over the batch.

    The teacher side is treated as a constant.
    """
    z_teacher, z_student = as_tensor(z_teacher), as_tensor(z_student)
    if z_teacher.shape != z_student.shape or z_teacher.ndim != 2:
        raise DimensionError(f"logit shapes differ: {z_teacher.shape} vs {z_student.shape}")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    n = z_teacher.shape[0]
    log_pt = T.log_softmax(Tensor(z_teacher.data * (1.0 / temperature)), axis=1).data
    pt = np.exp(log_pt)
    log_ps = T.log_softmax(z_student * (1.0 / temperature), axis=1)
    kl = (pt * log_pt).sum() - (log_ps * pt).sum()
    return kl * (temperature ** 2 / n)


def _stage_features(f):
    return f.features if hasattr(f, "features") else list(f)


def wavesim_loss(teacher_feats, student_feats, stages=(0, 1)):
    """Sum over stages of squared L2 distance between Haar LL subbands.

    Squared error is summed over elements and averaged over the batch; the
    teacher maps are treated as constants.  ``stages`` indexes the stage list
    (the first two stages by default).
    """
    tf, sf = _stage_features(teacher_feats), _stage_features(student_feats)
    total = None
    for k in stages:
        t, s = as_tensor(tf[k]), as_tensor(sf[k])
        if t.shape != s.shape:
            raise DimensionError(f"stage {k} feature shapes differ: {t.shape} vs {s.shape}")
        t_ll = Tensor(waveconv_downsample(Tensor(t.data)).data)
        d = waveconv_downsample(s) - t_ll
        term = T.square(d).sum() * (1.0 / s.shape[0])
        total = term if total is None else total + term
    return total


def total_loss(arc, distill, wavesim, cfg):
    """``arc + lambda1 * distill + lambda2 * wavesim``."""
    parts = [as_tensor(v) for v in (arc, distill, wavesim)]
    for p in parts:
        if not np.isfinite(p.data).all():
            raise NonFiniteError("non-finite loss component")
    arc, distill, wavesim = parts
    return arc + distill * cfg.lambda1 + wavesim * cfg.lambda2
