"""Synthetic identity dataset and 10-fold verification protocol.

Each identity is a unit vector of coefficients over the low-order 2D cosine
modes ``u, v < basis_order``.  A sample renders that pattern with a random
sub-pixel translation and contrast, then adds a texture drawn only from modes
``u, v >= image_size / 4``.  Identity therefore lives in exactly the band that
survives downsampling, while the nuisance lives in the band that does not.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import idctn

from .io import read_csv, read_pgm, write_csv, write_pgm


@dataclass
class SynthSpec:
    num_identities: int = 20
    samples_per_identity: int = 60
    image_size: int = 32
    basis_order: int = 4
    identity_amplitude: float = 100.0
    contrast_jitter: float = 0.2
    texture_amplitude: tuple = (10.0, 40.0)
    max_shift: float = 1.5
    min_separation: float = 0.5
    train_fraction: float = 0.8
    seed: int = 0

    def validate(self):
        if self.num_identities < 1 or self.samples_per_identity < 1:
            raise ValueError("num_identities and samples_per_identity must be positive")
        if not 1 <= self.basis_order <= self.image_size // 4:
            raise ValueError(f"basis_order must lie in [1, image_size/4], got {self.basis_order}")
        if self.image_size % 4:
            raise ValueError(f"image_size must be a multiple of 4, got {self.image_size}")
        lo, hi = self.texture_amplitude
        if lo < 0 or hi < lo:
            raise ValueError(f"texture_amplitude must be an ordered non-negative range, got {(lo, hi)}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        return self


@dataclass
class Dataset:
    images: np.ndarray          # [M, 1, S, S], 0-255
    labels: np.ndarray          # [M]
    train_index: np.ndarray
    eval_index: np.ndarray

    def __iter__(self):
        return iter((self.images, self.labels))

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1


@dataclass
class VerificationProtocol:
    pairs: np.ndarray           # [P, 3] rows of (probe, gallery, same)
    folds: np.ndarray           # [P] fold id per pair

    @property
    def num_folds(self):
        return int(self.folds.max()) + 1

    def fold(self, k):
        return self.pairs[self.folds == k]


def sample_identities(num, dim, min_sep, rng, max_draws=100_000):
    """Rejection-sample ``num`` unit vectors with pairwise distance > ``min_sep``."""
    accepted = []
    for _ in range(max_draws):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(np.linalg.norm(v - a) > min_sep for a in accepted):
            accepted.append(v)
            if len(accepted) == num:
                return np.array(accepted)
    raise RuntimeError(
        f"could not place {num} identities with separation > {min_sep} in {dim} dims after "
        f"{max_draws} draws; use fewer identities or a larger basis_order")


def cosine_basis(order, size, shift=0.0):
    """``[order, size]`` matrix of ``cos(pi * u * (x + 0.5 - shift) / size)``."""
    u = np.arange(order)[:, None]
    x = np.arange(size)[None, :] + 0.5 - shift
    return np.cos(np.pi * u * x / size)


def identity_pattern(coef, size, dx=0.0, dy=0.0):
    """Render ``sum_uv coef[u, v] * cos-mode(u, v)`` translated by ``(dx, dy)`` pixels."""
    b = coef.shape[0]
    return cosine_basis(b, size, dy).T @ coef @ cosine_basis(b, size, dx)


def texture_pattern(rng, size, amplitude):
    """Random texture over modes ``u, v >= size/4`` with RMS ``amplitude``."""
    coef = np.zeros((size, size))
    lo = size // 4
    coef[lo:, lo:] = rng.standard_normal((size - lo, size - lo))
    tex = idctn(coef, norm="ortho")
    rms = np.sqrt((tex * tex).mean())
    return tex * (amplitude / rms) if rms > 0 else tex


def generate_dataset(spec):
    """Render the dataset; deterministic in ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x73796E74]))
    b, s = spec.basis_order, spec.image_size
    ids = sample_identities(spec.num_identities, b * b, spec.min_separation, rng).reshape(-1, b, b)
    n = spec.num_identities * spec.samples_per_identity
    images = np.empty((n, 1, s, s))
    labels = np.repeat(np.arange(spec.num_identities), spec.samples_per_identity)
    for i in range(n):
        dx, dy = rng.uniform(-spec.max_shift, spec.max_shift, 2)
        contrast = 1.0 + rng.uniform(-spec.contrast_jitter, spec.contrast_jitter)
        amp = rng.uniform(*spec.texture_amplitude)
        face = identity_pattern(ids[labels[i]], s, dx, dy)
        img = 128.0 + spec.identity_amplitude * contrast * face
        if amp > 0:
            img = img + texture_pattern(rng, s, amp)
        images[i, 0] = np.clip(img, 0.0, 255.0)

    n_train = int(round(spec.train_fraction * spec.samples_per_identity))
    train, held = [], []
    for k in range(spec.num_identities):
        idx = np.flatnonzero(labels == k)[rng.permutation(spec.samples_per_identity)]
        train.extend(sorted(idx[:n_train]))
        held.extend(sorted(idx[n_train:]))
    return Dataset(images, labels, np.array(train, dtype=int), np.array(held, dtype=int))


# -- verification protocol -------------------------------------------------------

def enumerate_pairs(labels, indices=None):
    """All unordered genuine and impostor pairs among ``indices``.

    Returns two ``[P, 2]`` integer arrays ``(genuine, impostor)``.
    """
    labels = np.asarray(labels)
    idx = np.arange(len(labels)) if indices is None else np.asarray(indices)
    i, j = np.triu_indices(len(idx), k=1)
    a, b = idx[i], idx[j]
    same = labels[a] == labels[b]
    return np.stack([a[same], b[same]], 1), np.stack([a[~same], b[~same]], 1)


def build_protocol(labels, seed, indices=None, num_folds=10, pairs_per_fold=None):
    """Balanced ``num_folds``-fold pair protocol.

    Every fold holds the same number of genuine and impostor pairs.  By default as
    many genuine pairs as exist are used (rounded down to a multiple of the fold
    count) and matched by an equal number of randomly chosen impostor pairs.
    """
    labels = np.asarray(labels)
    idx = np.arange(len(labels)) if indices is None else np.asarray(indices)
    if len(np.unique(labels[idx])) < 2:
        raise ValueError("verification protocol needs at least 2 identities")
    genuine, impostor = enumerate_pairs(labels, idx)
    per_class = min(len(genuine), len(impostor)) // num_folds
    if pairs_per_fold is not None:
        want = pairs_per_fold // 2
        if pairs_per_fold % 2 or want > per_class:
            raise ValueError(
                f"cannot build {num_folds} folds of {pairs_per_fold} balanced pairs from "
                f"{len(genuine)} genuine / {len(impostor)} impostor pairs")
        per_class = want
    if per_class < 1:
        raise ValueError(
            f"insufficient samples: {len(genuine)} genuine / {len(impostor)} impostor pairs "
            f"cannot fill {num_folds} balanced folds")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70616972]))
    g = genuine[rng.permutation(len(genuine))[:per_class * num_folds]]
    im = impostor[rng.permutation(len(impostor))[:per_class * num_folds]]
    rows, folds = [], []
    for k in range(num_folds):
        sl = slice(k * per_class, (k + 1) * per_class)
        for p, same in ((g[sl], 1), (im[sl], 0)):
            rows.append(np.column_stack([p, np.full(len(p), same)]))
            folds.append(np.full(len(p), k))
    return VerificationProtocol(np.concatenate(rows).astype(int), np.concatenate(folds).astype(int))


# -- on-disk format ------------------------------------------------------------------

def image_filename(i):
    return f"img_{i:05d}.pgm"


def save_dataset(dataset, directory, protocol=None):
    """One PGM per image, ``labels.csv`` and (optionally) ``pairs.csv``.

    Pixels are rounded to 8 bits on disk.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    split = np.full(len(dataset.labels), "", dtype=object)
    split[dataset.train_index] = "train"
    split[dataset.eval_index] = "eval"
    rows = []
    for i, (img, lab) in enumerate(zip(dataset.images, dataset.labels)):
        write_pgm(d / image_filename(i), img[0])
        rows.append([image_filename(i), int(lab), split[i]])
    write_csv(d / "labels.csv", ["filename", "identity", "split"], rows)
    if protocol is not None:
        write_csv(d / "pairs.csv", ["probe", "gallery", "same", "fold"],
                  [[image_filename(p), image_filename(g), int(s), int(f)]
                   for (p, g, s), f in zip(protocol.pairs, protocol.folds)])


def load_dataset(directory):
    """Inverse of :func:`save_dataset`; returns ``(dataset, protocol or None)``."""
    d = Path(directory)
    if not (d / "labels.csv").exists():
        raise FileNotFoundError(f"dataset labels not found at {d / 'labels.csv'}")
    rows = read_csv(d / "labels.csv")
    names = [r["filename"] for r in rows]
    pos = {n: i for i, n in enumerate(names)}
    images = np.stack([read_pgm(d / n)[None] for n in names])
    labels = np.array([int(r["identity"]) for r in rows])
    split = [r.get("split", "train") for r in rows]
    ds = Dataset(images, labels,
                 np.array([i for i, s in enumerate(split) if s == "train"], dtype=int),
                 np.array([i for i, s in enumerate(split) if s == "eval"], dtype=int))
    protocol = None
    if (d / "pairs.csv").exists():
        prow = read_csv(d / "pairs.csv")
        pairs = np.array([[pos[r["probe"]], pos[r["gallery"]], int(r["same"])] for r in prow], dtype=int)
        folds = np.array([int(r["fold"]) for r in prow], dtype=int)
        protocol = VerificationProtocol(pairs, folds)
    return ds, protocol
