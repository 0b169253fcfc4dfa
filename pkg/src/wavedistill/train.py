"""Teacher/student training, embedding extraction, verification and the ablation table."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .degrade import DegradationConfig, RngStream, degrade_sample, eval_downsample
from .functional import l2_normalize
from .io import read_csv, write_csv
from .losses import (ArcFaceHead, DistillConfig, arcface_loss, cosine_logits, distill_kl_loss,
                     total_loss, wavesim_loss)
from .optim import SGD
from .tensor import NonFiniteError, Tensor, no_grad

log = logging.getLogger(__name__)

METRICS_HEADER = ["config", "resolution", "fold_mean", "fold_std", "seed", "wall_seconds"]
LOSS_HEADER = ["epoch", "lr", "arcface", "distill", "wavesim", "total", "heldout_distill"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.1
    lr_milestones: tuple = (10 / 18, 13 / 18, 16 / 18)
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lambda1: float = 1.0
    lambda2: float = 5e-4  # larger weights diverge at lr 0.1 under the summed reduction
    temperature: float = 4.0
    arcface_s: float = 16.0
    arcface_m: float = 0.5
    seed: int = 0

    def validate(self):
        if list(self.lr_milestones) != sorted(self.lr_milestones):
            raise ValueError(f"lr_milestones must be sorted, got {self.lr_milestones}")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")
        DistillConfig(self.temperature, self.lambda1, self.lambda2)
        return self

    def lr_at(self, epoch):
        """Step schedule: divide by ``1/lr_decay`` at each milestone fraction of the run."""
        drops = sum(epoch >= int(round(f * self.epochs)) for f in self.lr_milestones)
        return self.lr * self.lr_decay ** drops

    def distill_config(self, lambda1=None, lambda2=None):
        return DistillConfig(self.temperature,
                             self.lambda1 if lambda1 is None else lambda1,
                             self.lambda2 if lambda2 is None else lambda2)


def head_of(model, cfg):
    return ArcFaceHead(model.params["arcface.weight"], cfg.arcface_s, cfg.arcface_m)


def class_logits(model, features, cfg):
    """Margin-free scaled cosine logits used for distillation."""
    return cosine_logits(features.embedding, head_of(model, cfg)) * cfg.arcface_s


def _lr_batch(images, indices, degcfg, seed, epoch):
    out = np.empty_like(images)
    for j, (img, idx) in enumerate(zip(images, indices)):
        out[j], _ = degrade_sample(img, degcfg, RngStream(seed, int(idx), epoch))
    return out


@dataclass
class TrainResult:
    model: nets.Model
    loss_log: list = field(default_factory=list)


def train_model(model, dataset, cfg, *, teacher=None, degcfg=None, lambda1=0.0, lambda2=0.0,
                checkpoint_dir=None, resume=False, stop_at=None):
    """Generic training loop behind :func:`train_teacher` / :func:`train_student`.

    ``degcfg=None`` trains on clean HR images.  With a ``teacher``, each batch's
    clean HR images go through the frozen teacher and the student's loss adds
    ``lambda1 * distill + lambda2 * wavesim``.  ``stop_at`` ends the run after
    that many epochs without changing the learning-rate schedule, leaving a
    checkpoint that ``resume=True`` continues from.
    """
    cfg.validate()
    dcfg = cfg.distill_config(lambda1, lambda2)
    opt = SGD(model.params, cfg.lr, cfg.momentum, cfg.weight_decay)
    start, loss_log = 0, []
    if resume and checkpoint_dir is not None and (Path(checkpoint_dir) / "manifest.txt").exists():
        loaded, manifest = nets.load_checkpoint(checkpoint_dir)
        for name, p in model.params.items():
            p.data = loaded.params[name].data
        model.buffers = loaded.buffers
        nets.restore_optimizer(checkpoint_dir, opt)
        start = int(manifest["epoch"])
        if (Path(checkpoint_dir) / "loss_log.csv").exists():
            loss_log = [{k: int(v) if k == "epoch" else float(v) for k, v in r.items()}
                        for r in read_csv(Path(checkpoint_dir) / "loss_log.csv")][:start]
    if teacher is not None:
        teacher.eval()
        if _probe_shapes(teacher) != _probe_shapes(model):
            raise ValueError("teacher and student stage feature shapes differ")

    images, labels = dataset.images, dataset.labels
    train_idx = np.asarray(dataset.train_index)
    heldout = np.asarray(dataset.eval_index)[:64]
    end = cfg.epochs if stop_at is None else min(stop_at, cfg.epochs)
    for epoch in range(start, end):
        opt.lr = cfg.lr_at(epoch)
        model.train()
        order = train_idx[np.random.default_rng([cfg.seed, epoch, 0x6F726472]).permutation(len(train_idx))]
        sums = np.zeros(4)
        batches = 0
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            if len(idx) < 2:
                continue
            hr = images[idx]
            x = hr if degcfg is None else _lr_batch(hr, idx, degcfg, cfg.seed, epoch)
            try:
                parts = _step_losses(model, teacher, x, hr, labels[idx], cfg, dcfg)
                loss = total_loss(*parts, dcfg)
                loss.backward()
                opt.step()
            except (NonFiniteError, FloatingPointError) as exc:
                raise TrainingDiverged(
                    f"training diverged (seed {cfg.seed}, epoch {epoch + 1}): {exc}") from exc
            sums += [parts[0].item(), parts[1].item(), parts[2].item(), loss.item()]
            batches += 1
        means = sums / max(batches, 1)
        row = {"epoch": epoch + 1, "lr": opt.lr, "arcface": means[0], "distill": means[1],
               "wavesim": means[2], "total": means[3],
               "heldout_distill": _heldout_distill(model, teacher, images[heldout], cfg)}
        loss_log.append(row)
        log.info("epoch %d lr %.4g arcface %.4f distill %.4f wavesim %.4f", epoch + 1, opt.lr,
                 means[0], means[1], means[2])
        if checkpoint_dir is not None:
            nets.save_checkpoint(model, checkpoint_dir, epoch=epoch + 1, optimizer=opt)
            write_loss_log(Path(checkpoint_dir) / "loss_log.csv", loss_log)
    model.eval()
    return TrainResult(model, loss_log)


def _probe_shapes(model):
    was = model.training
    model.eval()
    with no_grad():
        s = model.spec
        f = model(np.full((1, s.in_channels, s.input_size, s.input_size), 128.0))
    model.training = was
    return [t.shape for t in f.features]


def _step_losses(model, teacher, x, hr, labels, cfg, dcfg):
    feats = model(x)
    arc = arcface_loss(feats.embedding, head_of(model, cfg), labels)
    zero = Tensor(0.0)
    if teacher is None:
        return arc, zero, zero
    with no_grad():
        tfeats = teacher(hr)
        zt = class_logits(teacher, tfeats, cfg)
    # zero-weight terms are computed off the graph so the gradient is exactly ArcFace's
    if dcfg.lambda1 > 0:
        distill = distill_kl_loss(zt, class_logits(model, feats, cfg), cfg.temperature)
    else:
        with no_grad():
            distill = distill_kl_loss(zt, class_logits(model, feats, cfg), cfg.temperature)
    if dcfg.lambda2 > 0:
        ws = wavesim_loss(tfeats, feats)
    else:
        with no_grad():
            ws = wavesim_loss(tfeats, feats)
    return arc, distill, ws


def _heldout_distill(model, teacher, hr, cfg):
    if teacher is None or len(hr) == 0:
        return 0.0
    was = model.training
    model.eval()
    with no_grad():
        zt = class_logits(teacher, teacher(hr), cfg)
        zs = class_logits(model, model(hr), cfg)
        val = distill_kl_loss(zt, zs, cfg.temperature).item()
    model.training = was
    return val


def write_loss_log(path, rows):
    write_csv(path, LOSS_HEADER, [[r["epoch"]] + [repr(float(r[k])) for k in LOSS_HEADER[1:]]
                                  for r in rows])


def train_teacher(dataset, spec, cfg, checkpoint_dir=None, resume=False):
    """ArcFace-only training of the stride-conv ResNet on clean HR images."""
    if spec.downsample_kind != nets.STRIDE_CONV:
        raise ValueError(f"teacher must use {nets.STRIDE_CONV!r} downsampling")
    model = nets.build_network(spec, cfg.seed)
    return train_model(model, dataset, cfg, checkpoint_dir=checkpoint_dir, resume=resume)


def train_student(dataset, teacher, spec, cfg, degcfg, lambda1=None, lambda2=None,
                  checkpoint_dir=None, resume=False):
    """Train a WaveResNet on degraded LR images distilled from a frozen teacher."""
    if spec.downsample_kind != nets.WAVECONV:
        raise ValueError(f"student must use {nets.WAVECONV!r} downsampling")
    if teacher is not None and teacher.spec.input_size != spec.input_size:
        raise ValueError("teacher and student input sizes differ")
    model = nets.build_network(spec, cfg.seed)
    return train_model(model, dataset, cfg, teacher=teacher, degcfg=degcfg,
                       lambda1=cfg.lambda1 if lambda1 is None else lambda1,
                       lambda2=cfg.lambda2 if lambda2 is None else lambda2,
                       checkpoint_dir=checkpoint_dir, resume=resume)


# -- evaluation -------------------------------------------------------------------

def extract_embedding(model, images, batch_size=128):
    """L2-normalized embeddings in eval mode; ``images`` is ``[N, C, S, S]`` or one ``[C, S, S]``."""
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    was = model.training
    model.eval()
    out = []
    with no_grad():
        for b in range(0, len(x), batch_size):
            emb = model(x[b:b + batch_size]).embedding
            out.append(l2_normalize(emb, axis=1).data)
    model.training = was
    e = np.concatenate(out)
    return e[0] if single else e


def probe_images(images, resolution):
    hr = images.shape[-1]
    if resolution == hr:
        return images
    return np.stack([eval_downsample(img, resolution) for img in images])


THRESHOLDS = np.linspace(-1.0, 1.0, 1000)


def _accuracy_curve(scores, same):
    pred = scores[None, :] >= THRESHOLDS[:, None]
    return (pred == same[None, :].astype(bool)).mean(axis=1)


def fold_accuracies(scores, same, folds):
    """Per-fold accuracy with the threshold picked on the remaining folds."""
    scores, same, folds = map(np.asarray, (scores, same, folds))
    accs = []
    for k in np.unique(folds):
        test = folds == k
        if not test.any() or test.all():
            raise ValueError(f"fold {k} is empty or covers every pair")
        best = THRESHOLDS[int(np.argmax(_accuracy_curve(scores[~test], same[~test])))]
        accs.append(float(((scores[test] >= best) == same[test].astype(bool)).mean()))
    return np.array(accs)


def verify_from_embeddings(probe_emb, gallery_emb, protocol):
    """Cosine scores on protocol pairs -> per-fold accuracies.

    Embedding arrays are indexed by dataset index.
    """
    p, g, same = protocol.pairs.T
    scores = np.einsum("ij,ij->i", probe_emb[p], gallery_emb[g])
    return fold_accuracies(scores, same, protocol.folds)


def verify_accuracy(model, protocol, images, probe_resolution):
    """LR-probe vs HR-gallery verification.  Returns ``(mean, std)`` over folds.

    ``model`` may be a :class:`~wavedistill.nets.Model` or any callable mapping an
    image batch to unit embeddings.
    """
    embed = model if callable(model) and not isinstance(model, nets.Model) \
        else (lambda x: extract_embedding(model, x))
    used = np.unique(protocol.pairs[:, :2])
    hr_emb = embed(images[used])
    gallery = np.zeros((len(images), hr_emb.shape[1]))
    gallery[used] = hr_emb
    if probe_resolution == images.shape[-1]:
        probe = gallery
    else:
        probe = np.zeros_like(gallery)
        probe[used] = embed(probe_images(images[used], probe_resolution))
    accs = verify_from_embeddings(probe, gallery, protocol)
    return float(accs.mean()), float(accs.std())


def evaluate_model(model, protocol, images, resolutions, name, seed, wall_seconds=0.0):
    rows = []
    for r in resolutions:
        m, s = verify_accuracy(model, protocol, images, r)
        rows.append({"config": name, "resolution": int(r), "fold_mean": m, "fold_std": s,
                     "seed": seed, "wall_seconds": wall_seconds})
    return rows


def write_metrics(path, rows):
    write_csv(path, METRICS_HEADER,
              [[r["config"], r["resolution"], f"{r['fold_mean']:.6f}", f"{r['fold_std']:.6f}",
                r["seed"], f"{r['wall_seconds']:.3f}"] for r in rows])


# -- ablation -----------------------------------------------------------------------

ABLATION_CONFIGS = [
    # name, backbone, degradation, kd, wavesim
    ("resnet", nets.STRIDE_CONV, False, False, False),
    ("waveresnet", nets.WAVECONV, False, False, False),
    ("waveresnet+deg", nets.WAVECONV, True, False, False),
    ("waveresnet+deg+kd", nets.WAVECONV, True, True, False),
    ("waveresnet+deg+kd+wavesim", nets.WAVECONV, True, True, True),
]


def run_ablation(dataset, protocol, spec, cfg, degcfg, seeds=(0,), out_dir=None, timed=True):
    """Train and evaluate the five ablation rows for every seed.

    The ResNet baseline row is the HR-trained teacher that the KD rows distill from.
    Returns the long-format metric rows; with ``out_dir`` also writes
    ``metrics.csv`` and the wide ``ablation_table.csv``.
    """
    hr = dataset.images.shape[-1]
    resolutions = [hr] + sorted(degcfg.lr_sizes, reverse=True)
    rows = []
    for seed in seeds:
        scfg = _replace(cfg, seed=seed)
        teacher = None
        for name, kind, use_deg, use_kd, use_ws in ABLATION_CONFIGS:
            t0 = time.perf_counter()
            ckpt = None if out_dir is None else Path(out_dir) / f"seed{seed}" / name
            nspec = spec.with_kind(kind)
            if kind == nets.STRIDE_CONV:
                model = train_teacher(dataset, nspec, scfg, checkpoint_dir=ckpt).model
                teacher = model
            else:
                model = train_student(dataset, teacher if use_kd else None, nspec, scfg,
                                      degcfg if use_deg else None,
                                      lambda1=scfg.lambda1 if use_kd else 0.0,
                                      lambda2=scfg.lambda2 if use_ws else 0.0,
                                      checkpoint_dir=ckpt).model
            wall = time.perf_counter() - t0 if timed else 0.0
            got = evaluate_model(model, protocol, dataset.images, resolutions, name, seed, wall)
            log.info("seed %d %s: %s", seed, name,
                     ", ".join(f"{r['resolution']}={r['fold_mean']:.4f}" for r in got))
            rows.extend(got)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_metrics(Path(out_dir) / "metrics.csv", rows)
        write_ablation_table(Path(out_dir) / "ablation_table.csv", ablation_table(rows, resolutions))
    return rows


def ablation_table(rows, resolutions):
    """Seed-averaged wide table: one row per configuration, one column per resolution."""
    table = []
    for name, kind, use_deg, use_kd, use_ws in ABLATION_CONFIGS:
        accs = []
        for r in resolutions:
            vals = [x["fold_mean"] for x in rows if x["config"] == name and x["resolution"] == r]
            accs.append(float(np.mean(vals)) if vals else math.nan)
        table.append({"config": name, "backbone": "ResNet" if kind == nets.STRIDE_CONV else "WaveResNet",
                      "degradation": int(use_deg), "kd": int(use_kd), "wavesim": int(use_ws),
                      "accuracy": dict(zip(resolutions, accs)), "average": float(np.mean(accs))})
    return table


def write_ablation_table(path, table):
    res = list(table[0]["accuracy"])
    header = ["config", "backbone", "degradation", "kd", "wavesim"] + [f"r{r}" for r in res] + ["average"]
    write_csv(path, header, [[t["config"], t["backbone"], t["degradation"], t["kd"], t["wavesim"]]
                             + [f"{t['accuracy'][r]:.6f}" for r in res] + [f"{t['average']:.6f}"]
                             for t in table])


def _replace(cfg, **kw):
    import dataclasses
    return dataclasses.replace(cfg, **kw)
