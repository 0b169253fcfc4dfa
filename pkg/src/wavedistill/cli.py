"""``wavedistill`` command-line entry point.

Every subcommand resolves one :class:`~wavedistill.config.RunConfig`, writes it
as ``config.ini`` next to its outputs, and then delegates to the library.
Outputs go under ``--out`` (default: ``$WAVEDISTILL_OUT`` or ``runs``)::

    <out>/dataset/      synth
    <out>/degraded/     degrade
    <out>/teacher/      train-teacher
    <out>/student/      train-student
    <out>/eval/         eval
    <out>/ablation/     ablate
    <out>/dwt/          dwt

With ``--deterministic`` all work is serial and wall-clock columns are written
as zero, so reruns produce byte-identical files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data, nets, train
from .config import load_config, save_config
from .degrade import RngStream, degrade_sample
from .io import read_pgm, write_csv, write_pgm
from .tensor import Tensor
from .wavelet import dwt2_forward, subband_energies

log = logging.getLogger("wavedistill")

DEGRADE_HEADER = ["filename", "blur", "blur_sigma", "noise", "noise_sigma", "jpeg", "jpeg_quality", "size"]


class CommandError(RuntimeError):
    """A precondition failed; the message is shown to the user verbatim."""


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p):
    p.add_argument("--config", type=Path, help="INI file with [run]/[synth]/[network]/[degrade]/[train]")
    p.add_argument("--seed", type=int, help="root seed for every random stream")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="serial execution and zeroed timing columns")
    p.add_argument("--threads", type=int, help="worker threads for per-sample work")
    p.add_argument("--out", type=Path, help="output root directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")


def _training_flags(p):
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--lr-sizes", type=_int_list, help="LR extents, e.g. 8,16")
    p.add_argument("--lambda2", type=float, help="wavelet-similarity weight")
    p.add_argument("--temperature", type=float, help="distillation softmax temperature")


def build_parser():
    parser = argparse.ArgumentParser(prog="wavedistill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic identity dataset and pair protocol")
    _common(p)

    p = sub.add_parser("degrade", help="apply the training degradation pipeline to a folder of PGMs")
    _common(p)
    _training_flags(p)
    p.add_argument("--input", type=Path, help="directory of .pgm files (default <out>/dataset)")

    p = sub.add_parser("train-teacher", help="train the ResNet teacher on clean HR images")
    _common(p)
    _training_flags(p)
    p.add_argument("--data", type=Path, help="dataset directory (default <out>/dataset)")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output dir")

    p = sub.add_parser("train-student", help="train the WaveResNet student with distillation")
    _common(p)
    _training_flags(p)
    p.add_argument("--data", type=Path, help="dataset directory (default <out>/dataset)")
    p.add_argument("--teacher", type=Path, help="teacher checkpoint (default <out>/teacher)")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output dir")

    p = sub.add_parser("eval", help="LR-probe / HR-gallery verification of a checkpoint")
    _common(p)
    p.add_argument("--lr-sizes", type=_int_list, help="probe resolutions, e.g. 8,16")
    p.add_argument("--data", type=Path, help="dataset directory (default <out>/dataset)")
    p.add_argument("--checkpoint", type=Path, help="checkpoint directory (default <out>/student)")
    p.add_argument("--name", default=None, help="config label in the metrics CSV")

    p = sub.add_parser("ablate", help="train and evaluate all five ablation configurations")
    _common(p)
    _training_flags(p)
    p.add_argument("--data", type=Path, help="dataset directory (default <out>/dataset)")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: --seed)")

    p = sub.add_parser("dwt", help="split one image into Haar subbands with an energy report")
    _common(p)
    p.add_argument("image", type=Path, help="8-bit PGM with even width and height")
    return parser


def resolve(args):
    overrides = {
        "seed": args.seed,
        "deterministic": args.deterministic,
        "threads": args.threads,
        "out": None if args.out is None else str(args.out),
        "train.epochs": getattr(args, "epochs", None),
        "degrade.lr_sizes": getattr(args, "lr_sizes", None),
        "train.lambda2": getattr(args, "lambda2", None),
        "train.temperature": getattr(args, "temperature", None),
    }
    return load_config(args.config, overrides=overrides)


def _outdir(cfg, name):
    d = Path(cfg.out) / name
    d.mkdir(parents=True, exist_ok=True)
    save_config(cfg, d / "config.ini")
    return d


def _load_data(cfg, path):
    d = Path(path) if path is not None else Path(cfg.out) / "dataset"
    if not (d / "labels.csv").exists():
        raise CommandError(f"dataset not found at {d} (run 'wavedistill synth' first)")
    ds, protocol = data.load_dataset(d)
    if protocol is None:
        raise CommandError(f"pair protocol not found at {d / 'pairs.csv'}")
    return ds, protocol


def _load_checkpoint(path, what):
    if not (Path(path) / "manifest.txt").exists():
        raise CommandError(f"{what} checkpoint not found at {path}")
    return nets.load_checkpoint(path)[0]


def _resolutions(cfg):
    return [cfg.synth.image_size] + sorted(cfg.degrade.lr_sizes, reverse=True)


# -- subcommands -----------------------------------------------------------------

def cmd_synth(cfg, args):
    out = _outdir(cfg, "dataset")
    ds = data.generate_dataset(cfg.synth)
    protocol = data.build_protocol(ds.labels, cfg.seed, ds.eval_index)
    data.save_dataset(ds, out, protocol)
    log.info("wrote %d images and %d pairs to %s", len(ds.labels), len(protocol.pairs), out)
    return out


def cmd_degrade(cfg, args):
    src = args.input if args.input is not None else Path(cfg.out) / "dataset"
    files = sorted(Path(src).glob("*.pgm"))
    if not files:
        raise CommandError(f"no .pgm images found in {src}")
    out = _outdir(cfg, "degraded")

    def work(item):
        i, f = item
        out_img, rec = degrade_sample(read_pgm(f), cfg.degrade, RngStream(cfg.seed, i), return_record=True)
        write_pgm(out / f.name, out_img)
        return [f.name, int(rec.blur), repr(rec.blur_sigma), int(rec.noise), repr(rec.noise_sigma),
                int(rec.jpeg), rec.jpeg_quality, rec.size]

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        rows = list(pool.map(work, enumerate(files)))
    write_csv(out / "manifest.csv", DEGRADE_HEADER, rows)
    return out


def cmd_train_teacher(cfg, args):
    ds, _ = _load_data(cfg, args.data)
    out = _outdir(cfg, "teacher")
    spec = cfg.network.with_kind(nets.STRIDE_CONV)
    train.train_teacher(ds, spec, cfg.train, checkpoint_dir=out, resume=args.resume)
    return out


def cmd_train_student(cfg, args):
    teacher_dir = args.teacher if args.teacher is not None else Path(cfg.out) / "teacher"
    teacher = _load_checkpoint(teacher_dir, "teacher")
    ds, _ = _load_data(cfg, args.data)
    out = _outdir(cfg, "student")
    spec = cfg.network.with_kind(nets.WAVECONV)
    train.train_student(ds, teacher, spec, cfg.train, cfg.degrade, checkpoint_dir=out, resume=args.resume)
    return out


def cmd_eval(cfg, args):
    ckpt = args.checkpoint if args.checkpoint is not None else Path(cfg.out) / "student"
    model = _load_checkpoint(ckpt, "model")
    ds, protocol = _load_data(cfg, args.data)
    out = _outdir(cfg, "eval")
    name = args.name or Path(ckpt).name
    rows = train.evaluate_model(model, protocol, ds.images, _resolutions(cfg), name, cfg.seed)
    train.write_metrics(out / "metrics.csv", rows)
    for r in rows:
        print(f"{r['config']} {r['resolution']}x{r['resolution']}: "
              f"{r['fold_mean']:.4f} +/- {r['fold_std']:.4f}")
    return out


def cmd_ablate(cfg, args):
    ds, protocol = _load_data(cfg, args.data)
    out = _outdir(cfg, "ablation")
    seeds = args.seeds or [cfg.seed]
    rows = train.run_ablation(ds, protocol, cfg.network, cfg.train, cfg.degrade, seeds=seeds,
                              out_dir=out, timed=not cfg.deterministic)
    table = train.ablation_table(rows, _resolutions(cfg))
    for t in table:
        accs = "  ".join(f"{r}:{a:.4f}" for r, a in t["accuracy"].items())
        print(f"{t['config']:<28} {accs}  avg:{t['average']:.4f}")
    return out


def _normalize(band):
    lo, hi = band.min(), band.max()
    if hi - lo < 1e-12:
        return np.zeros_like(band)
    return (band - lo) * (255.0 / (hi - lo))


def cmd_dwt(cfg, args):
    if not Path(args.image).exists():
        raise CommandError(f"image not found at {args.image}")
    img = read_pgm(args.image)
    bands = dwt2_forward(Tensor(img[None, None]))
    out = _outdir(cfg, "dwt")
    stem = Path(args.image).stem
    for name, band in zip(bands._fields, bands):
        write_pgm(out / f"{stem}_{name}.pgm", _normalize(band.data[0, 0]))
    energies = subband_energies(img)
    total = sum(energies.values())
    lines = [f"{name} {0.0 if total == 0 else e / total:.12f}" for name, e in energies.items()]
    (out / f"{stem}_energy.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return out


COMMANDS = {
    "synth": cmd_synth,
    "degrade": cmd_degrade,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "dwt": cmd_dwt,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg, args)
    except (CommandError, ValueError, FileNotFoundError, train.TrainingDiverged) as exc:
        print(f"wavedistill {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
