"""
Teacher, student and the ablation table (small run)
===================================================

Train the stride-conv ResNet teacher on clean HR images, then a WaveResNet
student on degraded LR images with the distillation and wavelet-similarity
terms.  The sizes here are cut down so the script finishes in about a
minute; ``wavedistill ablate`` runs the full desk-scale configuration.
"""

import logging

from wavedistill.data import SynthSpec, build_protocol, generate_dataset
from wavedistill.degrade import DegradationConfig
from wavedistill.nets import WAVECONV, NetworkSpec
from wavedistill.train import TrainConfig, ablation_table, run_ablation, train_student, train_teacher, verify_accuracy

logging.basicConfig(level=logging.INFO, format="%(message)s")

ds = generate_dataset(SynthSpec(num_identities=8, samples_per_identity=30))
protocol = build_protocol(ds.labels, 0, ds.eval_index)
spec = NetworkSpec(channels_per_stage=[8, 16, 32], embedding_dim=32, num_classes=8)
cfg = TrainConfig(epochs=4)
degcfg = DegradationConfig()

teacher = train_teacher(ds, spec, cfg).model
student = train_student(ds, teacher, spec.with_kind(WAVECONV), cfg, degcfg)
for row in student.loss_log:
    print({k: round(float(v), 4) for k, v in row.items()})

for r in (32, 16, 8):
    t = verify_accuracy(teacher, protocol, ds.images, r)[0]
    s = verify_accuracy(student.model, protocol, ds.images, r)[0]
    print(f"{r:2d}x{r:<2d}  teacher {t:.4f}  student {s:.4f}")

# the five ablation rows, one seed
rows = run_ablation(ds, protocol, spec, TrainConfig(epochs=2), degcfg, seeds=[0])
for t in ablation_table(rows, [32, 16, 8]):
    print(f"{t['config']:<27}", "  ".join(f"{r}:{a:.3f}" for r, a in t["accuracy"].items()))
