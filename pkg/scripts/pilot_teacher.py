"""Pilot: desk-scale teacher calibration (epochs / runtime / held-out SRCC)."""
import sys, time
import numpy as np
from nariqa.data import build_synthetic_dataset
from nariqa.estimators import TeacherRegressor
from nariqa.metrics import evaluate

t0 = time.perf_counter()
ds = build_synthetic_dataset(n_images=400, distortions_per_image=2, seed=0,
                             test_fraction=0.25, pool_size=12)
print(f"dataset: {len(ds.train)} train / {len(ds.test)} test samples "
      f"({time.perf_counter()-t0:.1f}s)", flush=True)

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 8
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-3
teacher = TeacherRegressor(epochs=epochs, batch_size=8, learning_rate=lr, seed=0)
t1 = time.perf_counter()
teacher.fit(ds.train, X_val=ds.test)
t_fit = time.perf_counter() - t1
for e, (loss, snap) in enumerate(zip(teacher.report_.label_loss, teacher.report_.snapshots)):
    print(f"epoch {e}: loss {loss:.4f}  val_srcc {snap['val_srcc']:.4f}", flush=True)
print(f"fit wall time: {t_fit:.1f}s ({t_fit/epochs:.1f}s/epoch)")
rep = evaluate(teacher.params_, teacher.arch_, ds.test, n_shuffles=1, seed=0,
               ref_mode="aligned_fr")
print(f"final aligned: SRCC {rep.srcc:.4f} PLCC {rep.plcc:.4f} KRCC {rep.krcc:.4f}")
