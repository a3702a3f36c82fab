"""Screening experiments: arch/lr variants with diagnostics."""
import sys, time
import numpy as np
from nariqa.data import build_synthetic_dataset, DISTORTION_KINDS
from nariqa.estimators import TeacherRegressor
from nariqa.metrics import srcc
from nariqa.network import ArchConfig

depth_lq, depth_diff, ch_exp, lr, epochs = (int(sys.argv[1]), int(sys.argv[2]),
                                            float(sys.argv[3]), float(sys.argv[4]),
                                            int(sys.argv[5]))
ds = build_synthetic_dataset(n_images=400, distortions_per_image=2, seed=0,
                             test_fraction=0.25, pool_size=12)
arch = ArchConfig(depth_lq=depth_lq, depth_diff=depth_diff, channel_expansion=ch_exp)
t = TeacherRegressor(arch=arch, epochs=epochs, batch_size=8, learning_rate=lr, seed=0)
t0 = time.perf_counter()
t.fit(ds.train, X_val=ds.test)
dt = time.perf_counter() - t0
for e, snap in enumerate(t.report_.snapshots):
    print(f"epoch {e}: loss {t.report_.label_loss[e]:.4f} val {snap['val_srcc']:.4f}", flush=True)
pred = t.predict(ds.test, seed=0)
gt = np.array([s.mos for s in ds.test])
print(f"time {dt:.0f}s ({dt/epochs:.1f}s/ep)  pred std {pred.std():.3f}  SRCC {srcc(pred, gt):.4f}")
for kind in DISTORTION_KINDS:
    idx = [i for i, s in enumerate(ds.test) if s.distortion.kind == kind]
    if len(idx) > 3:
        print(f"  {kind:18s} n={len(idx):3d} srcc {srcc(pred[idx], gt[idx]):+.4f}")
# also check train-set fit (optimization vs generalization)
pred_tr = t.predict(ds.train[:100], seed=0)
gt_tr = np.array([s.mos for s in ds.train[:100]])
print(f"train-subset SRCC {srcc(pred_tr, gt_tr):.4f}")
