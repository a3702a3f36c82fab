"""Can the desk model overfit 16 samples? Plus feature/gradient diagnostics."""
import time
import numpy as np
from nariqa import autodiff as ad
from nariqa.autodiff import Tensor
from nariqa.data import build_synthetic_dataset, sample_aligned_patches
from nariqa.network import ArchConfig, forward, init_params
from nariqa.optim import adam_step, init_adam
from nariqa.metrics import srcc

ds = build_synthetic_dataset(n_images=8, distortions_per_image=2, seed=0,
                             test_fraction=0.0, pool_size=2)
samples = ds.train  # 16 samples
arch = ArchConfig()  # desk default
params = init_params(arch, 0)
rng = np.random.default_rng(0)

# fixed patch sets (no augmentation) so the task is pure memorization
lq, fr = [], []
for s in samples:
    a, b = sample_aligned_patches(s, arch.patch_count, arch.patch_size, rng)
    lq.append(a.patches); fr.append(b.patches)
p_lq = Tensor(np.stack(lq)); p_fr = Tensor(np.stack(fr))
y = np.array([s.mos / 100 for s in samples], dtype=np.float32)

# untrained feature diagnostics
with ad.no_grad():
    out = forward(p_lq, p_fr, params, arch)
print("untrained score std over 16 samples:", float(out.score.data.std()))

state = init_adam(params, lr=3e-3, weight_decay=0.0)
t0 = time.perf_counter()
for step in range(120):
    out = forward(p_lq, p_fr, params, arch)
    loss = ad.l1_loss(out.score, Tensor(y))
    ad.backward(loss)
    if step == 0:
        for group in ("backbone.stage1.conv.weight", "backbone.stage4.conv.weight",
                      "encoder_lq.block0.channel_fc1.weight",
                      "encoder_diff.block0.channel_fc1.weight",
                      "regressor.fc1.weight", "regressor.fc2.weight"):
            g = params[group].grad
            print(f"  grad |{group}|: mean {np.abs(g).mean():.2e} max {np.abs(g).max():.2e}")
    adam_step(params, state)
    if step % 20 == 19:
        with ad.no_grad():
            pred = forward(p_lq, p_fr, params, arch).score.data
        print(f"step {step+1}: loss {float(loss.data):.4f} pred_std {pred.std():.4f} "
              f"train_srcc {srcc(pred, y):.3f}  ({time.perf_counter()-t0:.0f}s)", flush=True)
