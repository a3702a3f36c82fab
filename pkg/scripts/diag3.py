"""Test input centering and learning-rate variants."""
import time
import numpy as np
from nariqa import autodiff as ad
from nariqa.autodiff import Tensor
from nariqa.data import augment, build_synthetic_dataset, sample_aligned_patches
from nariqa.network import ArchConfig, forward, init_params
from nariqa.optim import adam_step, init_adam
from nariqa.metrics import srcc

ds = build_synthetic_dataset(n_images=400, distortions_per_image=2, seed=0,
                             test_fraction=0.25, pool_size=12)
train, test = ds.train, ds.test
arch = ArchConfig(depth_lq=1, depth_diff=2)
gt = np.array([s.mos for s in test[:120]])
m, p = arch.patch_count, arch.patch_size

def run(tag, center, lr, epochs=3, batch=8, use_augment=True):
    params = init_params(arch, 0)
    state = init_adam(params, lr=lr, weight_decay=5e-4)
    rng = np.random.default_rng((0, 1))
    t0 = time.perf_counter()
    off = 0.5 if center else 0.0
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        tot = 0.0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            lqs, frs, ys = [], [], []
            for i in idx:
                s = train[i]
                a, b = sample_aligned_patches(s, m, p, rng)
                la, fa = (augment(a.patches, b.patches, rng) if use_augment
                          else (a.patches, b.patches))
                lqs.append(la - off); frs.append(fa - off); ys.append(s.mos / 100)
            out = forward(Tensor(np.stack(lqs)), Tensor(np.stack(frs)), params, arch)
            loss = ad.l1_loss(out.score, Tensor(np.array(ys, dtype=np.float32)))
            ad.backward(loss)
            adam_step(params, state)
            tot += float(loss.data) * len(idx)
        # quick val: aligned patches, centered the same way
        preds = []
        rngv = np.random.default_rng(9)
        with ad.no_grad():
            for s in test[:120]:
                a, b = sample_aligned_patches(s, m, p, rngv)
                o = forward(Tensor(a.patches[None] - off), Tensor(b.patches[None] - off),
                            params, arch)
                preds.append(float(o.score.data[0]))
        preds = np.array(preds)
        print(f"{tag} epoch {epoch}: loss {tot/len(train):.4f} "
              f"val_srcc {srcc(preds, gt):.3f} pred_std {100*preds.std():.3f} "
              f"({time.perf_counter()-t0:.0f}s)", flush=True)

run("E center lr3e-3 ", True, 3e-3)
run("F center lr1e-2 ", True, 1e-2)
run("G raw    lr1e-2 ", False, 1e-2)
