"""Ablate batch-assembly randomness: augment on/off, crops fixed/random."""
import time
import numpy as np
from nariqa import autodiff as ad
from nariqa.autodiff import Tensor
from nariqa.data import augment, build_synthetic_dataset, sample_aligned_patches
from nariqa.network import ArchConfig, forward, init_params
from nariqa.optim import adam_step, init_adam
from nariqa.metrics import srcc, predict_scores

ds = build_synthetic_dataset(n_images=400, distortions_per_image=2, seed=0,
                             test_fraction=0.25, pool_size=12)
train, test = ds.train, ds.test
arch = ArchConfig(depth_lq=1, depth_diff=2)
gt = np.array([s.mos for s in test])

def run(tag, use_augment, fixed_crops, lr=3e-3, epochs=3, batch=8):
    params = init_params(arch, 0)
    state = init_adam(params, lr=lr, weight_decay=5e-4)
    rng = np.random.default_rng((0, 1))
    m, p = arch.patch_count, arch.patch_size
    fixed = {}
    if fixed_crops:
        for i, s in enumerate(train):
            a, b = sample_aligned_patches(s, m, p, rng)
            fixed[i] = (a.patches, b.patches)
    t0 = time.perf_counter()
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        tot = 0.0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            lqs, frs, ys = [], [], []
            for i in idx:
                s = train[i]
                if fixed_crops:
                    la, fa = fixed[i]
                else:
                    a, b = sample_aligned_patches(s, m, p, rng)
                    la, fa = a.patches, b.patches
                if use_augment:
                    la, fa = augment(la, fa, rng)
                lqs.append(la); frs.append(fa); ys.append(s.mos / 100)
            out = forward(Tensor(np.stack(lqs)), Tensor(np.stack(frs)), params, arch)
            loss = ad.l1_loss(out.score, Tensor(np.array(ys, dtype=np.float32)))
            ad.backward(loss)
            adam_step(params, state)
            tot += float(loss.data) * len(idx)
        pred = predict_scores(params, arch, test[:120], ref_mode="aligned_fr") * 100
        print(f"{tag} epoch {epoch}: loss {tot/len(train):.4f} "
              f"val_srcc {srcc(pred, gt[:120]):.3f} pred_std {pred.std():.3f} "
              f"({time.perf_counter()-t0:.0f}s)", flush=True)

run("A aug=off crops=random", False, False)
run("B aug=off crops=fixed ", False, True)
run("C aug=on  crops=random", True, False)
