"""He-scaled init + centered inputs: does the variance-preserving path learn?"""
import time
import numpy as np
from nariqa import autodiff as ad
from nariqa.autodiff import Tensor
from nariqa.data import augment, build_synthetic_dataset, sample_aligned_patches
from nariqa.network import ArchConfig, forward, init_params, parameter_shapes, _fan_in
from nariqa.optim import adam_step, init_adam
from nariqa.metrics import srcc

ds = build_synthetic_dataset(n_images=400, distortions_per_image=2, seed=0,
                             test_fraction=0.25, pool_size=12)
train, test = ds.train, ds.test
arch = ArchConfig(depth_lq=1, depth_diff=2)
gt = np.array([s.mos for s in test[:120]])
m, p = arch.patch_count, arch.patch_size

def init_he(cfg, seed):
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed)
    for name, (shape, kind) in parameter_shapes(cfg).items():
        if kind == "weight":
            bound = np.sqrt(6.0 / _fan_in(shape, kind))
            params[name].data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return params

def run(tag, lr, batch, epochs=4):
    params = init_he(arch, 0)
    state = init_adam(params, lr=lr, weight_decay=5e-4)
    rng = np.random.default_rng((0, 1))
    t0 = time.perf_counter()
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        tot = 0.0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            lqs, frs, ys = [], [], []
            for i in idx:
                s = train[i]
                a, b = sample_aligned_patches(s, m, p, rng)
                la, fa = augment(a.patches, b.patches, rng)
                lqs.append(la - 0.5); frs.append(fa - 0.5); ys.append(s.mos / 100)
            out = forward(Tensor(np.stack(lqs)), Tensor(np.stack(frs)), params, arch)
            loss = ad.l1_loss(out.score, Tensor(np.array(ys, dtype=np.float32)))
            ad.backward(loss)
            adam_step(params, state)
            tot += float(loss.data) * len(idx)
        preds = []
        rngv = np.random.default_rng(9)
        with ad.no_grad():
            for s in test[:120]:
                a, b = sample_aligned_patches(s, m, p, rngv)
                o = forward(Tensor(a.patches[None] - 0.5), Tensor(b.patches[None] - 0.5),
                            params, arch)
                preds.append(float(o.score.data[0]))
        preds = np.array(preds)
        print(f"{tag} ep {epoch}: loss {tot/len(train):.4f} "
              f"val_srcc {srcc(preds, gt):.3f} std {100*preds.std():.2f} "
              f"({time.perf_counter()-t0:.0f}s)", flush=True)

run("H he lr3e-3 b8 ", 3e-3, 8)
run("I he lr1e-3 b8 ", 1e-3, 8)
