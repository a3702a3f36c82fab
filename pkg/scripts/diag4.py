"""Linear probes: where does the quality signal live/die in the forward pass?"""
import numpy as np
from nariqa import autodiff as ad
from nariqa.autodiff import Tensor
from nariqa.data import build_synthetic_dataset, sample_aligned_patches
from nariqa.network import (ArchConfig, extract_multiscale_features, forward,
                            init_params, encode_lq, encode_diff)
from nariqa.metrics import srcc

ds = build_synthetic_dataset(n_images=400, distortions_per_image=2, seed=0,
                             test_fraction=0.25, pool_size=12)
train, test = ds.train[:400], ds.test[:150]
arch = ArchConfig(depth_lq=1, depth_diff=2)
params = init_params(arch, 0)
m, p = arch.patch_count, arch.patch_size
rng = np.random.default_rng(0)

def batch_feats(samples):
    F_ext, F_vec, F_hand = [], [], []
    with ad.no_grad():
        for s in samples:
            a, b = sample_aligned_patches(s, m, p, rng)
            la, fa = a.patches - 0.5, b.patches - 0.5
            f = extract_multiscale_features(Tensor(la), params, arch)      # [m,C,s,s]
            F_ext.append(f.data.mean(axis=(0, 2, 3)))                       # [C]
            flq = Tensor(f.data.reshape(1, m, -1))
            fr_feat = extract_multiscale_features(Tensor(fa), params, arch)
            fhq = Tensor(fr_feat.data.reshape(1, m, -1))
            v1 = encode_lq(flq, params, arch).data[0]
            v2, _ = encode_diff(flq, fhq, params, arch)
            F_vec.append(np.concatenate([v1, v2.data[0]]))
            # handcrafted: variance, laplacian energy, abs-diff to reference
            lap = la[:, :, 1:-1, 1:-1] * 4 - la[:, :, :-2, 1:-1] - la[:, :, 2:, 1:-1] \
                  - la[:, :, 1:-1, :-2] - la[:, :, 1:-1, 2:]
            F_hand.append([la.std(), np.abs(lap).mean(), np.abs(la - fa).mean(),
                           ((la - fa) ** 2).mean()])
    return np.array(F_ext), np.array(F_vec), np.array(F_hand)

Xe_tr, Xv_tr, Xh_tr = batch_feats(train)
Xe_te, Xv_te, Xh_te = batch_feats(test)
y_tr = np.array([s.mos for s in train])
y_te = np.array([s.mos for s in test])

def ridge_probe(name, Xtr, Xte):
    Xtr = np.asarray(Xtr, dtype=np.float64); Xte = np.asarray(Xte, dtype=np.float64)
    mu, sd = Xtr.mean(0), Xtr.std(0) + 1e-9
    A = np.c_[(Xtr - mu) / sd, np.ones(len(Xtr))]
    B = np.c_[(Xte - mu) / sd, np.ones(len(Xte))]
    w = np.linalg.solve(A.T @ A + 1e-3 * np.eye(A.shape[1]), A.T @ y_tr)
    pred = B @ w
    print(f"{name:28s} dim {Xtr.shape[1]:4d}  train_srcc {srcc(A @ w, y_tr):.3f}  "
          f"val_srcc {srcc(pred, y_te):.3f}")

ridge_probe("extractor channel means", Xe_tr, Xe_te)
ridge_probe("encoder vectors (init)", Xv_tr, Xv_te)
ridge_probe("handcrafted stats", Xh_tr, Xh_te)
