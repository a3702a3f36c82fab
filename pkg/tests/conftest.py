import numpy as np
import pytest

from nariqa import autodiff as ad
from nariqa.autodiff import Tensor


def gradcheck(fn, tensors, h=1e-3, rtol=1e-3, atol=1e-5, max_coords=6, seed=0):
    """Finite-difference oracle for analytic gradients.

    ``fn(*tensors)`` must return a scalar Tensor.  Runs in float64 shadow
    precision (the tensors are expected to be float64) and compares the
    analytic gradient against central differences with step ``h`` at up to
    ``max_coords`` coordinates per tensor.

    The check applies at points away from non-smooth kinks.  When the
    step-h estimate disagrees, the probe is retried at h/16: a coordinate
    whose +-h interval straddles a ReLU/absolute-value kink converges to
    the analytic value as h shrinks, while a genuinely wrong gradient
    keeps disagreeing at every step size.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    out = fn(*tensors)
    ad.backward(out)

    def central_diff(flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn(*tensors).data)
        flat[i] = orig - step
        fm = float(fn(*tensors).data)
        flat[i] = orig
        return (fp - fm) / (2.0 * step)

    for t in tensors:
        if not t.requires_grad:
            continue
        assert t.grad is not None, "no gradient reached a requires_grad input"
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        for i in coords:
            analytic = float(t.grad.reshape(-1)[i])
            numeric = central_diff(flat, i, h)
            tol = atol + rtol * max(abs(numeric), abs(analytic))
            if abs(numeric - analytic) > tol:
                numeric = central_diff(flat, i, h / 16.0)
                tol = atol + rtol * max(abs(numeric), abs(analytic))
            assert abs(numeric - analytic) <= tol, (
                f"gradient mismatch at coord {i}: numeric {numeric:.6g} vs "
                f"analytic {analytic:.6g} (shape {t.data.shape})")


def shadow(arr, requires_grad=True):
    """float64 tensor for oracle runs."""
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad,
                  dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
