"""Shared test utilities: independent finite-difference gradient oracle."""

import numpy as np

from dropbench import autograd as ag
from dropbench.autograd import Tensor


def finite_difference_grad(fn, arrays, index, h=1e-5):
    """Central-difference gradient of scalar fn w.r.t. arrays[index].

    fn takes plain float64 numpy arrays and returns a python float. This is
    deliberately independent of the autograd engine.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    target = arrays[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + h
        f_plus = fn(*arrays)
        target[idx] = orig - h
        f_minus = fn(*arrays)
        target[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
        it.iternext()
    return grad


def autograd_grads(build_loss, arrays):
    """Loss via build_loss(tensors...) -> scalar Tensor; returns grads."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()
    return [t.grad for t in tensors]


def relative_error(a, b, floor=1e-8):
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(build_loss, arrays, h=1e-5, tol=1e-4):
    """Compare autograd gradients against the finite-difference oracle.

    Returns the worst relative error across all inputs.
    """
    grads = autograd_grads(build_loss, arrays)

    def scalar_fn(*arrs):
        with ag.no_grad():
            return build_loss(*[Tensor(a) for a in arrs]).item()

    worst = 0.0
    for i, g in enumerate(grads):
        if g is None:
            continue
        fd = finite_difference_grad(scalar_fn, arrays, i, h=h)
        worst = max(worst, relative_error(g, fd))
    assert worst < tol, f"gradient mismatch: worst relative error {worst:.3e} >= {tol}"
    return worst
