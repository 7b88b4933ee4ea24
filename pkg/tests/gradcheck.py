"""Central finite-difference gradient oracle shared by the network tests."""

import numpy as np


def finite_diff_worst_rel(named_params, loss_fn, h=1e-5):
    """Max relative error between backprop and central differences.

    ``loss_fn`` must rebuild the graph from the given parameter tensors on
    every call (their .value arrays are perturbed in place). Relative error
    uses max(|analytic|, |numeric|, 1e-6) as the denominator so near-zero
    gradients compare on absolute terms.
    """
    for _, p in named_params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad.copy() for name, p in named_params}
    worst = 0.0
    for name, p in named_params:
        flat = p.value.reshape(-1)
        grads = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn().value[0, 0]
            flat[i] = orig - h
            f_minus = loss_fn().value[0, 0]
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(grads[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(grads[i] - numeric) / denom)
    return worst


def adam_reference(value, grads, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independent Adam trajectory: apply ``grads`` in order, return values."""
    p = np.array(value, dtype=np.float64, copy=True)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        out.append(p.copy())
    return out
