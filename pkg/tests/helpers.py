"""Independent finite-difference oracle shared by the gradient tests."""

import numpy as np

from relnet.netcore import GradTape, NumpyOps


def central_difference_check(loss_fn, arrays, rng, coords=20, directions=3, h=1e-5):
    """Largest relative error between tape gradients and central differences.

    ``loss_fn(ops)`` evaluates the scalar loss with either back end.  The
    oracle perturbs parameter arrays in place and only ever uses plain numpy
    evaluation.  Checked quantities: a random subset of coordinates (compared
    as one vector) and directional derivatives along random unit directions.
    """
    tape = GradTape()
    grads = tape.backward(loss_fn(tape))
    plain = NumpyOps()

    def f():
        return float(loss_fn(plain))

    def fd_along(direction):
        for a, d in zip(arrays, direction):
            a += h * d
        up = f()
        for a, d in zip(arrays, direction):
            a -= 2 * h * d
        down = f()
        for a, d in zip(arrays, direction):
            a += h * d
        return (up - down) / (2 * h)

    errors = []
    # coordinate subset
    flat = [(k, idx) for k, a in enumerate(arrays) for idx in np.ndindex(a.shape)]
    pick = rng.choice(len(flat), size=min(coords, len(flat)), replace=False)
    ad, fd = [], []
    for p in pick:
        k, idx = flat[p]
        direction = [np.zeros_like(a) for a in arrays]
        direction[k][idx] = 1.0
        fd.append(fd_along(direction))
        ad.append(grads[id(arrays[k])][idx])
    ad, fd = np.array(ad), np.array(fd)
    scale = max(np.linalg.norm(fd), np.linalg.norm(ad))
    errors.append(0.0 if scale == 0 else np.linalg.norm(ad - fd) / scale)
    # random directions
    for _ in range(directions):
        direction = [rng.normal(size=a.shape) for a in arrays]
        norm = np.sqrt(sum(float((d * d).sum()) for d in direction))
        direction = [d / norm for d in direction]
        fd_val = fd_along(direction)
        ad_val = sum(float((grads[id(a)] * d).sum()) for a, d in zip(arrays, direction))
        scale = max(abs(fd_val), abs(ad_val))
        errors.append(0.0 if scale == 0 else abs(ad_val - fd_val) / scale)
    return max(errors)
