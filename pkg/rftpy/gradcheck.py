from collections.abc import Callable, Mapping

import numpy as np


def numeric_gradient(
    fn: Callable[[dict[str, np.ndarray]], float],
    arrays: Mapping[str, np.ndarray],
    step: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central finite-difference gradient of `fn` with respect to every entry of `arrays`.

    `fn` receives a dict of perturbed copies; `arrays` itself is not modified.
    """

    work = {name: np.array(arr, dtype=np.float64, copy=True) for name, arr in arrays.items()}
    grad = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        g_flat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            right = fn(work)
            flat[i] = old - step
            left = fn(work)
            flat[i] = old
            g_flat[i] = (right - left) / (2.0 * step)
        grad[name] = g
    return grad


def relative_error(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> float:
    """`||a - b|| / max(||a|| + ||b||, tiny)` over all arrays together."""

    diff = sum(float(np.sum((a[n] - b[n]) ** 2)) for n in a)
    norm = np.sqrt(sum(float(np.sum(a[n] ** 2)) for n in a)) + np.sqrt(
        sum(float(np.sum(b[n] ** 2)) for n in b)
    )
    return float(np.sqrt(diff) / max(norm, 1e-300))
