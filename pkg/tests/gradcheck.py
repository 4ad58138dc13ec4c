"""Shared central-finite-difference gradient checker for the test suite."""
import numpy as np

# Central differences at h=1e-5 on O(1) float64 losses carry ~1e-10 absolute
# noise (eps/h cancellation plus the h^2 truncation term). Components whose
# analytic and numeric values both sit below ZERO_BAND are structural zeros
# (e.g. the attention key bias, which softmax provably cancels) and are held
# to an absolute gate instead of a relative one.
ZERO_BAND = 1e-7
ZERO_TOL = 1e-9


def component_error(analytic: float, numeric: float) -> float:
    if max(abs(analytic), abs(numeric)) < ZERO_BAND:
        return 0.0 if abs(analytic - numeric) < ZERO_TOL else 1.0
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric))


def max_grad_error(params: dict, grads: dict, loss_fn, h: float = 1e-5) -> float:
    """Worst component error between analytic grads and central differences."""
    worst = 0.0
    for name, arr in params.items():
        g = grads.get(name)
        if g is None:
            continue
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_fn()
            arr[idx] = orig - h
            down = loss_fn()
            arr[idx] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, component_error(float(g[idx]), numeric))
    return worst
