import numpy as np

from ctxnet.tensor import backward


def fd_check(loss_fn, tensors, rng, n_coords=100, step=1e-5):
    """Compare analytic gradients with central differences on random coordinates.

    ``loss_fn()`` must rebuild the graph from the tensors' current data and
    return a scalar Tensor. Returns the worst relative error seen.
    """
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    coords = [(ti, idx) for ti, t in enumerate(tensors) for idx in np.ndindex(t.shape)]
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in pick]
    worst = 0.0
    for ti, idx in coords:
        data = tensors[ti].data
        old = data[idx]
        data[idx] = old + step
        up = float(loss_fn().data)
        data[idx] = old - step
        down = float(loss_fn().data)
        data[idx] = old
        numeric = (up - down) / (2 * step)
        a = float(analytic[ti][idx])
        # absolute floor keeps coordinates with ~zero gradient from dominating
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, rel)
    return worst, len(coords)
