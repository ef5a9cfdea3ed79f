"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Every function writes into caller-provided output arrays so the two backends
are drop-in interchangeable.
"""

import numpy as np


def warp_bilinear(images, inv, out):
    n, h, w = images.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[:, 0, 0, None, None] * xs + inv[:, 0, 1, None, None] * ys + inv[:, 0, 2, None, None]
    sy = inv[:, 1, 0, None, None] * xs + inv[:, 1, 1, None, None] * ys + inv[:, 1, 2, None, None]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    # zero-padded lookup: shift by one so indices -1 and w land in the pad
    padded = np.zeros((n, h + 2, w + 2), dtype=np.float64)
    padded[:, 1:-1, 1:-1] = images
    xi = np.clip(x0, -1, w) + 1
    yi = np.clip(y0, -1, h) + 1
    xi1 = np.clip(x0 + 1, -1, w) + 1
    yi1 = np.clip(y0 + 1, -1, h) + 1
    idx = np.arange(n)[:, None, None]
    a = padded[idx, yi, xi]
    b = padded[idx, yi, xi1]
    c = padded[idx, yi1, xi]
    d = padded[idx, yi1, xi1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    v = top + fy * (bot - top)
    v = np.minimum(v, np.maximum(np.maximum(a, b), np.maximum(c, d)))
    out[...] = v
    return out


def shared_dense_max(grid, wt, bias, out, arg):
    feats = np.einsum("nck,kj->ncj", grid, wt) + bias
    np.maximum(feats, 0, out=feats)
    arg[...] = np.argmax(feats, axis=1)
    out[...] = np.take_along_axis(feats, arg[:, None, :], axis=1)[:, 0, :]
    return out, arg


def maxpool2x2(x, out, pos):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    p = np.argmax(win, axis=-1)
    pos[...] = p
    out[...] = np.take_along_axis(win, p[..., None], axis=-1)[..., 0]
    return out, pos


def maxpool2x2_backward(grad_out, pos, grad_in):
    n, c, ho, wo = grad_out.shape
    p = pos.astype(np.int64)
    ni, ci, ii, jj = np.indices((n, c, ho, wo), sparse=True)
    grad_in[ni, ci, 2 * ii + (p >> 1), 2 * jj + (p & 1)] = grad_out
    return grad_in
