"""Pure numpy fallback for the 3x3 convolution kernels (im2col formulation)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _patches(x):
    # (B, C, H, W) -> (B, H, W, C, 3, 3)
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(padded, (3, 3), axis=(2, 3))
    return win.transpose(0, 2, 3, 1, 4, 5)


def conv3x3_forward(x, w, b):
    x = np.ascontiguousarray(x, dtype=np.float64)
    B, C, H, W = x.shape
    O = w.shape[0]
    if w.shape != (O, C, 3, 3) or b.shape != (O,):
        raise ValueError("weight/bias shape mismatch")
    cols = _patches(x).reshape(B * H * W, C * 9)
    out = cols @ w.reshape(O, C * 9).T + b
    return np.ascontiguousarray(out.reshape(B, H, W, O).transpose(0, 3, 1, 2))


def conv3x3_backward(x, w, gout):
    x = np.ascontiguousarray(x, dtype=np.float64)
    B, C, H, W = x.shape
    O = w.shape[0]
    if gout.shape != (B, O, H, W):
        raise ValueError("output-gradient shape mismatch")
    g2 = gout.transpose(0, 2, 3, 1).reshape(B * H * W, O)
    cols = _patches(x).reshape(B * H * W, C * 9)
    gw = (g2.T @ cols).reshape(O, C, 3, 3)
    gb = g2.sum(axis=0)
    gcols = (g2 @ w.reshape(O, C * 9)).reshape(B, H, W, C, 3, 3)
    gpad = np.zeros((B, C, H + 2, W + 2))
    for di in range(3):
        for dj in range(3):
            gpad[:, :, di:di + H, dj:dj + W] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gpad[:, :, 1:H + 1, 1:W + 1]), gw, gb
