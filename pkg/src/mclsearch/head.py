"""Small fixed convolutional classifier used as the task network.

Two blocks of (3x3 conv, ReLU, 2x2 average pool), global average pooling
and a linear layer. Inputs arrive as ``(B, H, W, C)`` feature tensors (the
last mode is treated as channels) and are transposed to NCHW internally.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import conv3x3_backward, conv3x3_forward

__all__ = ["TaskHead", "head_forward", "head_backward", "softmax", "cross_entropy"]


@dataclass
class TaskHead:
    params: list
    class_count: int

    @classmethod
    def create(cls, in_channels, class_count, widths=(8, 16), seed=0):
        if class_count < 2:
            raise ValueError("a classifier needs at least 2 classes")
        rng = np.random.default_rng(seed)
        c1, c2 = widths
        params = [
            rng.standard_normal((c1, in_channels, 3, 3)) * np.sqrt(2.0 / (9 * in_channels)),
            np.zeros(c1),
            rng.standard_normal((c2, c1, 3, 3)) * np.sqrt(2.0 / (9 * c1)),
            np.zeros(c2),
            rng.standard_normal((class_count, c2)) * np.sqrt(1.0 / c2),
            np.zeros(class_count),
        ]
        return cls(params, class_count)

    @property
    def in_channels(self):
        return self.params[0].shape[1]

    def copy(self):
        return TaskHead([p.copy() for p in self.params], self.class_count)


def _to_nchw(t):
    if t.ndim == 3:
        t = t[..., None]
    if t.ndim != 4:
        raise ValueError("the task head expects 2- or 3-mode feature tensors")
    return np.ascontiguousarray(t.transpose(0, 3, 1, 2))


def _pool(x):
    B, C, H, W = x.shape
    h, w = H // 2, W // 2
    if h == 0 or w == 0:
        raise ValueError(f"feature map {H}x{W} too small to pool")
    return 0.25 * ((x[:, :, 0:2 * h:2, 0:2 * w:2] + x[:, :, 1:2 * h:2, 0:2 * w:2])
                   + (x[:, :, 0:2 * h:2, 1:2 * w:2] + x[:, :, 1:2 * h:2, 1:2 * w:2]))


def _pool_backward(g, shape):
    B, C, H, W = shape
    h, w = g.shape[2], g.shape[3]
    out = np.zeros(shape)
    q = 0.25 * g
    for a in (0, 1):
        for b in (0, 1):
            out[:, :, a:2 * h:2, b:2 * w:2] = q
    return out


def head_forward(params, t):
    """Return ``(logits, cache)`` for a batch of feature tensors ``t``."""
    w1, b1, w2, b2, wl, bl = params
    x0 = _to_nchw(t)
    a1 = conv3x3_forward(x0, w1, b1)
    r1 = np.maximum(a1, 0.0)
    p1 = _pool(r1)
    a2 = conv3x3_forward(p1, w2, b2)
    r2 = np.maximum(a2, 0.0)
    p2 = _pool(r2)
    feat = p2.mean(axis=(2, 3))
    logits = feat @ wl.T + bl
    return logits, (t.ndim, x0, a1, p1, a2, p2, feat)


def head_backward(params, cache, glogits):
    """Gradients of the head parameters and of the input features."""
    w1, b1, w2, b2, wl, bl = params
    ndim, x0, a1, p1, a2, p2, feat = cache
    gwl = glogits.T @ feat
    gbl = glogits.sum(axis=0)
    gfeat = glogits @ wl
    h, w = p2.shape[2], p2.shape[3]
    gp2 = np.broadcast_to(gfeat[:, :, None, None] / (h * w), p2.shape)
    ga2 = _pool_backward(gp2, a2.shape) * (a2 > 0)
    gp1, gw2, gb2 = conv3x3_backward(p1, w2, np.ascontiguousarray(ga2))
    ga1 = _pool_backward(gp1, a1.shape) * (a1 > 0)
    gx0, gw1, gb1 = conv3x3_backward(x0, w1, np.ascontiguousarray(ga1))
    gt = gx0.transpose(0, 2, 3, 1)
    if ndim == 3:
        gt = gt[..., 0]
    return [gw1, gb1, gw2, gb2, gwl, gbl], np.ascontiguousarray(gt)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -float(logp[np.arange(n), labels].mean())
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    return loss, g / n
