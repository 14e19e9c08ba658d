"""Dense tensor algebra.

Tensors are plain ``numpy.ndarray`` objects in float64, C (row-major) order
with the last mode varying fastest. Mode indices at the public boundary are
1-based, matching the ``x_k`` notation used throughout the package; they are
converted to 0-based axes internally.
"""

import numpy as np

__all__ = [
    "unfold",
    "fold",
    "mode_k_product",
    "multilinear_map",
    "frobenius_norm",
    "hosvd",
    "downsample",
    "resample_matrix",
    "canonical_signs",
    "leading_eigvecs",
]


def _axis(ndim, k):
    if not 1 <= k <= ndim:
        raise ValueError(f"mode index {k} out of range for a tensor of order {ndim}")
    return k - 1


def _as_tensor(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        raise ValueError("a tensor needs at least one mode")
    return t


def unfold(t, k):
    """Mode-``k`` unfolding of ``t``.

    Returns a matrix of shape ``(dims[k], prod(other dims))`` whose rows are
    the mode-``k`` fibers; columns follow the row-major order of the
    remaining modes.
    """
    t = _as_tensor(t)
    ax = _axis(t.ndim, k)
    return np.ascontiguousarray(np.moveaxis(t, ax, 0).reshape(t.shape[ax], -1))


def fold(mat, shape, k):
    """Inverse of :func:`unfold`."""
    shape = tuple(int(d) for d in shape)
    ax = _axis(len(shape), k)
    moved = (shape[ax],) + shape[:ax] + shape[ax + 1:]
    mat = np.asarray(mat, dtype=np.float64)
    if mat.size != int(np.prod(moved)):
        raise ValueError(f"cannot fold a {mat.shape} matrix into shape {shape}")
    return np.ascontiguousarray(np.moveaxis(mat.reshape(moved), 0, ax))


def _apply_axis(t, a, ax):
    # contract axis `ax` of t with the columns of a
    if a.shape[1] != t.shape[ax]:
        raise ValueError(
            f"dimension mismatch: factor has {a.shape[1]} columns, "
            f"mode {ax + 1} has extent {t.shape[ax]}"
        )
    out = np.moveaxis(t, ax, -1) @ a.T
    return np.ascontiguousarray(np.moveaxis(out, -1, ax))


def mode_k_product(t, a, k):
    """Mode-``k`` product ``t x_k a``.

    The result replaces extent ``dims[k]`` with ``a.shape[0]`` and its mode-k
    unfolding equals ``a @ unfold(t, k)``.
    """
    t = _as_tensor(t)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("factor must be a matrix")
    return _apply_axis(t, a, _axis(t.ndim, k))


def multilinear_map(t, factors):
    """Apply one factor per mode: ``t x_1 A_1 x_2 ... x_K A_K``.

    For a vector (K=1) this is the ordinary matrix-vector product.
    """
    t = _as_tensor(t)
    factors = list(factors)
    if len(factors) != t.ndim:
        raise ValueError(f"expected {t.ndim} factors, got {len(factors)}")
    out = t
    for ax, a in enumerate(factors):
        out = _apply_axis(out, np.asarray(a, dtype=np.float64), ax)
    return out


def frobenius_norm(t):
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


def canonical_signs(vecs):
    """Flip columns of ``vecs`` so that each column's largest-magnitude entry
    is nonnegative. The first maximal entry wins on ties."""
    vecs = np.array(vecs, dtype=np.float64, copy=True)
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def leading_eigvecs(scatter, m):
    """Top-``m`` eigenvectors of a symmetric PSD matrix, as rows.

    Eigenvalues are ordered descending with ties kept in their original
    index order; signs follow :func:`canonical_signs`.
    """
    scatter = np.asarray(scatter, dtype=np.float64)
    vals, vecs = np.linalg.eigh(0.5 * (scatter + scatter.T))
    # eigh is ascending; a stable sort on -vals keeps earlier indices first on ties
    order = np.argsort(-vals, kind="stable")[:m]
    return canonical_signs(vecs[:, order]).T.copy()


def _left_singular_rows(mat, m):
    u, _, _ = np.linalg.svd(mat, full_matrices=False)
    if m > u.shape[1]:
        # wide matrices with fewer columns than rows: complete the basis
        u, _, _ = np.linalg.svd(mat, full_matrices=True)
    return canonical_signs(u[:, :m]).T.copy()


def hosvd(t, target):
    """Truncated higher-order SVD.

    Parameters
    ----------
    t : ndarray
        Tensor of shape ``(I_1, ..., I_K)``.
    target : sequence of int
        Core extents ``(M_1, ..., M_K)`` with ``M_k <= I_k``.

    Returns
    -------
    core : ndarray
        ``multilinear_map(t, factors)``, shape ``target``.
    factors : list of ndarray
        Factor ``k`` has shape ``(M_k, I_k)`` with orthonormal rows, the
        leading left singular vectors of ``unfold(t, k)``.
    """
    t = _as_tensor(t)
    target = tuple(int(m) for m in target)
    if len(target) != t.ndim:
        raise ValueError(f"target has {len(target)} modes, tensor has {t.ndim}")
    for k, (m, i) in enumerate(zip(target, t.shape), start=1):
        if m < 1 or m > i:
            raise ValueError(f"target extent {m} invalid for mode {k} of extent {i}")
    factors = [_left_singular_rows(unfold(t, k), m) for k, m in enumerate(target, start=1)]
    return multilinear_map(t, factors), factors


def resample_matrix(source, target):
    """Area-averaging resampling matrix of shape ``(target, source)``.

    Row ``i`` averages the source interval
    ``[i * source / target, (i + 1) * source / target)`` with fractional
    overlap weights, so every row is a convex combination.
    """
    source, target = int(source), int(target)
    if target < 1 or target > source:
        raise ValueError(f"cannot resample extent {source} to {target}")
    r = np.zeros((target, source))
    # exact rational edges: output cell i spans [i*source, (i+1)*source) in units of 1/target
    for i in range(target):
        lo, hi = i * source, (i + 1) * source
        for j in range(lo // target, min(source, -(-hi // target))):
            overlap = min(hi, (j + 1) * target) - max(lo, j * target)
            if overlap > 0:
                r[i, j] = overlap / source
    return r


def downsample(t, target, batch=False):
    """Box (area-average) down-sampling to ``target`` extents.

    Modes whose extent is unchanged pass through untouched. With
    ``batch=True`` the leading axis of ``t`` indexes samples and ``target``
    covers the remaining axes.
    """
    t = _as_tensor(t)
    target = tuple(int(d) for d in target)
    offset = 1 if batch else 0
    dims = t.shape[offset:]
    if len(target) != len(dims):
        raise ValueError(f"target has {len(target)} modes, tensor has {len(dims)}")
    out = t
    for ax, (src, dst) in enumerate(zip(dims, target)):
        if dst > src or dst < 1:
            raise ValueError(f"target extent {dst} exceeds source extent {src} in mode {ax + 1}")
        if dst != src:
            out = _apply_axis(out, resample_matrix(src, dst), ax + offset)
    if out is t:
        return t.copy()
    return out
