"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The numba path is used by default; set the environment variable
``MEMGAN_NO_NUMBA=1`` (or fail to import numba) to fall back to numpy.
``active_backend()`` reports which one is live.

The forward-datapath kernels obey one arithmetic contract: every output
element of ``matmul_acc`` is accumulated over the inner index k in
ascending order with one rounding per add (no FMA, no pairwise/blocked
summation).  Both backends therefore produce bit-identical float64
results, and results match a plain scalar triple loop.  The crossbar
forward path relies on this to agree exactly with nested-loop reference
convolutions and to make zero-group skipping a pure reordering.
Parallelism, when available, splits over independent output elements and
never over k, so it cannot change a single bit.

Backward-pass products have no exact-match oracle (gradients are checked
against finite differences) and go through BLAS instead; see gan.py.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("MEMGAN_NO_NUMBA", "").strip() not in ("", "0")

if not _DISABLED:
    try:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # TBB-version probe noise
            import numba

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised via env flag instead
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False


def active_backend() -> str:
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _matmul_acc_np(a, b):
    # k-loop keeps accumulation order identical to the scalar definition;
    # each += rounds once per element, same as the numba kernel.
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=np.float64)
    for kk in range(k):
        out += a[:, kk, None] * b[None, kk, :]
    return out


def _im2col_np(imgs, kh, kw, stride, out_h, out_w):
    n, c = imgs.shape[:2]
    cols = np.empty((n, out_h * out_w, c * kh * kw), dtype=np.float64)
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                patch = imgs[:, ci, i : i + stride * out_h : stride, j : j + stride * out_w : stride]
                cols[:, :, ci * kh * kw + i * kw + j] = patch.reshape(n, -1)
    return cols.reshape(n * out_h * out_w, c * kh * kw)


def _col2im_np(cols, n, c, h, w, kh, kw, stride, out_h, out_w):
    imgs = np.zeros((n, c, h, w), dtype=np.float64)
    cols = cols.reshape(n, out_h * out_w, c * kh * kw)
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                col = cols[:, :, ci * kh * kw + i * kw + j].reshape(n, out_h, out_w)
                imgs[:, ci, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += col
    return imgs


# ---------------------------------------------------------------------------
# numba implementations

if _HAVE_NUMBA:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _matmul_acc_nb(a, b):
        n, k = a.shape
        m = b.shape[1]
        out = np.zeros((n, m), dtype=np.float64)
        for i in prange(n):
            for j in range(m):
                acc = 0.0
                for kk in range(k):
                    acc += a[i, kk] * b[kk, j]
                out[i, j] = acc
        return out

    @njit(cache=True, parallel=True)
    def _im2col_nb(imgs, kh, kw, stride, out_h, out_w):
        n, c = imgs.shape[0], imgs.shape[1]
        p = out_h * out_w
        cols = np.empty((n * p, c * kh * kw), dtype=np.float64)
        for s in prange(n):
            for oy in range(out_h):
                for ox in range(out_w):
                    row = s * p + oy * out_w + ox
                    for ci in range(c):
                        base = ci * kh * kw
                        for i in range(kh):
                            for j in range(kw):
                                cols[row, base + i * kw + j] = imgs[
                                    s, ci, oy * stride + i, ox * stride + j
                                ]
        return cols

    @njit(cache=True, parallel=True)
    def _col2im_nb(cols, n, c, h, w, kh, kw, stride, out_h, out_w):
        p = out_h * out_w
        imgs = np.zeros((n, c, h, w), dtype=np.float64)
        for s in prange(n):
            for oy in range(out_h):
                for ox in range(out_w):
                    row = s * p + oy * out_w + ox
                    for ci in range(c):
                        base = ci * kh * kw
                        for i in range(kh):
                            for j in range(kw):
                                imgs[s, ci, oy * stride + i, ox * stride + j] += cols[
                                    row, base + i * kw + j
                                ]
        return imgs


# ---------------------------------------------------------------------------
# public entry points


def matmul_acc(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """float64 matrix product with deterministic k-ascending accumulation."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if _HAVE_NUMBA:
        return _matmul_acc_nb(a, b)
    return _matmul_acc_np(a, b)


def _out_hw(h, w, kh, kw, stride):
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(f"kernel ({kh}x{kw}) does not fit input ({h}x{w})")
    return out_h, out_w


def im2col(img: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Unroll an already-padded (C, H, W) map into one row per output pixel.

    Column order is channel-major then kernel row then kernel column, the
    same order a scalar convolution loop visits the receptive field.
    """
    return im2col_batch(np.asarray(img, dtype=np.float64)[None], kh, kw, stride)


def im2col_batch(imgs: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(n, C, H, W) -> (n * out_h * out_w, C * kh * kw), samples stacked."""
    imgs = np.ascontiguousarray(imgs, dtype=np.float64)
    n, c, h, w = imgs.shape
    out_h, out_w = _out_hw(h, w, kh, kw, stride)
    if _HAVE_NUMBA:
        return _im2col_nb(imgs, kh, kw, stride, out_h, out_w)
    return _im2col_np(imgs, kh, kw, stride, out_h, out_w)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int) -> np.ndarray:
    """Scatter-add patch rows back onto a (C, H, W) grid (adjoint of im2col)."""
    return col2im_batch(cols, 1, shape, kh, kw, stride)[0]


def col2im_batch(cols: np.ndarray, n: int, shape: tuple, kh: int, kw: int,
                 stride: int) -> np.ndarray:
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    c, h, w = shape
    out_h, out_w = _out_hw(h, w, kh, kw, stride)
    if cols.shape != (n * out_h * out_w, c * kh * kw):
        raise ValueError(f"col2im shape mismatch: {cols.shape} for {n}x{shape}")
    if _HAVE_NUMBA:
        return _col2im_nb(cols, n, c, h, w, kh, kw, stride, out_h, out_w)
    return _col2im_np(cols, n, c, h, w, kh, kw, stride, out_h, out_w)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
