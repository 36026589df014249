"""Independent reference implementations used as test oracles.

Everything here is deliberately naive: scalar loops over numpy arrays,
no shared code with the package's datapath.  The conv/deconv references
accumulate over (channel, kernel row, kernel col) in ascending order,
the order a scalar convolution visits the receptive field, so float
results are comparable bit-for-bit where the datapath promises that.
"""

import numpy as np


def ref_matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for kk in range(k):
                acc += a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out


def ref_quantize(x, bits, max_val):
    """Scalar symmetric quantizer: round to nearest, ties away from zero."""
    qmax = 2 ** (bits - 1) - 1
    scale = max_val / qmax
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    it = np.nditer(np.asarray(x, dtype=np.float64), flags=["multi_index"])
    for v in it:
        q = np.floor(abs(v) / scale + 0.5)
        q = np.copysign(min(q, qmax), v)
        out[it.multi_index] = q
    return out, scale


def ref_conv(x, w, stride, pad):
    """Direct convolution; x (C,H,W), w (C_out,C_in,kh,kw)."""
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h, wdt = xp.shape[1:]
    oh, ow = (h - kh) // stride + 1, (wdt - kw) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for co in range(c_out):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0.0
                for ci in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[ci, oy * stride + i, ox * stride + j] * w[co, ci, i, j]
                out[co, oy, ox] = acc
    return out


def ref_deconv(x, t, stride, pad):
    """Direct transposed convolution in scatter form; t (C_in,C_out,kh,kw)."""
    c_in, c_out, kh, kw = t.shape
    h, w = x.shape[1:]
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (w - 1) * stride - 2 * pad + kw
    out = np.zeros((c_out, oh, ow))
    for ci in range(c_in):
        for co in range(c_out):
            for i in range(h):
                for j in range(w):
                    for ky in range(kh):
                        for kx in range(kw):
                            y = i * stride + ky - pad
                            x_ = j * stride + kx - pad
                            if 0 <= y < oh and 0 <= x_ < ow:
                                out[co, y, x_] += x[ci, i, j] * t[ci, co, ky, kx]
    return out


def ref_dilated_conv(x, w_mat, kernel, stride, pad):
    """Deconv as scalar-loop dilation + edge padding + stride-1 conv.

    w_mat is the (C_in*kh*kw, C_out) crossbar layout; accumulation order
    matches the datapath's column order exactly.
    """
    kh, kw = kernel
    c_in = x.shape[0]
    c_out = w_mat.shape[1]
    h, w = x.shape[1:]
    s = stride
    dil = np.zeros((c_in, (h - 1) * s + 1, (w - 1) * s + 1))
    for ci in range(c_in):
        for i in range(h):
            for j in range(w):
                dil[ci, i * s, j * s] = x[ci, i, j]
    ep = (kh - 1 - pad, kw - 1 - pad)
    xp = np.pad(dil, ((0, 0), (ep[0], ep[0]), (ep[1], ep[1])))
    oh, ow = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    out = np.zeros((c_out, oh, ow))
    for co in range(c_out):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0.0
                for ci in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[ci, oy + i, ox + j] * w_mat[ci * kh * kw + i * kw + j, co]
                out[co, oy, ox] = acc
    return out


def conv_weight_from_matrix(w_mat, c_in, kernel):
    """(C_in*kh*kw, C_out) crossbar layout -> (C_out, C_in, kh, kw)."""
    kh, kw = kernel
    c_out = w_mat.shape[1]
    return w_mat.T.reshape(c_out, c_in, kh, kw)


def deconv_tensor_from_matrix(w_mat, c_in, kernel):
    """Crossbar layout -> scatter-form (C_in, C_out, kh, kw) kernel.

    The stride-1 conv over the dilated input uses the 180-degree-rotated
    kernel, so the scatter tensor un-rotates it.
    """
    kh, kw = kernel
    w_conv = conv_weight_from_matrix(w_mat, c_in, kernel)
    return w_conv[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).copy()


def central_difference(f, get, set_, eps=1e-5):
    """Gradient of scalar f() w.r.t. the array behind get()/set_()."""
    base = get().copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        plus = base.copy()
        plus[idx] += eps
        set_(plus)
        fp = f()
        minus = base.copy()
        minus[idx] -= eps
        set_(minus)
        fm = f()
        grad[idx] = (fp - fm) / (2 * eps)
    set_(base)
    return grad


def max_rel_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def brute_force_tile_count(rows, cols, dev_rows, dev_cols):
    """Enumerate tiles by walking the matrix, no arithmetic shortcut."""
    count = 0
    r = 0
    while r < rows:
        c = 0
        while c < cols:
            count += 1
            c += dev_cols
        r += dev_rows
    return count


def validate_trace(trace, durations, deps_per_task, block_per_task):
    """Re-check a schedule trace against the raw constraints.

    Returns a list of violation strings (empty when the trace is valid).
    """
    problems = []
    end_at = {}
    for r in trace.runs:
        end_at[(r.iteration, r.task)] = r.end
    for r in trace.runs:
        want = durations[r.task]
        if abs((r.end - r.start) - want) > 1e-12:
            problems.append(f"{r.task}@{r.iteration}: duration {r.end - r.start} != {want}")
        for dep_id, off in deps_per_task[r.task]:
            dep_it = r.iteration + off
            if dep_it < 0:
                continue
            key = (dep_it, dep_id)
            if key not in end_at:
                problems.append(f"{r.task}@{r.iteration}: missing dep {key}")
            elif r.start < end_at[key] - 1e-12:
                problems.append(
                    f"{r.task}@{r.iteration}: starts {r.start} before dep {key} ends {end_at[key]}"
                )
    by_block = {}
    for r in trace.runs:
        by_block.setdefault(block_per_task[r.task], []).append(r)
    for block, runs in by_block.items():
        runs = sorted(runs, key=lambda r: r.start)
        for prev, nxt in zip(runs, runs[1:]):
            if nxt.start < prev.end - 1e-12:
                problems.append(
                    f"block {block}: {prev.task}@{prev.iteration} overlaps "
                    f"{nxt.task}@{nxt.iteration}"
                )
    return problems
