"""Mapping of (de)convoleven layers onto crossbar sets.

A layer's kernels are reshaped into a weight matrix of shape
(kh*kw*in_channels, out_channels): one kernel per column, receptive
field entering the rows.  The matrix is tiled over fixed-size crossbars;
partial products from row tiles are accumulated exactly, so the array
behaves as one large dequantized matrix.

Deconvolution runs as a stride-1 convolution over a zero-dilated,
edge-padded input.  Rows of the unrolled dilated input that share the
same zero pattern are grouped so only non-zero entries drive the
crossbar; grouping is a pure reordering and changes no output bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .crossbar import Crossbar, CrossbarError, DeviceConfig, QuantSpec, program, quantize


@dataclass(frozen=True)
class LayerShape:
    """Geometry of one conv or deconv layer."""

    kind: str  # "conv" | "deconv"
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int
    padding: int
    input: tuple[int, int]

    def __post_init__(self):
        if self.kind not in ("conv", "deconv"):
            raise CrossbarError(f"layer kind must be conv or deconv, got {self.kind!r}")
        for name in ("in_channels", "out_channels", "stride"):
            if getattr(self, name) < 1:
                raise CrossbarError(f"{name} must be >= 1")
        if self.padding < 0:
            raise CrossbarError("padding must be >= 0")
        if min(self.kernel) < 1 or min(self.input) < 1:
            raise CrossbarError("kernel and input dims must be >= 1")
        oh, ow = self.output_hw()
        if oh < 1 or ow < 1:
            raise CrossbarError(f"layer produces empty output {oh}x{ow}")

    def output_hw(self) -> tuple[int, int]:
        h, w = self.input
        kh, kw = self.kernel
        if self.kind == "conv":
            return (
                (h + 2 * self.padding - kh) // self.stride + 1,
                (w + 2 * self.padding - kw) // self.stride + 1,
            )
        return (
            (h - 1) * self.stride - 2 * self.padding + kh,
            (w - 1) * self.stride - 2 * self.padding + kw,
        )

    @property
    def matrix_rows(self) -> int:
        return self.kernel[0] * self.kernel[1] * self.in_channels

    @property
    def matrix_cols(self) -> int:
        return self.out_channels


@dataclass(frozen=True)
class LayerMapping:
    """Assignment of a layer's weight matrix onto crossbar tiles."""

    shape: LayerShape
    crossbar_grid: tuple  # ((id, row_slice, col_slice), ...)
    crossbar_count: int


def _tile_spans(total: int, size: int):
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def plan_mapping(shape: LayerShape, dev: DeviceConfig) -> LayerMapping:
    """Tile the reshaped kernel matrix over crossbars of the device size."""
    rows, cols = shape.matrix_rows, shape.matrix_cols
    grid = []
    xbar_id = 0
    for r_lo, r_hi in _tile_spans(rows, dev.rows):
        for c_lo, c_hi in _tile_spans(cols, dev.cols):
            grid.append((xbar_id, slice(r_lo, r_hi), slice(c_lo, c_hi)))
            xbar_id += 1
    return LayerMapping(shape=shape, crossbar_grid=tuple(grid), crossbar_count=len(grid))


def unroll_conv_input(feature_map: np.ndarray, shape: LayerShape) -> np.ndarray:
    """im2col of a (C, H, W) map: one row per output pixel."""
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.shape != (shape.in_channels,) + shape.input:
        raise CrossbarError(
            f"feature map {fm.shape} does not match layer input "
            f"{(shape.in_channels,) + shape.input}"
        )
    p = shape.padding
    if p:
        fm = np.pad(fm, ((0, 0), (p, p), (p, p)))
    return kernels.im2col(fm, shape.kernel[0], shape.kernel[1], shape.stride)


def zero_pad_deconv_input(feature_map: np.ndarray, shape: LayerShape) -> np.ndarray:
    """Dilate by stride and edge-pad so a stride-1 conv equals the deconv."""
    if shape.kind != "deconv":
        raise CrossbarError("zero_pad_deconv_input requires a deconv layer")
    fm = np.asarray(feature_map, dtype=np.float64)
    c, h, w = fm.shape
    s = shape.stride
    dil = np.zeros((c, (h - 1) * s + 1, (w - 1) * s + 1), dtype=np.float64)
    dil[:, ::s, ::s] = fm
    kh, kw = shape.kernel
    ph, pw = kh - 1 - shape.padding, kw - 1 - shape.padding
    if ph < 0 or pw < 0:
        raise CrossbarError(f"padding {shape.padding} exceeds kernel-1 for deconv")
    return np.pad(dil, ((0, 0), (ph, ph), (pw, pw)))


@dataclass
class GroupedInput:
    """Unrolled input rows partitioned by identical zero pattern.

    Each group keeps only its non-zero columns, stored densely.
    """

    n_rows: int
    n_cols: int
    groups: list = field(default_factory=list)  # (row_idx, col_idx, dense)

    def reconstruct(self) -> np.ndarray:
        full = np.zeros((self.n_rows, self.n_cols), dtype=np.float64)
        for row_idx, col_idx, dense in self.groups:
            full[np.ix_(row_idx, col_idx)] = dense
        return full

    def multiply_count(self, out_cols: int) -> int:
        return sum(len(r) * len(c) * out_cols for r, c, _ in self.groups)


def group_nonzero_rows(unrolled: np.ndarray) -> GroupedInput:
    """Partition rows by zero-pattern class and drop the zero columns."""
    unrolled = np.asarray(unrolled, dtype=np.float64)
    n_rows, n_cols = unrolled.shape
    pattern = unrolled != 0.0
    grouped = GroupedInput(n_rows=n_rows, n_cols=n_cols)
    patterns, inverse = np.unique(pattern, axis=0, return_inverse=True)
    for g in range(patterns.shape[0]):
        col_idx = np.flatnonzero(patterns[g])
        if col_idx.size == 0:
            continue  # all-zero rows contribute nothing
        row_idx = np.flatnonzero(inverse == g)
        grouped.groups.append((row_idx, col_idx, unrolled[np.ix_(row_idx, col_idx)]))
    return grouped


@dataclass(frozen=True)
class DeconvGroupPlan:
    """Zero-pattern classes of a dilated deconv input, from geometry alone.

    The dilation writes zeros at fixed positions, so rows of the unrolled
    input fall into a handful of pattern classes shared by every sample
    and channel.  Data may contain further incidental zeros; dropping
    only the structural ones keeps the product bit-identical while doing
    a fraction of the multiplies for stride >= 2.
    """

    rows_per_sample: int
    n_cols: int
    groups: tuple  # ((row_idx within sample, col_idx), ...)

    def grouped(self, unrolled: np.ndarray, n_samples: int) -> GroupedInput:
        p = self.rows_per_sample
        offsets = np.arange(n_samples, dtype=np.intp) * p
        out = GroupedInput(n_rows=n_samples * p, n_cols=self.n_cols)
        for row_idx, col_idx in self.groups:
            rows = (offsets[:, None] + row_idx[None, :]).ravel()
            out.groups.append((rows, col_idx, unrolled[np.ix_(rows, col_idx)]))
        return out


def plan_deconv_groups(shape: LayerShape) -> DeconvGroupPlan:
    """Pattern classes of ``zero_pad_deconv_input`` followed by unrolling."""
    if shape.kind != "deconv":
        raise CrossbarError("group planning applies to deconv layers")
    kh, kw = shape.kernel
    s = shape.stride
    h, w = shape.input
    ph, pw = kh - 1 - shape.padding, kw - 1 - shape.padding
    hp, wp = (h - 1) * s + 1 + 2 * ph, (w - 1) * s + 1 + 2 * pw
    live = np.zeros((hp, wp), dtype=bool)
    live[ph : hp - ph : s, pw : wp - pw : s] = True
    window = kernels.im2col(live[None].astype(np.float64), kh, kw, 1) != 0.0
    patterns, inverse = np.unique(window, axis=0, return_inverse=True)
    groups = []
    for g in range(patterns.shape[0]):
        kernel_cols = np.flatnonzero(patterns[g])
        if kernel_cols.size == 0:
            continue
        # same spatial pattern repeats across input channels
        col_idx = (np.arange(shape.in_channels, dtype=np.intp)[:, None] * (kh * kw)
                   + kernel_cols[None, :]).ravel()
        groups.append((np.flatnonzero(inverse == g), col_idx))
    return DeconvGroupPlan(rows_per_sample=window.shape[0],
                           n_cols=shape.matrix_rows, groups=tuple(groups))


def quantize_rows(x: np.ndarray, bits: int) -> np.ndarray:
    """Quantize-dequantize each row with its own symmetric max-abs scale."""
    if bits == 32:
        return np.asarray(x, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    qmax = 2 ** (bits - 1) - 1
    maxabs = np.max(np.abs(x), axis=1, keepdims=True)
    scales = np.where(maxabs > 0, maxabs / qmax, 1.0)
    codes = kernels.round_half_away(x / scales)
    np.clip(codes, -qmax, qmax, out=codes)
    return codes * scales


@dataclass
class OpCounter:
    """Running tally of simulated hardware events."""

    multiplies: int = 0
    mvm_ops: int = 0
    programs: int = 0

    def add(self, other: "OpCounter"):
        self.multiplies += other.multiplies
        self.mvm_ops += other.mvm_ops
        self.programs += other.programs


class CrossbarArray:
    """A weight matrix spread over parallel-connected crossbar tiles.

    Holds only the per-tile code grids and scales; the dense dequantized
    matrix is reassembled on demand, never cached.
    """

    def __init__(self, rows: int, cols: int, dev: DeviceConfig):
        self.rows = rows
        self.cols = cols
        self.dev = dev
        self.tiles: list[tuple[Crossbar, slice, slice]] = []
        for r_lo, r_hi in _tile_spans(rows, dev.rows):
            for c_lo, c_hi in _tile_spans(cols, dev.cols):
                self.tiles.append((Crossbar(config=dev), slice(r_lo, r_hi), slice(c_lo, c_hi)))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, dev: DeviceConfig,
                    counter: OpCounter | None = None) -> "CrossbarArray":
        arr = cls(matrix.shape[0], matrix.shape[1], dev)
        arr.program(matrix, counter=counter)
        return arr

    @property
    def crossbar_count(self) -> int:
        return len(self.tiles)

    def program(self, matrix: np.ndarray, counter: OpCounter | None = None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (self.rows, self.cols):
            raise CrossbarError(f"matrix {matrix.shape} != array {(self.rows, self.cols)}")
        for xbar, rs, cs in self.tiles:
            program(xbar, matrix[rs, cs])
        if counter is not None:
            counter.programs += len(self.tiles)

    def dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=np.float64)
        for xbar, rs, cs in self.tiles:
            block = (xbar.signed_codes * xbar.scale)
            out[rs, cs] = block[: rs.stop - rs.start, : cs.stop - cs.start]
        return out

    def transposed(self, counter: OpCounter | None = None) -> "CrossbarArray":
        """New array programmed with the transpose of the dequantized grid."""
        return CrossbarArray.from_matrix(self.dense().T, self.dev, counter=counter)

    def matmul(self, x: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
        """(n, rows) @ weights -> (n, cols), inputs quantized per row."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.rows:
            raise CrossbarError(f"input width {x.shape[1]} != array rows {self.rows}")
        xq = quantize_rows(x, self.dev.input_bits)
        out = kernels.matmul_acc(xq, self.dense())
        if counter is not None:
            counter.multiplies += x.shape[0] * self.rows * self.cols
            counter.mvm_ops += x.shape[0] * len(self.tiles)
        return out

    def matmul_grouped(self, grouped: GroupedInput,
                       counter: OpCounter | None = None) -> np.ndarray:
        """Grouped product: per group, only non-zero columns are driven.

        Bit-identical to ``matmul`` on the reconstructed input: skipped
        terms are exact zeros and the surviving terms keep their
        accumulation order.
        """
        if grouped.n_cols != self.rows:
            raise CrossbarError(f"grouped width {grouped.n_cols} != array rows {self.rows}")
        w = self.dense()
        out = np.zeros((grouped.n_rows, self.cols), dtype=np.float64)
        for row_idx, col_idx, dense in grouped.groups:
            xq = quantize_rows(dense, self.dev.input_bits)
            out[row_idx] = kernels.matmul_acc(xq, w[col_idx])
            if counter is not None:
                counter.multiplies += len(row_idx) * len(col_idx) * self.cols
                counter.mvm_ops += len(row_idx) * len(self.tiles)
        return out
