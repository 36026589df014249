"""Single memristor crossbar: quantization, programming, reading, MVM.

Weights are held as integer conductance codes on a fixed-size grid.  A
signed symmetric quantizer maps reals onto codes; ``zero_code`` is the
level representing weight 0 exactly.  Bit width 32 is the float
reference mode: no rounding happens and the stored "codes" are the raw
float64 weights (scale 1, zero_code 0).  The code-range invariants apply
to the true fixed-point widths 4/8/16.

The crossbar itself adds no arithmetic error beyond operand
quantization: ``mvm`` is an exact float64 product of the dequantized
weight grid and the quantize-dequantized input vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

SUPPORTED_BITS = (4, 8, 16, 32)
FLOAT_BITS = 32


class CrossbarError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceConfig:
    """Physical parameters of one crossbar tile."""

    rows: int = 32
    cols: int = 32
    r_min: float = 50e3
    r_max: float = 1e6
    weight_bits: int = 8
    input_bits: int = 8
    program_noise_std: float = 0.0  # additive noise hook, off by default

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise CrossbarError(f"crossbar dims must be >= 1, got {self.rows}x{self.cols}")
        if not self.r_min < self.r_max:
            raise CrossbarError(f"require r_min < r_max, got {self.r_min} >= {self.r_max}")
        if self.weight_bits not in SUPPORTED_BITS:
            raise CrossbarError(f"weight_bits must be one of {SUPPORTED_BITS}, got {self.weight_bits}")
        if self.input_bits < 1:
            raise CrossbarError(f"input_bits must be >= 1, got {self.input_bits}")


@dataclass(frozen=True)
class QuantSpec:
    """Uniform symmetric fixed-point format with a clipping range."""

    bits: int
    min_val: float
    max_val: float
    symmetric: bool = True

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise CrossbarError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if not self.min_val < self.max_val:
            raise CrossbarError(f"require min_val < max_val, got [{self.min_val}, {self.max_val}]")
        if self.symmetric and self.min_val != -self.max_val:
            raise CrossbarError("symmetric spec requires min_val == -max_val")

    @property
    def is_float(self) -> bool:
        return self.bits == FLOAT_BITS

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def scale(self) -> float:
        if self.is_float:
            return 1.0
        return self.max_val / self.qmax

    @classmethod
    def for_data(cls, bits: int, data: np.ndarray) -> "QuantSpec":
        """Symmetric spec spanning the max-abs of ``data`` (1.0 if all zero)."""
        m = float(np.max(np.abs(data))) if data.size else 0.0
        if m == 0.0 or not np.isfinite(m):
            m = 1.0
        return cls(bits=bits, min_val=-m, max_val=m)


def quantize(matrix: np.ndarray, spec: QuantSpec) -> tuple[np.ndarray, float]:
    """Quantize reals to signed codes; returns (codes, scale).

    Round-to-nearest, ties away from zero; values outside the clipping
    range saturate.  In float mode the values pass through untouched.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        raise CrossbarError("quantize: input contains non-finite values")
    if spec.is_float:
        return matrix.copy(), 1.0
    scale = spec.scale
    codes = kernels.round_half_away(matrix / scale)
    np.clip(codes, -spec.qmax, spec.qmax, out=codes)
    return codes, scale


def dequantize(codes: np.ndarray, scale: float) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) * scale


@dataclass
class Crossbar:
    """One programmable crossbar holding a grid of conductance codes.

    ``levels`` stores the unsigned device levels; the signed code of a
    cell is ``levels - zero_code``.  A crossbar is a plain value: only
    ``program`` mutates it.
    """

    config: DeviceConfig
    levels: np.ndarray = field(default=None)
    scale: float = 1.0
    zero_code: int = 0

    def __post_init__(self):
        bits = self.config.weight_bits
        self.zero_code = 0 if bits == FLOAT_BITS else 2 ** (bits - 1)
        if self.levels is None:
            self.levels = np.full(
                (self.config.rows, self.config.cols), float(self.zero_code), dtype=np.float64
            )
        if self.levels.shape != (self.config.rows, self.config.cols):
            raise CrossbarError(
                f"level grid {self.levels.shape} does not match device "
                f"{self.config.rows}x{self.config.cols}"
            )

    @property
    def signed_codes(self) -> np.ndarray:
        return self.levels - self.zero_code

    def conductances(self) -> np.ndarray:
        """Map levels linearly onto [1/r_max, 1/r_min] siemens (device view)."""
        g_min, g_max = 1.0 / self.config.r_max, 1.0 / self.config.r_min
        bits = self.config.weight_bits
        span = 2.0 ** min(bits, 16) - 1.0
        frac = np.clip(self.levels / span, 0.0, 1.0)
        return g_min + frac * (g_max - g_min)


def program(xbar: Crossbar, weights: np.ndarray, rng: np.random.Generator | None = None) -> Crossbar:
    """Quantize ``weights`` into the crossbar; unfilled cells hold zero.

    Scale comes from the max-abs of the weight block at programming time.
    Programming the same weights twice yields the identical code grid.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2:
        raise CrossbarError(f"weights must be 2D, got shape {weights.shape}")
    r, c = weights.shape
    if r > xbar.config.rows or c > xbar.config.cols:
        raise CrossbarError(
            f"weights {r}x{c} exceed crossbar {xbar.config.rows}x{xbar.config.cols}"
        )
    if xbar.config.program_noise_std > 0.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        weights = weights + rng.normal(0.0, xbar.config.program_noise_std, size=weights.shape)
    spec = QuantSpec.for_data(xbar.config.weight_bits, weights)
    codes, scale = quantize(weights, spec)
    xbar.levels = np.full(
        (xbar.config.rows, xbar.config.cols), float(xbar.zero_code), dtype=np.float64
    )
    xbar.levels[:r, :c] = codes + xbar.zero_code
    xbar.scale = scale
    return xbar


def program_codes(xbar: Crossbar, signed_codes: np.ndarray, scale: float) -> Crossbar:
    """Copy an existing signed code block verbatim (used for transposition)."""
    r, c = signed_codes.shape
    if r > xbar.config.rows or c > xbar.config.cols:
        raise CrossbarError(
            f"codes {r}x{c} exceed crossbar {xbar.config.rows}x{xbar.config.cols}"
        )
    xbar.levels = np.full(
        (xbar.config.rows, xbar.config.cols), float(xbar.zero_code), dtype=np.float64
    )
    xbar.levels[:r, :c] = signed_codes + xbar.zero_code
    xbar.scale = scale
    return xbar


def read_weights(xbar: Crossbar) -> np.ndarray:
    """Dequantized weight grid (exact round trip of the stored codes)."""
    return dequantize(xbar.signed_codes, xbar.scale)


def mvm(xbar: Crossbar, input_vec: np.ndarray, spec: QuantSpec | None = None) -> np.ndarray:
    """Row-vector times weight grid through the crossbar.

    The input is quantized per ``spec`` (default: a symmetric spec at the
    device's input_bits spanning the vector's max-abs), then the product
    of the two dequantized operands is taken exactly.
    """
    v = np.asarray(input_vec, dtype=np.float64)
    if v.ndim != 1:
        raise CrossbarError(f"input must be a vector, got shape {v.shape}")
    if v.size != xbar.config.rows:
        raise CrossbarError(f"input length {v.size} != crossbar rows {xbar.config.rows}")
    if spec is None:
        spec = QuantSpec.for_data(xbar.config.input_bits, v)
    v_codes, v_scale = quantize(v, spec)
    v_deq = dequantize(v_codes, v_scale)
    w_deq = read_weights(xbar)
    return kernels.matmul_acc(v_deq[None, :], w_deq)[0]
