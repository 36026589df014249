"""Initial training-error computation from batched discriminator scores.

Two lookup tables hold the scalar derivatives of the two objective
summands with respect to a discriminator output D:

    lut1(D) = d/dD log(D)       =  1/D
    lut2(D) = d/dD log(1 - D)   = -1/(1 - D)

Real-sample scores are staged into a batch memory first; once the
artificial-sample scores arrive, both error seed sets come out in one
pass, scaled by 1/m in the adder.  The emitted seeds are the exact
per-score derivatives of the batch objectives:

    discriminator objective (ascended):  mean[log D(x) + log(1 - D(G(z)))]
    generator objective (descended):     mean[log(1 - D(G(z)))]

so a seed of lut1(D(x))/m goes with each real sample and lut2(D(G(z)))/m
with each artificial one; the generator seed equals the artificial-sample
seed since both objectives share the log(1 - D(G(z))) term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LUT_BITS = (4, 8, 16)
_FLOAT_CLAMP = 2.0 ** -20  # float-mode domain clamp keeping logs finite


class DiffBlockError(RuntimeError):
    pass


def _clamp(d: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(d, eps, 1.0 - eps)


@dataclass
class Lut:
    """Quantized table of a scalar function over (0, 1).

    Entry k tabulates the function at D = k / 2^bits, with the endpoint
    bins clamped into [2^-bits, 1 - 2^-bits] so every entry is finite.
    ``bits=None`` is the float mode: lookups evaluate the function
    directly (clamped only at the extreme ends of the domain).
    """

    generator_fn: callable
    bits: int | None
    entries: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.bits is not None:
            n = 2 ** self.bits
            eps = 1.0 / n
            centers = _clamp(np.arange(n) / n, eps)
            self.entries = self.generator_fn(centers)
            if not np.all(np.isfinite(self.entries)):
                raise DiffBlockError("LUT entries must be finite")

    @property
    def domain_eps(self) -> float:
        return _FLOAT_CLAMP if self.bits is None else 2.0 ** -self.bits

    def lookup(self, d: np.ndarray) -> np.ndarray:
        d = _clamp(np.asarray(d, dtype=np.float64), self.domain_eps)
        if self.bits is None:
            return self.generator_fn(d)
        n = 2 ** self.bits
        idx = np.clip(np.rint(d * n).astype(np.int64), 0, n - 1)
        return self.entries[idx]


def build_luts(input_bits: int | None) -> tuple[Lut, Lut]:
    """(lut1, lut2) at the given address width; None selects float mode."""
    if input_bits is not None and input_bits not in LUT_BITS:
        raise DiffBlockError(f"LUT width must be one of {LUT_BITS} or None, got {input_bits}")
    lut1 = Lut(generator_fn=lambda d: 1.0 / d, bits=input_bits)
    lut2 = Lut(generator_fn=lambda d: -1.0 / (1.0 - d), bits=input_bits)
    return lut1, lut2


@dataclass
class DiffResult:
    """Per-sample error seeds for one training iteration.

    ``error_d_seed`` carries m (real, artificial) pairs for the
    discriminator update; ``error_g_seed`` the m generator seeds.
    """

    error_d_real: np.ndarray
    error_d_fake: np.ndarray
    error_g_seed: np.ndarray
    iteration: int

    @property
    def error_d_seed(self) -> np.ndarray:
        return np.stack([self.error_d_real, self.error_d_fake], axis=1)


class BatchMemory:
    """m-slot memory holding staged LUT1 readouts for one iteration."""

    def __init__(self, m: int, lut1: Lut, lut2: Lut):
        if m < 1:
            raise DiffBlockError("batch size must be >= 1")
        self.m = m
        self.lut1 = lut1
        self.lut2 = lut2
        self.iteration = 0
        self._slots = None

    @property
    def staged(self) -> bool:
        return self._slots is not None

    def stage_real_scores(self, d_x: np.ndarray) -> None:
        d_x = np.asarray(d_x, dtype=np.float64)
        if d_x.shape != (self.m,):
            raise DiffBlockError(f"expected {self.m} real scores, got shape {d_x.shape}")
        if self.staged:
            raise DiffBlockError(f"memory already staged for iteration {self.iteration}")
        self._slots = self.lut1.lookup(d_x)

    def compute_errors(self, d_gz: np.ndarray) -> DiffResult:
        d_gz = np.asarray(d_gz, dtype=np.float64)
        if d_gz.shape != (self.m,):
            raise DiffBlockError(f"expected {self.m} artificial scores, got shape {d_gz.shape}")
        if not self.staged:
            raise DiffBlockError("memory not staged: real scores must arrive first")
        lut2_vals = self.lut2.lookup(d_gz)
        inv_m = 1.0 / self.m  # the adder's linear transformation
        result = DiffResult(
            error_d_real=self._slots * inv_m,
            error_d_fake=lut2_vals * inv_m,
            error_g_seed=lut2_vals * inv_m,
            iteration=self.iteration,
        )
        self._slots = None
        self.iteration += 1
        return result
