"""Generator / discriminator networks executed through crossbar arrays.

Weights live only inside the forward-flow crossbars.  The backward pass
reads each layer's transposed weights into transient error-computation
units and programs the layer's input activations into transient
weight-update units, so after an update the only retained state is the
forward code grids plus scalar configuration (the memory-free flow).

Per layer the update rule is

    e_l   = e_{l+1} (x) w_l^T          (error propagated through
                                        transpose-programmed crossbars)
    w_l*  = w_l + dir * alpha * e_l (x) o'_l

with dir = +1 for the discriminator (objective ascent) and -1 for the
generator (objective descent).  The ReLU derivative defaults to the
indicator of a positive pre-activation; ``paper_literal`` mode instead
uses the output signal itself, kept for ablation.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .crossbar import CrossbarError, DeviceConfig, FLOAT_BITS
from .mapper import (
    CrossbarArray,
    LayerShape,
    OpCounter,
    plan_deconv_groups,
    plan_mapping,
    quantize_rows,
)

CHECKPOINT_MAGIC = b"MEMGAN01"


class GanError(RuntimeError):
    pass


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class ActivationFn:
    kind: str  # relu | sigmoid_output | tanh_output
    derivative_mode: str = "indicator"  # indicator | paper_literal (relu only)

    def __post_init__(self):
        if self.kind not in ("relu", "sigmoid_output", "tanh_output"):
            raise GanError(f"unknown activation {self.kind!r}")
        if self.derivative_mode not in ("indicator", "paper_literal"):
            raise GanError(f"unknown derivative mode {self.derivative_mode!r}")

    def apply(self, z):
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "sigmoid_output":
            return sigmoid(z)
        return np.tanh(z)

    def derivative(self, z, out):
        if self.kind == "relu":
            if self.derivative_mode == "paper_literal":
                return out
            return (z > 0.0).astype(np.float64)
        if self.kind == "sigmoid_output":
            return out * (1.0 - out)
        return 1.0 - out * out


def quantize_tiles(matrix: np.ndarray, bits: int, tile: int) -> np.ndarray:
    """Quantize-dequantize a matrix in tile x tile blocks, one symmetric
    max-abs scale per block (the scale rule used when programming any
    crossbar).  bits=32 passes through."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if bits == FLOAT_BITS:
        return matrix
    r, c = matrix.shape
    pr, pc = (-r) % tile, (-c) % tile
    padded = np.pad(matrix, ((0, pr), (0, pc)))
    nr, nc = padded.shape[0] // tile, padded.shape[1] // tile
    blocks = padded.reshape(nr, tile, nc, tile)
    qmax = 2 ** (bits - 1) - 1
    maxabs = np.abs(blocks).max(axis=(1, 3), keepdims=True)
    scales = np.where(maxabs > 0, maxabs / qmax, 1.0)
    codes = kernels.round_half_away(blocks / scales)
    np.clip(codes, -qmax, qmax, out=codes)
    return (codes * scales).reshape(padded.shape)[:r, :c]


def _tile_count(rows, cols, tile):
    return -(-rows // tile) * -(-cols // tile)


@dataclass
class LayerCache:
    """Forward tensors one layer must retain until its weight update."""

    unrolled: np.ndarray  # (n*P, K) crossbar drive rows
    pre_act: np.ndarray  # (n, C_out, oh, ow)
    out: np.ndarray
    padded_hw: tuple[int, int]


@dataclass
class LayerTrace:
    """Per-layer forward record for one batch, consumed exactly once."""

    caches: list
    n: int
    consumed: bool = False

    def take(self):
        if self.consumed:
            raise GanError("trace already consumed this iteration")
        self.consumed = True
        return self.caches


@dataclass
class GradientPacket:
    """Seed errors at a network's output, as emitted by the diff block."""

    output_error: np.ndarray
    iteration: int
    source: str = "diff_block"


class CrossbarLayer:
    """One (de)conv layer backed by a crossbar array."""

    def __init__(self, shape: LayerShape, dev: DeviceConfig, activation: ActivationFn,
                 use_grouping: bool = True):
        self.shape = shape
        self.dev = dev
        self.activation = activation
        self.use_grouping = use_grouping and shape.kind == "deconv"
        self.mapping = plan_mapping(shape, dev)
        self.units = CrossbarArray(shape.matrix_rows, shape.matrix_cols, dev)
        self.group_plan = plan_deconv_groups(shape) if self.use_grouping else None

    def init_weights(self, rng: np.random.Generator, scale: float | None = None):
        # a flat bound starves gradients through five layers; default to a
        # fan-in-scaled bound, keeping flat bounds available for tests
        bound = scale if scale is not None else np.sqrt(6.0 / self.shape.matrix_rows)
        w = rng.uniform(-bound, bound, size=(self.shape.matrix_rows, self.shape.matrix_cols))
        self.units.program(w)

    def set_weights(self, matrix: np.ndarray):
        self.units.program(np.asarray(matrix, dtype=np.float64))

    def weights(self) -> np.ndarray:
        return self.units.dense()

    # -- forward -----------------------------------------------------------

    def _unroll_batch(self, x: np.ndarray):
        kh, kw = self.shape.kernel
        if self.shape.kind == "conv":
            p = self.shape.padding
            padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
            u = kernels.im2col_batch(padded, kh, kw, self.shape.stride)
            return u, padded.shape[2:]
        s = self.shape.stride
        n, c, h, w = x.shape
        dil = np.zeros((n, c, (h - 1) * s + 1, (w - 1) * s + 1), dtype=np.float64)
        dil[:, :, ::s, ::s] = x
        ph, pw = kh - 1 - self.shape.padding, kw - 1 - self.shape.padding
        padded = np.pad(dil, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        return kernels.im2col_batch(padded, kh, kw, 1), padded.shape[2:]

    def forward(self, x: np.ndarray, counter: OpCounter | None = None) -> LayerCache:
        n = x.shape[0]
        if x.shape[1:] != (self.shape.in_channels,) + self.shape.input:
            raise GanError(
                f"layer expects {(self.shape.in_channels,) + self.shape.input} "
                f"per sample, got {x.shape[1:]}"
            )
        u, padded_hw = self._unroll_batch(x)
        if self.use_grouping:
            z_mat = self.units.matmul_grouped(self.group_plan.grouped(u, n), counter=counter)
        else:
            z_mat = self.units.matmul(u, counter=counter)
        oh, ow = self.shape.output_hw()
        z = z_mat.reshape(n, oh, ow, self.shape.out_channels).transpose(0, 3, 1, 2)
        out = self.activation.apply(z)
        return LayerCache(unrolled=u, pre_act=z, out=out, padded_hw=padded_hw)

    # -- backward ----------------------------------------------------------

    def backward_pass(self, e_out: np.ndarray, cache: LayerCache,
                      counter: OpCounter | None = None):
        """(e_in, dW) using the current weights; no update is applied.

        e_in comes from a transient crossbar programmed with the
        transposed weight codes; dW from a transient unit programmed
        with the layer's unrolled input activations.
        """
        n = e_out.shape[0]
        kh, kw = self.shape.kernel
        dz = e_out * self.activation.derivative(cache.pre_act, cache.out)
        dz_mat = dz.transpose(0, 2, 3, 1).reshape(-1, self.shape.out_channels)

        # gradients carry no exact-match contract (checked against finite
        # differences), so these products can take the fast BLAS route
        w_err = quantize_tiles(self.units.dense().T, self.dev.weight_bits, self.dev.rows)
        du = quantize_rows(dz_mat, self.dev.input_bits) @ w_err
        u_prog = quantize_tiles(cache.unrolled, self.dev.weight_bits, self.dev.rows)
        dw = (quantize_rows(dz_mat.T, self.dev.input_bits) @ u_prog).T
        if counter is not None:
            counter.programs += _tile_count(*w_err.shape, self.dev.rows)
            counter.programs += _tile_count(*u_prog.shape, self.dev.rows)
            counter.multiplies += du.size * dz_mat.shape[1] + dw.size * dz_mat.shape[0]
            counter.mvm_ops += dz_mat.shape[0] + dz_mat.shape[1]

        stride = self.shape.stride if self.shape.kind == "conv" else 1
        c_in = self.shape.in_channels
        grids = kernels.col2im_batch(du, n, (c_in,) + tuple(cache.padded_hw), kh, kw, stride)
        if self.shape.kind == "conv":
            p = self.shape.padding
            h, w = self.shape.input
            e_in = grids[:, :, p : p + h, p : p + w]
        else:
            ep_h = kh - 1 - self.shape.padding
            ep_w = kw - 1 - self.shape.padding
            h, w = cache.padded_hw
            s = self.shape.stride
            e_in = grids[:, :, ep_h : h - ep_h : 1, ep_w : w - ep_w : 1][:, :, ::s, ::s]
        return np.ascontiguousarray(e_in), dw

    def apply_delta(self, dw: np.ndarray, alpha: float, direction: float,
                    counter: OpCounter | None = None):
        new_w = self.units.dense() + direction * alpha * dw
        self.units.program(new_w, counter=counter)

    def backprop_layer(self, e_out, cache, alpha, direction=1.0, counter=None):
        """Propagate the error and reprogram the weights in place."""
        e_in, dw = self.backward_pass(e_out, cache, counter=counter)
        self.apply_delta(dw, alpha, direction, counter=counter)
        return e_in


class GanModel:
    """Deconv generator plus conv discriminator on a shared device config."""

    def __init__(self, generator: list[CrossbarLayer], discriminator: list[CrossbarLayer],
                 alpha: float, m: int, noise_dim: int):
        if m < 1:
            raise GanError("batch size must be >= 1")
        g_out = (generator[-1].shape.out_channels,) + generator[-1].shape.output_hw()
        d_in = (discriminator[0].shape.in_channels,) + discriminator[0].shape.input
        if g_out != d_in:
            raise GanError(f"generator output {g_out} != discriminator input {d_in}")
        if discriminator[-1].activation.kind != "sigmoid_output":
            raise GanError("discriminator must end in a sigmoid output layer")
        self.generator = generator
        self.discriminator = discriminator
        self.alpha = alpha
        self.m = m
        self.noise_dim = noise_dim
        self.iteration = 0
        self.updates_applied = 0
        self.counter = OpCounter()
        self._g_trace: LayerTrace | None = None
        self._d_trace: LayerTrace | None = None

    # -- forward -----------------------------------------------------------

    def generator_forward(self, z_batch: np.ndarray, retain: bool = True) -> np.ndarray:
        z_batch = np.asarray(z_batch, dtype=np.float64)
        if z_batch.ndim != 2 or z_batch.shape[1] != self.noise_dim:
            raise GanError(f"noise batch must be (n, {self.noise_dim}), got {z_batch.shape}")
        x = z_batch.reshape(z_batch.shape[0], self.noise_dim, 1, 1)
        caches = []
        for layer in self.generator:
            cache = layer.forward(x, counter=self.counter)
            caches.append(cache)
            x = cache.out
        if retain:
            self._g_trace = LayerTrace(caches=caches, n=z_batch.shape[0])
        return x

    def discriminator_forward(self, x_batch: np.ndarray, retain: bool = True) -> np.ndarray:
        x_batch = np.asarray(x_batch, dtype=np.float64)
        x = x_batch
        caches = []
        for layer in self.discriminator:
            cache = layer.forward(x, counter=self.counter)
            caches.append(cache)
            x = cache.out
        if not np.all(np.isfinite(x)):
            raise GanError("non-finite discriminator activations")
        if retain:
            self._d_trace = LayerTrace(caches=caches, n=x_batch.shape[0])
        return x.reshape(x_batch.shape[0])

    def extract_features(self, x_batch: np.ndarray) -> np.ndarray:
        """Penultimate discriminator activations, flattened per sample."""
        if self.updates_applied == 0:
            warnings.warn("extracting features from an untrained model", stacklevel=2)
        x = np.asarray(x_batch, dtype=np.float64)
        for layer in self.discriminator[:-1]:
            x = layer.forward(x).out
        return x.reshape(x.shape[0], -1)

    # -- backward ----------------------------------------------------------

    def _check_packet(self, packet: GradientPacket):
        if packet.iteration != self.iteration:
            raise GanError(
                f"stale gradient packet: iteration {packet.iteration} vs model "
                f"iteration {self.iteration}"
            )

    def _collect(self, layers, caches, e_out):
        """Backward sweep with frozen weights; returns (e_input, deltas)."""
        deltas = [None] * len(layers)
        e = e_out
        for idx in range(len(layers) - 1, -1, -1):
            e, deltas[idx] = layers[idx].backward_pass(e, caches[idx], counter=self.counter)
        return e, deltas

    def apply_update(self, packet: GradientPacket, target: str) -> np.ndarray | None:
        """Run one weight update from diff-block seeds.

        target="discriminator": ascends its objective; the packet's
        output_error holds one seed per forward sample.  Returns the
        error propagated to the discriminator input.
        target="generator": descends its objective; seeds are first
        chained through the (frozen) discriminator's retained trace.
        """
        self._check_packet(packet)
        if target == "discriminator":
            if self._d_trace is None:
                raise GanError("no discriminator trace retained for this iteration")
            caches = self._d_trace.take()
            self._d_trace = None
            seeds = packet.output_error.reshape(-1, 1, 1, 1)
            if seeds.shape[0] != caches[-1].out.shape[0]:
                raise GanError("seed count does not match discriminator batch")
            e_in, deltas = self._collect(self.discriminator, caches, seeds)
            for layer, dw in zip(self.discriminator, deltas):
                layer.apply_delta(dw, self.alpha, +1.0, counter=self.counter)
            self.updates_applied += 1
            return e_in
        if target == "generator":
            if self._g_trace is None:
                raise GanError("no generator trace retained for this iteration")
            e_gz = packet.output_error
            caches = self._g_trace.take()
            self._g_trace = None
            e = e_gz
            for idx in range(len(self.generator) - 1, -1, -1):
                e = self.generator[idx].backprop_layer(
                    e, caches[idx], self.alpha, direction=-1.0, counter=self.counter
                )
            self.updates_applied += 1
            return None
        raise GanError(f"unknown update target {target!r}")

    def chain_error_through_discriminator(self, seeds: np.ndarray,
                                          trace: LayerTrace) -> np.ndarray:
        """Frozen backprop of output seeds to the discriminator's input."""
        caches = trace.take()
        e = seeds.reshape(-1, 1, 1, 1)
        for idx in range(len(self.discriminator) - 1, -1, -1):
            e, _ = self.discriminator[idx].backward_pass(e, caches[idx], counter=self.counter)
        return e

    def clear_traces(self):
        self._g_trace = None
        self._d_trace = None

    def state_inventory(self) -> dict:
        """Everything the model retains between iterations."""
        arrays = {}
        for net, layers in (("generator", self.generator), ("discriminator", self.discriminator)):
            for i, layer in enumerate(layers):
                for j, (xbar, _, _) in enumerate(layer.units.tiles):
                    arrays[f"{net}.layer{i}.crossbar{j}.levels"] = xbar.levels
        scalars = {
            "alpha": self.alpha,
            "m": self.m,
            "noise_dim": self.noise_dim,
            "iteration": self.iteration,
            "updates_applied": self.updates_applied,
        }
        return {
            "code_grids": arrays,
            "scalars": scalars,
            "traces_retained": int(self._g_trace is not None) + int(self._d_trace is not None),
        }


# ---------------------------------------------------------------------------
# objectives


def clamp_scores(d: np.ndarray, eps: float = 2.0 ** -20) -> np.ndarray:
    return np.clip(d, eps, 1.0 - eps)


def objective_d(d_x: np.ndarray, d_gz: np.ndarray) -> float:
    """Batch value the discriminator ascends."""
    return float(np.mean(np.log(clamp_scores(d_x)) + np.log(1.0 - clamp_scores(d_gz))))


def objective_g(d_gz: np.ndarray) -> float:
    """Batch value the generator descends."""
    return float(np.mean(np.log(1.0 - clamp_scores(d_gz))))


# ---------------------------------------------------------------------------
# architectures


def _relu(mode):
    return ActivationFn("relu", mode)


def build_gan(image_hw: tuple[int, int], image_channels: int, bits: int,
              alpha: float = 0.02, m: int = 64, noise_dim: int = 64,
              seed: int = 0, relu_mode: str = "indicator",
              dev_template: DeviceConfig | None = None) -> GanModel:
    """Desk-scale five-plus-five layer GAN for 20/28/32 pixel images."""
    side = image_hw[0]
    if image_hw[0] != image_hw[1] or side not in (20, 28, 32):
        raise GanError(f"supported image sizes are 20, 28, 32 square; got {image_hw}")
    base = dev_template or DeviceConfig()
    dev = DeviceConfig(rows=base.rows, cols=base.cols, r_min=base.r_min, r_max=base.r_max,
                       weight_bits=bits, input_bits=bits,
                       program_noise_std=base.program_noise_std)

    c = image_channels
    if side == 20:
        d_geom = [(c, 12, 3, 2, 1, 20), (12, 24, 3, 2, 1, 10), (24, 48, 3, 2, 1, 5),
                  (48, 96, 3, 1, 0, 3), (96, 1, 1, 1, 0, 1)]
        g_geom = [(noise_dim, 48, 3, 1, 0, 1), (48, 32, 3, 2, 1, 3), (32, 24, 4, 2, 1, 5),
                  (24, 12, 4, 2, 1, 10), (12, c, 3, 1, 1, 20)]
    elif side == 28:
        d_geom = [(c, 12, 4, 2, 1, 28), (12, 24, 4, 2, 1, 14), (24, 48, 3, 2, 1, 7),
                  (48, 96, 4, 1, 0, 4), (96, 1, 1, 1, 0, 1)]
        g_geom = [(noise_dim, 48, 4, 1, 0, 1), (48, 32, 3, 2, 1, 4), (32, 24, 4, 2, 1, 7),
                  (24, 12, 4, 2, 1, 14), (12, c, 4, 2, 1, 28)]
    else:
        d_geom = [(c, 12, 4, 2, 1, 32), (12, 24, 4, 2, 1, 16), (24, 48, 4, 2, 1, 8),
                  (48, 96, 4, 1, 0, 4), (96, 1, 1, 1, 0, 1)]
        g_geom = [(noise_dim, 48, 4, 1, 0, 1), (48, 32, 4, 2, 1, 4), (32, 24, 4, 2, 1, 8),
                  (24, 12, 4, 2, 1, 16), (12, c, 4, 2, 1, 32)]

    rng = np.random.default_rng(seed)
    disc = []
    for i, (ci, co, k, s, p, hw) in enumerate(d_geom):
        act = ActivationFn("sigmoid_output") if i == len(d_geom) - 1 else _relu(relu_mode)
        shape = LayerShape("conv", ci, co, (k, k), s, p, (hw, hw))
        layer = CrossbarLayer(shape, dev, act)
        layer.init_weights(rng)
        disc.append(layer)
    gen = []
    for i, (ci, co, k, s, p, hw) in enumerate(g_geom):
        act = ActivationFn("tanh_output") if i == len(g_geom) - 1 else _relu(relu_mode)
        shape = LayerShape("deconv", ci, co, (k, k), s, p, (hw, hw))
        layer = CrossbarLayer(shape, dev, act)
        layer.init_weights(rng)
        gen.append(layer)

    return GanModel(generator=gen, discriminator=disc, alpha=alpha, m=m, noise_dim=noise_dim)


def build_toy_gan(bits: int = 32, alpha: float = 1e-3, m: int = 4, noise_dim: int = 6,
                  seed: int = 7, relu_mode: str = "indicator") -> GanModel:
    """Two layers per net, for gradient checks and unit tests."""
    dev = DeviceConfig(weight_bits=bits, input_bits=bits)
    rng = np.random.default_rng(seed)
    g1 = CrossbarLayer(LayerShape("deconv", noise_dim, 3, (3, 3), 1, 0, (1, 1)),
                       dev, _relu(relu_mode))
    g2 = CrossbarLayer(LayerShape("deconv", 3, 1, (4, 4), 2, 1, (3, 3)),
                       dev, ActivationFn("tanh_output"))
    d1 = CrossbarLayer(LayerShape("conv", 1, 4, (3, 3), 2, 1, (6, 6)), dev, _relu(relu_mode))
    d2 = CrossbarLayer(LayerShape("conv", 4, 1, (3, 3), 1, 0, (3, 3)),
                       dev, ActivationFn("sigmoid_output"))
    for layer in (g1, g2, d1, d2):
        layer.init_weights(rng, scale=0.4)
    return GanModel(generator=[g1, g2], discriminator=[d1, d2],
                    alpha=alpha, m=m, noise_dim=noise_dim)


# ---------------------------------------------------------------------------
# checkpoints: JSON header + raw little-endian float64 grids


def save_checkpoint(model: GanModel, path, bits: int | None = None, seed: int | None = None):
    """Write magic, uint32 header length, JSON header, then per-layer
    level grids and scales as raw little-endian float64, in header order."""
    layers = []
    blobs = []
    for net, stack in (("generator", model.generator), ("discriminator", model.discriminator)):
        for i, layer in enumerate(stack):
            s = layer.shape
            tiles = []
            for xbar, _, _ in layer.units.tiles:
                tiles.append({"rows": xbar.config.rows, "cols": xbar.config.cols,
                              "scale": xbar.scale, "zero_code": xbar.zero_code})
                blobs.append(np.ascontiguousarray(xbar.levels, dtype="<f8"))
            layers.append({
                "net": net, "index": i, "kind": s.kind,
                "in_channels": s.in_channels, "out_channels": s.out_channels,
                "kernel": list(s.kernel), "stride": s.stride, "padding": s.padding,
                "input": list(s.input), "activation": layer.activation.kind,
                "derivative_mode": layer.activation.derivative_mode,
                "weight_bits": layer.dev.weight_bits, "tiles": tiles,
            })
    header = {
        "format": "memgan-checkpoint", "version": 1,
        "bits": bits if bits is not None else model.discriminator[0].dev.weight_bits,
        "seed": seed, "alpha": model.alpha, "m": model.m, "noise_dim": model.noise_dim,
        "iteration": model.iteration, "layers": layers,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob.tobytes())


def load_checkpoint(path) -> GanModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise GanError(f"{path}: not a memgan checkpoint (magic {magic!r})")
        (head_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(head_len).decode("utf-8"))
        nets = {"generator": [], "discriminator": []}
        for spec in header["layers"]:
            dev = DeviceConfig(weight_bits=spec["weight_bits"], input_bits=spec["weight_bits"])
            shape = LayerShape(spec["kind"], spec["in_channels"], spec["out_channels"],
                               tuple(spec["kernel"]), spec["stride"], spec["padding"],
                               tuple(spec["input"]))
            act = ActivationFn(spec["activation"], spec["derivative_mode"])
            layer = CrossbarLayer(shape, dev, act)
            for (xbar, _, _), tile in zip(layer.units.tiles, spec["tiles"]):
                n = tile["rows"] * tile["cols"]
                grid = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(
                    tile["rows"], tile["cols"]
                )
                xbar.levels = grid.copy()
                xbar.scale = tile["scale"]
            nets[spec["net"]].append(layer)
    model = GanModel(generator=nets["generator"], discriminator=nets["discriminator"],
                     alpha=header["alpha"], m=header["m"], noise_dim=header["noise_dim"])
    model.iteration = header["iteration"]
    return model
