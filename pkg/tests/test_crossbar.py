import numpy as np
import pytest

from memgan.crossbar import (
    Crossbar,
    CrossbarError,
    DeviceConfig,
    QuantSpec,
    dequantize,
    mvm,
    program,
    program_codes,
    quantize,
    read_weights,
)
from oracles import ref_matmul, ref_quantize

rng = np.random.default_rng(99)


class TestDeviceConfig:
    def test_defaults(self):
        dev = DeviceConfig()
        assert (dev.rows, dev.cols) == (32, 32)
        assert (dev.r_min, dev.r_max) == (50e3, 1e6)
        assert (dev.weight_bits, dev.input_bits) == (8, 8)

    @pytest.mark.parametrize("kwargs", [
        {"rows": 0}, {"cols": -1}, {"r_min": 2e6}, {"weight_bits": 7}, {"input_bits": 0},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(CrossbarError):
            DeviceConfig(**kwargs)


class TestQuantSpec:
    def test_symmetric_requires_mirrored_range(self):
        with pytest.raises(CrossbarError, match="symmetric"):
            QuantSpec(bits=8, min_val=-1.0, max_val=2.0)

    def test_unsupported_bits(self):
        with pytest.raises(CrossbarError, match="bits"):
            QuantSpec(bits=5, min_val=-1.0, max_val=1.0)

    def test_scale(self):
        spec = QuantSpec(bits=8, min_val=-1.0, max_val=1.0)
        assert spec.scale == pytest.approx(1.0 / 127)
        assert QuantSpec(bits=32, min_val=-1.0, max_val=1.0).scale == 1.0


class TestQuantize:
    def test_all_zero_matrix(self):
        xbar = Crossbar(config=DeviceConfig())
        program(xbar, np.zeros((2, 2)))
        assert np.all(xbar.levels == xbar.zero_code)
        assert xbar.scale > 0

    def test_max_val_hits_top_code(self):
        spec = QuantSpec(bits=8, min_val=-1.0, max_val=1.0)
        codes, scale = quantize(np.array([[1.0]]), spec)
        assert codes[0, 0] == 2 ** 7 - 1
        assert abs(dequantize(codes, scale)[0, 0] - 1.0) <= scale / 2

    def test_matches_scalar_reference(self):
        x = rng.uniform(-1, 1, (32, 32))
        spec = QuantSpec(bits=8, min_val=-1.0, max_val=1.0)
        codes, scale = quantize(x, spec)
        ref_codes, ref_scale = ref_quantize(x, 8, 1.0)
        assert scale == ref_scale
        assert np.array_equal(codes, ref_codes)
        # round-trip error within half an LSB, element-wise
        assert np.max(np.abs(dequantize(codes, scale) - x)) <= scale / 2

    def test_clipping(self):
        spec = QuantSpec(bits=8, min_val=-1.0, max_val=1.0)
        codes, _ = quantize(np.array([[5.0, -5.0]]), spec)
        assert list(codes[0]) == [127, -127]

    def test_non_finite_rejected(self):
        spec = QuantSpec(bits=8, min_val=-1.0, max_val=1.0)
        with pytest.raises(CrossbarError, match="non-finite"):
            quantize(np.array([[np.nan]]), spec)

    def test_float_mode_passthrough(self):
        x = rng.standard_normal((4, 4))
        codes, scale = quantize(x, QuantSpec(bits=32, min_val=-1.0, max_val=1.0))
        assert scale == 1.0
        assert np.array_equal(codes, x)


class TestProgram:
    def test_identity_roundtrip_with_padding(self):
        xbar = Crossbar(config=DeviceConfig())
        program(xbar, np.eye(4))
        w = read_weights(xbar)
        lsb = xbar.scale
        assert np.max(np.abs(w[:4, :4] - np.eye(4))) <= lsb / 2
        assert np.all(w[4:, :] == 0.0)
        assert np.all(w[:, 4:] == 0.0)

    def test_idempotent(self):
        w = rng.uniform(-1, 1, (8, 8))
        a, b = Crossbar(config=DeviceConfig()), Crossbar(config=DeviceConfig())
        program(a, w)
        program(b, w)
        program(b, w)
        assert np.array_equal(a.levels, b.levels)

    def test_transpose_program(self):
        w = rng.uniform(-1, 1, (8, 8))
        a, b = Crossbar(config=DeviceConfig()), Crossbar(config=DeviceConfig())
        program(a, w)
        program(b, w.T)
        half_lsb = max(a.scale, b.scale) / 2
        assert np.max(np.abs(read_weights(b)[:8, :8] - read_weights(a)[:8, :8].T)) <= half_lsb

    def test_oversize_rejected_with_dims(self):
        xbar = Crossbar(config=DeviceConfig(rows=4, cols=4))
        with pytest.raises(CrossbarError, match="8x2 exceed crossbar 4x4"):
            program(xbar, np.zeros((8, 2)))

    def test_program_noise_hook_defaults_off(self):
        w = rng.uniform(-1, 1, (8, 8))
        quiet = Crossbar(config=DeviceConfig())
        program(quiet, w)
        noisy = Crossbar(config=DeviceConfig(program_noise_std=0.1))
        program(noisy, w, rng=np.random.default_rng(0))
        assert not np.array_equal(quiet.levels, noisy.levels)

    def test_program_codes_verbatim(self):
        xbar = Crossbar(config=DeviceConfig())
        codes = rng.integers(-127, 128, (5, 6)).astype(np.float64)
        program_codes(xbar, codes, 0.01)
        assert np.array_equal(xbar.signed_codes[:5, :6], codes)
        assert xbar.scale == 0.01


class TestReadWeights:
    def test_fresh_crossbar_reads_zero(self):
        assert np.all(read_weights(Crossbar(config=DeviceConfig())) == 0.0)

    def test_definitional_roundtrip(self):
        w = rng.uniform(-2, 2, (16, 16))
        xbar = Crossbar(config=DeviceConfig())
        program(xbar, w)
        spec = QuantSpec.for_data(8, w)
        codes, scale = quantize(w, spec)
        assert np.array_equal(read_weights(xbar)[:16, :16], dequantize(codes, scale))

    def test_external_code_edit_matches_scalar_dequant(self):
        xbar = Crossbar(config=DeviceConfig(rows=4, cols=4))
        xbar.levels = np.array([[130.0, 120, 128, 255], [0, 1, 128, 129]] + [[128.0] * 4] * 2)
        xbar.scale = 0.5
        got = read_weights(xbar)
        for i in range(4):
            for j in range(4):
                assert got[i, j] == (xbar.levels[i, j] - 128) * 0.5


class TestMvm:
    def test_zero_input(self):
        xbar = Crossbar(config=DeviceConfig())
        program(xbar, rng.uniform(-1, 1, (32, 32)))
        assert np.all(mvm(xbar, np.zeros(32)) == 0.0)

    def test_identity_weights_within_one_input_lsb(self):
        xbar = Crossbar(config=DeviceConfig())
        program(xbar, np.eye(32))
        v = rng.uniform(-1, 1, 32)
        out = mvm(xbar, v)
        in_lsb = np.max(np.abs(v)) / 127
        w_err = xbar.scale / 2  # identity weights carry their own half-LSB error
        assert np.max(np.abs(out - v)) <= in_lsb + w_err * np.max(np.abs(v)) * 32

    def test_matches_dequantized_matmul_oracle_exactly(self):
        w = rng.uniform(-1, 1, (32, 32))
        v = rng.uniform(-1, 1, 32)
        xbar = Crossbar(config=DeviceConfig())
        program(xbar, w)
        spec = QuantSpec.for_data(8, v)
        v_deq = dequantize(*quantize(v, spec))
        expect = ref_matmul(v_deq[None, :], read_weights(xbar))[0]
        assert np.array_equal(mvm(xbar, v), expect)

    def test_error_bound_from_quantization_steps(self):
        w = rng.uniform(-1, 1, (32, 32))
        v = rng.uniform(-1, 1, 32)
        xbar = Crossbar(config=DeviceConfig())
        program(xbar, w)
        out = mvm(xbar, v)
        exact = ref_matmul(v[None, :], w)[0]
        sw = xbar.scale
        sv = np.max(np.abs(v)) / 127
        # |W'v' - Wv| <= sum_i |v_i| sw/2 + (|w_ij| + sw/2) sv/2 per column
        bound = np.abs(v) @ (np.full((32, 32), sw / 2)) + (np.abs(w) + sw / 2).T @ np.full(32, sv / 2)
        assert np.all(np.abs(out - exact) <= bound + 1e-12)

    def test_length_mismatch(self):
        xbar = Crossbar(config=DeviceConfig())
        with pytest.raises(CrossbarError, match="length"):
            mvm(xbar, np.zeros(16))

    def test_deterministic(self):
        w = rng.uniform(-1, 1, (32, 32))
        v = rng.uniform(-1, 1, 32)
        a = Crossbar(config=DeviceConfig())
        b = Crossbar(config=DeviceConfig())
        program(a, w)
        program(b, w)
        assert np.array_equal(mvm(a, v), mvm(b, v))


class TestPrecisionMonotonicity:
    def test_mvm_error_bound_shrinks_with_bits(self):
        w = rng.uniform(-1, 1, (32, 32))
        v = rng.uniform(-1, 1, 32)
        exact = ref_matmul(v[None, :], w)[0]
        errs = {}
        for bits in (4, 8, 16):
            xbar = Crossbar(config=DeviceConfig(weight_bits=bits, input_bits=bits))
            program(xbar, w)
            errs[bits] = np.max(np.abs(mvm(xbar, v) - exact))
        assert errs[16] <= errs[8] <= errs[4]


def test_conductance_view_monotone_in_levels():
    xbar = Crossbar(config=DeviceConfig())
    program(xbar, rng.uniform(-1, 1, (32, 32)))
    g = xbar.conductances()
    assert np.all(g >= 1.0 / xbar.config.r_max - 1e-18)
    assert np.all(g <= 1.0 / xbar.config.r_min + 1e-18)
    order = np.argsort(xbar.levels.ravel())
    assert np.all(np.diff(g.ravel()[order]) >= -1e-18)
