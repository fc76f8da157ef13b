import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edof.fixedpoint import (FixedPointError, ScalePlan, StageScale, calibrate_scales, cycle_model,
                             decode_ycbcr, dequantize, frac_bits_for, fx_chain, fx_forward, fx_macc,
                             fx_matvec, gamma_lut, quantize, quantize_network, round_shift, saturate)
from edof.network import NetworkParams, Stage, forward, init_from_ista
from edof.pipeline import patch_count
from edof.sparse import SolverConfig, build_concat_dictionary, dct_dictionary
from oracles import macc_oracle


@pytest.fixture(scope="module")
def ycc_net(coded_kernels):
    cd = build_concat_dictionary(dct_dictionary(), coded_kernels)
    return init_from_ista(cd, SolverConfig(mu=0.01), 4, "YCBCR422_128", m=192)


@pytest.fixture(scope="module")
def calib(coded_kernels):
    from edof.corpus import patch_dataset, training_images
    ys, _, _ = patch_dataset(training_images(), coded_kernels, [7], 2000, seed=8)
    return np.clip(np.rint(ys * 65535), 0, 65535).astype(np.int64)


class TestRounding:
    @pytest.mark.parametrize("acc,shift,expected", [(5, 1, 2), (7, 1, 4), (-5, 1, -2), (-7, 1, -4),
                                                     (6, 2, 2), (10, 2, 2), (14, 2, 4), (3, 0, 3), (3, -2, 12)])
    def test_half_even(self, acc, shift, expected):
        assert round_shift(acc, shift) == expected
        assert round_shift(np.array([acc]), shift)[0] == expected

    @settings(max_examples=300)
    @given(acc=st.integers(-2**46, 2**46), shift=st.integers(0, 30))
    def test_against_oracle(self, acc, shift):
        assert round_shift(np.array([acc]), shift)[0] == macc_oracle([acc], [1], shift) or abs(acc >> shift) > 32767

    def test_saturate(self):
        assert saturate(40000) == 32767 and saturate(-40000) == -32768
        assert saturate(np.array([1, 70000]))[1] == 32767


class TestQuantize:
    def test_on_grid_round_trip(self, rng):
        w = rng.integers(-2**14, 2**14, 50) / 2.0**13
        assert np.array_equal(dequantize(quantize(w, 13), 13), w)

    @settings(max_examples=50)
    @given(frac=st.integers(0, 15), seed=st.integers(0, 1000))
    def test_rounding_bound(self, frac, seed):
        r = np.random.default_rng(seed)
        w = r.uniform(-1, 1, 200) * (2.0 ** (14 - frac))
        err = np.abs(dequantize(quantize(w, frac), frac) - w)
        assert err.max() <= 2.0 ** (-frac - 1)

    def test_out_of_range(self):
        with pytest.raises(FixedPointError):
            quantize(np.array([3.0]), 14)

    def test_frac_rule(self):
        assert frac_bits_for(1.0) == 14
        assert frac_bits_for(0.9) >= 13
        assert frac_bits_for(0.0) == 14
        assert frac_bits_for(1e-9) == 15
        with pytest.raises(FixedPointError):
            frac_bits_for(1e6)


class TestMacc:
    def test_zero_input(self):
        assert fx_macc([5, -3, 7], [0, 0, 0], 4) == 0

    def test_one_hot(self):
        assert fx_macc([100, -300, 700], [0, 1 << 4, 0], 4) == -300

    def test_big_integer_oracle(self):
        r = np.random.default_rng(0)
        for _ in range(2000):
            w = r.integers(-32768, 32768, 192)
            x = r.integers(-32768, 32768, 192)
            shift = int(r.integers(10, 31))
            assert fx_macc(w, x, shift) == macc_oracle(w, x, shift)

    def test_vectorised_matches_scalar(self, rng):
        A = rng.integers(-32768, 32768, (7, 192))
        X = rng.integers(-32768, 32768, (5, 192))
        out = fx_matvec(A, X, 20)
        for i in range(5):
            for j in range(7):
                assert out[i, j] == fx_macc(A[j], X[i], 20)

    def test_length_limit(self):
        with pytest.raises(ValueError):
            fx_macc(np.ones(1537, int), np.ones(1537, int), 0)

    def test_accumulator_overflow(self):
        with pytest.raises(FixedPointError):
            fx_macc([32767], [32767], 0, bias=2**47)


class TestPlan:
    def test_zero_calibration_defaults(self, ycc_net):
        plan = calibrate_scales(ycc_net, np.zeros((100, 64)))
        assert plan.input_frac == 14
        assert all((s.weight_frac, s.mac_frac, s.out_frac) == (14, 14, 14) for s in plan.stages)

    def test_needs_enough_patches(self, ycc_net):
        with pytest.raises(ValueError):
            calibrate_scales(ycc_net, np.zeros((10, 64)))

    def test_headroom(self, ycc_net, calib):
        ys = calib / 65535
        plan = calibrate_scales(ycc_net, ys)
        _, inter = forward(ycc_net, ys)
        outs = inter.inputs[1:] + [inter.output]
        for i, sc in enumerate(plan.stages):
            assert np.abs(outs[i]).max() <= 2.0 ** (14 - sc.out_frac)
            assert np.abs(inter.mac_inputs[i]).max() <= 2.0 ** (14 - sc.mac_frac)
        assert plan.input_frac >= 13

    def test_deterministic(self, ycc_net, calib):
        assert calibrate_scales(ycc_net, calib / 65535) == calibrate_scales(ycc_net, calib / 65535)

    def test_unbounded_activation_names_stage(self, ycc_net, calib):
        net = ycc_net.copy()
        net.layers[2].A *= 1e6
        with pytest.raises(FixedPointError, match="stage 2"):
            calibrate_scales(net, calib / 65535)

    def test_exponent_round_trip(self):
        plan = ScalePlan(13, [StageScale(14, 12, 11), StageScale(15, 13, 12)])
        assert ScalePlan.from_exponents(plan.exponents()) == plan


class TestQuantizedNetwork:
    def test_weight_error_bound(self, ycc_net, calib):
        plan = calibrate_scales(ycc_net, calib / 65535)
        fnet = quantize_network(ycc_net, plan)
        for st, fs, sc in zip(ycc_net.layers, fnet.layers, plan.stages):
            assert np.abs(dequantize(fs.A, sc.weight_frac) - st.A).max() <= 2.0 ** (-sc.weight_frac - 1)

    def test_weight_out_of_range(self, ycc_net):
        plan = ScalePlan(14, [StageScale(15, 14, 14) for _ in ycc_net.layers])
        net = ycc_net.copy()
        net.layers[1].A[0, 0] = 1.5
        with pytest.raises(FixedPointError, match="regenerate"):
            quantize_network(net, plan)

    def test_single_layer_error_bound(self, rng):
        m = 16
        A = rng.uniform(-1, 1, (m, 64)) / 8
        net = NetworkParams([Stage("I", A, 0, 0), Stage("M", np.zeros((m, m)), 0, 0),
                             Stage("F", np.vstack([np.eye(m), np.zeros((192 - m, m))]), 0, 0)])
        plan = ScalePlan(15, [StageScale(14, 14, 14), StageScale(14, 14, 14), StageScale(14, 14, 14)])
        fnet = quantize_network(net, plan)
        y = rng.random((50, 64)) * 0.999
        raw = np.rint(y * 65536).astype(np.int64)
        first = fx_chain(type(fnet)(fnet.layers[:1] + fnet.layers[2:], ScalePlan(15, plan.stages[:1] + plan.stages[2:]),
                                    "RGB192"), raw)
        ref = (raw / 65536) @ A.T
        assert np.abs(first[:, :m] / 2**14 - ref).max() <= (m + 1) * 2.0 ** -14

    def test_fx_forward_fidelity(self, ycc_net, calib):
        fnet = quantize_network(ycc_net, calibrate_scales(ycc_net, calib / 65535))
        l16, c8 = fx_forward(fnet, calib)
        ref, _ = forward(ycc_net, calib / 65536)
        ref[:, :64] = np.clip(ref[:, :64], 0, 65535 / 65536)
        mse = np.mean((decode_ycbcr(l16, c8) - ref) ** 2)
        assert 10 * np.log10(1 / mse) >= 40

    def test_zero_patch(self, ycc_net, calib):
        fnet = quantize_network(ycc_net, calibrate_scales(ycc_net, calib / 65535))
        l16, c8 = fx_forward(fnet, np.zeros(64, dtype=np.int64))
        assert not l16.any() and np.all(c8 == 128)

    def test_bit_identical_repeat(self, ycc_net, calib):
        fnet = quantize_network(ycc_net, calibrate_scales(ycc_net, calib / 65535))
        a = fx_forward(fnet, calib[:50])
        b = fx_forward(fnet, calib[:50])
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        single = fx_forward(fnet, calib[7])
        assert np.array_equal(single[0], a[0][7])

    def test_rejects_rgb_network(self, coded_kernels, calib):
        cd = build_concat_dictionary(dct_dictionary(), coded_kernels)
        net = init_from_ista(cd, SolverConfig(mu=0.01), 3, "RGB192", m=192)
        fnet = quantize_network(net, calibrate_scales(net, calib / 65535))
        with pytest.raises(ValueError):
            fx_forward(fnet, calib[:2])


def test_gamma_lut():
    lut = gamma_lut()
    assert lut.shape == (65536,) and lut.dtype == np.uint8
    assert lut[0] == 0 and lut[-1] == 255
    assert np.all(np.diff(lut.astype(int)) >= 0)
    x = 12345
    assert lut[x] == round(255 * (x / 65535) ** (1 / 2.2))


class TestCycles:
    def test_serial_cycles(self):
        assert cycle_model(4, 1920, 1080, 8, 125e6).mac_cycles_per_patch == 448
        assert cycle_model(4, 1920, 1080, 8, 125e6).cycles_per_patch == 448 + 400

    def test_full_hd(self):
        rep = cycle_model(4, 1920, 1080, 8, 125e6)
        assert rep.patches_per_frame == 32400
        assert rep.bottleneck_cycles == 192
        assert rep.fps == pytest.approx(20.1, abs=0.05)
        assert 14 <= rep.fps <= 22
        assert abs(rep.fps * rep.cycles_per_frame - 125e6) <= rep.fps

    def test_stride_two_count(self):
        rep = cycle_model(4, 1920, 1080, 2, 125e6)
        assert rep.patches_per_frame == patch_count(1920, 1080, 2) == 957 * 537

    def test_invalid_stride(self):
        with pytest.raises(ValueError):
            cycle_model(4, 1920, 1080, 3, 125e6)
        with pytest.raises(ValueError):
            cycle_model(4, 1920, 1080, 16, 125e6)
