import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edof.network import (InvalidStateError, NetworkParams, Stage, TrainConfig, TrainingDiverged, backward,
                          batched_loss, forward, init_from_ista, loss_mse, sgd_train)
from edof.optics import BlurKernelSet
from edof.pipeline import ycbcr422_matrix
from edof.sparse import SolverConfig, build_concat_dictionary, dct_dictionary, ista, reconstruct_patch
from oracles import finite_difference_grads, max_relative_error, random_small_net


@pytest.fixture(scope="module")
def concat(coded_kernels):
    return build_concat_dictionary(dct_dictionary(), coded_kernels)


@pytest.fixture(scope="module")
def patches(coded_kernels):
    from edof.corpus import patch_dataset, training_images
    return patch_dataset(training_images(), coded_kernels, [7], 400, seed=3)


class TestInit:
    @pytest.mark.parametrize("T", [3, 5, 8])
    def test_full_width_equals_ista(self, concat, patches, T):
        cfg = SolverConfig(mu=0.01)
        net = init_from_ista(concat, cfg, T)
        ys = patches[0][:20]
        out, _ = forward(net, ys)
        for y, o in zip(ys, out):
            z, _ = ista(y, concat, SolverConfig(mu=0.01, iterations=T - 1))
            assert np.max(np.abs(o - reconstruct_patch(z, concat))) <= 1e-10

    def test_zero_input(self, concat):
        net = init_from_ista(concat, SolverConfig(mu=0.01), 3)
        out, _ = forward(net, np.zeros(64))
        assert not out.any()

    def test_fpga_shapes(self, concat):
        net = init_from_ista(concat, SolverConfig(mu=0.01), 4, "YCBCR422_128", m=192)
        assert [s.A.shape for s in net.layers] == [(192, 64), (192, 192), (192, 192), (128, 192)]

    def test_ycbcr_output_folds_colour_transform(self, concat, patches):
        rgb = init_from_ista(concat, SolverConfig(mu=0.01), 4, "RGB192", m=192)
        ycc = init_from_ista(concat, SolverConfig(mu=0.01), 4, "YCBCR422_128", m=192)
        ys = patches[0][:10]
        assert np.allclose(forward(rgb, ys)[0] @ ycbcr422_matrix().T, forward(ycc, ys)[0], atol=1e-12)

    def test_pca_init(self, concat):
        net = init_from_ista(concat, SolverConfig(mu=0.01), 4, m=96, init="pca")
        assert net.m == 96

    def test_invalid(self, concat):
        with pytest.raises(ValueError):
            init_from_ista(concat, SolverConfig(), 2)
        with pytest.raises(ValueError):
            init_from_ista(concat, SolverConfig(), 4, m=100)
        with pytest.raises(ValueError):
            init_from_ista(concat, SolverConfig(), 4, output_space="XYZ")


class TestForward:
    def test_huge_threshold_gives_zero(self, rng):
        net, y, _ = random_small_net(rng, 6, 4)
        for s in net.layers[1:]:
            s.theta[:] = 1e9
        for s in net.layers:
            s.c[:] = 0
        out, inter = forward(net, y)
        assert not out.any()
        assert all(not u.any() for u in inter.shrunk[1:])

    def test_zero_threshold_is_linear(self, rng):
        A_i, A_m, A_f = rng.standard_normal((5, 64)), rng.standard_normal((5, 5)), rng.standard_normal((192, 5))
        net = NetworkParams([Stage("I", A_i, 0, 0), Stage("M", A_m, 0, 0), Stage("F", A_f, 0, 0)])
        y = rng.random(64)
        b1 = A_i @ y
        b2 = b1 + A_m @ b1
        assert np.allclose(forward(net, y)[0], A_f @ b2, atol=1e-12)

    def test_chain_validation(self, rng):
        with pytest.raises(ValueError):
            NetworkParams([Stage("I", np.ones((4, 64)), 0, 0), Stage("F", np.ones((192, 4)), 0, 0)])
        with pytest.raises(ValueError):
            Stage("M", np.eye(3), -1.0, 0)
        with pytest.raises(ValueError):
            forward(tiny_net(), np.zeros(10))


def tiny_net():
    return NetworkParams([Stage("I", np.ones((4, 64)), 0, 0), Stage("M", np.eye(4), 0, 0),
                          Stage("F", np.ones((192, 4)), 0, 0)])


class TestLoss:
    def test_identical(self, rng):
        x = rng.random(192)
        assert loss_mse(x, x) == 0

    def test_offset(self):
        assert loss_mse(np.ones(10) * 3, np.ones(10) * 2) == pytest.approx(5.0)

    def test_summation_oracle(self, rng):
        a, b = rng.random((4, 30)), rng.random((4, 30))
        ref = sum(0.5 * sum((bi - ai) ** 2 for ai, bi in zip(ra, rb)) for ra, rb in zip(a, b)) / 4
        assert loss_mse(a, b) == pytest.approx(ref, abs=1e-12)


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("space", ["RGB192", "YCBCR422_128"])
    def test_matches_finite_differences(self, seed, space):
        r = np.random.default_rng(seed)
        net, y, target = random_small_net(r, int(r.integers(2, 7)), int(r.integers(3, 5)), space)
        _, inter = forward(net, y)
        g = backward(net, inter, target)
        fd = finite_difference_grads(net, y, target)
        for i in range(net.T):
            assert max_relative_error(g.dA[i], fd["A"][i]) < 1e-4
            assert max_relative_error(g.dc[i], fd["c"][i]) < 1e-4
            if i > 0:
                assert max_relative_error(g.dtheta[i], fd["theta"][i]) < 1e-4

    def test_zero_everything(self, concat):
        net = init_from_ista(concat, SolverConfig(mu=0.01), 4, m=192)
        _, inter = forward(net, np.zeros((2, 64)))
        g = backward(net, inter, np.zeros((2, 192)))
        assert all(not a.any() for a in g.dA) and all(not t.any() for t in g.dtheta)

    def test_dead_units_have_zero_theta_gradient(self, rng):
        net, y, target = random_small_net(rng, 6, 4)
        net.layers[2].theta[:3] = 1e6
        _, inter = forward(net, y)
        g = backward(net, inter, target)
        assert not g.dtheta[2][:3].any()

    def test_stale_intermediates(self, rng):
        net, y, target = random_small_net(rng, 4, 3)
        _, inter = forward(net, y)
        net.revision += 1
        with pytest.raises(InvalidStateError):
            backward(net, inter, target)


class TestTraining:
    def test_zero_learning_rate_is_identity(self, rng):
        net, y, target = random_small_net(rng, 4, 3, batch=20)
        before = net.copy()
        res = sgd_train(net, y, target, TrainConfig(learning_rate=0.0, epochs=2, batch_size=5))
        for a, b in zip(res.params.layers, before.layers):
            assert np.array_equal(a.A, b.A) and np.array_equal(a.theta, b.theta) and np.array_equal(a.c, b.c)

    def test_single_sample_monotone(self, concat, patches):
        net = init_from_ista(concat, SolverConfig(mu=0.01), 4, m=192)
        y, x = patches[0][:1], patches[1][:1]
        res = sgd_train(net, y, x, TrainConfig(learning_rate=1e-3, epochs=10, batch_size=1, validation_fraction=0))
        assert all(b < a for a, b in zip(res.train_loss[1:], res.train_loss[2:]))
        assert res.val_loss[-1] < res.val_loss[0]

    def test_validation_never_worse(self, concat, patches):
        net = init_from_ista(concat, SolverConfig(mu=0.01), 4, "YCBCR422_128", m=192)
        ys, xs, _ = patches
        res = sgd_train(net, ys[:300], xs[:300], TrainConfig(learning_rate=2e-3, epochs=3, seed=1),
                        val=(ys[300:], xs[300:]))
        final = batched_loss(res.params, ys[300:], res.params.target(xs[300:]))
        assert final <= res.val_loss[0] + 1e-15

    def test_same_seed_same_result(self, concat, patches):
        ys, xs, _ = patches
        runs = []
        for _ in range(2):
            net = init_from_ista(concat, SolverConfig(mu=0.01), 3, m=192)
            runs.append(sgd_train(net, ys[:200], xs[:200], TrainConfig(learning_rate=1e-3, epochs=2, seed=5)).params)
        for a, b in zip(*[r.layers for r in runs]):
            assert np.array_equal(a.A, b.A)

    def test_thresholds_stay_non_negative(self, concat, patches):
        net = init_from_ista(concat, SolverConfig(mu=0.05), 4, m=192)
        ys, xs, _ = patches
        res = sgd_train(net, ys[:200], xs[:200], TrainConfig(learning_rate=5e-3, epochs=2, seed=2))
        assert all(s.theta.min() >= 0 for s in res.params.layers)

    def test_divergence_detected(self, concat, patches):
        net = init_from_ista(concat, SolverConfig(mu=0.01), 4, m=192)
        ys, xs, _ = patches
        with pytest.raises(TrainingDiverged):
            sgd_train(net, ys[:200], xs[:200], TrainConfig(learning_rate=10.0, epochs=2, seed=0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1)
