import numpy as np
import pytest
import torch

from pixelpose import nets
from pixelpose.nets import (
    Act,
    Adam,
    ContractError,
    Conv,
    Dense,
    MaxPool,
    NetworkSpec,
    ParamBuilder,
    ParamSet,
    Residual,
    ShapeError,
    TrainingDivergedError,
    Upsample,
    forward,
    gradients,
    init_params,
    loss_and_gradients,
    soft_update,
)

import reference_impl as ref


def finite_difference_check(loss_fn, params, step=1e-4, rel_tol=1e-3):
    """Central finite differences against analytic gradients (float64).

    Elements that disagree at the base step are re-measured at finer steps:
    a genuinely wrong gradient disagrees at every step size, while a
    measurement that straddled a piecewise-linear kink (LeakyReLU) becomes
    accurate as the probe narrows. Every element must pass at some step.
    Returns the maximum relative error across all parameter elements.
    """

    def fd_error(flat, i, analytic, h):
        orig = float(flat[i])
        with torch.no_grad():
            flat[i] = orig + h
        up = float(loss_fn(params).detach())
        with torch.no_grad():
            flat[i] = orig - h
        down = float(loss_fn(params).detach())
        with torch.no_grad():
            flat[i] = orig
        numeric = (up - down) / (2 * h)
        denom = max(abs(numeric), abs(analytic), 1e-4)
        return abs(numeric - analytic) / denom

    _, grads = loss_and_gradients(loss_fn, params)
    worst = 0.0
    for name, tensor in params.items():
        flat = tensor.detach().view(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.numel()):
            analytic = float(g[i])
            err = fd_error(flat, i, analytic, step)
            for finer in (step / 10, step / 100):
                if err < rel_tol:
                    break
                err = fd_error(flat, i, analytic, finer)
            worst = max(worst, err)
            assert err < rel_tol, f"{name}[{i}]: relative gradient error {err}"
    return worst


class TestParamBuilder:
    def test_deterministic_init(self):
        def build():
            b = ParamBuilder(7)
            b.conv("c", 3, 4)
            b.dense("d", 4, 2)
            return b.params.to_arrays()

        a, b = build(), build()
        assert set(a) == set(b)
        for name in a:
            assert np.array_equal(a[name], b[name])

    def test_zero_bias_unit_gain(self):
        b = ParamBuilder(0)
        b.conv("c", 3, 4)
        arrays = b.params.to_arrays()
        assert np.all(arrays["c.b"] == 0)
        assert np.all(arrays["c.ln_g"] == 1)

    def test_duplicate_name_rejected(self):
        b = ParamBuilder(0)
        b.dense("d", 2, 2)
        with pytest.raises(ContractError):
            b.dense("d", 2, 2)


class TestForward:
    def test_zero_dense_gives_zero(self):
        spec = NetworkSpec((5,), (Dense(3, act="linear"),))
        params = init_params(spec, 0)
        with torch.no_grad():
            for _, t in params.items():
                t.zero_()
        out = forward(spec, params, np.random.default_rng(0).normal(size=(4, 5)))
        assert torch.all(out == 0)

    def test_identity_1x1_conv(self):
        spec = NetworkSpec((3, 8, 8), (Conv(3, kernel=1, layer_norm=False, act="linear"),))
        params = init_params(spec, 0)
        with torch.no_grad():
            params["net.l0.w"].copy_(torch.eye(3).reshape(3, 3, 1, 1))
            params["net.l0.b"].zero_()
        x = torch.randn(2, 3, 8, 8)
        assert torch.allclose(forward(spec, params, x), x)

    def test_golden_two_layer_vs_reference(self):
        rng = np.random.default_rng(42)
        b = ParamBuilder(rng, dtype=torch.float64)
        b.conv("l1", 3, 4)
        b.conv("l2", 4, 2, layer_norm=False)
        x = np.random.default_rng(7).normal(size=(2, 3, 6, 6))
        arrays = b.params.to_arrays()
        expected = ref.conv_layer(
            arrays, "l2", ref.conv_layer(arrays, "l1", x), layer_norm=False, act="linear"
        )
        got = nets.conv2d(
            b.params, "l2", nets.conv2d(b.params, "l1", torch.from_numpy(x)),
            layer_norm=False, act="linear",
        )
        assert np.allclose(got.detach().numpy(), expected, atol=1e-10)

    def test_shape_errors(self):
        spec = NetworkSpec((3, 8, 8), (Conv(4),))
        params = init_params(spec, 0)
        with pytest.raises(ShapeError):
            forward(spec, params, torch.randn(1, 2, 8, 8))

    def test_output_shape_matches_declared(self):
        spec = NetworkSpec(
            (3, 16, 16),
            (
                Conv(8),
                Conv(12, stride=2),
                Residual(12),
                Upsample(2),
                Conv(6),
                MaxPool(2),
                Act("tanh"),
                Dense(10),
            ),
        )
        params = init_params(spec, 3)
        out = forward(spec, params, torch.randn(2, 3, 16, 16))
        assert tuple(out.shape[1:]) == spec.output_shape()

    def test_global_maxpool_shape(self):
        spec = NetworkSpec((3, 8, 8), (Conv(4), MaxPool(0)))
        params = init_params(spec, 0)
        out = forward(spec, params, torch.randn(2, 3, 8, 8))
        assert out.shape == (2, 4)
        assert spec.output_shape() == (4,)

    def test_deterministic_forward(self):
        spec = NetworkSpec((3, 8, 8), (Conv(4), Residual(6, stride=2), Dense(5)))
        params = init_params(spec, 11)
        x = torch.from_numpy(np.random.default_rng(5).normal(size=(3, 3, 8, 8))).float()
        a = forward(spec, params, x)
        b = forward(spec, params, x)
        assert torch.equal(a, b)
        assert torch.isfinite(a).all()


class TestGradients:
    def test_sum_of_squares(self):
        params = ParamSet.from_arrays({"p": np.array([1.0, -2.0, 3.0])})
        grads = gradients(lambda ps: (ps["p"] ** 2).sum(), params)
        assert np.allclose(grads["p"].numpy(), [2.0, -4.0, 6.0])

    def test_constant_loss_zero_grads(self):
        params = ParamSet.from_arrays({"p": np.array([1.0, 2.0])})
        grads = gradients(lambda ps: torch.tensor(5.0), params)
        assert np.all(grads["p"].numpy() == 0)

    def test_non_scalar_rejected(self):
        params = ParamSet.from_arrays({"p": np.array([1.0, 2.0])})
        with pytest.raises(ContractError):
            gradients(lambda ps: ps["p"] * 2, params)

    @pytest.mark.parametrize("act", ["leaky_relu", "tanh", "sigmoid", "softplus"])
    def test_finite_difference_small_net(self, act):
        b = ParamBuilder(3, dtype=torch.float64)
        b.conv("c", 2, 3)
        b.dense("d", 3, 2)
        x = torch.from_numpy(np.random.default_rng(8).normal(size=(2, 2, 4, 4)))

        def loss_fn(p):
            h = nets.conv2d(p, "c", x, act=act)
            h = nets.global_max_pool(h)
            return (nets.dense(p, "d", h, act="linear") ** 2).mean()

        finite_difference_check(loss_fn, b.params)

    def test_finite_difference_residual_pool_upsample(self):
        b = ParamBuilder(5, dtype=torch.float64)
        b.residual("r", 2, 3, stride=2)
        x = torch.from_numpy(np.random.default_rng(9).normal(size=(2, 2, 4, 4)))

        def loss_fn(p):
            h = nets.residual_block(p, "r", x, stride=2)
            h = nets.upsample_nearest(h)
            h = nets.max_pool2d(h, 2)
            return (h ** 2).mean()

        finite_difference_check(loss_fn, b.params)


class TestAdam:
    def test_zero_gradients_leave_params(self):
        params = ParamSet.from_arrays({"p": np.array([1.0, -1.0])})
        opt = Adam(params, lr=0.1)
        before = params.to_arrays()["p"]
        opt.step({"p": torch.zeros(2)})
        assert np.allclose(params.to_arrays()["p"], before, atol=1e-12)

    def test_hand_computed_first_step(self):
        params = ParamSet.from_arrays({"p": np.array([1.0])})
        opt = Adam(params, lr=0.1)
        opt.step({"p": torch.tensor([0.5])})
        m_hat = (0.1 * 0.5) / (1 - 0.9)
        v_hat = (0.001 * 0.25) / (1 - 0.999)
        expected = 1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert np.allclose(params.to_arrays()["p"], [expected], atol=1e-12)

    def test_quadratic_bowl_convergence(self):
        params = ParamSet.from_arrays({"p": np.array([0.0, 4.0])})
        target = torch.tensor([3.0, -1.0])
        opt = Adam(params, lr=0.05)
        for _ in range(500):
            loss_fn = lambda ps: ((ps["p"] - target) ** 2).sum()
            opt.step(gradients(loss_fn, params))
        assert np.allclose(params.to_arrays()["p"], [3.0, -1.0], atol=1e-3)

    def test_non_finite_gradient_raises(self):
        params = ParamSet.from_arrays({"p": np.array([1.0])})
        opt = Adam(params, lr=0.1)
        with pytest.raises(TrainingDivergedError):
            opt.step({"p": torch.tensor([float("nan")])})

    def test_determinism_100_steps(self):
        torch.set_num_threads(1)
        try:
            def train():
                b = ParamBuilder(2)
                b.conv("c", 2, 3)
                b.dense("d", 3, 2)
                opt = Adam(b.params, lr=3e-3)
                x = torch.from_numpy(
                    np.random.default_rng(4).normal(size=(2, 2, 4, 4))
                ).float()
                for _ in range(100):
                    def loss_fn(p):
                        h = nets.conv2d(p, "c", x)
                        return (nets.dense(p, "d", nets.global_max_pool(h)) ** 2).mean()
                    opt.step(gradients(loss_fn, b.params))
                return b.params.to_arrays()

            a, b = train(), train()
            for name in a:
                assert np.array_equal(a[name], b[name]), name
        finally:
            torch.set_num_threads(2)


class TestSoftUpdate:
    def test_tau_one_copies(self):
        t = ParamSet.from_arrays({"p": np.zeros(3)})
        o = ParamSet.from_arrays({"p": np.array([1.0, 2.0, 3.0])})
        soft_update(t, o, 1.0)
        assert np.array_equal(t.to_arrays()["p"], [1.0, 2.0, 3.0])

    def test_halfway(self):
        t = ParamSet.from_arrays({"p": np.zeros(4)})
        o = ParamSet.from_arrays({"p": np.ones(4)})
        soft_update(t, o, 0.5)
        assert np.allclose(t.to_arrays()["p"], 0.5)

    def test_geometric_convergence(self):
        tau = 0.3
        t = ParamSet.from_arrays({"p": np.array([0.0])})
        o = ParamSet.from_arrays({"p": np.array([1.0])})
        gap = 1.0
        for _ in range(10):
            soft_update(t, o, tau)
            new_gap = float(abs(1.0 - t.to_arrays()["p"][0]))
            assert np.isclose(new_gap, gap * (1 - tau), atol=1e-12)
            gap = new_gap

    def test_invalid_tau_and_shapes(self):
        t = ParamSet.from_arrays({"p": np.zeros(3)})
        o = ParamSet.from_arrays({"p": np.ones(3)})
        with pytest.raises(ContractError):
            soft_update(t, o, 0.0)
        bad = ParamSet.from_arrays({"p": np.ones(4)})
        with pytest.raises(ShapeError):
            soft_update(t, bad, 0.5)

    def test_name_mismatch(self):
        t = ParamSet.from_arrays({"p": np.zeros(3)})
        o = ParamSet.from_arrays({"q": np.ones(3)})
        with pytest.raises(ShapeError):
            soft_update(t, o, 0.5)
