import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dissnode import neuralfield as nf
from dissnode import simkit
from dissnode.errors import ContractError, DataError, TrainingError
from helpers import central_diff


def leaky(a=0.2):
    return nf.activation("leaky_relu", a)


def identity_net(w, b):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = w.shape[0]
    return nf.Mlp((n, n), [w], [b], [nf.activation("identity")])


class TestActivation:
    def test_slope_bounds(self):
        assert (nf.activation("relu").alpha, nf.activation("relu").beta) == (0.0, 1.0)
        assert (nf.activation("tanh").alpha, nf.activation("tanh").beta) == (0.0, 1.0)
        assert (nf.activation("sigmoid").alpha, nf.activation("sigmoid").beta) == (0.0, 1.0)
        assert (nf.activation("identity").alpha, nf.activation("identity").beta) == (1.0, 1.0)
        assert (leaky(0.2).alpha, leaky(0.2).beta) == (0.2, 1.0)
        # expansive slope parameter lands above 1
        assert (leaky(3.0).alpha, leaky(3.0).beta) == (1.0, 3.0)

    def test_values(self):
        assert_allclose(leaky(0.2).apply([-1.0, 2.0]), [-0.2, 2.0])
        assert_allclose(nf.activation("relu").apply([-1.0, 2.0]), [0.0, 2.0])
        assert nf.activation("sigmoid").apply(np.array([0.0]))[0] == 0.5
        assert nf.activation("tanh").apply(np.array([0.0]))[0] == 0.0

    def test_secants_stay_in_slope_interval(self):
        rng = np.random.default_rng(12)
        acts = [
            nf.activation("relu"),
            nf.activation("tanh"),
            nf.activation("sigmoid"),
            nf.activation("identity"),
            leaky(0.2),
            leaky(2.5),
        ]
        for act in acts:
            x = rng.uniform(-5.0, 5.0, size=400)
            y = rng.uniform(-5.0, 5.0, size=400)
            keep = np.abs(x - y) > 1e-8
            sec = (act.apply(x) - act.apply(y))[keep] / (x - y)[keep]
            assert np.all(sec >= act.alpha - 1e-12)
            assert np.all(sec <= act.beta + 1e-12)

    def test_param_validation(self):
        with pytest.raises(ContractError):
            nf.activation("leaky_relu")
        with pytest.raises(ContractError):
            nf.activation("leaky_relu", -0.1)
        with pytest.raises(ContractError):
            nf.activation("tanh", 0.3)
        with pytest.raises(ContractError):
            nf.activation("swish")


class TestMlpValidation:
    def test_io_width_must_match(self):
        with pytest.raises(ContractError):
            nf.Mlp((2, 3), [np.zeros((3, 2))], [np.zeros(3)], [nf.activation("identity")])

    def test_shape_chain(self):
        with pytest.raises(ContractError):
            nf.Mlp(
                (1, 4, 1),
                [np.zeros((3, 1)), np.zeros((1, 4))],
                [np.zeros(4), np.zeros(1)],
                [leaky(), nf.activation("identity")],
            )

    def test_output_layer_forced_identity(self):
        with pytest.raises(ContractError):
            nf.Mlp((1, 1), [np.ones((1, 1))], [np.zeros(1)], [nf.activation("tanh")])

    def test_nonfinite_rejected(self):
        with pytest.raises(ContractError):
            identity_net([[np.inf]], [0.0])


class TestForward:
    def test_zero_net_relu(self):
        net = nf.Mlp(
            (2, 3, 2),
            [np.zeros((3, 2)), np.zeros((2, 3))],
            [np.zeros(3), np.zeros(2)],
            [nf.activation("relu"), nf.activation("identity")],
        )
        assert_allclose(nf.forward(net, [1.0, -2.0]), [0.0, 0.0])

    def test_single_identity_layer_affine(self):
        net = identity_net([[2.0, 0.5], [0.0, -1.0]], [1.0, 3.0])
        assert_allclose(nf.forward(net, [1.0, 2.0]), [4.0, 1.0])

    def test_hand_value_tanh(self):
        net = nf.Mlp(
            (1, 1, 1),
            [np.array([[1.0]]), np.array([[2.0]])],
            [np.zeros(1), np.array([0.5])],
            [nf.activation("tanh"), nf.activation("identity")],
        )
        assert nf.forward(net, [0.0])[0] == 0.5

    def test_bad_input_shape(self):
        net = identity_net([[1.0]], [0.0])
        with pytest.raises(ContractError):
            nf.forward(net, [1.0, 2.0])

    def test_cache_matches_plain_forward(self):
        net = nf.init_mlp((3, 5, 3), leaky(), seed=4)
        z = np.array([0.3, -0.7, 1.1])
        out, pres, ins = nf.forward_with_cache(net, z)
        assert np.array_equal(out, nf.forward(net, z))
        assert len(pres) == len(ins) == 2
        assert np.array_equal(ins[0], z)
        assert_allclose(pres[0], net.weights[0] @ z + net.biases[0])


class TestRollout:
    def test_zero_net_constant(self):
        net = nf.Mlp(
            (2, 2, 2),
            [np.zeros((2, 2)), np.zeros((2, 2))],
            [np.zeros(2), np.zeros(2)],
            [nf.activation("relu"), nf.activation("identity")],
        )
        traj = nf.rollout(net, [0.4, -0.2], 10, 0.1)
        assert np.all(traj.samples == [0.4, -0.2])

    def test_constant_field_linear_drift(self):
        net = identity_net([[0.0]], [1.0])
        traj = nf.rollout(net, [2.0], 10, 0.25)
        assert_allclose(traj.samples[:, 0], 2.0 + 0.25 * np.arange(11), atol=1e-12)

    def test_exponential_decay(self):
        net = identity_net([[-1.0]], [0.0])
        traj = nf.rollout(net, [1.0], 1000, 1e-3)
        assert abs(traj.samples[-1, 0] - math.exp(-1.0)) < 1e-8

    def test_prefix_consistency(self):
        net = nf.init_mlp((2, 6, 2), leaky(), seed=7)
        long = nf.rollout(net, [0.5, -0.3], 40, 0.01)
        short = nf.rollout(net, [0.5, -0.3], 15, 0.01)
        assert np.array_equal(long.samples[:16], short.samples)


def flat_params(net):
    return np.concatenate(
        [w.ravel() for w in net.weights] + [b.ravel() for b in net.biases]
    )


def set_params(net, vec):
    pos = 0
    for w in net.weights:
        w[:] = vec[pos : pos + w.size].reshape(w.shape)
        pos += w.size
    for b in net.biases:
        b[:] = vec[pos : pos + b.size]
        pos += b.size
    assert pos == vec.size


def analytic_and_fd(net, windows, cfg, h=1e-6, denom_floor=1e-6):
    """Max relative parameter-gradient discrepancy vs central differences."""
    _, (gw, gb) = nf.loss_and_gradient(net, windows, cfg)
    analytic = np.concatenate([g.ravel() for g in gw] + [g.ravel() for g in gb])
    base = flat_params(net)
    probe = net.copy()

    def f(vec):
        set_params(probe, vec)
        loss, _ = nf.loss_and_gradient(probe, windows, cfg)
        return loss

    fd = central_diff(f, base, h)
    return np.max(np.abs(analytic - fd) / np.maximum(np.abs(fd), denom_floor))


class TestLossAndGradient:
    def cfg(self, **over):
        kw = dict(horizon=3, dt=0.05, epochs=1, batch_size=2, seed=0)
        kw.update(over)
        return nf.TrainConfig(**kw)

    def test_self_generated_data_is_stationary(self):
        net = nf.init_mlp((2, 5, 2), nf.activation("tanh"), seed=3)
        win = nf.rollout(net, [0.3, -0.4], 6, 0.05).samples
        loss, (gw, gb) = nf.loss_and_gradient(net, [win], self.cfg(horizon=6))
        assert loss == 0.0
        total = sum(float(np.sum(g * g)) for g in gw + gb)
        assert math.sqrt(total) < 1e-10

    def test_fd_check_small_tanh_net(self):
        rng = np.random.default_rng(21)
        net = nf.init_mlp((1, 4, 1), nf.activation("tanh"), seed=21)
        for b in net.biases:
            b[:] = rng.uniform(-0.3, 0.3, size=b.shape)
        wins = [rng.uniform(-1.0, 1.0, size=(5, 1)) for _ in range(2)]
        assert analytic_and_fd(net, wins, self.cfg()) < 1e-4

    def test_fd_check_many_random_nets(self):
        # smooth activations keep central differences valid everywhere
        kinds = [nf.activation("tanh"), nf.activation("sigmoid")]
        fails = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            dims = (2, int(rng.integers(2, 5)), 2)
            net = nf.init_mlp(dims, kinds[trial % 2], seed=2000 + trial)
            for b in net.biases:
                b[:] = rng.uniform(-0.4, 0.4, size=b.shape)
            wins = [rng.uniform(-1.0, 1.0, size=(4, 2))]
            err = analytic_and_fd(net, wins, self.cfg(horizon=2, dt=0.04))
            if err >= 1e-4:
                fails += 1
        assert fails == 0

    def test_fd_check_leaky_away_from_kinks(self):
        # preactivations sit well inside the positive branch, so the
        # piecewise-linear kink never flips under the probe step
        net = nf.Mlp(
            (1, 2, 1),
            [np.array([[1.0], [0.8]]), np.array([[0.6, -0.7]])],
            [np.array([0.5, 0.4]), np.array([0.3])],
            [leaky(0.2), nf.activation("identity")],
        )
        win = np.linspace(0.7, 0.75, 4).reshape(4, 1)
        assert analytic_and_fd(net, [win], self.cfg(horizon=2)) < 1e-4

    def test_biases_only_mask_zeroes_weight_grads(self):
        rng = np.random.default_rng(5)
        net = nf.init_mlp((2, 4, 2), leaky(), seed=5)
        win = rng.uniform(-1.0, 1.0, size=(5, 2))
        _, (gw, gb) = nf.loss_and_gradient(
            net, [win], self.cfg(trainable=nf.TRAINABLE_BIASES)
        )
        assert all(np.all(g == 0.0) for g in gw)
        assert any(np.any(g != 0.0) for g in gb)

    def test_validation(self):
        net = nf.init_mlp((1, 2, 1), leaky(), seed=0)
        with pytest.raises(ContractError):
            nf.loss_and_gradient(net, [], self.cfg())
        with pytest.raises(ContractError):
            nf.loss_and_gradient(net, [np.zeros((3, 1))], self.cfg(horizon=5))
        with pytest.raises(ContractError):
            nf.loss_and_gradient(net, [np.zeros((5, 2))], self.cfg())

    def test_nonfinite_loss_carries_batch_index(self):
        net = identity_net([[50.0]], [0.0])
        good = np.ones((70, 1))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingError) as exc:
                nf.loss_and_gradient(
                    net, [good, good], self.cfg(horizon=60, dt=1.0)
                )
        assert exc.value.batch_index == 0


def linear_decay_dataset(dt=0.02, length=51, n=12, seed=None):
    """Noise-free windows of the scalar system with rate -z."""
    starts = np.linspace(-2.0, 2.0, n)
    wins = []
    for z0 in starts:
        if abs(z0) < 1e-9:
            continue
        traj = simkit.integrate_rk4(lambda t, z: -z, [z0], 0.0, dt, length - 1)
        wins.append(traj.samples)
    return simkit.Dataset(wins, dt)


class TestTrain:
    def test_learns_linear_decay(self):
        data = linear_decay_dataset()
        cfg = nf.TrainConfig(
            learning_rate=0.01,
            epochs=60,
            batch_size=4,
            horizon=50,
            dt=0.02,
            seed=11,
        )
        net = nf.init_mlp((1, 8, 1), nf.activation("tanh"), seed=11)
        trained = nf.train(net, data, cfg)
        # held-out start, 5 seconds, against the closed form
        traj = nf.rollout(trained, [0.8], 250, 0.02)
        truth = 0.8 * np.exp(-traj.times)
        rmse = math.sqrt(float(np.mean((traj.samples[:, 0] - truth) ** 2)))
        assert rmse < 0.05

    def test_deterministic(self):
        data = linear_decay_dataset(n=6)
        cfg = nf.TrainConfig(
            learning_rate=0.01, epochs=3, batch_size=3, horizon=20, dt=0.02, seed=2
        )
        net = nf.init_mlp((1, 4, 1), leaky(), seed=2)
        a = nf.train(net.copy(), data, cfg)
        b = nf.train(net.copy(), data, cfg)
        for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
            assert np.array_equal(wa, wb)

    def test_biases_only_preserves_weights_bitwise(self):
        data = linear_decay_dataset(n=6)
        cfg = nf.TrainConfig(
            learning_rate=0.01,
            epochs=3,
            batch_size=3,
            horizon=20,
            dt=0.02,
            seed=3,
            trainable=nf.TRAINABLE_BIASES,
        )
        net = nf.init_mlp((1, 4, 1), leaky(), seed=3)
        for b in net.biases:
            b[:] = 0.05
        before = [w.copy() for w in net.weights]
        trained = nf.train(net, data, cfg)
        for wb, wa in zip(before, trained.weights):
            assert np.array_equal(wb, wa)
        assert any(
            not np.array_equal(x, y) for x, y in zip(net.biases, trained.biases)
        )

    def test_config_validation(self):
        with pytest.raises(ContractError):
            nf.TrainConfig(learning_rate=0.0)
        with pytest.raises(ContractError):
            nf.TrainConfig(horizon=0)
        with pytest.raises(ContractError):
            nf.TrainConfig(trainable="weights_only")
        net = nf.init_mlp((1, 2, 1), leaky(), seed=0)
        with pytest.raises(ContractError):
            nf.train(net, simkit.Dataset([np.zeros((5, 1))], 0.02),
                     nf.TrainConfig(horizon=10))


class TestModelFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        net = nf.init_mlp((4, 16, 4), leaky(0.2), seed=9)
        rng = np.random.default_rng(9)
        for b in net.biases:
            b[:] = rng.standard_normal(b.shape)
        p1 = tmp_path / "net.json"
        p2 = tmp_path / "net2.json"
        nf.save_model(p1, net)
        back = nf.load_model(p1)
        assert back.layer_dims == net.layer_dims
        assert back.activations == net.activations
        for a, b in zip(back.weights + back.biases, net.weights + net.biases):
            assert np.array_equal(a, b)
        nf.save_model(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_bad_files(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{\"format\": \"other\"}")
        with pytest.raises(DataError):
            nf.load_model(p)
        p.write_text("not json")
        with pytest.raises(DataError):
            nf.load_model(p)
        net = nf.init_mlp((1, 2, 1), leaky(), seed=0)
        nf.save_model(p, net)
        import json as _json

        doc = _json.loads(p.read_text())
        del doc["weights"]
        p.write_text(_json.dumps(doc))
        with pytest.raises(DataError):
            nf.load_model(p)
        nf.save_model(p, net)
        doc3 = _json.loads(p.read_text())
        doc3["layer_dims"] = [1, 2, 2]
        p.write_text(_json.dumps(doc3))
        with pytest.raises(DataError):
            nf.load_model(p)


class TestEvaluateLoss:
    def test_matches_batch_loss(self):
        data = linear_decay_dataset()
        net = nf.init_mlp((1, 4, 1), nf.activation("tanh"), seed=2)
        cfg = nf.TrainConfig(horizon=50, dt=0.02)
        val = nf.evaluate_loss(net, data, cfg)
        batch_val, _grads = nf.loss_and_gradient(net, data.collections, cfg)
        assert val == pytest.approx(batch_val, rel=1e-12)

    def test_validates_inputs(self):
        data = linear_decay_dataset(length=20)
        net = nf.init_mlp((1, 4, 1), nf.activation("tanh"), seed=2)
        with pytest.raises(ContractError):
            nf.evaluate_loss(net, data, nf.TrainConfig(horizon=50, dt=0.02))
        with pytest.raises(ContractError):
            nf.evaluate_loss(net, "nope", nf.TrainConfig(horizon=5, dt=0.02))
