import numpy as np
import pytest

from pdyffusion.nets import (
    NetSpec,
    backward,
    forward,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
    sgd_step,
    time_embedding,
    unpack,
)


def oracle_forward(net, params, x, index):
    """From-scratch forward pass used as an independent oracle."""
    feats = list(np.asarray(x, dtype=float))
    emb = time_embedding(index, net.time_embed_dim)
    feats = np.array(feats + list(emb))
    layers = unpack(net, params)
    for li, (W, b) in enumerate(layers):
        z = np.array([np.dot(W[r], feats) + b[r] for r in range(W.shape[0])])
        if li < len(layers) - 1:
            feats = np.tanh(z) if net.activation == "tanh" else np.maximum(z, 0.0)
        else:
            feats = z
    return feats


def fd_param_grad(scalar_fn, params, h=1e-5):
    g = np.zeros_like(params)
    for i in range(params.size):
        up = params.copy()
        dn = params.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (scalar_fn(up) - scalar_fn(dn)) / (2.0 * h)
    return g


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-10)
    return np.max(np.abs(a - b) / denom)


class TestForward:
    def test_zero_params_zero_output(self):
        for act in ["relu", "tanh"]:
            net = NetSpec(4, (5,), 3, activation=act, time_embed_dim=2)
            y, _ = forward(net, np.zeros(param_count(net)), np.ones(4), 1.0)
            assert np.all(y == 0.0)

    def test_deterministic(self):
        net = NetSpec(6, (8, 8), 4, time_embed_dim=4)
        params = init_params(net, seed=0)
        x = np.random.default_rng(1).standard_normal(6)
        y1, _ = forward(net, params, x, 3.0)
        y2, _ = forward(net, params, x, 3.0)
        assert np.array_equal(y1, y2)

    @pytest.mark.parametrize("act", ["tanh", "relu"])
    def test_matches_matrix_multiply_oracle(self, act):
        net = NetSpec(5, (7, 6), 4, activation=act, time_embed_dim=3)
        params = init_params(net, seed=3)
        x = np.random.default_rng(4).standard_normal(5)
        y, _ = forward(net, params, x, 2.0)
        assert np.allclose(y, oracle_forward(net, params, x, 2.0), atol=1e-12)

    def test_batched_matches_single(self):
        net = NetSpec(5, (7,), 2, time_embed_dim=4)
        params = init_params(net, seed=6)
        X = np.random.default_rng(7).standard_normal((3, 5))
        idx = np.array([0.0, 1.0, 2.0])
        Y, _ = forward(net, params, X, idx)
        for r in range(3):
            y, _ = forward(net, params, X[r], idx[r])
            assert np.allclose(Y[r], y, atol=1e-15)

    def test_dimension_mismatch(self):
        net = NetSpec(4, (5,), 3)
        with pytest.raises(ValueError):
            forward(net, np.zeros(param_count(net)), np.ones(5), 0.0)


class TestBackward:
    def test_zero_adjoint_zero_grads(self):
        net = NetSpec(4, (6,), 3, time_embed_dim=2)
        params = init_params(net, seed=0)
        _, tape = forward(net, params, np.ones(4), 1.0)
        g, gx = backward(params, tape, np.zeros(3))
        assert np.all(g == 0.0) and np.all(gx == 0.0)

    def test_one_layer_linear_outer_product(self):
        # single "hidden" layer of the final linear map: use a 1-hidden relu net
        # with positive preactivations so it acts linearly on this input
        net = NetSpec(3, (4,), 2, activation="relu", time_embed_dim=0)
        params = np.abs(init_params(net, seed=1)) + 0.1
        x = np.array([0.5, 1.0, 2.0])
        _, tape = forward(net, params, x, 0.0)
        adj = np.array([1.0, -2.0])
        g, _ = backward(params, tape, adj)
        (W0, b0), (W1, b1) = unpack(net, params)
        (gW0, gb0), (gW1, gb1) = unpack(net, g)
        h = W0 @ x + b0  # all positive, relu transparent
        assert np.allclose(gW1, np.outer(adj, h), atol=1e-12)
        assert np.allclose(gb1, adj, atol=1e-15)

    def test_tape_reuse_rejected(self):
        net = NetSpec(3, (4,), 2)
        params = init_params(net, seed=2)
        _, tape = forward(net, params, np.ones(3), 0.0)
        backward(params, tape, np.ones(2))
        with pytest.raises(RuntimeError):
            backward(params, tape, np.ones(2))

    @pytest.mark.parametrize("seed", range(5))
    def test_param_grad_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = NetSpec(
            int(rng.integers(2, 6)),
            tuple(rng.integers(3, 8, size=rng.integers(1, 3))),
            int(rng.integers(1, 4)),
            activation="tanh",
            time_embed_dim=int(rng.integers(0, 5)),
        )
        params = init_params(net, seed=seed + 100)
        x = rng.standard_normal(net.input_dim)
        adj = rng.standard_normal(net.output_dim)

        def scalar(p):
            y, _ = forward(net, p, x, 1.5)
            return float(adj @ y)

        _, tape = forward(net, params, x, 1.5)
        g, _ = backward(params, tape, adj)
        assert rel_err(g, fd_param_grad(scalar, params)) < 1e-4

    def test_input_grad_matches_central_differences(self):
        net = NetSpec(4, (6, 5), 3, activation="tanh", time_embed_dim=3)
        rng = np.random.default_rng(8)
        params = init_params(net, seed=8)
        x = rng.standard_normal(4)
        adj = rng.standard_normal(3)
        _, tape = forward(net, params, x, 2.0)
        _, gx = backward(params, tape, adj)
        h = 1e-5
        fd = np.zeros(4)
        for i in range(4):
            up, dn = x.copy(), x.copy()
            up[i] += h
            dn[i] -= h
            yu, _ = forward(net, params, up, 2.0)
            yd, _ = forward(net, params, dn, 2.0)
            fd[i] = (adj @ yu - adj @ yd) / (2 * h)
        assert rel_err(gx, fd) < 1e-4


class TestSgd:
    def test_zero_grad_no_move(self):
        p = np.array([1.0, -2.0])
        q, v = sgd_step(p, np.zeros(2), lr=0.1, momentum=0.5)
        assert np.array_equal(q, p) and np.all(v == 0.0)

    def test_quadratic_single_step(self):
        p = np.array([1.0])
        q, _ = sgd_step(p, p.copy(), lr=0.1, momentum=0.0)
        assert q[0] == pytest.approx(0.9)

    def test_quadratic_hundred_steps_converges(self):
        # scalar recurrence oracle: p_{k+1} = (1 - lr) p_k
        p = np.array([1.0])
        v = None
        for _ in range(100):
            p, v = sgd_step(p, p.copy(), lr=0.1, momentum=0.0, velocity=v)
        assert abs(p[0]) < 1e-4
        assert p[0] == pytest.approx(0.9**100)

    def test_nonfinite_grad_rejected(self):
        with pytest.raises(ValueError):
            sgd_step(np.ones(2), np.array([np.nan, 0.0]), lr=0.1, momentum=0.0)

    def test_loss_descends_on_fixed_regression(self):
        rng = np.random.default_rng(0)
        net = NetSpec(3, (16,), 1, activation="tanh", time_embed_dim=0)
        params = init_params(net, seed=0)
        X = rng.standard_normal((32, 3))
        y = np.sin(X[:, :1].sum(axis=1, keepdims=True))

        def loss_and_grad(p):
            out, tape = forward(net, p, X, 0.0)
            resid = out - y
            g, _ = backward(p, tape, 2.0 * resid / X.shape[0])
            return float(np.mean(resid**2)), g

        loss0, _ = loss_and_grad(params)
        v = None
        for _ in range(200):
            _, g = loss_and_grad(params)
            params, v = sgd_step(params, g, lr=0.05, momentum=0.9, velocity=v)
        loss_end, _ = loss_and_grad(params)
        assert loss_end < loss0


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = NetSpec(5, (7, 3), 2, activation="relu", time_embed_dim=4)
        params = init_params(net, seed=9)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, net, params)
        net2, params2 = load_checkpoint(path)
        assert net2 == net
        assert np.array_equal(params, params2)

    def test_truncated_payload_rejected(self, tmp_path):
        net = NetSpec(5, (7,), 2)
        params = init_params(net, seed=9)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, net, params)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        path.write_bytes(b"")
        with pytest.raises(ValueError):
            load_checkpoint(path)
