"""Small fully connected networks with explicit reverse-mode gradients.

Parameters live in one flat float64 vector so training loops, checkpoints
and finite-difference checks all share a single layout.  A scalar step
index is embedded as sinusoidal features appended to the input, which is
how both the interpolator and the forecaster condition on time.
"""

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetSpec:
    """Architecture of one MLP head."""

    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "tanh"
    time_embed_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if len(self.hidden_dims) < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"activation must be tanh or relu, got {self.activation!r}")
        if self.time_embed_dim < 0:
            raise ValueError("time_embed_dim must be >= 0")

    def layer_sizes(self):
        return [self.input_dim + self.time_embed_dim, *self.hidden_dims, self.output_dim]


def param_layout(net):
    """(shape, offset) pairs for W0, b0, W1, b1, ... in the flat vector."""
    sizes = net.layer_sizes()
    layout = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        layout.append(((fan_out, fan_in), offset))
        offset += fan_out * fan_in
        layout.append(((fan_out,), offset))
        offset += fan_out
    return layout, offset


def param_count(net):
    return param_layout(net)[1]


def unpack(net, params):
    """Views of the flat vector as [(W, b), ...] per layer."""
    layout, total = param_layout(net)
    if params.shape != (total,):
        raise ValueError(f"expected {total} parameters, got {params.shape}")
    out = []
    for i in range(0, len(layout), 2):
        (w_shape, w_off), (b_shape, b_off) = layout[i], layout[i + 1]
        W = params[w_off : w_off + w_shape[0] * w_shape[1]].reshape(w_shape)
        b = params[b_off : b_off + b_shape[0]]
        out.append((W, b))
    return out


def init_params(net, seed):
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(net))
    for W, b in unpack(net, params):
        fan_out, fan_in = W.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        b[...] = 0.0
    return params


def time_embedding(index, dim):
    """Sinusoidal features of a scalar index (or a batch of indices)."""
    if dim == 0:
        index = np.asarray(index, dtype=np.float64)
        shape = index.shape + (0,)
        return np.zeros(shape)
    index = np.asarray(index, dtype=np.float64)
    m = np.arange(dim)
    freqs = 1.0 / (10000.0 ** (2.0 * (m // 2) / dim))
    phase = index[..., None] * freqs
    return np.where(m % 2 == 0, np.sin(phase), np.cos(phase))


@dataclass
class Tape:
    """Primal values recorded by one forward pass; consumable exactly once."""

    net: NetSpec
    inputs: list          # per-layer inputs, each (B, fan_in)
    preacts: list         # hidden pre-activations, each (B, width)
    batched: bool
    consumed: bool = False


def _activate(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _activate_grad(z, kind):
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def forward(net, params, x, index):
    """Evaluate the network; returns (output, tape).

    ``x`` may be a single vector (input_dim,) or a batch (B, input_dim);
    ``index`` a scalar or a length-B array of per-row indices.
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    X = x if batched else x[np.newaxis]
    if X.shape[1] != net.input_dim:
        raise ValueError(f"input length {X.shape[1]} != input_dim {net.input_dim}")
    emb = time_embedding(index, net.time_embed_dim)
    if emb.ndim == 1:
        emb = np.broadcast_to(emb, (X.shape[0], net.time_embed_dim))
    elif emb.shape[0] != X.shape[0]:
        raise ValueError("per-row index count must match the batch size")
    X = np.concatenate([X, emb], axis=1)

    layers = unpack(net, params)
    inputs, preacts = [], []
    for li, (W, b) in enumerate(layers):
        inputs.append(X)
        Z = X @ W.T + b
        if li < len(layers) - 1:
            preacts.append(Z)
            X = _activate(Z, net.activation)
        else:
            X = Z
    tape = Tape(net=net, inputs=inputs, preacts=preacts, batched=batched)
    return (X if batched else X[0]), tape


def backward(params, tape, output_adjoint):
    """Exact gradients of <output_adjoint, output> w.r.t. params and input.

    Returns (param_grad, input_grad); input_grad covers only the data part
    of the input, not the appended index embedding.  The tape is consumed.
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    tape.consumed = True
    net = tape.net
    gy = np.asarray(output_adjoint, dtype=np.float64)
    delta = gy if gy.ndim == 2 else gy[np.newaxis]
    if delta.shape != (tape.inputs[0].shape[0], net.output_dim):
        raise ValueError("output adjoint shape does not match the forward pass")

    layers = unpack(net, params)
    grad = np.zeros_like(params)
    glayers = unpack(net, grad)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW, gb = glayers[li]
        X = tape.inputs[li]
        gW += delta.T @ X
        gb += delta.sum(axis=0)
        gX = delta @ W
        if li > 0:
            delta = gX * _activate_grad(tape.preacts[li - 1], net.activation)
    input_grad = gX[:, : net.input_dim]
    if not tape.batched:
        input_grad = input_grad[0]
    return grad, input_grad


def sgd_step(params, grad, lr, momentum, velocity=None):
    """Heavy-ball update; returns (new_params, new_velocity)."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    if not np.all(np.isfinite(grad)):
        raise ValueError("nonfinite gradient entries; step rejected")
    if velocity is None:
        velocity = np.zeros_like(params)
    velocity = momentum * velocity - lr * grad
    return params + velocity, velocity


def save_checkpoint(path, net, params):
    """Header line with the architecture, then the flat little-endian f64 array."""
    header = json.dumps(
        {
            "input_dim": net.input_dim,
            "hidden_dims": list(net.hidden_dims),
            "output_dim": net.output_dim,
            "activation": net.activation,
            "time_embed_dim": net.time_embed_dim,
        },
        sort_keys=True,
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(params, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path}: empty checkpoint file")
        try:
            meta = json.loads(header.decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: malformed checkpoint header") from exc
        net = NetSpec(
            input_dim=meta["input_dim"],
            hidden_dims=tuple(meta["hidden_dims"]),
            output_dim=meta["output_dim"],
            activation=meta["activation"],
            time_embed_dim=meta["time_embed_dim"],
        )
        payload = fh.read()
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if params.size != param_count(net):
        raise ValueError(
            f"{path}: payload holds {params.size} floats, expected {param_count(net)}"
        )
    return net, params
