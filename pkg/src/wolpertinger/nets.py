"""Dense feed-forward networks with hand-written analytic gradients.

Everything runs in float64 on plain numpy arrays. The topology is fixed: a
stack of fully-connected layers with ReLU or tanh hidden units, and either a
linear output or a tanh output rescaled into a per-dimension box (used by
actors whose outputs must stay inside the action-embedding bounding box).

`forward` and `backward` accept a single input vector or a batch of row
vectors. Gradients are exact; a finite-difference cross-check lives in the
test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh_box")

SNAPSHOT_MAGIC = b"WOLP"
SNAPSHOT_VERSION = 1


@dataclass
class Mlp:
    """Parameter container for a fully-connected network.

    ``weights[i]`` has shape ``(layer_sizes[i+1], layer_sizes[i])`` and
    ``biases[i]`` shape ``(layer_sizes[i+1],)``. With ``output_activation ==
    "tanh_box"`` the final tanh is rescaled so outputs lie in
    ``[output_low, output_high]`` per dimension.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    output_low: np.ndarray | None = None
    output_high: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("parameter list lengths do not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != want or b.shape != (want[0],):
                raise ValueError(f"layer {i}: weight shape {w.shape}, bias shape {b.shape}, expected {want}")
        if self.output_activation == "tanh_box":
            if self.output_low is None or self.output_high is None:
                raise ValueError("tanh_box output requires output_low and output_high")
            self.output_low = np.asarray(self.output_low, dtype=np.float64).reshape(self.output_dim)
            self.output_high = np.asarray(self.output_high, dtype=np.float64).reshape(self.output_dim)
            if np.any(self.output_high < self.output_low):
                raise ValueError("output_high must be >= output_low")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)


@dataclass
class GradientBundle:
    """Gradients shape-matched to an Mlp, plus the gradient w.r.t. the input.

    For batched inputs the parameter gradients are summed over the batch
    (callers fold any 1/N into ``output_grad``); ``input_grad`` keeps one row
    per input sample.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_grad: np.ndarray

    def norm(self) -> float:
        """Global L2 norm over all parameter gradients."""
        total = 0.0
        for w in self.weights:
            total += float(np.sum(w * w))
        for b in self.biases:
            total += float(np.sum(b * b))
        return float(np.sqrt(total))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.weights) and all(
            np.all(np.isfinite(a)) for a in self.biases
        )


def init_mlp(
    layer_sizes,
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
    output_low=None,
    output_high=None,
) -> Mlp:
    """Build an Mlp with parameters uniform in +-1/sqrt(fan_in)."""
    sizes = tuple(int(s) for s in layer_sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        hidden_activation=hidden_activation,
        output_activation=output_activation,
        output_low=output_low,
        output_high=output_high,
    )


def clone_mlp(net: Mlp) -> Mlp:
    return Mlp(
        layer_sizes=net.layer_sizes,
        weights=[w.copy() for w in net.weights],
        biases=[b.copy() for b in net.biases],
        hidden_activation=net.hidden_activation,
        output_activation=net.output_activation,
        output_low=None if net.output_low is None else net.output_low.copy(),
        output_high=None if net.output_high is None else net.output_high.copy(),
    )


def _as_batch(x, dim: int, name: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} has shape {np.shape(x)}, expected (..., {dim})")
    return arr, single


def _hidden(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _hidden_deriv(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _output_value(net: Mlp, z: np.ndarray) -> np.ndarray:
    if net.output_activation == "identity":
        return z
    center = 0.5 * (net.output_high + net.output_low)
    half = 0.5 * (net.output_high - net.output_low)
    return center + half * np.tanh(z)


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network on an input vector or a batch of rows.

    Pure: does not touch the network's state. Same input, same output.
    """
    a, single = _as_batch(x, net.input_dim, "input")
    last = net.num_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = _hidden(z, net.hidden_activation) if i < last else _output_value(net, z)
    return a[0] if single else a


def backward(net: Mlp, x, output_grad) -> GradientBundle:
    """Exact gradients of ``sum_b output_b . output_grad_b``.

    Recomputes the forward pass internally. Parameter gradients are summed
    over the batch; ``input_grad`` has one row per sample (squeezed for a
    single vector input).
    """
    a, single = _as_batch(x, net.input_dim, "input")
    g, gsingle = _as_batch(output_grad, net.output_dim, "output_grad")
    if single != gsingle or g.shape[0] != a.shape[0]:
        raise ValueError("output_grad batch shape does not match input")

    acts = [a]
    zs = []
    last = net.num_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w.T + b
        zs.append(z)
        acts.append(_hidden(z, net.hidden_activation) if i < last else _output_value(net, z))

    if net.output_activation == "identity":
        dz = g
    else:
        half = 0.5 * (net.output_high - net.output_low)
        t = np.tanh(zs[-1])
        dz = g * half * (1.0 - t * t)

    d_weights: list[np.ndarray] = [None] * net.num_layers  # type: ignore[list-item]
    d_biases: list[np.ndarray] = [None] * net.num_layers  # type: ignore[list-item]
    for i in range(last, -1, -1):
        d_weights[i] = dz.T @ acts[i]
        d_biases[i] = dz.sum(axis=0)
        da = dz @ net.weights[i]
        if i > 0:
            dz = da * _hidden_deriv(zs[i - 1], net.hidden_activation)
        else:
            d_input = da
    return GradientBundle(d_weights, d_biases, d_input[0] if single else d_input)


@dataclass
class AdamState:
    """First-order adaptive optimizer state for one Mlp."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)


def adam_state(net: Mlp, learning_rate: float) -> AdamState:
    state = AdamState(learning_rate=learning_rate)
    state.m_weights = [np.zeros_like(w) for w in net.weights]
    state.v_weights = [np.zeros_like(w) for w in net.weights]
    state.m_biases = [np.zeros_like(b) for b in net.biases]
    state.v_biases = [np.zeros_like(b) for b in net.biases]
    return state


def optimizer_step(net: Mlp, grads: GradientBundle, state: AdamState) -> Mlp:
    """One Adam step in place; returns the updated net.

    Raises RuntimeError on non-finite gradients so callers can abort a run
    with the log intact rather than poisoning the parameters.
    """
    if not grads.is_finite():
        raise RuntimeError("non-finite gradient in optimizer_step")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    scale = state.learning_rate * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for params, gs, ms, vs in (
        (net.weights, grads.weights, state.m_weights, state.v_weights),
        (net.biases, grads.biases, state.m_biases, state.v_biases),
    ):
        for p, g, m, v in zip(params, gs, ms, vs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= scale * m / (np.sqrt(v) + state.epsilon)
            if not np.all(np.isfinite(p)):
                raise RuntimeError("non-finite parameter after optimizer_step")
    return net


def soft_update(target: Mlp, source: Mlp, tau: float) -> Mlp:
    """target <- tau * source + (1 - tau) * target, elementwise, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if target.layer_sizes != source.layer_sizes:
        raise ValueError(
            f"architecture mismatch: {target.layer_sizes} vs {source.layer_sizes}"
        )
    for tp, sp in zip(target.weights, source.weights):
        tp *= 1.0 - tau
        tp += tau * sp
    for tp, sp in zip(target.biases, source.biases):
        tp *= 1.0 - tau
        tp += tau * sp
    return target


def save_params(net: Mlp, path) -> None:
    """Write a flat binary snapshot: "WOLP" magic, u32 version, u32 layer
    count, u32 layer sizes, then per layer the weight matrix (row-major) and
    bias vector as little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", SNAPSHOT_VERSION))
        fh.write(struct.pack("<I", len(net.layer_sizes)))
        fh.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(
    path,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
    output_low=None,
    output_high=None,
) -> Mlp:
    """Read a snapshot written by save_params.

    Activations and output bounds are not part of the binary format; callers
    supply them (checkpoint manifests carry them alongside)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    (n_sizes,) = struct.unpack_from("<I", blob, 8)
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, 12)
    off = 12 + 4 * n_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_out * fan_in, offset=off)
        off += 8 * fan_out * fan_in
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return Mlp(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        hidden_activation=hidden_activation,
        output_activation=output_activation,
        output_low=output_low,
        output_high=output_high,
    )


def params_digest(net: Mlp) -> bytes:
    """Stable digest of the parameter values (used to assert evaluation does
    not mutate a policy)."""
    import hashlib

    h = hashlib.sha256()
    for w, b in zip(net.weights, net.biases):
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return h.digest()
