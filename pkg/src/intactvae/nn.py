"""Dense feed-forward networks with hand-written reverse-mode gradients and Adam.

Networks operate on row-batched inputs of shape ``(batch, in_dim)``; a 1-d
input is treated as a batch of one and the output is returned 1-d as well.
Weights are stored as ``(in_dim, out_dim)`` so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity", "invertible_smooth")


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "identity":
        return a
    if name == "invertible_smooth":
        return a + np.tanh(a)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (a > 0.0).astype(a.dtype)
    if name == "identity":
        return np.ones_like(a)
    if name == "invertible_smooth":
        return 2.0 - np.tanh(a) ** 2
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Fully connected network.

    ``activation`` is applied after every hidden layer. The output layer is
    linear unless ``activate_output`` is set. With ``positive_weights`` the
    effective weights are ``|W|``, which together with a monotone activation
    makes a scalar-to-scalar network strictly increasing.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        activation: str = "relu",
        seed: int = 0,
        *,
        activate_output: bool = False,
        positive_weights: bool = False,
        dtype=np.float64,
    ):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"layer_sizes must hold at least two positive sizes, got {layer_sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")
        self.layer_sizes = sizes
        self.activation = activation
        self.seed = int(seed)
        self.activate_output = activate_output
        self.positive_weights = positive_weights
        self.dtype = np.dtype(dtype)

        rng = np.random.default_rng(self.seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Mlp":
        new = object.__new__(Mlp)
        new.__dict__.update(self.__dict__)
        new.layer_sizes = list(self.layer_sizes)
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def astype(self, dtype) -> "Mlp":
        new = self.copy()
        new.dtype = np.dtype(dtype)
        new.weights = [w.astype(dtype) for w in new.weights]
        new.biases = [b.astype(dtype) for b in new.biases]
        return new

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        values = list(values)
        if len(values) != 2 * self.n_layers:
            raise ValueError(f"expected {2 * self.n_layers} arrays, got {len(values)}")
        for i in range(self.n_layers):
            w, b = np.asarray(values[2 * i]), np.asarray(values[2 * i + 1])
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError(f"layer {i}: shape mismatch")
            self.weights[i] = w.astype(self.dtype, copy=True)
            self.biases[i] = b.astype(self.dtype, copy=True)

    def _effective(self, w: np.ndarray) -> np.ndarray:
        return np.abs(w) if self.positive_weights else w

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"input has shape {np.shape(x)}, network expects last dimension {self.in_dim}"
            )
        return x, squeeze

    def forward(self, x, *, return_tape: bool = False):
        """Evaluate the network. With ``return_tape`` also return what
        :meth:`backward` needs."""
        h, squeeze = self._check_input(x)
        tape = []
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ self._effective(w) + b
            tape.append((h, a))
            if i < last or self.activate_output:
                h = _act(self.activation, a)
            else:
                h = a
        out = h[0] if squeeze else h
        if return_tape:
            return out, (tape, squeeze)
        return out

    __call__ = forward

    def backward(self, tape, cotangent) -> tuple[list[np.ndarray], np.ndarray]:
        """Vector-Jacobian product.

        Returns ``(param_grads, input_grad)`` where ``param_grads`` follows
        :meth:`params` order and holds d(sum cotangent * output)/d(param),
        summed over the batch.
        """
        layers, squeeze = tape
        g = np.asarray(cotangent, dtype=self.dtype)
        if squeeze:
            g = g[None, :]
        batch = layers[0][0].shape[0]
        if g.shape != (batch, self.out_dim):
            raise ValueError(f"cotangent has shape {np.shape(cotangent)}, expected output shape")
        grads: list[np.ndarray] = [None] * (2 * self.n_layers)  # type: ignore[list-item]
        last = self.n_layers - 1
        for i in range(last, -1, -1):
            h_in, a = layers[i]
            if i < last or self.activate_output:
                g = g * _act_grad(self.activation, a)
            w = self.weights[i]
            gw = h_in.T @ g
            if self.positive_weights:
                gw = gw * np.sign(w)
            grads[2 * i] = gw
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self._effective(w).T
        return grads, (g[0] if squeeze else g)


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def mlp_backward(net: Mlp, x, cotangent) -> tuple[list[np.ndarray], np.ndarray]:
    _, tape = net.forward(x, return_tape=True)
    return net.backward(tape, cotangent)


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
        return state


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """One bias-corrected Adam descent step, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads and optimizer state must have the same length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != np.shape(g):
            raise ValueError(f"param {i}: shape {p.shape} vs gradient shape {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient in param {i} ({bad} entries)")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step_count
    c2 = 1.0 - b2**state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


@dataclass
class GradCheckReport:
    passed: bool
    worst_relative_error: float
    worst_param: int
    worst_index: tuple
    tolerance: float


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def grad_check(net: Mlp, x, tolerance: float = 1e-4, step: float = 1e-5, *, grads=None, seed: int = 0) -> GradCheckReport:
    """Compare :func:`mlp_backward` against central differences of
    ``sum(c * net(x))`` for a fixed random cotangent ``c``.

    ``grads`` may be passed to check a precomputed (possibly corrupted)
    gradient list instead of recomputing it.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    net = net.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    out = net.forward(x)
    c = np.random.default_rng(seed).standard_normal(np.shape(out))
    if grads is None:
        grads, _ = mlp_backward(net, x, c)

    def objective() -> float:
        return float(np.sum(c * net.forward(x)))

    worst, worst_p, worst_idx = 0.0, -1, ()
    for k, p in enumerate(net.params()):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = objective()
            p[idx] = orig - step
            down = objective()
            p[idx] = orig
            numeric = (up - down) / (2 * step)
            err = float(relative_error(grads[k][idx], numeric))
            if err > worst:
                worst, worst_p, worst_idx = err, k, idx
    return GradCheckReport(worst <= tolerance, worst, worst_p, worst_idx, tolerance)


# Parameter record format (text):
#   line 1: "mlp <activation> <activate_output:0|1> <positive_weights:0|1>"
#   line 2: layer sizes, space separated
#   then one line per parameter array in params() order, row-major, %.17g
def dump_params(net: Mlp) -> str:
    lines = [
        f"mlp {net.activation} {int(net.activate_output)} {int(net.positive_weights)}",
        " ".join(str(s) for s in net.layer_sizes),
    ]
    for p in net.params():
        lines.append(" ".join("%.17g" % v for v in np.asarray(p, dtype=np.float64).ravel()))
    return "\n".join(lines) + "\n"


def load_params(lines: Sequence[str], dtype=np.float64) -> Mlp:
    """Inverse of :func:`dump_params`; ``lines`` is the record split into lines."""
    head = lines[0].split()
    if head[0] != "mlp":
        raise ValueError(f"not an mlp record: {lines[0]!r}")
    sizes = [int(s) for s in lines[1].split()]
    net = Mlp(sizes, head[1], activate_output=bool(int(head[2])), positive_weights=bool(int(head[3])), dtype=dtype)
    values = []
    for k, p in enumerate(net.params()):
        row = lines[2 + k].split()
        values.append(np.array([float(v) for v in row], dtype=np.float64).reshape(p.shape))
    net.set_params(values)
    return net


def record_length(net_or_sizes) -> int:
    """Number of text lines :func:`dump_params` emits."""
    sizes = net_or_sizes.layer_sizes if isinstance(net_or_sizes, Mlp) else net_or_sizes
    return 2 + 2 * (len(sizes) - 1)
