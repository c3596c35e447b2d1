"""Dense tanh networks with hand-written reverse mode, Adam, and a diagonal Gaussian head.

Everything is float64 numpy. Weight matrices are stored ``(input_width, output_width)``
so a batch ``x`` of shape ``(B, input_width)`` maps through ``x @ W + b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from hierppo.errors import ConfigurationError, InputError

TANH = "tanh"
IDENTITY = "identity"
ACTIVATIONS = (TANH, IDENTITY)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: str = TANH

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1:
            raise ConfigurationError(f"layer widths must be >= 1, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")


def mlp_specs(input_width, hidden_width, hidden_layers, output_width):
    """Layer specs for ``hidden_layers`` tanh layers followed by a linear output layer."""
    specs = []
    width = input_width
    for _ in range(hidden_layers):
        specs.append(LayerSpec(width, hidden_width, TANH))
        width = hidden_width
    specs.append(LayerSpec(width, output_width, IDENTITY))
    return tuple(specs)


def _check_chain(specs):
    if not specs:
        raise ConfigurationError("a network needs at least one layer")
    for prev, nxt in zip(specs[:-1], specs[1:]):
        if prev.output_width != nxt.input_width:
            raise ConfigurationError(
                f"layer widths do not chain: {prev.output_width} -> {nxt.input_width}"
            )
    if specs[-1].activation != IDENTITY:
        raise ConfigurationError("the output layer must be linear")


@dataclass
class NetworkParameters:
    """Weights and biases of a dense network, plus ``log_std`` for policy networks.

    The same container is used for gradients and for Adam moments.
    """

    specs: tuple
    weights: list
    biases: list
    log_std: np.ndarray | None = None

    def __post_init__(self):
        self.specs = tuple(self.specs)
        _check_chain(self.specs)
        if len(self.weights) != len(self.specs) or len(self.biases) != len(self.specs):
            raise ConfigurationError("one weight matrix and bias vector per layer")
        for spec, w, b in zip(self.specs, self.weights, self.biases):
            if w.shape != (spec.input_width, spec.output_width) or b.shape != (spec.output_width,):
                raise ConfigurationError(
                    f"parameter shapes {w.shape}/{b.shape} do not match {spec}"
                )

    @property
    def input_width(self):
        return self.specs[0].input_width

    @property
    def output_width(self):
        return self.specs[-1].output_width

    def arrays(self):
        """All arrays in a fixed order: w0, b0, w1, b1, ..., [log_std]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        if self.log_std is not None:
            out.append(self.log_std)
        return out

    def with_arrays(self, arrays):
        arrays = list(arrays)
        n = len(self.specs)
        log_std = arrays[2 * n] if self.log_std is not None else None
        return NetworkParameters(self.specs, arrays[0:2 * n:2], arrays[1:2 * n:2], log_std)

    def copy(self):
        return self.with_arrays(a.copy() for a in self.arrays())

    def zeros_like(self):
        return self.with_arrays(np.zeros_like(a) for a in self.arrays())

    def num_parameters(self):
        return sum(a.size for a in self.arrays())

    def is_finite(self):
        return all(np.isfinite(a).all() for a in self.arrays())


def _orthogonal(shape, gain, rng):
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_network(specs, rng, output_gain=1.0, hidden_gain=math.sqrt(2.0), action_dim=None,
                 log_std_init=0.0):
    """Orthogonal weights, zero biases; ``action_dim`` adds a state-independent log_std."""
    specs = tuple(specs)
    _check_chain(specs)
    weights, biases = [], []
    for i, spec in enumerate(specs):
        gain = output_gain if i == len(specs) - 1 else hidden_gain
        weights.append(_orthogonal((spec.input_width, spec.output_width), gain, rng))
        biases.append(np.zeros(spec.output_width))
    log_std = None
    if action_dim is not None:
        log_std = np.full(action_dim, float(log_std_init))
    return NetworkParameters(specs, weights, biases, log_std)


@dataclass
class GradientTape:
    """Per-layer inputs and the output, enough to replay the chain rule."""

    params: NetworkParameters
    activations: list = field(default_factory=list)
    vector_input: bool = False


def forward(params, x):
    """Run the network on one input vector or a ``(B, input_width)`` batch."""
    x = np.asarray(x, dtype=np.float64)
    vector_input = x.ndim == 1
    if vector_input:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_width:
        raise ConfigurationError(
            f"input width {x.shape[-1]} does not match network input {params.input_width}"
        )
    if not np.isfinite(x).all():
        raise InputError("non-finite network input")
    activations = [x]
    h = x
    for spec, w, b in zip(params.specs, params.weights, params.biases):
        h = h @ w + b
        if spec.activation == TANH:
            h = np.tanh(h)
        activations.append(h)
    if not np.isfinite(h).all():
        raise InputError("network produced non-finite output")
    tape = GradientTape(params, activations, vector_input)
    return (h[0] if vector_input else h), tape


def backward(tape, output_gradient, log_std_gradient=None):
    """Gradients of a scalar loss w.r.t. every parameter, given dL/d(output).

    For a batch, ``output_gradient`` has one row per sample and the parameter
    gradients are summed over the batch.
    """
    params = tape.params
    g = np.asarray(output_gradient, dtype=np.float64)
    if tape.vector_input and g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.activations[-1].shape:
        raise ConfigurationError(
            f"output gradient shape {g.shape} does not match output {tape.activations[-1].shape}"
        )
    n = len(params.specs)
    grad_w = [None] * n
    grad_b = [None] * n
    for i in range(n - 1, -1, -1):
        if params.specs[i].activation == TANH:
            out = tape.activations[i + 1]
            g = g * (1.0 - out * out)
        grad_w[i] = tape.activations[i].T @ g
        grad_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
    grad_log_std = None
    if params.log_std is not None:
        if log_std_gradient is None:
            grad_log_std = np.zeros_like(params.log_std)
        else:
            grad_log_std = np.asarray(log_std_gradient, dtype=np.float64).reshape(params.log_std.shape)
    return NetworkParameters(params.specs, grad_w, grad_b, grad_log_std)


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays()))


def clip_by_global_norm(grads, max_norm):
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``. Returns (grads, norm)."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return grads.with_arrays(a * scale for a in grads.arrays()), norm


@dataclass
class AdamState:
    first_moment: NetworkParameters
    second_moment: NetworkParameters
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(params.zeros_like(), params.zeros_like(), 0, beta1, beta2, epsilon)


def adam_step(params, gradients, state, learning_rate):
    """One bias-corrected Adam update. Inputs are not modified."""
    if learning_rate < 0:
        raise ConfigurationError("learning rate must be non-negative")
    p_arrays = params.arrays()
    g_arrays = gradients.arrays()
    m_arrays = state.first_moment.arrays()
    v_arrays = state.second_moment.arrays()
    if [a.shape for a in p_arrays] != [a.shape for a in g_arrays] or \
            [a.shape for a in p_arrays] != [a.shape for a in m_arrays]:
        raise ConfigurationError("gradient / moment shapes do not mirror the parameters")
    if not gradients.is_finite():
        raise InputError("non-finite gradient; Adam update rejected")

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, m_arrays, v_arrays):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    updated = params.with_arrays(new_p)
    if updated.log_std is not None:
        updated.log_std = np.clip(updated.log_std, LOG_STD_MIN, LOG_STD_MAX)
    new_state = replace(
        state,
        first_moment=state.first_moment.with_arrays(new_m),
        second_moment=state.second_moment.with_arrays(new_v),
        step_count=t,
    )
    return updated, new_state


def _check_lengths(*arrays):
    last = {np.shape(a)[-1] for a in arrays}
    if len(last) != 1:
        raise ConfigurationError("mean, log_std and action must have equal lengths")


def gaussian_log_prob(mean, log_std, action):
    """Log density of a diagonal Gaussian, summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    _check_lengths(mean, log_std, action)
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def gaussian_log_prob_grads(mean, log_std, action):
    """Per-sample derivatives of ``gaussian_log_prob`` w.r.t. mean and log_std."""
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    inv_std = np.exp(-log_std)
    z = (action - mean) * inv_std
    return z * inv_std, z * z - 1.0


def gaussian_sample(mean, log_std, rng):
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    _check_lengths(mean, log_std)
    return mean + np.exp(log_std) * rng.standard_normal(mean.shape)


def gaussian_entropy(log_std):
    log_std = np.asarray(log_std, dtype=np.float64)
    if not np.isfinite(log_std).all():
        raise InputError("non-finite log_std")
    return float(np.sum(log_std + _HALF_LOG_2PIE))
