"""Small dense MLPs in numpy with hand-written reverse mode.

The networks used here are tiny fully connected ReLU / leaky-ReLU stacks, so
instead of a general autodiff tape we keep explicit per-layer caches and write
the three passes we actually need:

* ``backward`` - gradients w.r.t. parameters and inputs,
* ``grad_wrt_input`` - input gradient of a scalar-output net,
* ``gradient_penalty`` - the one-sided gradient penalty and its parameter
  gradient (a backward pass through the backward pass).

For piecewise-linear activations the input gradient does not depend on the
pre-activation values except through the on/off pattern, so the double
backward pass holds those patterns fixed. That is exact almost everywhere.

Weights are stored ``[out, in]`` and a layer computes ``x @ W.T + b``.
Everything is float64.
"""
import json
from dataclasses import dataclass, field

import numba
import numpy as np

ACTIVATIONS = ("relu", "leaky_relu")
OUTPUT_ACTIVATIONS = ("identity", "logistic")
INIT_SCHEMES = ("he_uniform", "zeros")


class ShapeError(ValueError):
    pass


class CacheError(RuntimeError):
    """A cache was used with a net other than the one that produced it."""


@dataclass(eq=False)
class MLP:
    weights: list
    biases: list
    activation: str = "relu"
    negative_slope: float = 0.1
    dropout: float = 0.0
    output_activation: str = "identity"
    # bumped on every in-place parameter update; used to detect stale caches
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.activation == "leaky_relu" and not 0.0 < self.negative_slope <= 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1]")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer {i}: weight {W.shape} / bias {b.shape} mismatch")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} expects {W.shape[1]} inputs, "
                                 f"previous layer gives {self.weights[i - 1].shape[0]}")

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def d_in(self):
        return self.weights[0].shape[1]

    @property
    def d_out(self):
        return self.weights[-1].shape[0]

    @property
    def n_layers(self):
        return len(self.weights)

    def params(self):
        """Parameters as a flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self):
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.activation, self.negative_slope, self.dropout, self.output_activation)

    def n_params(self):
        return sum(p.size for p in self.params())


def mlp_init(sizes, activation="relu", init="he_uniform", rng=None, dropout=0.0,
             output_activation="identity", negative_slope=0.1):
    """Build an MLP with layer widths ``sizes`` (input first, output last).

    ``init="he_uniform"`` draws each weight from U(-sqrt(6/fan_in), sqrt(6/fan_in))
    with zero biases; ``init="zeros"`` sets every parameter to 0, which leaves a
    ReLU net with vanishing hidden gradients and is only kept for comparison.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3:
        raise ValueError("architecture needs an input, at least one hidden layer and an output")
    if min(sizes) < 1:
        raise ValueError("layer widths must be >= 1")
    if init not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {init!r}")
    if init != "zeros" and rng is None:
        raise ValueError("random init needs an rng")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if init == "zeros":
            W = np.zeros((fan_out, fan_in))
        else:
            bound = np.sqrt(6.0 / fan_in)
            W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases, activation, negative_slope, dropout, output_activation)


def _slope(net):
    return 0.0 if net.activation == "relu" else net.negative_slope


@numba.njit(cache=True)
def _hidden_eval(z, slope):
    a = np.empty_like(z)
    d = np.empty_like(z)
    n, m = z.shape
    for i in range(n):
        for j in range(m):
            v = z[i, j]
            g = 1.0 if v > 0.0 else slope
            d[i, j] = g
            a[i, j] = g * v
    return a, d


@numba.njit(cache=True)
def _hidden_dropout(z, slope, bits, threshold, scale):
    a = np.empty_like(z)
    d = np.empty_like(z)
    n, m = z.shape
    for i in range(n):
        for j in range(m):
            v = z[i, j]
            g = 1.0 if v > 0.0 else slope
            k = scale if bits[i * m + j] < threshold else 0.0
            d[i, j] = g * k
            a[i, j] = g * k * v
    return a, d


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dropout_keep_probability(rate):
    """Keep probability actually realised by the 16-bit dropout masks."""
    return round((1.0 - rate) * 65536) / 65536


@dataclass
class Cache:
    net_id: int
    version: int
    inputs: list        # input to each layer (post-dropout activations)
    pre: list           # pre-activations of every layer, output layer last
    derivs: list        # activation slope times scaled dropout mask, per hidden layer
    output: np.ndarray


def _check_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise ShapeError(f"expected input of shape [B, {net.d_in}], got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite network input")
    return x


def forward(net, x, mode="eval", rng=None):
    """Run the network on a batch ``x`` of shape [B, d_in].

    In ``train`` mode hidden activations go through inverted dropout (masks
    drawn from ``rng``, kept units scaled by 1/(1-p)); ``eval`` mode is
    deterministic.  Returns ``(output, cache)``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    a = _check_input(net, x)
    use_dropout = mode == "train" and net.dropout > 0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    if use_dropout:
        keep = dropout_keep_probability(net.dropout)
        threshold = int(round(keep * 65536))
    slope = _slope(net)
    inputs, pre, derivs = [], [], []
    last = net.n_layers - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ W.T
        z += b
        pre.append(z)
        if i == last:
            break
        if use_dropout:
            bits = np.frombuffer(rng.bytes(2 * z.size), dtype=np.uint16)
            a, d = _hidden_dropout(z, slope, bits, threshold, 1.0 / keep)
        else:
            a, d = _hidden_eval(z, slope)
        derivs.append(d)
    out = _sigmoid(z) if net.output_activation == "logistic" else z
    return out, Cache(id(net), net.version, inputs, pre, derivs, out)


def _check_cache(net, cache):
    if cache.net_id != id(net) or cache.version != net.version:
        raise CacheError("cache does not belong to the current state of this network")


def backward(net, cache, upstream, wrt="output"):
    """Reverse pass for a batch.

    ``upstream`` is dL/d(output) with the shape of the output.  With
    ``wrt="logits"`` it is taken as dL/d(pre-activation of the output layer),
    which skips the logistic derivative (cross-entropy losses use this).
    Returns ``(param_grads, input_grad)`` where ``param_grads`` follows the
    ``net.params()`` layout.
    """
    _check_cache(net, cache)
    delta = np.asarray(upstream, dtype=np.float64)
    if delta.shape != cache.output.shape:
        raise ShapeError(f"upstream gradient {delta.shape} does not match output {cache.output.shape}")
    if net.output_activation == "logistic" and wrt == "output":
        delta = delta * cache.output * (1.0 - cache.output)
    grads = [None] * (2 * net.n_layers)
    for i in range(net.n_layers - 1, -1, -1):
        W = net.weights[i]
        grads[2 * i] = delta.T @ cache.inputs[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ W
        if i > 0:
            delta *= cache.derivs[i - 1]
    return grads, delta


def backward_params(net, cache, upstream):
    """Parameter gradients only; see ``backward``."""
    return backward(net, cache, upstream)[0]


def _backward_chain(net, cache):
    """Backward signals of a scalar-output net with upstream 1 (dropout off).

    Returns ``(deltas, slopes, input_grad)`` where ``deltas[i]`` is the signal
    arriving at the output of layer ``i`` and ``slopes[i]`` the activation
    derivative pattern of hidden layer ``i``.
    """
    if net.d_out != 1:
        raise ValueError("input gradients are defined for scalar-output networks only")
    if net.output_activation != "identity":
        raise ValueError("input gradients assume an identity output unit")
    B = cache.output.shape[0]
    slopes = cache.derivs
    deltas = [None] * net.n_layers
    delta = np.ones((B, 1))
    for i in range(net.n_layers - 1, -1, -1):
        deltas[i] = delta
        delta = delta @ net.weights[i]
        if i > 0:
            delta *= slopes[i - 1]
    return deltas, slopes, delta


def _subset(cols, d):
    if cols is None:
        return np.arange(d)
    idx = np.arange(d)[cols]
    if idx.size == 0:
        raise ValueError("empty coordinate subset")
    return np.atleast_1d(idx)


def grad_wrt_input(net, points, cols=None):
    """Exact gradient of a scalar-output net w.r.t. selected input coordinates.

    ``points`` may be a single vector or a batch; ``cols`` is any index
    expression selecting input coordinates (default: all).  Dropout is off.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    idx = _subset(cols, net.d_in)
    _, cache = forward(net, pts, mode="eval")
    _, _, g = _backward_chain(net, cache)
    g = g[:, idx]
    return g[0] if single else g


def gradient_penalty(critic, inputs, cols, lam):
    """One-sided gradient penalty on a batch and its parameter gradient.

    penalty = lam * mean_b max(0, |grad_{cols} f(inputs_b)| - 1)^2

    Returns ``(penalty, param_grads)``; the bias gradients are exactly zero
    because the input gradient of a piecewise-linear net does not depend on
    them once the activation pattern is fixed.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    idx = _subset(cols, critic.d_in)
    _, cache = forward(critic, x, mode="eval")
    deltas, slopes, g0 = _backward_chain(critic, cache)
    B = x.shape[0]
    u = g0[:, idx]
    norm = np.sqrt(np.sum(u * u, axis=1))
    hinge = np.maximum(norm - 1.0, 0.0)
    penalty = lam * float(np.mean(hinge ** 2))

    grads = [np.zeros_like(p) for p in critic.params()]
    active = hinge > 0
    if lam == 0 or not np.any(active):
        return penalty, grads
    coef = np.zeros(B)
    coef[active] = 2.0 * lam * hinge[active] / (norm[active] * B)
    gbar = np.zeros_like(g0)
    gbar[:, idx] = coef[:, None] * u
    # reverse the chain g_{i} = delta_{i} @ W_i, delta_{i-1} = g_{i} * slope_{i-1}
    for i in range(critic.n_layers):
        grads[2 * i] = deltas[i].T @ gbar
        if i < critic.n_layers - 1:
            gbar = gbar @ critic.weights[i].T
            gbar *= slopes[i]
    return penalty, grads


def penalty_value_and_param_grad(critic, x, theta_bar, lam):
    """Per-point penalty for a critic taking ``[theta, x]`` as input.

    The gradient norm is taken over the ``theta`` coordinates only.
    """
    theta_bar = np.atleast_1d(np.asarray(theta_bar, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    point = np.concatenate([theta_bar, x])[None, :]
    return gradient_penalty(critic, point, slice(0, theta_bar.size), lam)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, beta1, beta2, eps)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)``.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in length")
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[k].shape:
            raise ShapeError(f"parameter {k}: shape {p.shape} vs gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            kind = "weight" if k % 2 == 0 else "bias"
            raise FloatingPointError(f"non-finite gradient in layer {k // 2} {kind}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Adam bound to one network; bumps the net version after each step."""

    def __init__(self, net, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr = lr
        self.state = AdamState.zeros_like(net.params(), beta1, beta2, eps)

    def step(self, grads):
        adam_step(self.net.params(), grads, self.state, self.lr)
        self.net.version += 1


def mlp_to_dict(net):
    return {
        "format": "bayesgan.mlp/1",
        "sizes": net.sizes,
        "activation": net.activation,
        "negative_slope": net.negative_slope,
        "dropout": net.dropout,
        "output_activation": net.output_activation,
        "weights": [W.tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_dict(d):
    if d.get("format") != "bayesgan.mlp/1":
        raise ValueError("not an MLP checkpoint")
    net = MLP([np.array(W, dtype=np.float64).reshape(o, i)
               for W, i, o in zip(d["weights"], d["sizes"][:-1], d["sizes"][1:])],
              [np.array(b, dtype=np.float64) for b in d["biases"]],
              d["activation"], d["negative_slope"], d["dropout"], d["output_activation"])
    if net.sizes != list(d["sizes"]):
        raise ShapeError("checkpoint sizes do not match stored arrays")
    return net


def save_mlp(net, path):
    # json writes floats with repr(), which round-trips float64 exactly
    with open(path, "w") as fh:
        json.dump(mlp_to_dict(net), fh)


def load_mlp(path):
    with open(path) as fh:
        return mlp_from_dict(json.load(fh))
