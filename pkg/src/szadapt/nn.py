"""A small dense-network stack in float64 numpy.

Only what the adaptation game needs: affine layers with relu or identity
activations, exact reverse-mode gradients, Adam, the L1-regularised
reconstruction loss and softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError, NumericError, ShapeError

ACTIVATIONS = ("relu", "identity")
ROLES = ("encoder", "decoder", "discriminator", "probe")


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.b.shape[0] != self.W.shape[0]:
            raise ShapeError(
                f"layer weight {self.W.shape} and bias {self.b.shape} disagree")


class DenseNet:
    """Multilayer perceptron; ``layers[k].W`` maps layer k's input to its output."""

    def __init__(self, layers, role="encoder"):
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        self.layers = list(layers)
        self.role = role
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[0] != b.W.shape[1]:
                raise ShapeError(
                    f"layer output {a.W.shape[0]} does not feed input {b.W.shape[1]}")

    @property
    def in_dim(self):
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self):
        return self.layers[-1].W.shape[0]

    @property
    def sizes(self):
        return [self.in_dim] + [layer.W.shape[0] for layer in self.layers]

    @property
    def activations(self):
        return [layer.activation for layer in self.layers]

    def params(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def n_params(self):
        return sum(p.size for p in self.params())

    def copy(self):
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation)
                         for l in self.layers], self.role)

    def __call__(self, X):
        return forward(self, X)[-1]

    def __repr__(self):
        dims = "->".join(str(s) for s in self.sizes)
        return f"DenseNet({self.role}, {dims})"


def init_dense(sizes, activations, rng, role="encoder") -> DenseNet:
    """Scaled-uniform weights, zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ShapeError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(sizes, sizes[1:], activations):
        limit = np.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-limit, limit, size=(n_out, n_in))
        layers.append(Layer(W, np.zeros(n_out), act))
    return DenseNet(layers, role)


@dataclass
class Trace:
    """Forward intermediates: ``outputs[0]`` is the input batch."""

    outputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)

    @property
    def out(self):
        return self.outputs[-1]


def forward(net: DenseNet, X) -> list:
    """All layer outputs, input first and network output last."""
    return trace(net, X).outputs


def trace(net: DenseNet, X) -> Trace:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.in_dim:
        raise ShapeError(f"{net!r} expects (N, {net.in_dim}) input, got {X.shape}")
    tr = Trace(outputs=[X])
    a = X
    for layer in net.layers:
        z = a @ layer.W.T + layer.b
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        tr.preacts.append(z)
        tr.outputs.append(a)
    return tr


def backward(net: DenseNet, tr: Trace, d_out):
    """Gradients of a scalar loss given its gradient w.r.t. the output.

    Returns ``(grads, d_input)`` with ``grads`` ordered like ``net.params()``.
    """
    grads = [None] * (2 * len(net.layers))
    delta = np.asarray(d_out, dtype=np.float64)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == "relu":
            delta = delta * (tr.preacts[k] > 0)
        grads[2 * k] = delta.T @ tr.outputs[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        delta = delta @ layer.W
    return grads, delta


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if k < 2:
        raise ShapeError("need at least two classes")
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"class labels must lie in [0, {k})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    return float(loss), d / n


def l1_norm(nets):
    return float(sum(np.abs(p).sum() for net in nets for p in net.params()))


def l1_grad(net):
    # np.sign(0) == 0 is the subgradient we want at rest.
    return [np.sign(p) for p in net.params()]


def recon_loss(X, X_hat, nets=(), lam=0.0):
    """Batch-mean squared Euclidean error plus ``lam`` times the L1 norm.

    Returns ``(loss, d_X_hat, l1_grads)``; ``l1_grads`` holds one gradient
    list per net in ``nets`` covering only the penalty term.
    """
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape or X.ndim != 2:
        raise ShapeError(f"reconstruction shape {X_hat.shape} != input {X.shape}")
    n = X.shape[0]
    diff = X_hat - X
    loss = float((diff * diff).sum() / n) + lam * l1_norm(nets)
    l1_grads = [[lam * g for g in l1_grad(net)] for net in nets]
    return loss, 2.0 * diff / n, l1_grads


@dataclass
class LossReport:
    adv: float
    rec: float
    l1: float
    total: float

    def __post_init__(self):
        if not all(np.isfinite([self.adv, self.rec, self.l1, self.total])):
            raise NumericError(f"non-finite loss {self}")


class AdamState:
    """Bias-corrected Adam moments for a fixed list of parameter arrays."""

    def __init__(self, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        adam_step(self, params, grads)


def adam_step(state: AdamState, params, grads):
    """One in-place Adam update of ``params``."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at Adam step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def finite_diff_check(loss_and_grad, params, h=1e-5, max_checks=400, rng=None,
                      kink_tol=1e-3):
    """Largest relative disagreement between backprop and central differences.

    ``loss_and_grad()`` evaluates the loss at the current contents of
    ``params`` (mutated in place here) and returns ``(loss, grads)``.  At
    most ``max_checks`` coordinates are sampled.  A coordinate is skipped
    when the analytic gradient jumps between ``p - h`` and ``p + h``,
    which means a relu changed state inside the probe interval.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    _, grads = loss_and_grad()
    grads = [np.array(g, dtype=np.float64, copy=True) for g in grads]
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(coords) > max_checks:
        pick = rng.choice(len(coords), size=max_checks, replace=False)
        coords = [coords[k] for k in np.sort(pick)]
    worst = 0.0
    for i, j in coords:
        flat = params[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        f_plus, g_plus = loss_and_grad()
        g_plus = float(np.asarray(g_plus[i]).reshape(-1)[j])
        flat[j] = orig - h
        f_minus, g_minus = loss_and_grad()
        g_minus = float(np.asarray(g_minus[i]).reshape(-1)[j])
        flat[j] = orig
        if abs(g_plus - g_minus) > kink_tol * max(1.0, abs(g_plus) + abs(g_minus)):
            continue
        g_fd = (f_plus - f_minus) / (2.0 * h)
        g_bp = float(grads[i].reshape(-1)[j])
        err = abs(g_fd - g_bp) / max(1e-8, abs(g_fd) + abs(g_bp))
        worst = max(worst, err)
    return worst
