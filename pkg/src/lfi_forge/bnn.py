"""Bayesian 1-D convolutional classifier trained by Bayes by Backprop.

Architecture: variational Conv1D (ReLU, 'same' padding) -> max-pool ->
flatten -> variational Dense (softmax). Every weight has a mean-field
Gaussian posterior N(mu, softplus(rho)^2) and a standard normal prior;
biases are deterministic. Forward and backward passes are written out by
hand in numpy. Weights are sampled independently per example
(reparameterization w = mu + sigma * eps).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)

FORMAT_NAME = "lfi-forge-bnn"
FORMAT_VERSION = 1

PARAM_NAMES = ("conv_mu", "conv_rho", "conv_b", "dense_mu", "dense_rho", "dense_b")


class DegenerateLabelsError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    length: int
    channels: int
    filters: int
    kernel: int
    pool: int
    n_classes: int
    input_transform: str = "none"  # "none" | "log1p"

    @property
    def pooled_length(self) -> int:
        return self.length // self.pool

    @property
    def flat_size(self) -> int:
        return self.pooled_length * self.filters

    def n_params(self) -> int:
        conv = 2 * self.filters * self.channels * self.kernel + self.filters
        dense = 2 * self.n_classes * self.flat_size + self.n_classes
        return conv + dense


def ma2_network_spec(n_classes: int = 16) -> NetworkSpec:
    return NetworkSpec(length=100, channels=1, filters=6, kernel=5, pool=10, n_classes=n_classes)


def lv_network_spec(n_classes: int = 25) -> NetworkSpec:
    return NetworkSpec(length=51, channels=2, filters=20, kernel=3, pool=5, n_classes=n_classes,
                       input_transform="log1p")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    patience: int = 10
    validation_fraction: float = 0.1
    mc_train_samples: int = 1
    val_mc_samples: int = 4
    init_sigma: float = 0.05

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.patience, self.mc_train_samples, self.val_mc_samples) < 1:
            raise ValueError("epochs, batch size, patience and MC sample counts must be positive")
        if self.learning_rate <= 0 or self.init_sigma <= 0:
            raise ValueError("learning rate and initial sigma must be positive")
        if not 0.0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5)")


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def inv_softplus(y):
    return np.log(np.expm1(y))


class BayesianCNN:
    """Variational parameters plus input standardization constants."""

    def __init__(self, spec: NetworkSpec, params: dict, in_mean=None, in_std=None):
        self.spec = spec
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_NAMES}
        C = spec.channels
        self.in_mean = np.zeros(C) if in_mean is None else np.asarray(in_mean, dtype=np.float64)
        self.in_std = np.ones(C) if in_std is None else np.asarray(in_std, dtype=np.float64)
        self._check_shapes()

    @classmethod
    def init(cls, spec: NetworkSpec, rng: np.random.Generator, init_sigma: float = 0.05) -> "BayesianCNN":
        F, C, K, O, I = spec.filters, spec.channels, spec.kernel, spec.n_classes, spec.flat_size
        rho0 = inv_softplus(init_sigma)
        params = {
            "conv_mu": rng.normal(0.0, 1.0 / np.sqrt(C * K), (F, C, K)),
            "conv_rho": np.full((F, C, K), rho0),
            "conv_b": np.zeros(F),
            "dense_mu": rng.normal(0.0, 1.0 / np.sqrt(I), (O, I)),
            "dense_rho": np.full((O, I), rho0),
            "dense_b": np.zeros(O),
        }
        return cls(spec, params)

    def _check_shapes(self):
        s = self.spec
        want = {
            "conv_mu": (s.filters, s.channels, s.kernel),
            "conv_rho": (s.filters, s.channels, s.kernel),
            "conv_b": (s.filters,),
            "dense_mu": (s.n_classes, s.flat_size),
            "dense_rho": (s.n_classes, s.flat_size),
            "dense_b": (s.n_classes,),
        }
        for k, shape in want.items():
            if self.params[k].shape != shape:
                raise ValueError(f"{k} has shape {self.params[k].shape}, expected {shape}")

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "BayesianCNN":
        return BayesianCNN(self.spec, {k: v.copy() for k, v in self.params.items()},
                           self.in_mean.copy(), self.in_std.copy())

    def draw_noise(self, n: int, rng: np.random.Generator) -> dict:
        """Per-example standard normal draws for every variational weight."""
        return {
            "conv": rng.standard_normal((n,) + self.params["conv_mu"].shape),
            "dense": rng.standard_normal((n,) + self.params["dense_mu"].shape),
        }

    def preprocess(self, x) -> np.ndarray:
        """Map raw series (n, T, C) or (T, C) to standardized network input."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.spec.length, self.spec.channels):
            raise ValueError(f"input shape {x.shape[1:]} does not match "
                             f"({self.spec.length}, {self.spec.channels})")
        x = _transform(x, self.spec.input_transform)
        return (x - self.in_mean) / self.in_std

    # serialization

    def to_json(self) -> str:
        doc = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "spec": asdict(self.spec),
            "in_mean": self.in_mean.tolist(),
            "in_std": self.in_std.tolist(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.params.items()},
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "BayesianCNN":
        doc = json.loads(text)
        if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 lfi-forge network document")
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        return cls(NetworkSpec(**doc["spec"]), params, doc["in_mean"], doc["in_std"])


def _transform(x, kind):
    if kind == "none":
        return x
    if kind == "log1p":
        return np.log1p(np.maximum(x, 0.0))
    raise ValueError(f"unknown input transform {kind!r}")


def _weights(mu, rho, eps):
    if eps is None:
        return mu, None
    sigma = softplus(rho)
    return mu + sigma * eps, sigma


def _forward(net: BayesianCNN, x, noise, keep=False):
    """x is already standardized, shape (n, T, C). Returns logits (and cache)."""
    s = net.spec
    p = net.params
    n = x.shape[0]
    K = s.kernel
    pad_l = (K - 1) // 2
    xpad = np.pad(x, ((0, 0), (pad_l, K - 1 - pad_l), (0, 0)))
    # patches[b, t, c, k] = xpad[b, t + k, c]
    patches = np.lib.stride_tricks.sliding_window_view(xpad, K, axis=1)[:, : s.length]
    patches = patches.reshape(n, s.length, s.channels * K)

    eps_c = None if noise is None else noise["conv"]
    eps_d = None if noise is None else noise["dense"]
    Wc, _ = _weights(p["conv_mu"], p["conv_rho"], eps_c)
    Wc = Wc.reshape(Wc.shape[:-2] + (s.channels * K,))
    if Wc.ndim == 3:
        conv = np.einsum("btj,bfj->btf", patches, Wc)
    else:
        conv = patches @ Wc.T
    conv += p["conv_b"]
    act = np.maximum(conv, 0.0)

    L, w = s.pooled_length, s.pool
    windows = act[:, : L * w].reshape(n, L, w, s.filters)
    arg = windows.argmax(axis=2)
    pooled = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
    h = pooled.reshape(n, L * s.filters)

    Wd, _ = _weights(p["dense_mu"], p["dense_rho"], eps_d)
    if Wd.ndim == 3:
        logits = np.einsum("bi,boi->bo", h, Wd)
    else:
        logits = h @ Wd.T
    logits += p["dense_b"]
    if not keep:
        return logits
    cache = dict(patches=patches, conv=conv, arg=arg, h=h, Wd=Wd)
    return logits, cache


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: BayesianCNN, x, noise=None) -> np.ndarray:
    """Class probabilities for raw input ``x`` (n, T, C) or (T, C).

    ``noise`` holds standard normal draws per weight, either shared
    (weight shape) or per example (leading batch axis); ``None`` uses the
    posterior means.
    """
    xs = net.preprocess(x)
    return _softmax(_forward(net, xs, noise))


def kl_divergence(net: BayesianCNN) -> float:
    """Closed-form KL(q(w) || N(0, I)) summed over all variational weights."""
    total = 0.0
    for layer in ("conv", "dense"):
        mu = net.params[f"{layer}_mu"]
        sigma = softplus(net.params[f"{layer}_rho"])
        kl = -np.log(sigma) + 0.5 * (sigma ** 2 + mu ** 2) - 0.5
        total += float(kl.sum())
    return total


def _kl_grad(net):
    g = {}
    for layer in ("conv", "dense"):
        mu = net.params[f"{layer}_mu"]
        rho = net.params[f"{layer}_rho"]
        sigma = softplus(rho)
        g[f"{layer}_mu"] = mu.copy()
        g[f"{layer}_rho"] = (sigma - 1.0 / sigma) * sigmoid(rho)
    return g


def elbo_loss(net: BayesianCNN, x, labels, noise, kl_scale: float, standardized=False):
    """Mean cross-entropy over the batch plus ``kl_scale`` times the KL term.

    ``noise`` must carry a leading axis equal to the batch size (tile the
    batch to average over several weight draws). Returns (loss, grads) with
    grads keyed like ``net.params``.
    """
    s = net.spec
    xs = x if standardized else net.preprocess(x)
    labels = np.asarray(labels, dtype=np.int64)
    n = xs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    logits, c = _forward(net, xs, noise, keep=True)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    ce = float(np.mean(logsum - z[np.arange(n), labels]))
    kl = kl_divergence(net)
    loss = ce + kl_scale * kl
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")

    dlogits = np.exp(z - logsum[:, None])
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    p = net.params
    grads = {}
    grads["dense_b"] = dlogits.sum(axis=0)
    Wd = c["Wd"]
    h = c["h"]
    if Wd.ndim == 3:
        dWd = dlogits[:, :, None] * h[:, None, :]
        dh = np.einsum("bo,boi->bi", dlogits, Wd)
        sig_d = sigmoid(p["dense_rho"])
        grads["dense_mu"] = dWd.sum(axis=0)
        grads["dense_rho"] = np.einsum("boi,boi->oi", dWd, noise["dense"]) * sig_d
    else:
        dWd = dlogits.T @ h
        dh = dlogits @ Wd
        grads["dense_mu"] = dWd
        grads["dense_rho"] = (np.zeros_like(dWd) if noise is None
                              else dWd * noise["dense"] * sigmoid(p["dense_rho"]))

    L, w, F = s.pooled_length, s.pool, s.filters
    dpooled = dh.reshape(n, L, F)
    dwin = np.zeros((n, L, w, F))
    np.put_along_axis(dwin, c["arg"][:, :, None, :], dpooled[:, :, None, :], axis=2)
    dact = np.zeros_like(c["conv"])
    dact[:, : L * w] = dwin.reshape(n, L * w, F)
    dconv = dact * (c["conv"] > 0.0)

    grads["conv_b"] = dconv.sum(axis=(0, 1))
    patches = c["patches"]
    shape = p["conv_mu"].shape
    if noise is not None and noise["conv"].ndim == 4:
        dWc = np.einsum("btf,btj->bfj", dconv, patches).reshape((n,) + shape)
        grads["conv_mu"] = dWc.sum(axis=0)
        grads["conv_rho"] = np.einsum("bfck,bfck->fck", dWc, noise["conv"]) * sigmoid(p["conv_rho"])
    else:
        dWc = np.einsum("btf,btj->fj", dconv, patches).reshape(shape)
        grads["conv_mu"] = dWc
        grads["conv_rho"] = (np.zeros_like(dWc) if noise is None
                             else dWc * noise["conv"] * sigmoid(p["conv_rho"]))

    if kl_scale:
        for k, v in _kl_grad(net).items():
            grads[k] = grads[k] + kl_scale * v
    return loss, grads


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _val_ce(net, xs, labels, noise):
    probs = np.zeros((xs.shape[0], net.spec.n_classes))
    for eps in noise:
        probs += _softmax(_forward(net, xs, eps))
    probs /= len(noise)
    return float(-np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300))))


def train(spec: NetworkSpec, series, labels, cfg: TrainConfig, rng: np.random.Generator) -> BayesianCNN:
    """Fit the variational posterior on (series, class) pairs.

    Holds out ``validation_fraction`` of the data, runs Adam on minibatches
    and stops once validation cross-entropy of the MC predictive has not
    improved for ``patience`` epochs; the best snapshot is returned. The KL
    term is scaled by 1 / n_train so each minibatch objective is an
    unbiased per-example estimate of the negative ELBO.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    labels = np.asarray(labels, dtype=np.int64)
    if np.unique(labels).size < 2:
        raise DegenerateLabelsError("training data contains fewer than two classes")
    if labels.min() < 0 or labels.max() >= spec.n_classes:
        raise ValueError("labels outside [0, n_classes)")

    n = x.shape[0]
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.validation_fraction * n)))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]

    net = BayesianCNN.init(spec, rng, cfg.init_sigma)
    xt = _transform(x[tr_idx], spec.input_transform)
    net.in_mean = xt.mean(axis=(0, 1))
    std = xt.std(axis=(0, 1))
    net.in_std = np.where(std > 0, std, 1.0)
    xs_tr = net.preprocess(x[tr_idx])
    xs_val = net.preprocess(x[val_idx])
    y_tr, y_val = labels[tr_idx], labels[val_idx]
    n_tr = len(tr_idx)
    kl_scale = 1.0 / n_tr

    val_noise = [net.draw_noise(n_val, rng) for _ in range(cfg.val_mc_samples)]
    opt = Adam(cfg.learning_rate)
    best = _val_ce(net, xs_val, y_val, val_noise)
    best_net = net.copy()
    stale = 0
    S = cfg.mc_train_samples
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = xs_tr[idx], y_tr[idx]
            if S > 1:
                xb, yb = np.tile(xb, (S, 1, 1)), np.tile(yb, S)
            noise = net.draw_noise(xb.shape[0], rng)
            _, grads = elbo_loss(net, xb, yb, noise, kl_scale, standardized=True)
            opt.step(net.params, grads)
        ce = _val_ce(net, xs_val, y_val, val_noise)
        if not np.isfinite(ce):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        if ce < best:
            best, best_net, stale = ce, net.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    log.debug("trained %d epochs, best val CE %.4f", epoch + 1, best)
    return best_net


def predict_mc(net: BayesianCNN, y0, S: int, rng: np.random.Generator):
    """MC posterior predictive for one observation.

    Returns (mean class probabilities, per-class sample std) over ``S``
    independent weight draws.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    xs = net.preprocess(y0)
    xs = np.repeat(xs, S, axis=0)
    probs = _softmax(_forward(net, xs, net.draw_noise(S, rng)))
    mean = probs.mean(axis=0)
    std = probs.std(axis=0, ddof=1) if S > 1 else np.zeros_like(mean)
    return mean, std
