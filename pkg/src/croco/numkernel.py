"""Dense numeric kernel: MLPs with analytic gradients, losses, SGD, gradient checks.

Parameters live in plain float64 numpy arrays. Every trainable array is
addressable by a dotted block name (``"encoder.W0"``, ``"attention.V"``...),
which is what the optimiser, the checkpoint writer and the gradient checker
iterate over.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernel
from .errors import DomainError, EvaluationError, ShapeError

EPS = 1e-7
FD_STEP = 1e-5

ACTIVATIONS = {"identity": 0, "tanh": 1, "sigmoid": 2}


class SeededRng:
    """Deterministic random stream with named, order-independent children.

    Backed by numpy's PCG64 generator seeded through ``SeedSequence``.
    ``child(name)`` derives a new stream from ``(seed, crc32(name))`` so a
    consumer can be reproduced without replaying every other consumer.
    ``split()`` derives anonymous children from a counter.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(key)
        self.counter = 0
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *self.key])))

    def child(self, name: str) -> "SeededRng":
        return SeededRng(self.seed, self.key + (zlib.crc32(name.encode("utf-8")),))

    def split(self) -> "SeededRng":
        self.counter += 1
        return SeededRng(self.seed, self.key + (0xFFFF0000 + self.counter,))

    # thin pass-throughs used across the package
    def uniform(self, low, high, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def random(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)


@dataclass
class Layer:
    weights: np.ndarray  # [d_in, d_out]
    biases: np.ndarray  # [d_out]
    activation: str = "identity"

    @property
    def act_code(self) -> int:
        return ACTIVATIONS[self.activation]


@dataclass
class MlpParams:
    """A stack of dense layers; ``name`` prefixes the parameter block names."""

    layers: list[Layer]
    name: str = "mlp"

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weights.shape[1] != nxt.weights.shape[0]:
                raise ShapeError(f"{self.name}: layer dimensions do not chain")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise DomainError(f"unknown activation {layer.activation!r}")
            if layer.biases.shape != (layer.weights.shape[1],):
                raise ShapeError(f"{self.name}: bias length does not match layer width")

    @property
    def d_in(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.layers[-1].weights.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{self.name}.W{i}"] = layer.weights
            out[f"{self.name}.b{i}"] = layer.biases
        return out


def init_mlp(rng: SeededRng, dims: list[int], activations: list[str], name: str = "mlp") -> MlpParams:
    """Weights uniform in +-1/sqrt(fan_in), zero biases."""
    if len(dims) != len(activations) + 1:
        raise ShapeError("need one activation per layer")
    layers = []
    for d_in, d_out, act in zip(dims[:-1], dims[1:], activations):
        bound = 1.0 / np.sqrt(d_in)
        layers.append(Layer(rng.uniform(-bound, bound, (d_in, d_out)), np.zeros(d_out), act))
    return MlpParams(layers, name)


@dataclass
class MlpCache:
    """Per-layer inputs and outputs recorded by :func:`mlp_forward`."""

    inputs: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[MlpCache, np.ndarray]:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ShapeError(f"{params.name}: expected input with {params.d_in} columns, got shape {x.shape}")
    cache = MlpCache()
    h = x
    for layer in params.layers:
        cache.inputs.append(h)
        h = kernel.dense_forward(h, layer.weights, layer.biases, layer.act_code)
        cache.outputs.append(h)
    return cache, h


def mlp_backward(params: MlpParams, cache: MlpCache, upstream: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Return ``(grads by block name, gradient w.r.t. the MLP input)``."""
    if len(cache.outputs) != len(params.layers) or cache.outputs[-1].shape != np.shape(upstream):
        raise ShapeError(f"{params.name}: cache does not match this forward pass")
    g = np.ascontiguousarray(upstream, dtype=np.float64)
    grads = {}
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        gW, gb, g = kernel.dense_backward(cache.inputs[i], layer.weights, cache.outputs[i], layer.act_code, g)
        grads[f"{params.name}.W{i}"] = gW
        grads[f"{params.name}.b{i}"] = gb
    return grads, g


def clamp_prob(p):
    return np.clip(p, EPS, 1.0 - EPS)


def bce_soft(target, pred):
    """Binary cross-entropy with soft targets; ``pred`` is clamped to [eps, 1-eps]."""
    t = np.asarray(target, dtype=np.float64)
    p = clamp_prob(np.asarray(pred, dtype=np.float64))
    out = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def bce_soft_grad(target, pred):
    """d bce_soft / d pred, including the zero slope of the clamp outside [eps, 1-eps]."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    inside = (p >= EPS) & (p <= 1.0 - EPS)
    pc = clamp_prob(p)
    g = np.where(inside, (pc - t) / (pc * (1.0 - pc)), 0.0)
    return float(g) if g.ndim == 0 else g


def softmax(logits) -> np.ndarray:
    s = np.ascontiguousarray(logits, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DomainError("softmax needs a nonempty 1-D vector")
    return kernel.softmax(s)


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """In-place ``p -= lr * g`` for every block in ``grads``; returns ``params``.

    Blocks missing from ``grads`` are left untouched.
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown block {name!r}")
        p = params[name]
        if p.shape != g.shape:
            raise ShapeError(f"block {name!r}: parameter shape {p.shape} vs gradient shape {g.shape}")
        p -= lr * g
    return params


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def failing(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v <= self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failing

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(loss_fn, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
               tolerance: float = 1e-4, step: float = FD_STEP) -> GradCheckReport:
    """Compare ``analytic`` gradients against central finite differences.

    ``loss_fn()`` takes no arguments and reads ``params`` (perturbed in place
    and restored). Relative error per entry is ``|a - n| / max(|a|, |n|, 1e-6)``; the floor
    keeps entries that are both near zero from dominating the report.
    """
    report = {}
    for name, p in params.items():
        g = analytic.get(name, np.zeros_like(p))
        worst = 0.0
        flat = p.reshape(-1)
        gflat = np.reshape(g, -1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise EvaluationError(f"non-finite loss while perturbing {name}[{i}]")
            num = (up - down) / (2.0 * step)
            rel = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), 1e-6)
            worst = max(worst, rel)
        report[name] = worst
    return GradCheckReport(report, tolerance)
