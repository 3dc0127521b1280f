"""Attention-based bag classifier (the upper branch).

Instances are encoded by an MLP, scored by tanh attention
``a_j = softmax_j(w . tanh(V z_j))``, pooled into ``Z = sum_j a_j z_j`` and
classified by a sigmoid head. Min-max normalised attention doubles as an
instance-level prediction that the instance branch can learn from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernel
from .errors import DomainError, ShapeError
from .numkernel import MlpCache, MlpParams, SeededRng, init_mlp, mlp_backward, mlp_forward

DEGENERATE_RANGE = 1e-12


@dataclass
class AttentionParams:
    V: np.ndarray  # [L, h]
    w: np.ndarray  # [L]
    name: str = "attention"

    def __post_init__(self):
        if self.V.ndim != 2 or self.w.shape != (self.V.shape[0],) or self.V.shape[0] < 1:
            raise ShapeError(f"{self.name}: V must be [L, h] and w [L]")

    def blocks(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.V": self.V, f"{self.name}.w": self.w}


def init_attention(rng: SeededRng, h: int, L: int, name: str = "attention") -> AttentionParams:
    bound_v = 1.0 / np.sqrt(h)
    bound_w = 1.0 / np.sqrt(L)
    return AttentionParams(rng.uniform(-bound_v, bound_v, (L, h)), rng.uniform(-bound_w, bound_w, L), name)


@dataclass
class BagForward:
    enc_cache: MlpCache | None
    z: np.ndarray
    u: np.ndarray
    a: np.ndarray
    Z: np.ndarray
    head_cache: MlpCache
    bag_pred: float
    inst_pred: np.ndarray  # normalised attention


@dataclass
class BagBranchState:
    encoder: MlpParams
    attention: AttentionParams
    head: MlpParams
    kind = "bag"

    def __post_init__(self):
        h = self.encoder.d_out
        if self.attention.V.shape[1] != h or self.head.d_in != h or self.head.d_out != 1:
            raise ShapeError("bag branch: encoder width must match attention and head inputs")

    def blocks(self, include_encoder: bool = True) -> dict[str, np.ndarray]:
        out = dict(self.encoder.blocks()) if include_encoder else {}
        out.update(self.attention.blocks())
        out.update(self.head.blocks())
        return out

    def forward(self, x, encoded=None) -> BagForward:
        return bag_forward(self, x, encoded)

    def backward(self, fwd, g_bag, g_inst, include_encoder=True):
        return bag_branch_backward(self, fwd, g_bag, g_inst, include_encoder)


def init_bag_branch(rng: SeededRng, d: int, h: int, L: int | None = None, encoder: MlpParams | None = None,
                    encoder_layers: int = 1, suffix: str = "") -> BagBranchState:
    L = h if L is None else L
    if encoder is None:
        encoder = init_mlp(rng.child("encoder"), [d] + [h] * encoder_layers, ["tanh"] * encoder_layers,
                           name=f"bag_encoder{suffix}")
    attention = init_attention(rng.child("attention"), h, L, name=f"attention{suffix}")
    head = init_mlp(rng.child("head"), [h, 1], ["sigmoid"], name=f"bag_head{suffix}")
    return BagBranchState(encoder, attention, head)


def encode(state: BagBranchState, x) -> np.ndarray:
    return mlp_forward(state.encoder, x)[1]


def attention_scores(attention: AttentionParams, z) -> np.ndarray:
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise DomainError("attention over an empty bag")
    if z.shape[1] != attention.V.shape[1]:
        raise ShapeError(f"embedding width {z.shape[1]} does not match attention input {attention.V.shape[1]}")
    return kernel.attention_forward(z, attention.V, attention.w)[1]


def pool(z, a) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (z.shape[0],):
        raise ShapeError(f"{a.shape[0]} attention weights for {z.shape[0]} instances")
    return a @ z


def normalize_attention(a) -> np.ndarray:
    """Per-bag min-max scaling to [0, 1]; constant attention maps to 0.5."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi - lo < DEGENERATE_RANGE:
        return np.full_like(a, 0.5)
    return (a - lo) / (hi - lo)


def normalize_attention_backward(a, g) -> np.ndarray:
    """Gradient of ``normalize_attention`` w.r.t. ``a``; ties go to the lowest index."""
    a = np.asarray(a, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    lo_i, hi_i = int(np.argmin(a)), int(np.argmax(a))
    r = a[hi_i] - a[lo_i]
    if r < DEGENERATE_RANGE:
        return np.zeros_like(a)
    y = (a - a[lo_i]) / r
    ga = g / r
    gy = float(g @ y) / r
    ga[lo_i] += gy - g.sum() / r
    ga[hi_i] -= gy
    return ga


def bag_forward(state: BagBranchState, x, encoded=None) -> BagForward:
    """Full forward pass; ``encoded=(cache, z)`` reuses a shared encoder output."""
    if encoded is None:
        enc_cache, z = mlp_forward(state.encoder, x)
    else:
        enc_cache, z = encoded
    if z.shape[0] == 0:
        raise DomainError("attention over an empty bag")
    u, a = kernel.attention_forward(z, state.attention.V, state.attention.w)
    Z = a @ z
    head_cache, y = mlp_forward(state.head, Z[None, :])
    return BagForward(enc_cache, z, u, a, Z, head_cache, float(y[0, 0]), normalize_attention(a))


def bag_predict(state: BagBranchState, x) -> tuple[float, np.ndarray, np.ndarray]:
    """``(bag probability, attention weights, embeddings)``."""
    f = bag_forward(state, x)
    return f.bag_pred, f.a, f.z


def bag_branch_backward(state: BagBranchState, fwd: BagForward, g_bag: float, g_inst=None,
                        include_encoder: bool = True) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backprop upstream gradients on the bag probability and on normalised attention.

    Returns ``(grads, gz)``: block gradients (encoder blocks only when
    ``include_encoder``) and the gradient w.r.t. the embeddings.
    """
    n = fwd.z.shape[0]
    if fwd.head_cache.outputs[-1].shape != (1, 1) or fwd.a.shape != (n,):
        raise ShapeError("bag branch: stale forward cache")
    grads, gZ = mlp_backward(state.head, fwd.head_cache, np.array([[g_bag]], dtype=np.float64))
    gZ = gZ[0]
    ga = fwd.z @ gZ
    if g_inst is not None:
        g_inst = np.asarray(g_inst, dtype=np.float64)
        if g_inst.shape != (n,):
            raise ShapeError("bag branch: instance gradient length does not match the bag")
        ga = ga + normalize_attention_backward(fwd.a, g_inst)
    gV, gw, gz = kernel.attention_backward(fwd.z, state.attention.V, state.attention.w, fwd.u, fwd.a,
                                           np.ascontiguousarray(ga))
    gz += np.outer(fwd.a, gZ)
    grads[f"{state.attention.name}.V"] = gV
    grads[f"{state.attention.name}.w"] = gw
    if include_encoder:
        enc_grads, _ = mlp_backward(state.encoder, fwd.enc_cache, gz)
        grads.update(enc_grads)
    return grads, gz
