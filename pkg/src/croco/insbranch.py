"""Instance-based classifier (the lower branch).

Each instance embedding goes through a sigmoid head; the bag score is the
max (or, for the homogeneous ablation, the mean) of the instance scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .numkernel import MlpCache, MlpParams, SeededRng, bce_soft, init_mlp, mlp_backward, mlp_forward


@dataclass
class InsForward:
    enc_cache: MlpCache | None
    z: np.ndarray
    head_cache: MlpCache
    inst_pred: np.ndarray
    bag_pred: float
    argmax: int


@dataclass
class InsBranchState:
    encoder: MlpParams
    head: MlpParams
    pooling: str = "max"
    kind = "ins"

    def __post_init__(self):
        if self.head.d_in != self.encoder.d_out or self.head.d_out != 1:
            raise ShapeError("instance branch: head must map the encoder width to one output")
        if self.pooling not in ("max", "mean"):
            raise DomainError(f"unknown pooling {self.pooling!r}")

    def blocks(self, include_encoder: bool = True) -> dict[str, np.ndarray]:
        out = dict(self.encoder.blocks()) if include_encoder else {}
        out.update(self.head.blocks())
        return out

    def forward(self, x, encoded=None) -> InsForward:
        return ins_forward(self, x, encoded)

    def backward(self, fwd, g_bag, g_inst, include_encoder=True):
        return ins_branch_backward(self, fwd, g_inst, g_bag, include_encoder)


def init_ins_branch(rng: SeededRng, d: int, h: int, encoder: MlpParams | None = None, encoder_layers: int = 1,
                    suffix: str = "", pooling: str = "max") -> InsBranchState:
    if encoder is None:
        encoder = init_mlp(rng.child("encoder"), [d] + [h] * encoder_layers, ["tanh"] * encoder_layers,
                           name=f"ins_encoder{suffix}")
    head = init_mlp(rng.child("head"), [h, 1], ["sigmoid"], name=f"ins_head{suffix}")
    return InsBranchState(encoder, head, pooling)


def aggregate_max(preds) -> float:
    p = np.asarray(preds, dtype=np.float64)
    if p.size == 0:
        raise DomainError("max over an empty bag")
    return float(p.max())


def instance_loss(targets, preds) -> float:
    """Mean soft BCE over the instances of one bag."""
    t = np.asarray(targets, dtype=np.float64)
    p = np.asarray(preds, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"{t.size} targets for {p.size} predictions")
    return float(np.mean(bce_soft(t, p)))


def ins_forward(state: InsBranchState, x, encoded=None) -> InsForward:
    if encoded is None:
        enc_cache, z = mlp_forward(state.encoder, x)
    else:
        enc_cache, z = encoded
    head_cache, y = mlp_forward(state.head, z)
    p = y[:, 0]
    if p.size == 0:
        raise DomainError("empty bag")
    if state.pooling == "max":
        k = int(np.argmax(p))  # first maximum on ties
        bag = float(p[k])
    else:
        k = -1
        bag = float(p.mean())
    return InsForward(enc_cache, z, head_cache, p, bag, k)


def instance_predict(state: InsBranchState, x) -> np.ndarray:
    return ins_forward(state, x).inst_pred


def ins_branch_backward(state: InsBranchState, fwd: InsForward, g_inst=None, g_bag: float = 0.0,
                        include_encoder: bool = True) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backprop gradients on instance probabilities and on the pooled bag score.

    Max pooling routes ``g_bag`` to the arg-max instance only.
    """
    n = fwd.inst_pred.shape[0]
    if fwd.head_cache.outputs[-1].shape != (n, 1):
        raise ShapeError("instance branch: stale forward cache")
    gp = np.zeros(n) if g_inst is None else np.array(g_inst, dtype=np.float64)
    if gp.shape != (n,):
        raise ShapeError("instance branch: gradient length does not match the bag")
    if g_bag:
        if state.pooling == "max":
            gp[fwd.argmax] += g_bag
        else:
            gp += g_bag / n
    grads, gz = mlp_backward(state.head, fwd.head_cache, gp[:, None])
    if include_encoder:
        enc_grads, _ = mlp_backward(state.encoder, fwd.enc_cache, gz)
        grads.update(enc_grads)
    return grads, gz
