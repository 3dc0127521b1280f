"""Cross-consistency training between an attention bag classifier and an instance classifier.

Per bag, with ``first``/``second`` the two branches of the pair (bag branch
and instance branch in the default heterogeneous pair) and ``sg`` a
stop-gradient:

labeled bag, label ``Y``
    ``BCE(Y, first.bag) + BCE(Y, second.bag)``; if ``Y == 0`` the instance
    branch is pushed to 0 on every instance, otherwise the instance-level
    cross terms ``BCE(sg(first.inst), second.inst) + BCE(sg(second.inst), first.inst)``.
unlabeled bag
    bag-level cross terms ``BCE(sg(first.bag), second.bag) + BCE(sg(second.bag), first.bag)``
    plus the instance-level cross terms, all scaled by ``tau``.

Instance-level terms are means over the bag's instances. The term that
trains the attention module (whose prediction is min-max normalised
attention) is multiplied by ``attention_weight``. Every bag is one SGD step. The baselines (supervised-only, Mean Teacher, FixMatch) train a
single bag branch.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .bagbranch import BagBranchState, init_bag_branch
from .errors import ConfigError
from .insbranch import init_ins_branch
from .mildata import Bag, MilDataset
from .numkernel import MlpParams, SeededRng, bce_soft, bce_soft_grad, init_mlp, mlp_backward, mlp_forward, sgd_step

log = logging.getLogger(__name__)

METHODS = ("croco", "baseline", "mean_teacher", "fixmatch")
LEVELS = ("both", "bag_only", "ins_only")
DIRECTIONS = ("both", "bag_to_ins", "ins_to_bag")
PAIRS = ("hetero", "bag_bag", "ins_ins")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "croco"
    lr: float = 0.001
    epochs: int = 50
    tau: float = 1.0
    tau_rampup_epochs: int = 0
    consistency_levels: str = "both"
    direction: str = "both"
    share_encoder: bool = True
    use_true_neg: bool = True
    branch_pair: str = "hetero"
    labeled_bag_cross: bool = False  # alternative reading: labeled bags also get bag-level cross terms
    ins_pooling: str = "max"
    ema_decay: float = 0.99
    confidence_threshold: float = 0.95
    perturb_noise_sigma: float = 0.1
    perturb_dropout_rate: float = 0.2
    hidden_dim: int = 16
    attention_dim: int = 0  # 0 -> same as hidden_dim
    encoder_layers: int = 1
    attention_weight: float = 1.0  # weight of instance terms whose prediction is normalised attention
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.method not in METHODS:
            raise ConfigError("method", f"expected one of {', '.join(METHODS)}, got {self.method!r}")
        if not self.lr >= 0:
            raise ConfigError("lr", "must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if not self.tau >= 0:
            raise ConfigError("tau", "must be >= 0")
        if self.tau_rampup_epochs < 0:
            raise ConfigError("tau_rampup_epochs", "must be >= 0")
        if self.consistency_levels not in LEVELS:
            raise ConfigError("consistency_levels", f"expected one of {', '.join(LEVELS)}")
        if self.direction not in DIRECTIONS:
            raise ConfigError("direction", f"expected one of {', '.join(DIRECTIONS)}")
        if self.branch_pair not in PAIRS:
            raise ConfigError("branch_pair", f"expected one of {', '.join(PAIRS)}")
        if self.ins_pooling not in ("max", "mean"):
            raise ConfigError("ins_pooling", "expected max or mean")
        if self.ins_pooling == "mean" and self.branch_pair != "ins_ins":
            raise ConfigError("ins_pooling", "mean pooling is only available for the ins_ins pair")
        if not 0 <= self.ema_decay <= 1:
            raise ConfigError("ema_decay", "must lie in [0, 1]")
        if not 0.5 < self.confidence_threshold < 1:
            raise ConfigError("confidence_threshold", "must lie in (0.5, 1)")
        if self.perturb_noise_sigma < 0:
            raise ConfigError("perturb_noise_sigma", "must be >= 0")
        if not 0 <= self.perturb_dropout_rate < 1:
            raise ConfigError("perturb_dropout_rate", "must lie in [0, 1)")
        if not self.attention_weight >= 0:
            raise ConfigError("attention_weight", "must be >= 0")
        if self.hidden_dim < 1 or self.attention_dim < 0 or self.encoder_layers < 1:
            raise ConfigError("hidden_dim", "network widths and depth must be positive")
        return self

    @property
    def L(self) -> int:
        return self.attention_dim or self.hidden_dim

    def tau_at(self, epoch: int) -> float:
        """Effective unsupervised weight during 0-based ``epoch``."""
        if self.tau_rampup_epochs <= 0:
            return self.tau
        return self.tau * min(1.0, (epoch + 1) / self.tau_rampup_epochs)


def train_config_fields() -> dict[str, type]:
    return {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}


@dataclass
class LossBreakdown:
    sup_bag_level: float = 0.0
    sup_ins_level: float = 0.0
    unsup_bag_level: float = 0.0
    unsup_ins_level: float = 0.0
    tau_effective: float = 1.0

    @property
    def sup(self) -> float:
        return self.sup_bag_level + self.sup_ins_level

    @property
    def unsup(self) -> float:
        return self.unsup_bag_level + self.unsup_ins_level

    @property
    def total(self) -> float:
        return self.sup + self.tau_effective * self.unsup


@dataclass
class ModelState:
    branches: list  # [BagBranchState | InsBranchState, ...]
    method: str
    branch_pair: str
    shared_encoder: MlpParams | None = None
    teacher: BagBranchState | None = None
    step: int = 0

    def blocks(self) -> dict[str, np.ndarray]:
        """Trainable blocks by name (views, not copies)."""
        out = {}
        if self.shared_encoder is not None:
            out.update(self.shared_encoder.blocks())
        for br in self.branches:
            out.update(br.blocks(include_encoder=self.shared_encoder is None))
        return out

    def teacher_blocks(self) -> dict[str, np.ndarray]:
        return {} if self.teacher is None else self.teacher.blocks()

    def all_blocks(self) -> dict[str, np.ndarray]:
        out = self.blocks()
        out.update(self.teacher_blocks())
        return out

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


def _renamed(mlp: MlpParams, name: str) -> MlpParams:
    return MlpParams(copy.deepcopy(mlp.layers), name)


def _make_teacher(student: BagBranchState) -> BagBranchState:
    att = copy.deepcopy(student.attention)
    att.name = "teacher." + att.name
    return BagBranchState(_renamed(student.encoder, "teacher." + student.encoder.name), att,
                          _renamed(student.head, "teacher." + student.head.name))


def init_model(config: TrainConfig, d: int) -> ModelState:
    """Fresh parameters drawn from the ``init`` stream of ``config.seed``."""
    config.validate()
    rng = SeededRng(config.seed).child("init")
    h, L, depth = config.hidden_dim, config.L, config.encoder_layers
    acts = ["tanh"] * depth
    if config.method != "croco":
        bag = init_bag_branch(rng.child("bag"), d, h, L, encoder_layers=depth)
        bag.encoder.name = "encoder"
        state = ModelState([bag], config.method, "single")
        if config.method == "mean_teacher":
            state.teacher = _make_teacher(bag)
        return state

    shared = init_mlp(rng.child("encoder"), [d] + [h] * depth, acts, name="encoder") if config.share_encoder else None
    if config.branch_pair == "hetero":
        first = init_bag_branch(rng.child("bag"), d, h, L, encoder=shared, encoder_layers=depth)
        second = init_ins_branch(rng.child("ins"), d, h, encoder=shared, encoder_layers=depth)
    elif config.branch_pair == "bag_bag":
        first = init_bag_branch(rng.child("bag_a"), d, h, L, encoder=shared, encoder_layers=depth, suffix="_a")
        second = init_bag_branch(rng.child("bag_b"), d, h, L, encoder=shared, encoder_layers=depth, suffix="_b")
    else:
        first = init_ins_branch(rng.child("ins_a"), d, h, encoder=shared, encoder_layers=depth, suffix="_a",
                                pooling=config.ins_pooling)
        second = init_ins_branch(rng.child("ins_b"), d, h, encoder=shared, encoder_layers=depth, suffix="_b",
                                 pooling=config.ins_pooling)
    return ModelState([first, second], "croco", config.branch_pair, shared)


# --------------------------------------------------------------------------- loss assembly

def _cross(t_first, t_second, p_first, p_second, direction, weight, grads, scalar, scale=(1.0, 1.0)):
    """Bi-directional cross BCE; ``t_*`` are the detached targets, ``p_*`` the live predictions.

    ``scale[k]`` multiplies the term whose prediction comes from branch ``k``.
    Accumulates d loss / d prediction (times ``weight``) into ``grads``.
    """
    loss = 0.0
    if direction in ("both", "bag_to_ins"):
        loss += scale[1] * float(np.mean(bce_soft(t_first, p_second)))
        g = bce_soft_grad(t_first, p_second)
        grads[1] += weight * scale[1] * (g if scalar else g / np.size(p_second))
    if direction in ("both", "ins_to_bag"):
        loss += scale[0] * float(np.mean(bce_soft(t_second, p_first)))
        g = bce_soft_grad(t_second, p_first)
        grads[0] += weight * scale[0] * (g if scalar else g / np.size(p_first))
    return loss


def _forward_pair(state: ModelState, x):
    enc = mlp_forward(state.shared_encoder, x) if state.shared_encoder is not None else None
    return enc, [br.forward(x, enc) for br in state.branches]


def _backward_pair(state: ModelState, enc, fwds, g_bag, g_inst) -> dict[str, np.ndarray]:
    shared = state.shared_encoder is not None
    grads: dict[str, np.ndarray] = {}
    gz_total = None
    for br, f, gb, gi in zip(state.branches, fwds, g_bag, g_inst):
        g, gz = br.backward(f, gb, gi, include_encoder=not shared)
        for k, v in g.items():
            grads[k] = grads[k] + v if k in grads else v
        gz_total = gz if gz_total is None else gz_total + gz
    if shared:
        enc_grads, _ = mlp_backward(state.shared_encoder, enc[0], gz_total)
        grads.update(enc_grads)
    return grads


def detached_targets(state: ModelState, x) -> dict[str, list]:
    """The pseudo-label targets each branch offers the other, as constants."""
    _, fwds = _forward_pair(state, x)
    return {"bag": [f.bag_pred for f in fwds], "inst": [f.inst_pred.copy() for f in fwds]}


def _instance_scale(state: ModelState, weight: float) -> tuple[float, float]:
    """Per-branch weight of the instance-level cross term that branch is trained by.

    Gradients through min-max scaling are divided by the attention range,
    which is tiny at initialisation; ``weight`` tempers that for bag branches.
    """
    return tuple(weight if br.kind == "bag" else 1.0 for br in state.branches)


def croco_loss_and_grads(state: ModelState, x, label: int | None, config: TrainConfig, tau_eff: float = 1.0,
                         with_grads: bool = True, targets: dict | None = None
                         ) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss of one bag and its gradient over all trainable blocks.

    ``label`` is the visible bag label, or ``None`` for an unlabeled bag.
    Cross terms use the current predictions as detached targets unless
    ``targets`` (from :func:`detached_targets`) pins them, which is how the
    finite-difference check evaluates the stop-gradient loss.
    """
    enc, fwds = _forward_pair(state, x)
    n = fwds[0].inst_pred.shape[0]
    g_bag = [0.0, 0.0]
    g_inst = [np.zeros(n), np.zeros(n)]
    lb = LossBreakdown(tau_effective=tau_eff)
    levels, direction = config.consistency_levels, config.direction
    bag_preds = [f.bag_pred for f in fwds]
    inst_preds = [f.inst_pred for f in fwds]
    t_bag = bag_preds if targets is None else targets["bag"]
    t_inst = inst_preds if targets is None else targets["inst"]
    scale = _instance_scale(state, config.attention_weight)

    if label is not None:
        for k, p in enumerate(bag_preds):
            lb.sup_bag_level += bce_soft(label, p)
            g_bag[k] += bce_soft_grad(label, p)
        if config.labeled_bag_cross and levels != "ins_only":
            lb.sup_bag_level += _cross(*t_bag, *bag_preds, direction, 1.0, g_bag, True)
        if label == 0 and config.use_true_neg:
            for k, br in enumerate(state.branches):
                if br.kind == "ins":
                    lb.sup_ins_level += float(np.mean(bce_soft(0.0, inst_preds[k])))
                    g_inst[k] += bce_soft_grad(0.0, inst_preds[k]) / n
        elif levels != "bag_only":
            lb.sup_ins_level += _cross(*t_inst, *inst_preds, direction, 1.0, g_inst, False, scale)
    else:
        w = tau_eff
        if levels != "ins_only":
            lb.unsup_bag_level += _cross(*t_bag, *bag_preds, direction, w, g_bag, True)
        if levels != "bag_only":
            lb.unsup_ins_level += _cross(*t_inst, *inst_preds, direction, w, g_inst, False, scale)
        if w == 0:
            return lb, {}

    if not with_grads:
        return lb, {}
    return lb, _backward_pair(state, enc, fwds, g_bag, g_inst)


# --------------------------------------------------------------------------- baselines

def instance_dropout(rng: SeededRng, x: np.ndarray, rate: float) -> np.ndarray:
    """Drop each instance with probability ``rate``; at least one instance survives."""
    keep = rng.random(x.shape[0]) >= rate
    if not keep.any():
        keep[rng.integers(0, x.shape[0])] = True
    return np.ascontiguousarray(x[keep])


def feature_noise(rng: SeededRng, x: np.ndarray, sigma: float) -> np.ndarray:
    return x + rng.normal(0.0, sigma, size=x.shape)


def _bag_sup(branch: BagBranchState, x, label):
    f = branch.forward(x)
    g, _ = branch.backward(f, bce_soft_grad(label, f.bag_pred), None)
    return bce_soft(label, f.bag_pred), g


def _apply(state: ModelState, grads, config: TrainConfig) -> None:
    sgd_step(state.blocks(), grads, config.lr)
    state.step += 1


def baseline_step(state: ModelState, bag: Bag, config: TrainConfig) -> LossBreakdown:
    """Supervised bag-branch update on a labeled bag."""
    loss, g = _bag_sup(state.branches[0], bag.features, bag.label)
    _apply(state, g, config)
    return LossBreakdown(sup_bag_level=loss)


def ema_update(teacher: dict[str, np.ndarray], student: dict[str, np.ndarray], decay: float) -> None:
    """``teacher <- decay * teacher + (1 - decay) * student`` for blocks ``teacher.<name>``."""
    for name, t in teacher.items():
        s = student[name.removeprefix("teacher.")]
        t[...] = decay * t + (1.0 - decay) * s


def mt_step(state: ModelState, bag: Bag, config: TrainConfig, rng: SeededRng, tau_eff: float = 1.0) -> LossBreakdown:
    """Mean Teacher: supervised loss on labeled bags, student/teacher consistency on unlabeled ones."""
    student = state.branches[0]
    if bag.is_labeled:
        loss, g = _bag_sup(student, bag.features, bag.label)
        lb = LossBreakdown(sup_bag_level=loss, tau_effective=tau_eff)
    else:
        target = state.teacher.forward(feature_noise(rng, bag.features, config.perturb_noise_sigma)).bag_pred
        f = student.forward(instance_dropout(rng, bag.features, config.perturb_dropout_rate))
        lb = LossBreakdown(unsup_bag_level=bce_soft(target, f.bag_pred), tau_effective=tau_eff)
        g = {} if tau_eff == 0 else student.backward(f, tau_eff * bce_soft_grad(target, f.bag_pred), None)[0]
    _apply(state, g, config)
    ema_update(state.teacher_blocks(), state.blocks(), config.ema_decay)
    return lb


def fixmatch_step(state: ModelState, bag: Bag, config: TrainConfig, rng: SeededRng,
                  tau_eff: float = 1.0) -> LossBreakdown:
    """FixMatch: confident weak-view predictions become hard labels for the strong view."""
    model = state.branches[0]
    if bag.is_labeled:
        loss, g = _bag_sup(model, bag.features, bag.label)
        lb = LossBreakdown(sup_bag_level=loss, tau_effective=tau_eff)
    else:
        p_weak = model.forward(feature_noise(rng, bag.features, config.perturb_noise_sigma)).bag_pred
        strong = instance_dropout(rng, bag.features, config.perturb_dropout_rate)
        lb = LossBreakdown(tau_effective=tau_eff)
        g = {}
        if max(p_weak, 1.0 - p_weak) >= config.confidence_threshold:
            hard = 1.0 if p_weak >= 0.5 else 0.0
            f = model.forward(strong)
            lb.unsup_bag_level = bce_soft(hard, f.bag_pred)
            if tau_eff != 0:
                g = model.backward(f, tau_eff * bce_soft_grad(hard, f.bag_pred), None)[0]
    _apply(state, g, config)
    return lb


def labeled_step(state: ModelState, bag: Bag, config: TrainConfig) -> LossBreakdown:
    lb, g = croco_loss_and_grads(state, bag.features, bag.label, config)
    _apply(state, g, config)
    return lb


def unlabeled_step(state: ModelState, bag: Bag, config: TrainConfig, tau_eff: float | None = None) -> LossBreakdown:
    tau_eff = config.tau if tau_eff is None else tau_eff
    lb, g = croco_loss_and_grads(state, bag.features, None, config, tau_eff)
    _apply(state, g, config)
    return lb


def train_step(state: ModelState, bag: Bag, config: TrainConfig, rng: SeededRng, tau_eff: float) -> LossBreakdown:
    if config.method == "croco":
        if bag.is_labeled:
            return labeled_step(state, bag, config)
        return unlabeled_step(state, bag, config, tau_eff)
    if config.method == "baseline":
        return baseline_step(state, bag, config)
    if config.method == "mean_teacher":
        return mt_step(state, bag, config, rng, tau_eff)
    return fixmatch_step(state, bag, config, rng, tau_eff)


# --------------------------------------------------------------------------- inference

def infer(state: ModelState, x) -> tuple[float, np.ndarray]:
    """``(bag score, instance scores)`` used for evaluation.

    The heterogeneous pair scores bags with the bag head and instances with
    the instance head. Single-branch models and the ``bag_bag`` pair fall
    back to normalised attention for instance scores.
    """
    first = state.branches[0]
    if state.branch_pair == "hetero":
        enc, fwds = _forward_pair(state, x)
        return fwds[0].bag_pred, fwds[1].inst_pred
    enc = mlp_forward(state.shared_encoder, x) if state.shared_encoder is not None else None
    f = first.forward(x, enc)
    return f.bag_pred, f.inst_pred


def pseudo_labels(state: ModelState, x) -> tuple[float, np.ndarray]:
    """Bag- and instance-level pseudo-labels, averaged over both branches of a pair."""
    if len(state.branches) == 1:
        f = state.branches[0].forward(x)
        return f.bag_pred, f.inst_pred
    _, fwds = _forward_pair(state, x)
    return 0.5 * (fwds[0].bag_pred + fwds[1].bag_pred), 0.5 * (fwds[0].inst_pred + fwds[1].inst_pred)


# --------------------------------------------------------------------------- training loop

def fit(state: ModelState, dataset: MilDataset, config: TrainConfig, track_metrics: bool = True,
        on_epoch=None):
    """Train ``state`` in place; returns ``(state, [EpochMetrics, ...])``.

    Each epoch visits the labeled bags, then the unlabeled bags, each group
    in its own seeded shuffled order. Baselines skip unlabeled bags.
    """
    from .evalreport import EpochMetrics, epoch_metrics

    config.validate()
    labeled = dataset.labeled
    unlabeled = dataset.unlabeled if config.method != "baseline" else []
    if not labeled:
        raise ConfigError("labeled_ratio", "training needs at least one labeled bag")
    root = SeededRng(config.seed)
    order_l, order_u = root.child("order.labeled"), root.child("order.unlabeled")
    perturb = root.child("perturb")
    history = []
    for epoch in range(config.epochs):
        tau_eff = config.tau_at(epoch)
        sup = LossBreakdown()
        unsup = LossBreakdown()
        for i in order_l.permutation(len(labeled)):
            lb = train_step(state, labeled[i], config, perturb, tau_eff)
            sup.sup_bag_level += lb.sup_bag_level
            sup.sup_ins_level += lb.sup_ins_level
        for i in order_u.permutation(len(unlabeled)):
            lb = train_step(state, unlabeled[i], config, perturb, tau_eff)
            unsup.unsup_bag_level += lb.unsup_bag_level
            unsup.unsup_ins_level += lb.unsup_ins_level
        nl, nu = len(labeled), max(len(unlabeled), 1)
        losses = LossBreakdown(sup.sup_bag_level / nl, sup.sup_ins_level / nl,
                               unsup.unsup_bag_level / nu, unsup.unsup_ins_level / nu, tau_eff)
        m = epoch_metrics(state, dataset, epoch + 1, losses) if track_metrics else EpochMetrics(epoch + 1, losses)
        history.append(m)
        log.debug("epoch %d total=%.6f bag_auc=%.4f ins_auc=%.4f", epoch + 1, losses.total,
                  m.bag_auc_test, m.instance_auc_test)
        if on_epoch is not None:
            on_epoch(m)
    return state, history


def train_config_from_dict(values: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown training option")
    return replace(TrainConfig(), **values).validate()


def config_items(config: TrainConfig) -> dict:
    return asdict(config)
