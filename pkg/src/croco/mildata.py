"""MIL data model, synthetic bag generator, labeled/unlabeled partitioning, file I/O.

The generator mimics the CIFAR-10-MIL construction on Gaussian clusters:
``K`` categories, one of which is designated positive. Positive bags hold
exactly ``a`` instances of the positive category and ``B - a`` instances of
the others; negative bags hold ``B`` non-positive instances.

Hidden labels
-------------
A :class:`Bag` in the unlabeled split refuses to hand out its label through
:attr:`Bag.label`, and instance ground truth is only reachable through
:meth:`Bag.hidden_instance_labels` / :meth:`Bag.hidden_label`. Training code
uses ``label`` and ``features``; evaluation code is the only caller of the
``hidden_*`` accessors.
"""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import CapacityError, ConfigError, DomainError, FormatError, HiddenLabelError, ParseError
from .numkernel import SeededRng

LABELED = "L"
UNLABELED = "U"
TEST = "T"
SPLITS = (LABELED, UNLABELED, TEST)


def bag_label_from_instances(instance_labels) -> int:
    """1 if any instance is positive, else 0."""
    labels = np.asarray(instance_labels)
    if labels.size == 0:
        raise DomainError("bag has no instances")
    return int(np.any(labels != 0))


@dataclass
class Bag:
    bag_id: int
    features: np.ndarray  # [n, d]
    instance_ids: np.ndarray  # [n]
    _instance_labels: np.ndarray = field(repr=False)  # [n] ground truth, evaluation only
    _label: int | None = field(default=None, repr=False)
    split: str = TEST

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DomainError(f"bag {self.bag_id}: features must be a nonempty [n, d] matrix")
        if not np.all(np.isfinite(self.features)):
            raise DomainError(f"bag {self.bag_id}: non-finite features")
        if self.split not in SPLITS:
            raise DomainError(f"bag {self.bag_id}: unknown split {self.split!r}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def label(self) -> int:
        """Bag label as seen by training; raises for unlabeled bags."""
        if self.split == UNLABELED:
            raise HiddenLabelError(f"bag {self.bag_id} is unlabeled")
        if self._label is None:
            raise HiddenLabelError(f"bag {self.bag_id} has no label")
        return self._label

    @property
    def is_labeled(self) -> bool:
        return self.split != UNLABELED and self._label is not None

    def hidden_label(self) -> int:
        """Ground-truth bag label regardless of split (evaluation only)."""
        if self._label is not None:
            return self._label
        return bag_label_from_instances(self._instance_labels)

    def hidden_instance_labels(self) -> np.ndarray:
        """Ground-truth instance labels (evaluation only)."""
        return self._instance_labels


@dataclass(frozen=True)
class GenConfig:
    num_clusters: int = 10
    positive_cluster: int = 9
    d: int = 16
    bag_size: int = 100
    positive_count: int = 10
    num_pos_bags: int = 100
    num_neg_bags: int = 100
    cluster_center_scale: float = 1.0
    noise_sigma: float = 0.5
    labeled_ratio: float = 0.2
    test_fraction: float = 0.25
    pool_size: int = 1000  # distinct instances per cluster
    seed: int = 0

    def validate(self) -> "GenConfig":
        if self.num_clusters < 2:
            raise ConfigError("num_clusters", "need at least 2 clusters")
        if not 0 <= self.positive_cluster < self.num_clusters:
            raise ConfigError("positive_cluster", "must index one of the clusters")
        if self.d < 1:
            raise ConfigError("d", "feature dimension must be >= 1")
        if self.bag_size < 1:
            raise ConfigError("bag_size", "must be >= 1")
        if not 0 < self.positive_count <= self.bag_size:
            raise ConfigError("positive_count", "need 0 < positive_count <= bag_size")
        if self.num_pos_bags < 1 or self.num_neg_bags < 1:
            raise ConfigError("num_pos_bags", "need at least one bag of each class")
        if self.cluster_center_scale <= 0:
            raise ConfigError("cluster_center_scale", "must be > 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma", "must be >= 0")
        if not 0 < self.labeled_ratio <= 1:
            raise ConfigError("labeled_ratio", "must lie in (0, 1]")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction", "must lie in [0, 1)")
        if self.pool_size < 1:
            raise ConfigError("pool_size", "must be >= 1")
        return self

    @classmethod
    def from_pir(cls, pir: float, bag_size: int = 100, **kw) -> "GenConfig":
        """Build a config from a positive instance ratio, ``a = round(pir * B)``."""
        if not 0 < pir <= 1:
            raise ConfigError("pir", "positive instance ratio must lie in (0, 1]")
        return cls(bag_size=bag_size, positive_count=max(1, int(round(pir * bag_size))), **kw)


@dataclass
class MilDataset:
    bags: list[Bag]
    d: int
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for bag in self.bags:
            if bag.features.shape[1] != self.d:
                raise FormatError(f"bag {bag.bag_id} has feature dimension {bag.features.shape[1]}, expected {self.d}")

    def split(self, which: str) -> list[Bag]:
        return [b for b in self.bags if b.split == which]

    @property
    def labeled(self) -> list[Bag]:
        return self.split(LABELED)

    @property
    def unlabeled(self) -> list[Bag]:
        return self.split(UNLABELED)

    @property
    def test(self) -> list[Bag]:
        return self.split(TEST)

    @property
    def counts(self) -> tuple[int, int]:
        """``(N labeled, M unlabeled)``."""
        return len(self.labeled), len(self.unlabeled)


def _cluster_centers(rng: SeededRng, k: int, d: int, scale: float) -> np.ndarray:
    # random unit directions scaled to a common radius: pairwise distances ~ scale * sqrt(2)
    raw = rng.normal(size=(k, d))
    return scale * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def generate(config: GenConfig) -> MilDataset:
    """Generate a dataset; splits are assigned by :func:`partition`."""
    config.validate()
    B, a = config.bag_size, config.positive_count
    n_neg_pool = config.pool_size * (config.num_clusters - 1)
    if a > config.pool_size:
        raise CapacityError(f"positive_count {a} exceeds the positive pool of {config.pool_size} instances")
    if B > n_neg_pool:
        raise CapacityError(f"bag_size {B} exceeds the negative pool of {n_neg_pool} instances")

    rng = SeededRng(config.seed).child("generate")
    centers = _cluster_centers(rng.child("centers"), config.num_clusters, config.d, config.cluster_center_scale)
    # instance pool: id = cluster * pool_size + index
    pool_ids = np.arange(config.num_clusters * config.pool_size)
    pool_cluster = pool_ids // config.pool_size
    noise = rng.child("pool").normal(0.0, config.noise_sigma, size=(pool_ids.size, config.d))
    pool_x = centers[pool_cluster] + noise
    pos_ids = pool_ids[pool_cluster == config.positive_cluster]
    neg_ids = pool_ids[pool_cluster != config.positive_cluster]

    draw = rng.child("bags")
    labels = [1] * config.num_pos_bags + [0] * config.num_neg_bags
    order = draw.permutation(len(labels))
    bags = []
    for bag_id, idx in enumerate(order):
        if labels[idx] == 1:
            ids = np.concatenate([draw.choice(pos_ids, a, replace=False), draw.choice(neg_ids, B - a, replace=False)])
            ids = ids[draw.permutation(B)]
        else:
            ids = draw.choice(neg_ids, B, replace=False)
        inst_labels = (pool_cluster[ids] == config.positive_cluster).astype(np.int64)
        bags.append(Bag(bag_id, pool_x[ids], ids.astype(np.int64), inst_labels,
                        bag_label_from_instances(inst_labels), TEST))
    meta = {k: repr(v) for k, v in asdict(config).items()}
    meta["sampling"] = "with-replacement-across-bags"
    ds = MilDataset(bags, config.d, meta)
    return partition(ds, config.labeled_ratio, config.seed, config.test_fraction)


def _stratified_take(rng: SeededRng, bags: list[Bag], count: int) -> tuple[list[Bag], list[Bag]]:
    """Pick ``count`` bags keeping the positive fraction; returns (picked, rest)."""
    pos = [b for b in bags if b.hidden_label() == 1]
    neg = [b for b in bags if b.hidden_label() == 0]
    if not bags:
        return [], []
    n_pos = int(round(count * len(pos) / len(bags)))
    n_pos = min(max(n_pos, count - len(neg)), len(pos))
    n_neg = count - n_pos
    pos = [pos[i] for i in rng.permutation(len(pos))]
    neg = [neg[i] for i in rng.permutation(len(neg))]
    picked = pos[:n_pos] + neg[:n_neg]
    rest = pos[n_pos:] + neg[n_neg:]
    key = lambda b: b.bag_id  # noqa: E731
    return sorted(picked, key=key), sorted(rest, key=key)


def partition(dataset: MilDataset, labeled_ratio: float, seed: int, test_fraction: float | None = None) -> MilDataset:
    """Assign splits; returns a new dataset sharing the feature arrays.

    With ``test_fraction=None`` the existing test bags are kept and only the
    train bags are re-split. Otherwise a stratified test split of
    ``round(test_fraction * count)`` bags per class is drawn first.
    """
    if not 0 < labeled_ratio <= 1:
        raise DomainError(f"labeled_ratio must lie in (0, 1], got {labeled_ratio}")
    rng = SeededRng(seed).child("partition")
    if test_fraction is None:
        test = [b for b in dataset.bags if b.split == TEST]
        train = [b for b in dataset.bags if b.split != TEST]
    else:
        pos = [b for b in dataset.bags if b.hidden_label() == 1]
        neg = [b for b in dataset.bags if b.hidden_label() == 0]
        test_rng = rng.child("test")
        test, train = [], []
        for group in (pos, neg):
            t, r = _stratified_take(test_rng, group, int(round(test_fraction * len(group))))
            test += t
            train += r
    n_lab = int(round(labeled_ratio * len(train)))
    lab, unl = _stratified_take(rng.child("labeled"), train, n_lab)
    split_of = {b.bag_id: TEST for b in test}
    split_of.update({b.bag_id: LABELED for b in lab})
    split_of.update({b.bag_id: UNLABELED for b in unl})
    bags = [
        Bag(b.bag_id, b.features, b.instance_ids, b._instance_labels, b.hidden_label(), split_of[b.bag_id])
        for b in dataset.bags
    ]
    meta = dict(dataset.meta)
    meta["labeled_ratio"] = repr(float(labeled_ratio))
    return MilDataset(bags, dataset.d, meta)


def without_unlabeled(dataset: MilDataset) -> MilDataset:
    return MilDataset([b for b in dataset.bags if b.split != UNLABELED], dataset.d, dict(dataset.meta))


# --------------------------------------------------------------------------- I/O

HEADER = "MILDS v1"


def dumps(dataset: MilDataset) -> str:
    out = io.StringIO()
    out.write(f"{HEADER} d={dataset.d} bags={len(dataset.bags)}\n")
    for key in sorted(dataset.meta):
        out.write(f"# {key}={dataset.meta[key]}\n")
    for bag in dataset.bags:
        label = "?" if bag.split == UNLABELED or bag._label is None else str(bag._label)
        out.write(f"BAG id={bag.bag_id} n={bag.n} label={label} split={bag.split}\n")
        for row, inst_id, y in zip(bag.features, bag.instance_ids, bag._instance_labels):
            out.write(" ".join(repr(float(v)) for v in row))
            out.write(f" | {int(y)} #{int(inst_id)}\n")
    return out.getvalue()


def save(dataset: MilDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(dataset))


def _kv(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"expected key=value, got {tok!r}", lineno)
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def loads(text: str) -> MilDataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(HEADER):
        raise ParseError(f"missing '{HEADER}' header", 1)
    head = _kv(lines[0][len(HEADER):].split(), 1)
    try:
        d, n_bags = int(head["d"]), int(head["bags"])
    except (KeyError, ValueError):
        raise ParseError("header needs integer d= and bags=", 1) from None
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if "=" in body:
            k, v = body.split("=", 1)
            meta[k] = v
        i += 1
    bags = []
    while i < len(lines):
        lineno = i + 1
        parts = lines[i].split()
        if not parts or parts[0] != "BAG":
            raise ParseError(f"expected BAG header, got {lines[i]!r}", lineno)
        kv = _kv(parts[1:], lineno)
        try:
            bag_id, n = int(kv["id"]), int(kv["n"])
            label_tok, split = kv["label"], kv["split"]
        except (KeyError, ValueError):
            raise ParseError("BAG header needs id=, n=, label=, split=", lineno) from None
        if split not in SPLITS:
            raise ParseError(f"unknown split {split!r}", lineno)
        if label_tok not in ("0", "1", "?"):
            raise ParseError(f"label must be 0, 1 or ?, got {label_tok!r}", lineno)
        if n < 1:
            raise FormatError("bag must hold at least one instance", lineno)
        feats = np.empty((n, d))
        ids = np.empty(n, dtype=np.int64)
        ys = np.empty(n, dtype=np.int64)
        for j in range(n):
            i += 1
            lineno = i + 1
            if i >= len(lines):
                raise ParseError(f"bag {bag_id}: file ends after {j} of {n} instances", lineno)
            line = lines[i]
            if "|" not in line:
                raise ParseError("instance line needs '| <label>'", lineno)
            left, right = line.split("|", 1)
            vals = left.split()
            if len(vals) != d:
                raise ParseError(f"expected {d} features, found {len(vals)}", lineno)
            try:
                feats[j] = [float(v) for v in vals]
            except ValueError:
                raise ParseError("non-numeric feature value", lineno) from None
            rtoks = right.split()
            if not rtoks or rtoks[0] not in ("0", "1"):
                raise ParseError("instance label must be 0 or 1", lineno)
            ys[j] = int(rtoks[0])
            ids[j] = int(rtoks[1][1:]) if len(rtoks) > 1 and rtoks[1].startswith("#") else j
        label = None if label_tok == "?" else int(label_tok)
        if label is not None and label != bag_label_from_instances(ys):
            raise FormatError(f"bag {bag_id}: label {label} contradicts its instance labels", lineno)
        if label is None and split != UNLABELED:
            raise FormatError(f"bag {bag_id}: labeled or test bag without a label", lineno)
        bags.append(Bag(bag_id, feats, ids, ys, label if label is not None else bag_label_from_instances(ys), split))
        i += 1
    if len(bags) != n_bags:
        raise FormatError(f"header announces {n_bags} bags, found {len(bags)}", len(lines))
    return MilDataset(bags, d, meta)


def load(path) -> MilDataset:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def gen_config_fields() -> list[str]:
    return [f.name for f in fields(GenConfig)]


__all__ = [
    "Bag", "GenConfig", "MilDataset", "LABELED", "UNLABELED", "TEST",
    "bag_label_from_instances", "generate", "partition", "without_unlabeled",
    "save", "load", "dumps", "loads",
]
