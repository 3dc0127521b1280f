"""AUC metrics, per-epoch curves, linear probes, experiment grids and CSV output."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, EvaluationError, UndefinedMetricError
from .mildata import GenConfig, MilDataset, generate, partition

log = logging.getLogger(__name__)


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic, ties credited 0.5 via average ranks."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise UndefinedMetricError(f"{s.size} scores for {y.size} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    # average 1-based rank over each run of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [s.size]])
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    # rank sums of half-integers are exact in float64 at these sizes
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_or_nan(scores, labels) -> float:
    try:
        return auc(scores, labels)
    except UndefinedMetricError:
        return float("nan")


def _score_bags(state, bags, fn):
    bag_scores, bag_labels, inst_scores, inst_labels = [], [], [], []
    for bag in bags:
        b, inst = fn(state, bag.features)
        bag_scores.append(b)
        bag_labels.append(bag.hidden_label())
        inst_scores.append(inst)
        inst_labels.append(bag.hidden_instance_labels())
    if not bags:
        return np.array([]), np.array([]), np.array([]), np.array([])
    return (np.array(bag_scores), np.array(bag_labels), np.concatenate(inst_scores),
            np.concatenate(inst_labels))


def collect_scores(state, bags):
    """Bag scores/labels and pooled instance scores/labels from :func:`infer`."""
    from .crocotrain import infer

    return _score_bags(state, bags, infer)


def evaluate(state, dataset: MilDataset) -> tuple[float, float]:
    """``(bag AUC, instance AUC)`` on the test split; instances pooled across bags."""
    test = dataset.test
    if not test:
        raise UndefinedMetricError("dataset has no test bags")
    bs, bl, is_, il = collect_scores(state, test)
    return auc(bs, bl), auc(is_, il)


@dataclass
class EpochMetrics:
    epoch: int
    losses: object  # crocotrain.LossBreakdown
    bag_auc_test: float = float("nan")
    instance_auc_test: float = float("nan")
    pseudo_bag_auc: float = float("nan")
    pseudo_ins_auc: float = float("nan")


def epoch_metrics(state, dataset: MilDataset, epoch: int, losses) -> EpochMetrics:
    from .crocotrain import pseudo_labels

    m = EpochMetrics(epoch, losses)
    if dataset.test:
        bs, bl, is_, il = collect_scores(state, dataset.test)
        m.bag_auc_test = auc_or_nan(bs, bl)
        m.instance_auc_test = auc_or_nan(is_, il)
    if dataset.unlabeled:
        bs, bl, is_, il = _score_bags(state, dataset.unlabeled, pseudo_labels)
        m.pseudo_bag_auc = auc_or_nan(bs, bl)
        m.pseudo_ins_auc = auc_or_nan(is_, il)
    return m


# --------------------------------------------------------------------------- linear probe

def encoder_features(state, bags) -> tuple[np.ndarray, np.ndarray]:
    """Frozen first-branch encoder features and true labels of every instance."""
    from .numkernel import mlp_forward

    enc = state.shared_encoder if state.shared_encoder is not None else state.branches[0].encoder
    feats = [mlp_forward(enc, b.features)[1] for b in bags]
    labels = [b.hidden_instance_labels() for b in bags]
    return np.concatenate(feats), np.concatenate(labels)


def linear_probe(features, labels, seed: int = 0, epochs: int = 100, lr: float = 0.1,
                 batch_size: int = 32) -> float:
    """Held-out AUC of a logistic regressor fit by minibatch SGD on a stratified 80/20 split."""
    from .numkernel import SeededRng
    from ._pykernel import sigmoid

    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.float64)
    rng = SeededRng(seed).child("probe")
    train_idx, test_idx = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(0.2 * idx.size))
        if n_test == 0 or n_test == idx.size:
            raise ConfigError("labels", f"class {cls} too small for an 80/20 split")
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    tr, te = np.concatenate(train_idx), np.concatenate(test_idx)
    mu, sd = X[tr].mean(axis=0), X[tr].std(axis=0) + 1e-12
    Xs = (X - mu) / sd
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(epochs):
        perm = tr[rng.permutation(tr.size)]
        for start in range(0, perm.size, batch_size):
            batch = perm[start:start + batch_size]
            err = sigmoid(Xs[batch] @ w + b) - y[batch]
            w -= lr * Xs[batch].T @ err / batch.size
            b -= lr * err.mean()
    return auc(Xs[te] @ w + b, y[te])


# --------------------------------------------------------------------------- grids

@dataclass(frozen=True)
class GridCell:
    pir: float
    labeled_ratio: float
    variant: str
    seed: int

    @property
    def key(self) -> tuple:
        return (self.pir, self.labeled_ratio, self.variant, self.seed)

    @property
    def slug(self) -> str:
        return f"pir{self.pir:g}_lr{self.labeled_ratio:g}_{self.variant}_s{self.seed}"


@dataclass
class GridSpec:
    cells: list[GridCell]
    gen: GenConfig = field(default_factory=GenConfig)
    train: dict = field(default_factory=dict)  # TrainConfig overrides shared by all cells
    variants: dict[str, dict] = field(default_factory=dict)  # variant name -> TrainConfig overrides

    def validate(self) -> "GridSpec":
        if not self.cells:
            raise ConfigError("grid", "grid has no cells")
        seen = set()
        for c in self.cells:
            if c.key in seen:
                raise ConfigError("seeds", f"duplicate cell {c.slug}")
            seen.add(c.key)
            if c.variant not in self.variants:
                raise ConfigError("methods", f"unknown variant {c.variant!r}")
        return self

    @classmethod
    def product(cls, pirs, ratios, names, seeds, **kw) -> "GridSpec":
        """Full factorial over pirs x ratios x variant names x seeds; ``kw`` fills the other fields."""
        cells = [GridCell(float(p), float(r), v, int(s)) for p in pirs for r in ratios for v in names for s in seeds]
        return cls(cells, **kw)


@dataclass
class CellResult:
    cell: GridCell
    bag_auc: float = float("nan")
    instance_auc: float = float("nan")
    error: str = ""
    history: list = field(default_factory=list)


@dataclass
class ResultRow:
    pir: float
    labeled_ratio: float
    variant: str
    n_seeds: int
    n_failed: int
    bag_auc_mean: float
    bag_auc_std: float
    instance_auc_mean: float
    instance_auc_std: float


@dataclass
class ResultTable:
    rows: list[ResultRow]
    cells: list[CellResult] = field(default_factory=list)

    def row(self, pir, labeled_ratio, variant) -> ResultRow:
        for r in self.rows:
            if (r.pir, r.labeled_ratio, r.variant) == (pir, labeled_ratio, variant):
                return r
        raise KeyError((pir, labeled_ratio, variant))


def run_cell(cell: GridCell, spec: GridSpec, dataset: MilDataset | None = None) -> CellResult:
    """Generate, partition, train and evaluate one cell; failures are captured."""
    from .crocotrain import fit, init_model, train_config_from_dict

    try:
        overrides = dict(spec.train)
        overrides.update(spec.variants[cell.variant])
        overrides["seed"] = cell.seed
        config = train_config_from_dict(overrides)
        if dataset is None:
            gen = replace(GenConfig.from_pir(cell.pir, spec.gen.bag_size, **_gen_kwargs(spec.gen)),
                          seed=cell.seed, labeled_ratio=cell.labeled_ratio)
            dataset = generate(gen)
        else:
            dataset = partition(dataset, cell.labeled_ratio, cell.seed)
        state = init_model(config, dataset.d)
        state, history = fit(state, dataset, config)
        bag_auc, ins_auc = evaluate(state, dataset)
        return CellResult(cell, bag_auc, ins_auc, "", history)
    except Exception as exc:  # noqa: BLE001 - recorded per cell, grid continues
        log.warning("cell %s failed: %s", cell.slug, exc)
        return CellResult(cell, error=f"{type(exc).__name__}: {exc}")


def _gen_kwargs(gen: GenConfig) -> dict:
    from dataclasses import asdict

    kw = asdict(gen)
    for k in ("bag_size", "positive_count", "seed", "labeled_ratio"):
        kw.pop(k)
    return kw


def _run_cell_args(args):
    return run_cell(*args)


def aggregate(results: list[CellResult]) -> ResultTable:
    groups: dict[tuple, list[CellResult]] = {}
    for r in results:
        groups.setdefault((r.cell.pir, r.cell.labeled_ratio, r.cell.variant), []).append(r)
    rows = []
    for key in sorted(groups):
        rs = sorted(groups[key], key=lambda r: r.cell.seed)
        ok = [r for r in rs if not r.error]
        bag = np.array([r.bag_auc for r in ok])
        ins = np.array([r.instance_auc for r in ok])

        def stat(v, f):
            return float(f(v)) if v.size else float("nan")

        rows.append(ResultRow(*key, len(rs), len(rs) - len(ok), stat(bag, np.mean), stat(bag, np.std),
                              stat(ins, np.mean), stat(ins, np.std)))
    return ResultTable(rows, sorted(results, key=lambda r: r.cell.key))


def run_grid(spec: GridSpec, jobs: int = 1, dataset: MilDataset | None = None) -> ResultTable:
    """Run every cell (in parallel when ``jobs > 1``) and aggregate over seeds.

    Mean and population standard deviation are taken over successful seeds.
    """
    spec.validate()
    if jobs > 1 and len(spec.cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_args, [(c, spec, dataset) for c in spec.cells]))
    else:
        results = [run_cell(c, spec, dataset) for c in spec.cells]
    return aggregate(results)


# --------------------------------------------------------------------------- CSV emission

GRID_COLUMNS = ["pir", "labeled_ratio", "variant", "n_seeds", "n_failed", "bag_auc_mean", "bag_auc_std",
                "instance_auc_mean", "instance_auc_std"]
CURVE_COLUMNS = ["epoch", "sup_bag_level", "sup_ins_level", "unsup_bag_level", "unsup_ins_level", "tau_effective",
                 "total", "bag_auc_test", "instance_auc_test", "pseudo_bag_auc", "pseudo_ins_auc"]


def fmt(v) -> str:
    """Six-decimal fixed formatting used by every CSV column."""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.6f}"


def _write(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def emit_grid(table: ResultTable) -> str:
    return _write(GRID_COLUMNS, [[getattr(r, c) for c in GRID_COLUMNS] for r in table.rows])


def curve_row(m: EpochMetrics) -> list:
    lb = m.losses
    return [m.epoch, lb.sup_bag_level, lb.sup_ins_level, lb.unsup_bag_level, lb.unsup_ins_level,
            lb.tau_effective, lb.total, m.bag_auc_test, m.instance_auc_test, m.pseudo_bag_auc, m.pseudo_ins_auc]


def emit_curves(history: list[EpochMetrics]) -> str:
    return _write(CURVE_COLUMNS, [curve_row(m) for m in history])


def emit_cells(table: ResultTable) -> str:
    cols = ["pir", "labeled_ratio", "variant", "seed", "bag_auc", "instance_auc", "error"]
    rows = [[r.cell.pir, r.cell.labeled_ratio, r.cell.variant, r.cell.seed, r.bag_auc, r.instance_auc, r.error]
            for r in table.cells]
    return _write(cols, rows)


def parse_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


def summarize(rows: list[dict[str, str]], name: str = "") -> str:
    """Plain-text summary of a grid results or curves table."""
    head = f"== {name}\n" if name else ""
    if not rows:
        return head + "(empty)\n"
    cols = list(rows[0])
    if cols == GRID_COLUMNS:
        return head + _summarize_grid(rows)
    if cols == CURVE_COLUMNS:
        return head + _summarize_curves(rows)
    raise EvaluationError(f"{name or 'table'}: unrecognised columns {', '.join(cols)}")


def _summarize_grid(rows) -> str:
    lines = [f"{'pir':>6} {'ratio':>6} {'variant':<16} {'bag AUC':>17} {'instance AUC':>17} {'d bag':>7} {'d inst':>7}"]
    base = {(r["pir"], r["labeled_ratio"]): r for r in rows if r["variant"] == "baseline"}
    for r in rows:
        ref = base.get((r["pir"], r["labeled_ratio"]))
        if ref is not None and r is not ref:
            db = f"{float(r['bag_auc_mean']) - float(ref['bag_auc_mean']):+.4f}"
            di = f"{float(r['instance_auc_mean']) - float(ref['instance_auc_mean']):+.4f}"
        else:
            db = di = ""
        lines.append(f"{float(r['pir']):>6.3f} {float(r['labeled_ratio']):>6.3f} {r['variant']:<16} "
                     f"{float(r['bag_auc_mean']):.4f} +- {float(r['bag_auc_std']):.4f} "
                     f"{float(r['instance_auc_mean']):.4f} +- {float(r['instance_auc_std']):.4f} {db:>7} {di:>7}")
    return "\n".join(lines) + "\n"


def _summarize_curves(rows) -> str:
    first, last = rows[0], rows[-1]
    lines = [f"epochs: {len(rows)}"]
    for c in CURVE_COLUMNS[7:]:
        lines.append(f"{c:<18} first {float(first[c]):.4f}  last {float(last[c]):.4f}")
    lines.append(f"{'total loss':<18} first {float(first['total']):.4f}  last {float(last['total']):.4f}")
    return "\n".join(lines) + "\n"
