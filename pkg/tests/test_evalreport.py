import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from croco.crocotrain import TrainConfig, fit, init_model
from croco.errors import EvaluationError, UndefinedMetricError
from croco.evalreport import (CURVE_COLUMNS, GRID_COLUMNS, CellResult, GridCell, GridSpec, aggregate, auc,
                              emit_cells, emit_curves, emit_grid, encoder_features, evaluate, fmt, linear_probe,
                              parse_csv, run_cell, run_grid, summarize)

from conftest import small_gen


def pairwise_auc(s, y):
    pos = [a for a, t in zip(s, y) if t == 1]
    neg = [a for a, t in zip(s, y) if t == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


labeled_scores = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 1)), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)).filter(lambda t: 0 < sum(t[1]) < len(t[1])))


class TestAuc:
    @settings(max_examples=300)
    @given(labeled_scores)
    def test_matches_pairwise_count(self, case):
        s, y = case
        assert auc(s, y) == pytest.approx(pairwise_auc(s, y), abs=1e-12)

    @settings(max_examples=100)
    @given(labeled_scores)
    def test_label_flip_complements(self, case):
        s, y = case
        assert auc(s, y) + auc(s, 1 - np.array(y)) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=100)
    @given(labeled_scores)
    def test_monotone_invariance(self, case):
        s, y = case
        assert auc(np.exp(np.array(s)) * 3 + 1, y) == auc(s, y)

    def test_perfect_and_reversed(self):
        assert auc([0.1, 0.2, 0.9], [0, 0, 1]) == 1.0
        assert auc([0.9, 0.2, 0.1], [0, 0, 1]) == 0.0

    def test_all_tied(self):
        assert auc([0.3] * 4, [0, 1, 0, 1]) == 0.5

    @pytest.mark.parametrize("y", [[1, 1, 1], [0, 0, 0]])
    def test_single_class_undefined(self, y):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2, 0.3], y)

    def test_length_mismatch(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [0, 1, 1])


class TestLinearProbe:
    def test_separable(self, rng):
        x = np.vstack([rng.normal(-3, 1, size=(100, 3)), rng.normal(3, 1, size=(100, 3))])
        y = np.repeat([0, 1], 100)
        assert linear_probe(x, y) >= 0.99

    def test_shuffled_near_chance(self, rng):
        x = rng.normal(size=(400, 3))
        y = rng.permutation(np.repeat([0, 1], 200))
        assert abs(linear_probe(x, y) - 0.5) < 0.12

    def test_deterministic(self, rng):
        x = rng.normal(size=(60, 2))
        y = (x[:, 0] > 0).astype(int)
        assert linear_probe(x, y, seed=3) == linear_probe(x, y, seed=3)

    def test_encoder_features_shape(self, small_ds):
        state = init_model(TrainConfig(hidden_dim=6), small_ds.d)
        f, y = encoder_features(state, small_ds.test)
        assert f.shape == (len(y), 6)


def tiny_spec(seeds=(0,), variants=("baseline",), **kw):
    gen = small_gen()
    return GridSpec.product([0.25], [0.5], list(variants), list(seeds), gen=gen,
                            train=dict(hidden_dim=4, epochs=2, lr=0.05),
                            variants={"baseline": dict(method="baseline"), "croco": dict(), **kw})


class TestGrid:
    def test_one_cell_equals_direct_run(self):
        from croco.mildata import generate

        spec = tiny_spec(seeds=(3,))
        table = run_grid(spec)
        gen = small_gen(seed=3, positive_count=2)
        ds = generate(gen)
        config = TrainConfig(method="baseline", hidden_dim=4, epochs=2, lr=0.05, seed=3)
        state, _ = fit(init_model(config, ds.d), ds, config)
        b, i = evaluate(state, ds)
        row = table.rows[0]
        assert (row.bag_auc_mean, row.instance_auc_mean) == (b, i)
        assert row.bag_auc_std == 0.0 and row.n_seeds == 1

    def test_cell_order_irrelevant(self):
        spec = tiny_spec(seeds=(0, 1), variants=("baseline", "croco"))
        forward = emit_grid(run_grid(spec))
        spec.cells = spec.cells[::-1]
        assert emit_grid(run_grid(spec)) == forward

    def test_parallel_matches_serial(self):
        spec = tiny_spec(seeds=(0, 1))
        assert emit_grid(run_grid(spec, jobs=2)) == emit_grid(run_grid(spec, jobs=1))

    def test_aggregate_hand_computed(self):
        cells = [CellResult(GridCell(0.1, 0.5, "v", s), b, i) for s, b, i in [(0, 0.6, 0.5), (1, 0.8, 0.7)]]
        cells.append(CellResult(GridCell(0.1, 0.5, "v", 2), error="boom"))
        row = aggregate(cells).rows[0]
        assert row.bag_auc_mean == pytest.approx(0.7)
        assert row.bag_auc_std == pytest.approx(0.1)  # population std
        assert row.instance_auc_mean == pytest.approx(0.6)
        assert (row.n_seeds, row.n_failed) == (3, 1)

    def test_failed_cell_recorded(self):
        spec = tiny_spec(bad=dict(lr=-1.0), variants=("bad",))
        result = run_cell(spec.cells[0], spec)
        assert "ConfigError" in result.error and math.isnan(result.bag_auc)

    def test_validation(self):
        from croco.errors import ConfigError

        with pytest.raises(ConfigError):
            GridSpec([]).validate()
        with pytest.raises(ConfigError):
            tiny_spec(variants=("nope",)).validate()


class TestCsv:
    def test_fmt(self):
        assert fmt(0.5) == "0.500000" and fmt(3) == "3" and fmt(float("nan")) == "nan" and fmt("x") == "x"

    def test_grid_roundtrip(self):
        table = aggregate([CellResult(GridCell(0.1, 0.5, "baseline", 0), 0.6, 0.5)])
        rows = parse_csv(emit_grid(table))
        assert list(rows[0]) == GRID_COLUMNS
        assert float(rows[0]["bag_auc_mean"]) == 0.6

    def test_empty_is_header_only(self):
        from croco.evalreport import ResultTable

        assert emit_grid(ResultTable([])) == ",".join(GRID_COLUMNS) + "\n"
        assert emit_curves([]) == ",".join(CURVE_COLUMNS) + "\n"

    def test_curves_one_row_per_epoch(self, small_ds):
        config = TrainConfig(hidden_dim=4, epochs=3, lr=0.05)
        _, hist = fit(init_model(config, small_ds.d), small_ds, config)
        rows = parse_csv(emit_curves(hist))
        assert [r["epoch"] for r in rows] == ["1", "2", "3"]
        for r, m in zip(rows, hist):
            assert float(r["total"]) == pytest.approx(m.losses.total, abs=5e-7)

    def test_cells_listing(self):
        table = aggregate([CellResult(GridCell(0.1, 0.5, "v", 0), error="E: x")])
        rows = parse_csv(emit_cells(table))
        assert rows[0]["error"] == "E: x" and rows[0]["bag_auc"] == "nan"


class TestSummarize:
    def test_grid_deltas(self):
        cells = [CellResult(GridCell(0.1, 0.5, v, 0), b, b) for v, b in [("baseline", 0.6), ("croco", 0.7)]]
        text = summarize(parse_csv(emit_grid(aggregate(cells))), "g")
        assert text.startswith("== g\n")
        assert "+0.1000" in text

    def test_curves(self, small_ds):
        config = TrainConfig(hidden_dim=4, epochs=2, lr=0.05)
        _, hist = fit(init_model(config, small_ds.d), small_ds, config)
        assert "epochs: 2" in summarize(parse_csv(emit_curves(hist)))

    def test_empty_and_unknown(self):
        assert summarize([]) == "(empty)\n"
        with pytest.raises(EvaluationError):
            summarize([{"a": "1"}])
