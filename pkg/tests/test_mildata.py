import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from croco.errors import CapacityError, ConfigError, DomainError, FormatError, HiddenLabelError, ParseError
from croco.mildata import (LABELED, TEST, UNLABELED, Bag, GenConfig, bag_label_from_instances, dumps, generate,
                           load, loads, partition, save, without_unlabeled)

from conftest import small_gen


class TestBagLabel:
    @settings(max_examples=300)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=40))
    def test_any_positive(self, ys):
        assert bag_label_from_instances(ys) == int(max(ys) == 1)

    def test_empty(self):
        with pytest.raises(DomainError):
            bag_label_from_instances([])


class TestBagAccess:
    def test_unlabeled_hides_label(self):
        b = Bag(0, np.zeros((2, 3)), np.arange(2), np.array([0, 1]), 1, UNLABELED)
        with pytest.raises(HiddenLabelError):
            _ = b.label
        assert b.hidden_label() == 1
        assert not b.is_labeled

    def test_labeled_exposes_label(self):
        b = Bag(0, np.zeros((2, 3)), np.arange(2), np.array([0, 0]), 0, LABELED)
        assert b.label == 0 and b.is_labeled

    def test_rejects_bad_features(self):
        with pytest.raises(DomainError):
            Bag(0, np.zeros((0, 3)), np.arange(0), np.array([]), 0)
        with pytest.raises(DomainError):
            Bag(0, np.full((1, 2), np.nan), np.arange(1), np.array([0]), 0)


class TestGenConfig:
    def test_from_pir(self):
        assert GenConfig.from_pir(0.1, 100).positive_count == 10
        assert GenConfig.from_pir(0.01, 100).positive_count == 1

    @pytest.mark.parametrize("pir", [0.0, 1.5, -0.1])
    def test_bad_pir(self, pir):
        with pytest.raises(ConfigError) as exc:
            GenConfig.from_pir(pir, 100)
        assert exc.value.field == "pir"

    @pytest.mark.parametrize("field,value", [("positive_count", 0), ("labeled_ratio", 0.0), ("noise_sigma", -1.0),
                                             ("positive_cluster", 10), ("test_fraction", 1.0)])
    def test_validation_names_field(self, field, value):
        with pytest.raises(ConfigError) as exc:
            small_gen(**{field: value}).validate()
        assert exc.value.field == field

    def test_capacity(self):
        with pytest.raises(CapacityError):
            generate(small_gen(pool_size=1, positive_count=2))


class TestGenerate:
    def test_protocol(self, small_ds):
        cfg = small_gen()
        assert len(small_ds.bags) == cfg.num_pos_bags + cfg.num_neg_bags
        for b in small_ds.bags:
            ys = b.hidden_instance_labels()
            assert b.hidden_label() == bag_label_from_instances(ys)
            assert b.n == cfg.bag_size
            assert ys.sum() in (0, cfg.positive_count)
            assert len(set(b.instance_ids.tolist())) == b.n

    def test_instance_ids_encode_cluster(self, small_ds):
        cfg = small_gen()
        for b in small_ds.bags:
            cluster = b.instance_ids // cfg.pool_size
            assert np.array_equal(cluster == cfg.positive_cluster, b.hidden_instance_labels() == 1)

    def test_deterministic(self):
        assert dumps(generate(small_gen(seed=3))) == dumps(generate(small_gen(seed=3)))
        assert dumps(generate(small_gen(seed=3))) != dumps(generate(small_gen(seed=4)))

    def test_clusters_separate_without_noise(self):
        ds = generate(small_gen(noise_sigma=0.0))
        rows = {}
        for b in ds.bags:
            for x, i in zip(b.features, b.instance_ids):
                rows.setdefault(int(i) // 200, set()).add(tuple(np.round(x, 12)))
        assert all(len(v) == 1 for v in rows.values())


class TestPartition:
    def test_counts(self):
        ds = generate(small_gen(num_pos_bags=20, num_neg_bags=20, labeled_ratio=0.25, test_fraction=0.25))
        assert len(ds.test) == 10
        assert len(ds.labeled) == round(0.25 * 30)
        assert len(ds.unlabeled) == 30 - len(ds.labeled)
        assert ds.counts == (len(ds.labeled), len(ds.unlabeled))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 1.0), st.integers(0, 100))
    def test_class_balance(self, ratio, seed):
        ds = partition(generate(small_gen(num_pos_bags=16, num_neg_bags=24)), ratio, seed)
        lab, unl = ds.labeled, ds.unlabeled
        frac = 16 / 40
        assert abs(sum(b.hidden_label() for b in lab) - frac * len(lab)) <= 1
        assert abs(sum(b.hidden_label() for b in unl) - frac * len(unl)) <= 1

    def test_keeps_test_split(self, small_ds):
        again = partition(small_ds, 1.0, 9)
        assert [b.bag_id for b in again.test] == [b.bag_id for b in small_ds.test]
        assert not again.unlabeled

    def test_bad_ratio(self, small_ds):
        with pytest.raises(DomainError):
            partition(small_ds, 0.0, 0)

    def test_without_unlabeled(self, small_ds):
        ds = without_unlabeled(small_ds)
        assert not ds.unlabeled and len(ds.labeled) == len(small_ds.labeled)


class TestFileFormat:
    def test_roundtrip(self, small_ds, tmp_path):
        path = tmp_path / "d.txt"
        save(small_ds, path)
        back = load(path)
        assert dumps(back) == dumps(small_ds)
        for a, b in zip(small_ds.bags, back.bags):
            assert np.array_equal(a.features, b.features)
            assert a.split == b.split and a.hidden_label() == b.hidden_label()
            assert np.array_equal(a.hidden_instance_labels(), b.hidden_instance_labels())
        assert back.meta == small_ds.meta

    def test_unlabeled_written_as_unknown(self, small_ds):
        text = dumps(small_ds)
        for line in text.splitlines():
            if line.startswith("BAG") and "split=U" in line:
                assert "label=?" in line

    def _lines(self, ds):
        return dumps(ds).split("\n")

    def test_missing_header(self):
        with pytest.raises(ParseError) as exc:
            loads("nope\n")
        assert exc.value.line == 1

    def test_bad_feature_count_reports_line(self, small_ds):
        lines = self._lines(small_ds)
        idx = next(i for i, ln in enumerate(lines) if "|" in ln)
        lines[idx] = "1.0 | 0"
        with pytest.raises(ParseError) as exc:
            loads("\n".join(lines))
        assert exc.value.line == idx + 1

    def test_contradictory_label(self, small_ds):
        lines = self._lines(small_ds)
        idx = next(i for i, ln in enumerate(lines) if ln.startswith("BAG") and "label=0" in ln)
        lines[idx] = lines[idx].replace("label=0", "label=1")
        with pytest.raises(FormatError):
            loads("\n".join(lines))

    def test_truncated(self, small_ds):
        text = dumps(small_ds)
        with pytest.raises(ParseError):
            loads(text[: len(text) // 2].rsplit("\n", 1)[0])

    def test_bag_count_mismatch(self, small_ds):
        text = dumps(small_ds).replace(f"bags={len(small_ds.bags)}", f"bags={len(small_ds.bags) + 1}", 1)
        with pytest.raises(FormatError):
            loads(text)

    def test_ids_optional(self):
        text = "MILDS v1 d=2 bags=1\nBAG id=0 n=2 label=1 split=T\n0.0 1.0 | 0\n2.0 3.0 | 1\n"
        ds = loads(text)
        assert ds.bags[0].instance_ids.tolist() == [0, 1]
        assert ds.bags[0].split == TEST
