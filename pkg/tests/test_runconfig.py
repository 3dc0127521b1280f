import pytest

from croco.errors import ConfigError, ParseError
from croco.runconfig import BUILTIN_VARIANTS, build, parse_bool, read_file


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


class TestParseBool:
    @pytest.mark.parametrize("raw,val", [("yes", True), ("1", True), ("On", True), ("no", False), ("0", False)])
    def test_values(self, raw, val):
        assert parse_bool(raw) is val

    def test_bad(self):
        with pytest.raises(ValueError):
            parse_bool("maybe")


class TestReadFile:
    def test_sections(self, tmp_path):
        p = write(tmp_path, "[gen]\nd = 8  # width\n[train]\nlr = 0.02\n[variant.fast]\nlr = 0.1\n")
        assert read_file(p) == {"gen": {"d": "8"}, "train": {"lr": "0.02"}, "variant.fast": {"lr": "0.1"}}

    def test_no_header_line(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            read_file(write(tmp_path, "d = 3\n"))
        assert exc.value.line == 1

    def test_duplicate_key(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            read_file(write(tmp_path, "[gen]\nd = 3\nd = 4\n"))
        assert exc.value.line == 3

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError):
            read_file(write(tmp_path, "[model]\nx = 1\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            read_file(tmp_path / "absent.ini")


class TestBuild:
    def test_defaults(self):
        rc = build()
        assert rc.gen.seed == 0 and rc.train.method == "croco"

    def test_flags_beat_file(self):
        rc = build({"train": {"lr": "0.02", "epochs": "7"}}, train_flags={"lr": 0.5, "epochs": None})
        assert rc.train.lr == 0.5 and rc.train.epochs == 7

    def test_seed_flag_reaches_training(self):
        rc = build({"train": {"seed": "3"}}, gen_flags={"seed": 9})
        assert rc.gen.seed == 9 and rc.train.seed == 9

    def test_pir_shortcut(self):
        rc = build({"gen": {"pir": "0.2", "bag_size": "20"}})
        assert rc.gen.positive_count == 4 and rc.pirs == [0.2]

    def test_pir_out_of_range(self):
        with pytest.raises(ConfigError) as exc:
            build(gen_flags={"pir": 1.5})
        assert exc.value.field == "pir"

    @pytest.mark.parametrize("section,key", [("train", "learning_rate"), ("gen", "dims"), ("grid", "values")])
    def test_unknown_key_named(self, section, key):
        with pytest.raises(ConfigError) as exc:
            build({section: {key: "1"}})
        assert exc.value.field == key

    def test_bad_value(self):
        with pytest.raises(ConfigError) as exc:
            build({"train": {"epochs": "many"}})
        assert exc.value.field == "epochs"

    def test_grid_lists(self):
        rc = build({"grid": {"pirs": "0.1, 0.2", "seeds": "1 2 3", "variants": "baseline,croco_ins_only"}})
        spec = rc.grid_spec()
        assert len(spec.cells) == 2 * 1 * 2 * 3
        assert spec.variants["croco_ins_only"] == BUILTIN_VARIANTS["croco_ins_only"]

    def test_custom_variant(self):
        rc = build({"variant.slow": {"lr": "0.0001"}, "grid": {"variants": "slow"}})
        assert rc.grid_spec().variants == {"slow": {"lr": 0.0001}}

    def test_undefined_variant(self):
        with pytest.raises(ConfigError):
            build(grid_flags={"variants": "nope"}).grid_spec()

    def test_invalid_variant_field_path(self):
        rc = build({"variant.bad": {"tau": "-1"}, "grid": {"variants": "bad"}})
        with pytest.raises(ConfigError) as exc:
            rc.grid_spec()
        assert exc.value.field == "variant.bad.tau"
