"""Run configuration: an INI-style file plus command-line overrides.

File grammar (``key = value``, ``#`` or ``;`` comments)::

    [gen]               GenConfig fields, plus ``pir`` as a shortcut for positive_count
    [train]             TrainConfig fields
    [grid]              pirs, labeled_ratios, seeds, variants (comma separated)
    [variant.NAME]      TrainConfig overrides for grid variant NAME

Precedence is defaults < file < flags. Changing ``bag_size`` alone keeps the
default positive ratio. ``seed`` given on the command line
applies to both data generation and training.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .crocotrain import TrainConfig, train_config_fields, train_config_from_dict
from .errors import ConfigError, ParseError
from .evalreport import GridSpec
from .mildata import GenConfig

BUILTIN_VARIANTS = {
    "baseline": {"method": "baseline"},
    "croco": {"method": "croco"},
    "mean_teacher": {"method": "mean_teacher"},
    "fixmatch": {"method": "fixmatch"},
    "croco_bag_only": {"method": "croco", "consistency_levels": "bag_only"},
    "croco_ins_only": {"method": "croco", "consistency_levels": "ins_only"},
}

GRID_KEYS = ("pirs", "labeled_ratios", "seeds", "variants")


def parse_bool(raw: str) -> bool:
    v = str(raw).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _convert(kind: type, raw):
    if kind is bool:
        return parse_bool(raw) if isinstance(raw, str) else bool(raw)
    return kind(raw)


def gen_field_types() -> dict[str, type]:
    return {f.name: type(getattr(GenConfig(), f.name)) for f in fields(GenConfig)}


def _typed(section: str, values: dict[str, str], kinds: dict[str, type]) -> dict:
    out = {}
    for k, raw in values.items():
        if k not in kinds:
            raise ConfigError(k, f"unknown key in [{section}]")
        try:
            out[k] = _convert(kinds[k], raw)
        except ValueError:
            raise ConfigError(k, f"cannot read {raw!r} as {kinds[k].__name__}") from None
    return out


def _list(key: str, raw, kind: type) -> list:
    items = raw if isinstance(raw, (list, tuple)) else [s for s in str(raw).replace(",", " ").split() if s]
    try:
        return [kind(v) for v in items]
    except ValueError:
        raise ConfigError(key, f"cannot read {raw!r} as a list of {kind.__name__}") from None


@dataclass
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_overrides: dict = field(default_factory=dict)
    pir: float | None = None
    pirs: list = field(default_factory=lambda: [0.1])
    labeled_ratios: list = field(default_factory=lambda: [0.2])
    seeds: list = field(default_factory=lambda: [0])
    variants: list = field(default_factory=lambda: ["baseline", "croco"])
    variant_overrides: dict = field(default_factory=dict)

    def grid_spec(self) -> GridSpec:
        table = {}
        for name in self.variants:
            if name in self.variant_overrides:
                table[name] = dict(self.variant_overrides[name])
            elif name in BUILTIN_VARIANTS:
                table[name] = dict(BUILTIN_VARIANTS[name])
            else:
                raise ConfigError("variants", f"variant {name!r} has no [variant.{name}] section")
            try:
                train_config_from_dict({**self.train_overrides, **table[name]})
            except ConfigError as exc:
                raise ConfigError(f"variant.{name}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
        spec = GridSpec.product(self.pirs, self.labeled_ratios, self.variants, self.seeds,
                                gen=self.gen, train=dict(self.train_overrides), variants=table)
        return spec.validate()


def read_file(path) -> dict[str, dict[str, str]]:
    """Sections of a config file as plain string dictionaries."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("expected a [section] header", exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("expected 'key = value'", line) from None
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"duplicate key {exc.option!r}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section [{exc.section}]", exc.lineno) from None
    sections = {name: dict(cp[name]) for name in cp.sections()}
    for name in sections:
        if name not in ("gen", "train", "grid") and not name.startswith("variant."):
            raise ConfigError(name, "unknown section")
    return sections


def build(sections: dict[str, dict] | None = None, gen_flags: dict | None = None,
          train_flags: dict | None = None, grid_flags: dict | None = None) -> RunConfig:
    """Merge file sections and flag values (flags win) and validate everything."""
    sections = sections or {}
    gen_kinds = {**gen_field_types(), "pir": float}
    gen_vals = _typed("gen", sections.get("gen", {}), gen_kinds)
    gen_vals.update({k: v for k, v in (gen_flags or {}).items() if v is not None})
    train_vals = _typed("train", sections.get("train", {}), train_config_fields())
    train_vals.update({k: v for k, v in (train_flags or {}).items() if v is not None})
    if "seed" in (gen_flags or {}) and gen_flags["seed"] is not None:
        train_vals["seed"] = gen_flags["seed"]

    pir = gen_vals.pop("pir", None)
    if pir is None and "positive_count" not in gen_vals and "bag_size" in gen_vals:
        # keep the default positive ratio when only the bag size changes
        default = GenConfig()
        gen_vals["positive_count"] = max(1, round(default.positive_count / default.bag_size * gen_vals["bag_size"]))
    if pir is not None:
        base = GenConfig(**{k: v for k, v in gen_vals.items() if k != "positive_count"})
        gen = GenConfig.from_pir(pir, base.bag_size, **{k: v for k, v in gen_vals.items()
                                                       if k not in ("positive_count", "bag_size")})
    else:
        gen = replace(GenConfig(), **gen_vals)
    gen.validate()
    train = train_config_from_dict(train_vals)

    rc = RunConfig(gen=gen, train=train, train_overrides=train_vals, pir=pir)
    grid_raw = dict(sections.get("grid", {}))
    for k in grid_raw:
        if k not in GRID_KEYS:
            raise ConfigError(k, "unknown key in [grid]")
    grid_raw.update({k: v for k, v in (grid_flags or {}).items() if v is not None})
    if "pirs" in grid_raw:
        rc.pirs = _list("pirs", grid_raw["pirs"], float)
    elif pir is not None:
        rc.pirs = [pir]
    if "labeled_ratios" in grid_raw:
        rc.labeled_ratios = _list("labeled_ratios", grid_raw["labeled_ratios"], float)
    else:
        rc.labeled_ratios = [gen.labeled_ratio]
    if "seeds" in grid_raw:
        rc.seeds = _list("seeds", grid_raw["seeds"], int)
    if "variants" in grid_raw:
        rc.variants = _list("variants", grid_raw["variants"], str)
    for p in rc.pirs:
        GenConfig.from_pir(p, gen.bag_size)
    for r in rc.labeled_ratios:
        replace(gen, labeled_ratio=r).validate()
    kinds = train_config_fields()
    for name, values in sections.items():
        if name.startswith("variant."):
            rc.variant_overrides[name[len("variant."):]] = _typed(name, values, kinds)
    return rc
