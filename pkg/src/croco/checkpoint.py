"""Plain-text checkpoints.

Layout::

    CROCO-CKPT v1 d=16
    # key=value        (one line per training option)
    encoder.W0 16 16
    <16 rows of 16 floats>
    ...

Vectors are stored as a single row. Loading rebuilds the model from the
stored options and checks every block against the expected shape.
"""

from __future__ import annotations

import io

import numpy as np

from .crocotrain import ModelState, TrainConfig, init_model, train_config_fields, train_config_from_dict
from .errors import ConfigError, FormatError, ParseError

HEADER = "CROCO-CKPT v1"


def _parse_value(name: str, raw: str, kind: type, lineno: int):
    try:
        if kind is bool:
            if raw not in ("True", "False"):
                raise ValueError
            return raw == "True"
        return kind(raw)
    except ValueError:
        raise ParseError(f"option {name}: cannot read {raw!r} as {kind.__name__}", lineno) from None


def dumps(state: ModelState, config: TrainConfig, d: int) -> str:
    out = io.StringIO()
    out.write(f"{HEADER} d={d} step={state.step}\n")
    for name in sorted(train_config_fields()):
        out.write(f"# {name}={getattr(config, name)!r}\n".replace("'", ""))
    for name, arr in state.all_blocks().items():
        rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
        out.write(f"{name} {rows.shape[0]} {rows.shape[1]}\n")
        for row in rows:
            out.write(" ".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def save(path, state: ModelState, config: TrainConfig, d: int) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(state, config, d))


def loads(text: str) -> tuple[ModelState, TrainConfig, int]:
    """Inverse of :func:`dumps`; returns ``(state, config, d)``."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(HEADER):
        raise ParseError(f"missing '{HEADER}' header", 1)
    head = dict(tok.split("=", 1) for tok in lines[0][len(HEADER):].split() if "=" in tok)
    try:
        d, step = int(head["d"]), int(head.get("step", 0))
    except (KeyError, ValueError):
        raise ParseError("header needs integer d=", 1) from None

    kinds = train_config_fields()
    values = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if "=" not in body:
            raise ParseError("option line needs key=value", i + 1)
        k, v = (s.strip() for s in body.split("=", 1))
        if k not in kinds:
            raise ParseError(f"unknown option {k!r}", i + 1)
        values[k] = _parse_value(k, v, kinds[k], i + 1)
        i += 1
    try:
        config = train_config_from_dict(values)
    except ConfigError as exc:
        raise FormatError(f"stored options are invalid ({exc})", 1) from None

    state = init_model(config, d)
    expected = state.all_blocks()
    seen = set()
    while i < len(lines):
        lineno = i + 1
        parts = lines[i].split()
        if len(parts) != 3:
            raise ParseError(f"expected '<name> <rows> <cols>', got {lines[i][:40]!r}", lineno)
        name = parts[0]
        try:
            rows, cols = int(parts[1]), int(parts[2])
        except ValueError:
            raise ParseError(f"block {name}: rows and cols must be integers", lineno) from None
        if name not in expected:
            raise FormatError(f"block {name}: not part of this model", lineno)
        if name in seen:
            raise FormatError(f"block {name}: appears twice", lineno)
        target = expected[name]
        want = (1, target.size) if target.ndim == 1 else target.shape
        if (rows, cols) != want:
            raise FormatError(f"block {name}: shape {rows}x{cols}, expected {want[0]}x{want[1]}", lineno)
        if i + rows >= len(lines):
            raise ParseError(f"block {name}: file ends inside the block", len(lines))
        data = np.empty((rows, cols))
        for r in range(rows):
            i += 1
            vals = lines[i].split()
            if len(vals) != cols:
                raise ParseError(f"block {name}: expected {cols} values, found {len(vals)}", i + 1)
            try:
                data[r] = [float(v) for v in vals]
            except ValueError:
                raise ParseError(f"block {name}: non-numeric value", i + 1) from None
        if not np.all(np.isfinite(data)):
            raise FormatError(f"block {name}: non-finite value", lineno)
        target[...] = data.reshape(target.shape)
        seen.add(name)
        i += 1
    missing = sorted(set(expected) - seen)
    if missing:
        raise FormatError(f"block {missing[0]}: missing from checkpoint", len(lines))
    state.step = step
    return state, config, d


def load(path) -> tuple[ModelState, TrainConfig, int]:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
