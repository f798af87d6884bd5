"""On-disk formats: one binary container, JSONL traces, CSV helpers.

Everything binary (checkpoints, layer files, activation matrices, dataset
caches) shares a single container layout:

    <one line of JSON, UTF-8, ending in \\n>
    <raw little-endian float64 payload>

The JSON header carries the kind tag, shapes/layout, and any metadata;
the payload is the concatenation of the arrays the header promises, in
order. Floats are written verbatim (no text round-trip), so save/load is
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import FloatArray, ParamVector, Segment

PathLike = Union[str, Path]


def write_container(path: PathLike, header: dict, arrays: Sequence[FloatArray]) -> None:
    total = int(sum(int(np.asarray(a).size) for a in arrays))
    header = dict(header)
    header["payload_count"] = total
    header["dtype"] = "<f8"
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_container(path: PathLike) -> tuple[dict, FloatArray]:
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise ValueError(f"{path}: missing header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: malformed JSON header: {exc}") from None
        payload = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    expected = header.get("payload_count")
    if expected is not None and payload.size != expected:
        raise ValueError(f"{path}: payload has {payload.size} floats, "
                         f"header promises {expected}")
    return header, payload


# ---------------------------------------------------------------------------
# Checkpoints (parameter vectors + layout)
# ---------------------------------------------------------------------------


def save_checkpoint(path: PathLike, x: ParamVector,
                    config_hash: Optional[str] = None,
                    extra: Optional[dict] = None) -> None:
    header = {
        "kind": "checkpoint",
        "layout": [[s.name, s.offset, s.length, s.sparsifiable] for s in x.layout],
        "config_hash": config_hash,
    }
    if extra:
        header.update(extra)
    write_container(path, header, [x.values])


def load_checkpoint(path: PathLike) -> tuple[ParamVector, dict]:
    header, payload = read_container(path)
    if header.get("kind") != "checkpoint":
        raise ValueError(f"{path}: kind={header.get('kind')!r}, expected 'checkpoint'")
    layout = tuple(Segment(name=n, offset=o, length=ln, sparsifiable=bool(sp))
                   for n, o, ln, sp in header["layout"])
    return ParamVector(values=payload, layout=layout), header


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


def write_trace_jsonl(trace: Iterable[dict], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in trace:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def read_trace_jsonl(path: PathLike) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{i + 1}: malformed trace line: {exc}") from None
    return records
