"""Field dump format: JSON sidecar header plus raw binary payload.

``save_field`` writes ``<path>.json`` (layout metadata) and
``<path>.bin`` (little-endian float64, C order, components concatenated
row-major in ``(i, j)``).  The loader validates the header against the
payload length bit-exactly before reshaping anything.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import ShapeError
from .fields import CELL, STAGGERED, TensorField
from .grids import Domain

_FORMAT = "rigidlab-field"
_VERSION = 1


def save_field(path, field: TensorField) -> Tuple[Path, Path]:
    path = Path(path)
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "n": field.n,
        "placement": field.placement,
        "shape": list(field.grid.shape),
        "spacing": list(field.grid.spacing),
        "origin": list(field.grid.origin),
        "dtype": "<f8",
        "order": "C",
        "byte_order": "little",
    }
    if field.placement == CELL:
        payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
        header["components"] = [list(field.values.shape)]
    else:
        chunks = []
        shapes = []
        for i in range(field.n):
            for j in range(field.n):
                arr = np.ascontiguousarray(field.comps[i][j], dtype="<f8")
                chunks.append(arr.tobytes())
                shapes.append(list(arr.shape))
        payload = b"".join(chunks)
        header["components"] = shapes
    header["payload_bytes"] = len(payload)
    header_path = path.with_suffix(".json")
    bin_path = path.with_suffix(".bin")
    header_path.write_text(json.dumps(header, indent=1, sort_keys=True) + "\n",
                           encoding="utf-8")
    bin_path.write_bytes(payload)
    return header_path, bin_path


def load_field(path) -> TensorField:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    if header.get("format") != _FORMAT or header.get("version") != _VERSION:
        raise ShapeError("unrecognized field dump header")
    if header.get("dtype") != "<f8" or header.get("byte_order") != "little":
        raise ShapeError("field dumps are little-endian float64")
    payload = path.with_suffix(".bin").read_bytes()
    if len(payload) != header["payload_bytes"]:
        raise ShapeError(
            f"payload is {len(payload)} bytes, header promises {header['payload_bytes']}"
        )
    expected = sum(int(np.prod(s)) for s in header["components"]) * 8
    if expected != len(payload):
        raise ShapeError("component shapes do not add up to the payload length")
    n = int(header["n"])
    domain = Domain.cube(
        n,
        tuple(int(x) for x in header["shape"]),
        side=tuple(int(x) * float(h) for x, h in zip(header["shape"], header["spacing"])),
        origin=tuple(float(o) for o in header["origin"]),
    )
    raw = np.frombuffer(payload, dtype="<f8")
    if header["placement"] == CELL:
        values = raw.reshape(tuple(header["components"][0])).astype(float)
        return TensorField(domain, values, CELL)
    comps = []
    offset = 0
    shapes = header["components"]
    k = 0
    for i in range(n):
        row = []
        for j in range(n):
            shape = tuple(int(x) for x in shapes[k])
            count = int(np.prod(shape))
            row.append(raw[offset:offset + count].reshape(shape).astype(float))
            offset += count
            k += 1
        comps.append(row)
    return TensorField(domain, comps, STAGGERED)
