"""Raw tensor dumps with a JSON sidecar header.

A dump named ``out`` consists of two files:

* ``out``       little-endian float32 values, C (row-major) order, no padding
* ``out.json``  header ``{"dtype": "<f4", "shape": [...], "order": "C", ...}``

Any extra keys passed as ``meta`` are stored in the header verbatim.
"""
import json
from pathlib import Path

import numpy as np

DTYPE = "<f4"


def header_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_dump(path, array, **meta):
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(array), dtype=DTYPE)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(arr.tobytes(order="C"))
    header = {"dtype": DTYPE, "shape": list(arr.shape), "order": "C"}
    header.update(meta)
    header_path(path).write_text(json.dumps(header, indent=2))
    return header


def read_dump(path):
    path = Path(path)
    header = json.loads(header_path(path).read_text())
    if header.get("dtype") != DTYPE or header.get("order", "C") != "C":
        raise ValueError(f"unsupported dump header in {header_path(path)}: {header}")
    arr = np.frombuffer(path.read_bytes(), dtype=DTYPE)
    return arr.reshape(header["shape"]), header
