"""Versioned plain-text file format shared by distributions, datasets and models.

A file is a block of ``#key: value`` header lines followed by a CSV body::

    #hobm-format: 1
    #kind: distribution
    #n: 2
    #provenance: {"seed": 7}
    index,state,value
    0,00,0.25
    ...

Header values are JSON. Floats are written with 17 significant digits so a
write/read cycle reproduces them exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

FORMAT_VERSION = 1


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def write_text_file(path, kind: str, header: dict, columns: list[str], rows) -> None:
    lines = [f"#hobm-format: {FORMAT_VERSION}", f"#kind: {kind}"]
    for key, value in header.items():
        lines.append(f"#{key}: {json.dumps(value, sort_keys=True)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_text_file(path, kind: str) -> tuple[dict, list[list[str]]]:
    header: dict = {}
    rows: list[list[str]] = []
    columns = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(": ")
            if key == "hobm-format":
                if int(value) != FORMAT_VERSION:
                    raise ValueError(f"{path}: unsupported format version {value}")
            elif key == "kind":
                if value != kind:
                    raise ValueError(f"{path}: expected kind {kind!r}, found {value!r}")
            else:
                header[key] = json.loads(value)
        elif columns is None:
            columns = line.split(",")
        else:
            rows.append(line.split(","))
    if columns is None:
        raise ValueError(f"{path}: missing column header")
    header["_columns"] = columns
    return header, rows


def state_string(bits: int, n: int) -> str:
    """``x_0 x_1 ... x_{n-1}`` as a string of 0/1 characters."""
    return "".join("1" if bits >> i & 1 else "0" for i in range(n))
