"""Plain-text checkpoints: a versioned header, string metadata and named arrays.

Layout::

    graphfolio-checkpoint 1
    meta <key> <value>
    array <name> <d0,d1,...>
    <values, space separated, repr precision>

Values are written with ``repr`` so a save/load round trip is exact and two
saves of identical models are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "graphfolio-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, arrays: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{MAGIC} {VERSION}"]
    for k, v in sorted((meta or {}).items()):
        if any(c.isspace() for c in k) or "\n" in str(v):
            raise CheckpointError(f"metadata {k!r} must be a single token with a one-line value")
        lines.append(f"meta {k} {v}")
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        if any(c.isspace() for c in name):
            raise CheckpointError(f"array name {name!r} contains whitespace")
        lines.append(f"array {name} {','.join(str(d) for d in arr.shape)}")
        lines.append(" ".join(repr(float(x)) for x in arr.ravel()))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(MAGIC + " "):
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int(lines[0].split()[1])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    arrays, meta = {}, {}
    i = 1
    while i < len(lines):
        head = lines[i]
        if head.startswith("meta "):
            _, k, *rest = head.split(" ", 2)
            meta[k] = rest[0] if rest else ""
            i += 1
        elif head.startswith("array "):
            _, name, dims = head.split(" ")
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
            body = lines[i + 1] if i + 1 < len(lines) else ""
            vals = np.array([float(x) for x in body.split()], dtype=np.float64)
            if vals.size != int(np.prod(shape)):
                raise CheckpointError(f"{path}: array {name} has {vals.size} values, shape {shape}")
            arrays[name] = vals.reshape(shape)
            i += 2
        elif not head.strip():
            i += 1
        else:
            raise CheckpointError(f"{path}:{i + 1}: unexpected line {head[:40]!r}")
    return arrays, meta
