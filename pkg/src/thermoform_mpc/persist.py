"""CSV files and run manifests.

Every CSV starts with one ``#`` comment line stating units, then a header
row; ``.`` is the decimal mark, ``,`` the separator and lines end in LF.
Temperatures are stored in deg C.
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .narx import Dataset

EXCITATION_NOTE = "# powers in W, t in s"
DATASET_NOTE = "# temperatures in deg C, powers in W, t in s; y measured at t before u acts"
REF_NOTE = "# reference zone temperatures in deg C"


class FileFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_table(path, note: str, columns: list[str], rows: np.ndarray) -> None:
    lines = [note, ",".join(columns)]
    lines += [",".join(_fmt(v) for v in r) for r in rows]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_table(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"{path} does not exist")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise FileFormatError(f"{path}: no header row")
    cols = [c.strip() for c in lines[0].split(",")]
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise FileFormatError(f"{path}: data row {i} has {len(parts)} fields, expected {len(cols)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise FileFormatError(f"{path}: data row {i} is not numeric") from None
    return cols, np.array(rows, dtype=float).reshape(len(rows), len(cols))


def _columns(cols: list[str], prefix: str, path) -> list[int]:
    idx = [i for i, c in enumerate(cols) if c.startswith(prefix) and c[len(prefix):].isdigit()]
    if not idx:
        raise FileFormatError(f"{path}: no {prefix}1.. columns")
    return sorted(idx, key=lambda i: int(cols[i][len(prefix):]))


def read_columns(path, prefixes: list[str]) -> list[np.ndarray]:
    """Column groups of a CSV; ``"t"`` selects that column, other entries a
    numbered family such as ``y1, y2, ...``."""
    cols, data = _read_table(path)
    out = []
    for p in prefixes:
        if p in cols:
            out.append(data[:, [cols.index(p)]])
        else:
            out.append(data[:, _columns(cols, p, path)])
    return out


def write_excitation(path, U: np.ndarray, dt: float) -> None:
    U = np.asarray(U, dtype=float)
    t = dt * np.arange(len(U))
    _write_table(path, EXCITATION_NOTE, ["t"] + [f"u{j + 1}" for j in range(U.shape[1])],
                 np.column_stack([t, U]))


def _sample_time(t: np.ndarray, path) -> float:
    if len(t) < 2:
        raise FileFormatError(f"{path}: need at least two rows")
    d = np.diff(t)
    if not np.allclose(d, d[0], rtol=1e-9, atol=1e-9) or not d[0] > 0:
        raise FileFormatError(f"{path}: t column is not uniformly increasing")
    return float(d[0])


def read_excitation(path) -> tuple[np.ndarray, float]:
    cols, data = _read_table(path)
    if "t" not in cols:
        raise FileFormatError(f"{path}: missing t column")
    dt = _sample_time(data[:, cols.index("t")], path)
    return data[:, _columns(cols, "u", path)], dt


def write_dataset(path, data: Dataset) -> None:
    t = data.dt * np.arange(len(data.U))
    cols = (["t"] + [f"u{j + 1}" for j in range(data.U.shape[1])]
            + [f"y{j + 1}" for j in range(data.Y.shape[1])])
    _write_table(path, DATASET_NOTE, cols, np.column_stack([t, data.U, data.Y]))


def read_dataset(path) -> Dataset:
    cols, data = _read_table(path)
    if "t" not in cols:
        raise FileFormatError(f"{path}: missing t column")
    dt = _sample_time(data[:, cols.index("t")], path)
    return Dataset(dt, data[:, _columns(cols, "u", path)], data[:, _columns(cols, "y", path)])


def write_reference(path, ref: np.ndarray) -> None:
    ref = np.asarray(ref, dtype=float).ravel()
    _write_table(path, REF_NOTE, [f"r{j + 1}" for j in range(len(ref))], ref[None, :])


def read_reference(path, Z: int = 15) -> np.ndarray:
    """Reference CSV: a header row and one row of ``Z`` values (deg C)."""
    cols, data = _read_table(path)
    if data.shape != (1, Z):
        raise FileFormatError(f"{path}: expected one row of {Z} values, got shape {data.shape}")
    return data[0]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__}


@dataclass
class RunManifest:
    """Record of one CLI run: what went in, what came out and how long it took."""
    command: str
    argv: list
    seeds: dict = field(default_factory=dict)
    config_hashes: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)     # path -> sha256
    outputs: dict = field(default_factory=dict)    # path -> sha256
    timings: dict = field(default_factory=dict)    # stage -> seconds
    versions: dict = field(default_factory=versions)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_hash(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = file_hash(path)

    def add_config(self, name: str, text: str) -> None:
        self.config_hashes[name] = text_hash(text)

    def timed(self, stage: str):
        return _Timer(self, stage)

    def verify(self) -> list[str]:
        """Paths whose current hash differs from the recorded one."""
        bad = []
        for group in (self.inputs, self.outputs):
            for p, h in group.items():
                if not Path(p).exists() or file_hash(p) != h:
                    bad.append(p)
        return bad

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


class _Timer:
    def __init__(self, manifest: RunManifest, stage: str):
        self.m = manifest
        self.stage = stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.m.timings[self.stage] = time.perf_counter() - self.t0
        return False
