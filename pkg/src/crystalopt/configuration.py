"""Particle configurations and extended-XYZ input/output."""
from __future__ import annotations

import shlex
from dataclasses import dataclass

import numpy as np


@dataclass
class Configuration:
    """Positions with stable integer ids; `cell` rows are periodic lattice vectors."""

    positions: np.ndarray
    ids: np.ndarray | None = None
    cell: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(np.asarray(self.positions, dtype=float).reshape(-1, 3))
        if self.ids is None:
            self.ids = np.arange(len(self.positions), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if len(self.ids) != len(self.positions):
            raise ValueError("ids and positions differ in length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("particle ids must be unique")
        if self.cell is not None:
            self.cell = np.asarray(self.cell, dtype=float).reshape(3, 3)
            if abs(np.linalg.det(self.cell)) < 1e-12:
                raise ValueError("periodic cell is singular")

    def __len__(self):
        return len(self.positions)

    @property
    def periodic(self) -> bool:
        return self.cell is not None

    def copy(self, positions=None):
        return Configuration(self.positions.copy() if positions is None else positions,
                             self.ids.copy(), None if self.cell is None else self.cell.copy())

    def without(self, index):
        keep = np.ones(len(self), bool)
        keep[index] = False
        return Configuration(self.positions[keep], self.ids[keep], self.cell)

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)):
        rot = np.asarray(rotation, float)
        cell = None if self.cell is None else self.cell @ rot.T
        return Configuration(self.positions @ rot.T + np.asarray(translation, float), self.ids.copy(), cell)


def from_sites(sites, scale: float = 1.0) -> Configuration:
    return Configuration(np.asarray(sites.cart) * scale)


def _fmt(x):
    return "%.17g" % x


def write_xyz(path_or_file, configs, extra=None, comment_fields=None):
    """Write one or more frames.  `extra` maps column name -> per-particle array (str, int or float)."""
    if isinstance(configs, Configuration):
        configs = [configs]
        extra = [extra] if extra is not None else None
        comment_fields = [comment_fields] if comment_fields is not None else None
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w") if own else path_or_file
    try:
        for f, cfg in enumerate(configs):
            cols = dict(extra[f]) if extra else {}
            props = ["species:S:1", "pos:R:3", "id:I:1"]
            for name, arr in cols.items():
                arr = np.asarray(arr)
                if arr.dtype.kind in "iu":
                    props.append(f"{name}:I:1")
                elif arr.dtype.kind == "f":
                    width = 1 if arr.ndim == 1 else arr.shape[1]
                    props.append(f"{name}:R:{width}")
                else:
                    props.append(f"{name}:S:1")
            header = [f'Properties={":".join(props)}']
            if cfg.cell is not None:
                header.insert(0, 'Lattice="' + " ".join(_fmt(v) for v in cfg.cell.ravel()) + '"')
                header.append('pbc="T T T"')
            for key, val in (comment_fields[f] if comment_fields else {}).items():
                header.append(f"{key}={val}")
            fh.write(f"{len(cfg)}\n{' '.join(header)}\n")
            for i in range(len(cfg)):
                row = ["X"] + [_fmt(v) for v in cfg.positions[i]] + [str(int(cfg.ids[i]))]
                for name, arr in cols.items():
                    v = np.asarray(arr)[i]
                    if np.ndim(v):
                        row += [_fmt(x) for x in v]
                    elif isinstance(v, (float, np.floating)):
                        row.append(_fmt(v))
                    else:
                        row.append(str(v))
                fh.write(" ".join(row) + "\n")
    finally:
        if own:
            fh.close()


def _parse_header(line):
    fields = {}
    for tok in shlex.split(line):
        if "=" in tok:
            k, v = tok.split("=", 1)
            fields[k] = v
    return fields


def read_xyz(path, frame: int = -1) -> Configuration:
    """Read one frame (default: last) of an extended-XYZ file."""
    frames = read_xyz_frames(path)
    return frames[frame]


def read_xyz_frames(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    out, pos = [], 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        n = int(lines[pos])
        header = _parse_header(lines[pos + 1])
        rows = [ln.split() for ln in lines[pos + 2: pos + 2 + n]]
        pos += 2 + n
        props = header.get("Properties", "species:S:1:pos:R:3").split(":")
        spec = [(props[i], props[i + 1], int(props[i + 2])) for i in range(0, len(props), 3)]
        col, xyz, ids = 0, None, None
        for name, typ, width in spec:
            if name == "pos":
                xyz = np.array([[float(r[col + k]) for k in range(3)] for r in rows])
            elif name == "id":
                ids = np.array([int(r[col]) for r in rows], dtype=np.int64)
            col += width
        cell = None
        if "Lattice" in header:
            cell = np.array([float(v) for v in header["Lattice"].split()]).reshape(3, 3)
        out.append(Configuration(xyz if xyz is not None else np.zeros((0, 3)), ids, cell))
    return out
