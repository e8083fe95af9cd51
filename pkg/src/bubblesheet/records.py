"""Trajectory records: the pinned column schema and CSV/JSON serialization.

Every run emits one record.  The schema is versioned; golden tests pin the
header and field names.  Serialization is deterministic: floats print with
17 significant digits, JSON keys are sorted, and no timestamps enter the
artifacts, so identical config and seed reproduce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

COLUMNS = [
    "tau",
    "sigma",
    "alpha1",
    "alpha2",
    "alpha3",
    "a",
    "b",
    "c",
    "x",
    "y",
    "z",
    "p",
    "U_plus",
    "U_zero",
    "U_minus",
    "f",
    "g",
    "w_norm",
    "grad_w_norm",
    "quad1",
    "quad2",
    "quad3",
    "R_defect",
    "e1",
    "e2",
    "e3",
    "trunc_rate",
    "Q11",
    "Q22",
    "Q12",
    "rotation_angle",
]


def fmt(x: float) -> str:
    return f"{x:.17g}"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class TrajectoryRecord:
    """Tabular diagnostics of one run plus provenance metadata.

    flags[i] carries semicolon-joined reason codes for row i: masked values
    (stored as nan) and monitor violations, e.g. "angle:eigengap" or
    "c0_bound".  attachments hold in-memory extras (field patches for
    profile residuals) and are never serialized.
    """

    metadata: dict
    rows: np.ndarray  # (n, len(COLUMNS))
    flags: list[str] = field(default_factory=list)
    attachments: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(COLUMNS):
            raise ValueError(f"rows must have {len(COLUMNS)} columns")
        if not self.flags:
            self.flags = [""] * self.rows.shape[0]
        if len(self.flags) != self.rows.shape[0]:
            raise ValueError("flags length must match row count")
        taus = self.rows[:, 0]
        if taus.size > 1 and not (np.all(np.diff(taus) > 0) or np.all(np.diff(taus) < 0)):
            raise ValueError("rows must be strictly monotone in tau")

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, COLUMNS.index(name)]

    @property
    def taus(self) -> np.ndarray:
        return self.column("tau")

    def alphas(self) -> np.ndarray:
        return self.rows[:, 2:5]

    def decades(self) -> float:
        t = np.abs(self.taus)
        return float(np.log10(t.max() / t.min()))

    def to_csv(self, path):
        lines = [",".join(COLUMNS + ["flags"])]
        for i in range(self.rows.shape[0]):
            vals = ",".join(fmt(v) for v in self.rows[i])
            lines.append(f"{vals},{self.flags[i]}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_json(self, path):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "metadata": self.metadata,
            "columns": COLUMNS,
            "rows": [[fmt(v) for v in row] for row in self.rows],
            "flags": self.flags,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "TrajectoryRecord":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {doc.get('schema_version')}")
        rows = np.array([[float(v) for v in row] for row in doc["rows"]])
        return cls(doc["metadata"], rows, list(doc["flags"]))

    @classmethod
    def from_columns(cls, metadata: dict, data: dict, flags=None) -> "TrajectoryRecord":
        n = len(next(iter(data.values())))
        rows = np.full((n, len(COLUMNS)), np.nan)
        for name, vals in data.items():
            rows[:, COLUMNS.index(name)] = vals
        return cls(metadata, rows, flags or [""] * n)
