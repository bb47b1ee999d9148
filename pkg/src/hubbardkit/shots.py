"""Measurement records shared by the simulator, circuit relabeling and mitigation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np


def bits_to_str(index: int, width: int) -> str:
    """Bitstring with character ``J`` = qubit ``J`` (least significant first)."""
    return "".join("1" if (index >> j) & 1 else "0" for j in range(width))


def str_to_bits(text: str) -> int:
    if any(c not in "01" for c in text):
        raise ValueError(f"not a bitstring: {text!r}")
    return sum(1 << j for j, c in enumerate(text) if c == "1")


@dataclass(frozen=True)
class ShotTable:
    """Counts keyed by basis-state index (bit ``J`` = qubit ``J``)."""

    width: int
    counts: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for k, v in self.counts.items():
            k, v = int(k), int(v)
            if k < 0 or k >> self.width:
                raise ValueError(f"bitstring {k} does not fit in {self.width} bits")
            if v < 0:
                raise ValueError("negative count")
            if v:
                clean[k] = clean.get(k, 0) + v
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.counts.items())

    def __len__(self) -> int:
        return len(self.counts)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        keys = np.fromiter(self.counts.keys(), dtype=np.int64, count=len(self.counts))
        vals = np.fromiter(self.counts.values(), dtype=np.int64, count=len(self.counts))
        return keys, vals

    def bit_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """``(distinct bitstrings x width)`` 0/1 matrix and the matching counts."""
        keys, vals = self.arrays()
        bits = (keys[:, None] >> np.arange(self.width)) & 1
        return bits.astype(np.int8), vals

    def marginal(self, qubits) -> dict[int, int]:
        """Counts over the listed qubits; bit ``k`` of the key is ``qubits[k]``."""
        out: dict[int, int] = {}
        for key, n in self.counts.items():
            m = 0
            for k, q in enumerate(qubits):
                m |= ((key >> q) & 1) << k
            out[m] = out.get(m, 0) + n
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bitstring", "count"])
        for k, n in self.counts.items():
            w.writerow([bits_to_str(k, self.width), n])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, width: int | None = None, source: str = "shot table") -> "ShotTable":
        """Parse :meth:`to_csv` output; ``width`` is required for an empty table."""
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            if width is None:
                raise ValueError(f"{source}: empty shot table of unknown width")
            return cls(width, {})
        w = len(rows[0]["bitstring"])
        if width is not None and w != width:
            raise ValueError(f"{source}: bitstrings have width {w}, expected {width}")
        counts: dict[int, int] = {}
        for r in rows:
            if len(r["bitstring"]) != w:
                raise ValueError(f"{source}: mixed bitstring widths")
            k = str_to_bits(r["bitstring"])
            counts[k] = counts.get(k, 0) + int(r["count"])
        return cls(w, counts)

    @classmethod
    def read_csv(cls, path: str | Path, width: int | None = None) -> "ShotTable":
        return cls.from_csv(Path(path).read_text(), width, str(path))
