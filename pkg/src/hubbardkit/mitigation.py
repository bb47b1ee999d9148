"""Readout-error mitigation, echo-based decay recovery and particle-number post-selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .circuit import ModePermutation
from .model import spin_masks
from .shots import ShotTable
from .statevector import Estimate

log = logging.getLogger(__name__)

MAX_SUPPORT = 8


class MitigationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# readout error mitigation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionSet:
    """Per-qubit column-stochastic matrices ``A[q][measured, prepared]``."""

    matrices: np.ndarray  # shape (n, 2, 2)

    def __post_init__(self) -> None:
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[1:] != (2, 2):
            raise ValueError("confusion matrices must have shape (n, 2, 2)")
        if np.any(m < -1e-12) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("confusion matrix columns must be probability vectors")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)

    @property
    def width(self) -> int:
        return self.matrices.shape[0]

    @classmethod
    def from_rates(cls, p10, p01, width: int | None = None) -> "ConfusionSet":
        """From p(1|0) and p(0|1), scalars or per qubit."""
        p10 = np.atleast_1d(np.asarray(p10, dtype=float))
        p01 = np.atleast_1d(np.asarray(p01, dtype=float))
        n = width or max(p10.size, p01.size)
        p10, p01 = np.broadcast_to(p10, (n,)), np.broadcast_to(p01, (n,))
        m = np.empty((n, 2, 2))
        m[:, 0, 0], m[:, 1, 0] = 1 - p10, p10
        m[:, 0, 1], m[:, 1, 1] = p01, 1 - p01
        return cls(m)

    @property
    def p10(self) -> np.ndarray:
        return self.matrices[:, 1, 0]

    @property
    def p01(self) -> np.ndarray:
        return self.matrices[:, 0, 1]

    def determinants(self) -> np.ndarray:
        return np.linalg.det(self.matrices)

    def is_invertible(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.determinants()) > tol))

    def marginal(self, support: Sequence[int]) -> np.ndarray:
        """Tensor-product confusion on ``support``; index bit ``k`` is ``support[k]``."""
        out = np.ones((1, 1))
        for q in support:  # later qubits become more significant bits
            out = np.kron(self.matrices[q], out)
        return out


def build_confusion(zeros: ShotTable, ones: ShotTable) -> ConfusionSet:
    """Per-qubit flip rates from all-0 and all-1 calibration runs."""
    if zeros.width != ones.width:
        raise ValueError("calibration tables have different widths")
    if zeros.total == 0 or ones.total == 0:
        raise ValueError("calibration tables must contain shots")
    b0, n0 = zeros.bit_matrix()
    b1, n1 = ones.bit_matrix()
    p10 = (b0 * n0[:, None]).sum(axis=0) / zeros.total
    p01 = ((1 - b1) * n1[:, None]).sum(axis=0) / ones.total
    return ConfusionSet.from_rates(p10, p01, zeros.width)


def _marginal_probs(shots: ShotTable, support: Sequence[int]) -> np.ndarray:
    p = np.zeros(1 << len(support))
    for k, n in shots.marginal(support).items():
        p[k] = n
    return p / shots.total


def z_values(k: int) -> np.ndarray:
    """Eigenvalues of ``Z x ... x Z`` on ``k`` qubits per marginal outcome."""
    idx = np.arange(1 << k)
    return 1.0 - 2.0 * (np.bitwise_count(idx) & 1)


@dataclass(frozen=True)
class RemResult:
    estimate: Estimate
    raw: Estimate
    clipped_mass: float
    distribution: np.ndarray


def rem_distribution(shots: ShotTable, support: Sequence[int], confusion: ConfusionSet) -> tuple[np.ndarray, float, np.ndarray, np.ndarray]:
    """Mitigated marginal distribution; returns (clipped distribution, clipped mass, quasi, inverse)."""
    support = list(support)
    if not 1 <= len(support) <= MAX_SUPPORT:
        raise MitigationError(f"support size must be 1..{MAX_SUPPORT}")
    if len(set(support)) != len(support) or any(not 0 <= q < shots.width for q in support):
        raise MitigationError(f"invalid support {support}")
    if confusion.width != shots.width:
        raise MitigationError("confusion set width does not match the shots")
    a = confusion.marginal(support)
    if abs(np.linalg.det(a)) < 1e-12:
        raise MitigationError(f"singular confusion matrix on qubits {support}")
    inv = np.linalg.inv(a)
    raw = _marginal_probs(shots, support)
    quasi = inv @ raw
    neg = quasi < 0
    clipped = float(-quasi[neg].sum())
    fixed = np.where(neg, 0.0, quasi)
    total = fixed.sum()
    fixed = fixed / total if total > 0 else fixed
    return fixed, clipped, quasi, inv


def apply_rem(
    shots: ShotTable,
    support: Sequence[int],
    confusion: ConfusionSet,
    observable: Sequence[float] | None = None,
) -> RemResult:
    """Readout-corrected expectation of a diagonal observable on ``support``.

    ``observable`` lists the value for each marginal outcome (bit ``k`` =
    ``support[k]``); the default is the Z-parity on the support.  The standard
    error is that of the linear inversion estimator on the raw frequencies.
    """
    f = z_values(len(support)) if observable is None else np.asarray(observable, dtype=float)
    if f.shape != (1 << len(support),):
        raise MitigationError("observable must give one value per marginal outcome")
    dist, clipped, _, inv = rem_distribution(shots, support, confusion)
    raw_p = _marginal_probs(shots, support)
    n = shots.total
    value = float(f @ dist)
    w = inv.T @ f
    var = max(float(w**2 @ raw_p - (w @ raw_p) ** 2), 0.0)
    raw_v = float(f @ raw_p)
    raw_var = max(float(f**2 @ raw_p) - raw_v**2, 0.0)
    return RemResult(
        Estimate(value, math.sqrt(var / n), n),
        Estimate(raw_v, math.sqrt(raw_var / n), n),
        clipped,
        dist,
    )


def rem_z_expectations(shots: ShotTable, confusion: ConfusionSet) -> tuple[list[Estimate], float]:
    """Single-qubit REM for every qubit; returns estimates and the total clipped mass."""
    out, clipped = [], 0.0
    for q in range(shots.width):
        r = apply_rem(shots, [q], confusion)
        out.append(r.estimate)
        clipped += r.clipped_mass
    return out, clipped


# ---------------------------------------------------------------------------
# decay recovery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EchoFactors:
    """Damping factor per step; odd steps interpolated from neighbouring even steps."""

    d: np.ndarray
    interpolated: np.ndarray
    valid: np.ndarray


def _as_step_array(values, n: int) -> np.ndarray:
    if isinstance(values, Mapping):
        arr = np.full(n, np.nan)
        for k, v in values.items():
            if 0 <= int(k) < n:
                arr[int(k)] = v
        return arr
    arr = np.asarray(values, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"expected {n} per-step values, got shape {arr.shape}")
    return arr


def echo_factors(echo_hw, echo_ideal, n_steps: int, tol: float = 1e-12) -> EchoFactors:
    """Damping ``d_n = echo_hw / echo_ideal`` at steps ``0..n_steps``.

    ``echo_hw`` is read at even steps only (a mapping or a full-length array
    whose odd entries are ignored).  Odd steps take the mean of the adjacent
    even steps; a final odd step without a right neighbour reuses the left one.
    """
    n = n_steps + 1
    hw = _as_step_array(echo_hw, n)
    ideal = _as_step_array(echo_ideal, n)
    even = np.full(n, np.nan)
    even[0::2] = hw[0::2]
    if np.isnan(even[0::2]).any():
        raise ValueError("echo values are required at every even step")
    est = even.copy()
    interp = np.zeros(n, dtype=bool)
    for k in range(1, n, 2):
        right = est[k + 1] if k + 1 < n else est[k - 1]
        est[k] = 0.5 * (est[k - 1] + right)
        interp[k] = True
    valid = np.abs(ideal) > tol
    d = np.where(valid, est / np.where(valid, ideal, 1.0), np.nan)
    return EchoFactors(d, interp, valid)


def decay_recovery(raw, echo_hw, echo_ideal, c: float = 0.5) -> tuple[np.ndarray, EchoFactors]:
    """``raw / (c d_n + 1 - c)`` per step; steps with vanishing ideal echo are left raw."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"confidence c must lie in [0, 1], got {c}")
    raw = np.asarray(raw, dtype=float)
    fac = echo_factors(echo_hw, echo_ideal, raw.size - 1)
    out = raw.copy()
    for n in range(raw.size):
        if not fac.valid[n]:
            log.warning("decay recovery skipped at step %d: ideal echo value vanishes", n)
            continue
        out[n] = raw[n] / (c * fac.d[n] + (1 - c))
    return out, fac


# ---------------------------------------------------------------------------
# symmetry post-selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PostselectResult:
    kept: ShotTable
    discard_rate: float
    k_counts: dict[int, int]

    def cdf(self) -> list[tuple[int, float]]:
        total = sum(self.k_counts.values())
        acc, rows = 0, []
        for k in range(max(self.k_counts, default=0) + 1):
            acc += self.k_counts.get(k, 0)
            rows.append((k, acc / total if total else 0.0))
        return rows


def violation(index: int, up_mask: int, down_mask: int, n_up0: int, n_down0: int) -> int:
    return abs((index & up_mask).bit_count() - n_up0) + abs((index & down_mask).bit_count() - n_down0)


def postselect(shots: ShotTable, n_up0: int, n_down0: int, mode_perm: ModePermutation | None = None) -> PostselectResult:
    """Keep shots whose per-spin particle numbers match the initial state.

    ``mode_perm`` is the labeling of the measured qubits (identity for
    canonically ordered tables).
    """
    L = shots.width // 2
    if mode_perm is None:
        mode_perm = ModePermutation.identity(L)
    if 2 * mode_perm.L != shots.width:
        raise ValueError("shot width does not match the mode permutation")
    up = sum(1 << q for q, (_, sp) in enumerate(mode_perm.labels) if sp == "up")
    dn = sum(1 << q for q, (_, sp) in enumerate(mode_perm.labels) if sp == "down")
    kept: dict[int, int] = {}
    hist: dict[int, int] = {}
    for key, n in shots.counts.items():
        k = violation(key, up, dn, n_up0, n_down0)
        hist[k] = hist.get(k, 0) + n
        if k == 0:
            kept[key] = n
    total = shots.total
    rate = 1.0 - sum(kept.values()) / total if total else 0.0
    return PostselectResult(ShotTable(shots.width, kept), rate, dict(sorted(hist.items())))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("step", "raw", "rem", "decay_recovered", "postselect_discard_rate", "clipped_mass")


def report_csv(rows: Sequence[Mapping[str, float]]) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(c)) for c in REPORT_COLUMNS))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"
