"""Tracer correlators, wavefront detection, Theil-Sen velocities and the occupation RMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .model import DOWN, UP, mode_index
from .shots import ShotTable
from .statevector import StateVector

TracerKind = Literal["charge", "spin"]


def rmse(a, b) -> float:
    """Root-mean-square difference over all entries (the ``2L`` mode occupations)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_series(a, b) -> np.ndarray:
    """Per-row RMSE of two ``(time, 2L)`` arrays."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.sqrt(np.mean((a - b) ** 2, axis=1))


# ---------------------------------------------------------------------------
# tracer fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TracerField:
    values: np.ndarray  # (L, n_times)
    kind: TracerKind
    vacancy_site: int
    times: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.values.shape[0]

    def to_csv(self) -> str:
        """Site-by-time matrix with a header of times."""
        t = self.times if self.times is not None else np.arange(self.values.shape[1])
        lines = ["site," + ",".join(f"{x:.10g}" for x in t)]
        for i, row in enumerate(self.values):
            lines.append(f"{i}," + ",".join(f"{v:.10g}" for v in row))
        return "\n".join(lines) + "\n"

    def to_grid(self) -> str:
        """Blank-line separated ``time site value`` blocks for gnuplot ``splot``."""
        t = self.times if self.times is not None else np.arange(self.values.shape[1])
        blocks = []
        for k, tk in enumerate(t):
            blocks.append("\n".join(f"{tk:.10g} {i} {self.values[i, k]:.10g}" for i in range(self.L)))
        return "\n\n".join(blocks) + "\n"


def _site_columns(L: int) -> tuple[list[int], list[int]]:
    return [mode_index(i, UP, L) for i in range(L)], [mode_index(i, DOWN, L) for i in range(L)]


def charge_tracer(occupations, vacancy_site: int, times=None) -> TracerField:
    """``C^c_i(t) = <n_i(t)> - <n_i(0)>`` from canonical occupations ``(n_times, 2L)``."""
    occ = np.asarray(occupations, dtype=float)
    L = occ.shape[1] // 2
    ups, dns = _site_columns(L)
    dens = occ[:, ups] + occ[:, dns]
    return TracerField((dens - dens[0]).T, "charge", vacancy_site, None if times is None else np.asarray(times))


def _sz_values(indices: np.ndarray, L: int) -> np.ndarray:
    """``S^z_i`` per basis index, shape ``(len(indices), L)``."""
    ups, dns = _site_columns(L)
    out = np.empty((indices.size, L))
    for i in range(L):
        out[:, i] = 0.5 * (((indices >> ups[i]) & 1) - ((indices >> dns[i]) & 1))
    return out


def spin_correlator(source, center: int) -> np.ndarray:
    """``4(<S^z_i S^z_c> - <S^z_i><S^z_c>)`` per site from a canonical state or shot table."""
    if isinstance(source, StateVector):
        idx, w = source.indices(), source.probabilities()
        L = source.n_qubits // 2
    elif isinstance(source, ShotTable):
        idx, counts = source.arrays()
        w = counts / counts.sum()
        L = source.width // 2
    else:
        raise TypeError(f"cannot read spin correlations from {type(source).__name__}")
    keep = w > 0
    sz = _sz_values(idx[keep], L)
    w = w[keep]
    mean = w @ sz
    joint = w @ (sz * sz[:, [center]])
    return 4 * (joint - mean * mean[center])


def spin_tracer(history: Sequence, vacancy_site: int, times=None) -> TracerField:
    """Spin tracer field from per-time canonical states or canonically ordered shot tables."""
    cols = [spin_correlator(s, vacancy_site) for s in history]
    return TracerField(np.array(cols).T, "spin", vacancy_site, None if times is None else np.asarray(times))


# ---------------------------------------------------------------------------
# wavefront detection
# ---------------------------------------------------------------------------


def gaussian_smooth(column, sigma: float) -> np.ndarray:
    """Gaussian filter truncated at 4 sigma, renormalized, with reflecting ends."""
    x = np.asarray(column, dtype=float)
    if sigma <= 0:
        return x.copy()
    r = int(math.ceil(4 * sigma))
    if r == 0:
        return x.copy()
    k = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(x, r, mode="symmetric")
    return np.convolve(padded, k, mode="valid")


@dataclass(frozen=True)
class WavefrontTrace:
    times: np.ndarray
    left: np.ndarray
    right: np.ndarray
    distance: np.ndarray
    valid: np.ndarray
    center: int


def _crossing(s: np.ndarray, center: int, direction: int, p: float) -> float:
    """Outward walk on one side of ``center``: pass that side's peak, then interpolate
    where ``s`` drops below ``p`` times the peak.  Returns the distance from ``center``.

    The side excludes ``center`` itself, whose value (the refilled vacancy, or the
    on-site spin variance) would otherwise mask the outgoing front.
    """
    n = s.size
    idx = list(range(center + 1, n)) if direction > 0 else list(range(center - 1, -1, -1))
    if not idx:
        return 0.0
    vals = s[idx]
    peak = int(np.argmax(vals))
    if not vals[peak] > 0:
        return 0.0  # nothing has reached this side
    level = p * vals[peak]
    for k in range(peak, len(idx) - 1):
        a, b = vals[k], vals[k + 1]
        if b < level <= a:
            return abs(idx[k] - center) + (a - level) / (a - b)
    return float(abs(idx[-1] - center))


def detect_wavefront(field: TracerField, sigma: float = 1.0, p: float = 0.3, times=None) -> WavefrontTrace:
    """Front positions per time by thresholding the smoothed ``|C_i(t)|`` on each side of the vacancy."""
    vals = np.abs(np.asarray(field.values, dtype=float))
    if vals.size == 0:
        raise ValueError("empty tracer field")
    if not 0 < p < 1:
        raise ValueError("threshold fraction p must lie in (0, 1)")
    L, nt = vals.shape
    c = field.vacancy_site
    if not 0 <= c < L:
        raise ValueError(f"vacancy site {c} outside the chain")
    t = np.asarray(times if times is not None else (field.times if field.times is not None else np.arange(nt)), dtype=float)
    left = np.full(nt, np.nan)
    right = np.full(nt, np.nan)
    valid = np.zeros(nt, dtype=bool)
    for k in range(nt):
        s = gaussian_smooth(vals[:, k], sigma)
        if not s.max() > 1e-14:
            continue
        right[k] = c + _crossing(s, c, +1, p)
        left[k] = c - _crossing(s, c, -1, p)
        valid[k] = True
    dist = 0.5 * ((right - c) + (c - left))
    return WavefrontTrace(t, left, right, dist, valid, c)


def ballistic_window(trace: WavefrontTrace, L: int, skip_fraction: float = 0.1, margin: float = 1.0) -> np.ndarray:
    """Valid times after the initial transient and before the front comes within ``margin`` of an end."""
    nt = trace.times.size
    mask = trace.valid.copy()
    mask[: int(math.ceil(skip_fraction * nt))] = False
    hit = (trace.left <= margin) | (trace.right >= L - 1 - margin)
    hit = np.where(trace.valid, hit, False)
    if hit.any():
        mask[int(np.argmax(hit)) :] = False
    return mask


# ---------------------------------------------------------------------------
# Theil-Sen regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VelocityFit:
    slope: float
    intercept: float
    std_err: float
    n_points: int


def _theil_sen(t: np.ndarray, x: np.ndarray, zero_intercept: bool) -> tuple[float, float]:
    if zero_intercept:
        pos = t > 0
        if pos.sum() < 1:
            return math.nan, 0.0
        return float(np.median(x[pos] / t[pos])), 0.0
    i, j = np.triu_indices(t.size, k=1)
    dt = t[j] - t[i]
    ok = dt != 0
    if not ok.any():
        return math.nan, math.nan
    slope = float(np.median((x[j] - x[i])[ok] / dt[ok]))
    return slope, float(np.median(x - slope * t))


def theil_sen(
    positions,
    times,
    force_zero_intercept: bool = False,
    n_boot: int = 2000,
    seed: int = 0,
) -> VelocityFit:
    """Median-of-slopes fit with a bootstrap standard deviation of the slope.

    NaN positions are ignored.  The zero-intercept variant takes the median of
    ``x_i / t_i`` over ``t_i > 0``.
    """
    x = np.asarray(positions, dtype=float)
    t = np.asarray(times, dtype=float)
    if x.shape != t.shape:
        raise ValueError("positions and times differ in shape")
    ok = np.isfinite(x) & np.isfinite(t)
    x, t = x[ok], t[ok]
    if x.size < 2:
        raise ValueError("Theil-Sen needs at least two valid points")
    slope, intercept = _theil_sen(t, x, force_zero_intercept)
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        pick = rng.integers(0, x.size, x.size)
        s, _ = _theil_sen(t[pick], x[pick], force_zero_intercept)
        if math.isfinite(s):
            boots.append(s)
    err = float(np.std(boots)) if len(boots) > 1 else math.nan
    return VelocityFit(slope, intercept, err, int(x.size))


@dataclass(frozen=True)
class VelocityRow:
    U: float
    v_charge: VelocityFit
    v_spin: VelocityFit

    @property
    def ratio(self) -> float:
        return self.v_charge.slope / self.v_spin.slope if self.v_spin.slope else math.inf


def front_velocity(
    field: TracerField,
    times,
    sigma: float = 1.0,
    p: float = 0.3,
    zero_intercept: bool | None = None,
    seed: int = 0,
    n_boot: int = 2000,
) -> tuple[VelocityFit, WavefrontTrace, np.ndarray]:
    """Detect the front, pick the ballistic window and fit its velocity.

    The charge fit is forced through the origin unless ``zero_intercept`` says otherwise.
    """
    if zero_intercept is None:
        zero_intercept = field.kind == "charge"
    trace = detect_wavefront(field, sigma, p, times)
    window = ballistic_window(trace, field.L)
    fit = theil_sen(trace.distance[window], trace.times[window], zero_intercept, n_boot, seed)
    return fit, trace, window


def velocity_csv(rows: Sequence[VelocityRow]) -> str:
    lines = ["U,v_charge,v_spin,ratio,ci_charge,ci_spin"]
    for r in rows:
        lines.append(
            f"{r.U:.10g},{r.v_charge.slope:.10g},{r.v_spin.slope:.10g},{r.ratio:.10g},"
            f"{r.v_charge.std_err:.10g},{r.v_spin.std_err:.10g}"
        )
    return "\n".join(lines) + "\n"
