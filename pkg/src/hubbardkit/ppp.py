"""Heisenberg-picture Pauli-path propagation with weight and coefficient truncation.

An operator is a sum of Hermitian Pauli strings with real coefficients, stored
as parallel arrays of packed ``x``/``z`` bit masks (Y sets both bits).  Pauli
rotations ``exp(-i a P/2)`` split every anticommuting term into a cosine and a
sine branch; fSWAPs permute Pauli letters.  The observable is pulled back
through the Trotter circuit and evaluated on the initial Fock state, where only
Z-type strings survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .circuit import FSWAP_MATRIX, Gate, build_trotter_circuit, trotter_step_layers
from .model import FockState, HubbardParams, PauliString

MAX_QUBITS = 64
ZERO_TOL = 1e-15
RULES = ("weight", "xy_weight", "coefficient")


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a).astype(np.int64)


# ---------------------------------------------------------------------------
# compiled kernels on key-sorted arrays
#
# Terms are kept sorted by (x, z).  XOR with a fixed mask preserves the order of
# keys that agree on the flipped bit positions, and so does any map that only
# rewrites the letters on a fixed set of qubits.  The image of a sorted store is
# therefore a handful of sorted runs, one per pattern on those positions, which
# merge back into canonical order in linear passes.
# ---------------------------------------------------------------------------

MAX_RUN_BITS = 10  # above this many touched bit positions, fall back to a full sort


@njit(cache=True)
def _pc(v):
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return np.int64((v * np.uint64(0x0101010101010101)) >> np.uint64(56))


@njit(cache=True)
def _less(xa, za, xb, zb):
    return xa < xb or (xa == xb and za < zb)


@njit(cache=True)
def _pattern(x, z, xpos, zpos):
    g = 0
    for p in xpos:
        g = 2 * g + np.int64((x >> np.uint64(p)) & np.uint64(1))
    for p in zpos:
        g = 2 * g + np.int64((z >> np.uint64(p)) & np.uint64(1))
    return g


@njit(cache=True)
def _merge_pair(x, z, c, lo, mid, hi, ox, oz, oc):
    i, j, m = lo, mid, lo
    while i < mid and j < hi:
        if _less(x[j], z[j], x[i], z[i]):
            ox[m], oz[m], oc[m] = x[j], z[j], c[j]
            j += 1
        else:
            ox[m], oz[m], oc[m] = x[i], z[i], c[i]
            i += 1
        m += 1
    while i < mid:
        ox[m], oz[m], oc[m] = x[i], z[i], c[i]
        i += 1
        m += 1
    while j < hi:
        ox[m], oz[m], oc[m] = x[j], z[j], c[j]
        j += 1
        m += 1


@njit(cache=True)
def _sort_runs(x, z, c, group, n_groups):
    """Sort terms whose members of each ``group`` are already in key order.

    A stable counting pass lays the groups out as runs, then runs are merged
    pairwise, ``log2(n_groups)`` linear rounds in all.
    """
    n = x.size
    start = np.zeros(n_groups + 1, np.int64)
    for i in range(n):
        start[group[i] + 1] += 1
    for g in range(n_groups):
        start[g + 1] += start[g]
    fill = start[:-1].copy()
    ax = np.empty(n, np.uint64)
    az = np.empty(n, np.uint64)
    ac = np.empty(n)
    for i in range(n):
        k = fill[group[i]]
        ax[k], az[k], ac[k] = x[i], z[i], c[i]
        fill[group[i]] = k + 1
    bounds = start
    bx = np.empty(n, np.uint64)
    bz = np.empty(n, np.uint64)
    bc = np.empty(n)
    while bounds.size > 2:
        n_runs = bounds.size - 1
        nb = np.empty(n_runs // 2 + n_runs % 2 + 1, np.int64)
        r = 0
        while r + 1 < n_runs:
            _merge_pair(ax, az, ac, bounds[r], bounds[r + 1], bounds[r + 2], bx, bz, bc)
            nb[r // 2] = bounds[r]
            r += 2
        if r < n_runs:
            for i in range(bounds[r], bounds[r + 1]):
                bx[i], bz[i], bc[i] = ax[i], az[i], ac[i]
            nb[r // 2] = bounds[r]
        nb[-1] = n
        bounds = nb
        ax, bx = bx, ax
        az, bz = bz, az
        ac, bc = bc, ac
    return ax, az, ac


@njit(cache=True)
def _merge_sum(x1, z1, c1, x2, z2, c2, tol):
    """Merge two key-sorted term lists, summing shared keys and dropping ``|c| <= tol``."""
    n1, n2 = x1.size, x2.size
    ox = np.empty(n1 + n2, np.uint64)
    oz = np.empty(n1 + n2, np.uint64)
    oc = np.empty(n1 + n2)
    i = j = m = 0
    while i < n1 or j < n2:
        if j == n2 or (i < n1 and _less(x1[i], z1[i], x2[j], z2[j])):
            kx, kz, v = x1[i], z1[i], c1[i]
            i += 1
        elif i == n1 or _less(x2[j], z2[j], x1[i], z1[i]):
            kx, kz, v = x2[j], z2[j], c2[j]
            j += 1
        else:
            kx, kz, v = x1[i], z1[i], c1[i] + c2[j]
            i += 1
            j += 1
        if abs(v) > tol:
            ox[m], oz[m], oc[m] = kx, kz, v
            m += 1
    return ox[:m], oz[:m], oc[:m]


@njit(cache=True)
def _branch(x, z, c, gx, gz, co, si, xpos, zpos):
    """Scale anticommuting terms by ``cos`` and emit their ``sin`` partners with run labels."""
    n = x.size
    k = 0
    for i in range(n):
        k += _pc((x[i] & gz) ^ (z[i] & gx)) & 1
    kept = c.copy()
    px = np.empty(k, np.uint64)
    pz = np.empty(k, np.uint64)
    pc = np.empty(k)
    grp = np.empty(k, np.int64)
    g_y = _pc(gx & gz)
    j = 0
    for i in range(n):
        xi, zi = x[i], z[i]
        if _pc((xi & gz) ^ (zi & gx)) & 1 == 0:
            continue
        qx, qz = xi ^ gx, zi ^ gz
        e = (_pc(xi & zi) + g_y + 2 * _pc(zi & gx) - _pc(qx & qz) + 256) & 3
        px[j], pz[j] = qx, qz
        pc[j] = (si if e == 1 else -si) * c[i]
        grp[j] = _pattern(xi, zi, xpos, zpos)
        kept[i] = c[i] * co
        j += 1
    return kept, px, pz, pc, grp


def _bit_positions(mask: int) -> np.ndarray:
    return np.array([q for q in range(MAX_QUBITS) if (mask >> q) & 1], dtype=np.int64)


def _canonical_order(x: np.ndarray, z: np.ndarray, c: np.ndarray, group: np.ndarray, n_bits: int):
    if n_bits <= MAX_RUN_BITS:
        return _sort_runs(x, z, c, group, 1 << n_bits)
    order = np.lexsort((z, x))
    return x[order], z[order], c[order]


class PauliStore:
    """Real-coefficient Pauli sum as parallel ``x``/``z`` mask and coefficient arrays.

    The arrays are kept canonical: sorted by ``(x, z)``, unique, no zero coefficients.
    """

    def __init__(self, n_qubits: int, x=None, z=None, c=None):
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise ValueError(f"Pauli store supports 1..{MAX_QUBITS} qubits")
        self.n_qubits = int(n_qubits)
        self.x = np.zeros(0, np.uint64) if x is None else np.array(x, dtype=np.uint64)
        self.z = np.zeros(0, np.uint64) if z is None else np.array(z, dtype=np.uint64)
        self.c = np.zeros(0) if c is None else np.array(c, dtype=float)
        if not self.x.shape == self.z.shape == self.c.shape:
            raise ValueError("x, z and c must have the same length")
        self.canonicalize()

    @classmethod
    def from_pauli(cls, p: PauliString, n_qubits: int) -> "PauliStore":
        if abs(complex(p.coeff).imag) > 1e-14:
            raise ValueError("Pauli store coefficients must be real")
        x, z = p.masks()
        return cls(n_qubits, np.array([x], np.uint64), np.array([z], np.uint64), np.array([complex(p.coeff).real]))

    def __len__(self) -> int:
        return int(self.c.size)

    def copy(self) -> "PauliStore":
        return PauliStore(self.n_qubits, self.x, self.z, self.c)

    def canonicalize(self) -> None:
        """Sum duplicate strings, drop zero coefficients and sort by ``(x, z)``."""
        if self.c.size:
            order = np.lexsort((self.z, self.x))
            x, z, c = self.x[order], self.z[order], self.c[order]
            new = np.ones(x.size, dtype=bool)
            new[1:] = (x[1:] != x[:-1]) | (z[1:] != z[:-1])
            starts = np.flatnonzero(new)
            c = np.add.reduceat(c, starts)
            x, z = x[starts], z[starts]
            keep = np.abs(c) > ZERO_TOL
            self.x, self.z, self.c = x[keep], z[keep], c[keep]

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(v) for a, b, v in zip(self.x, self.z, self.c)}

    def weight(self) -> np.ndarray:
        return _popcount(self.x | self.z)

    def xy_weight(self) -> np.ndarray:
        return _popcount(self.x)

    def terms(self) -> list[PauliString]:
        out = []
        for x, z, c in zip(self.x.tolist(), self.z.tolist(), self.c.tolist()):
            letters = {}
            for q in range(self.n_qubits):
                bx, bz = (x >> q) & 1, (z >> q) & 1
                if bx or bz:
                    letters[q] = "Y" if bx and bz else ("X" if bx else "Z")
            out.append(PauliString(letters, c))
        return out

    def keep(self, mask: np.ndarray) -> None:
        self.x, self.z, self.c = self.x[mask], self.z[mask], self.c[mask]

    def fock_expectation(self, initial: FockState) -> float:
        """``<initial|O|initial>`` in the register labeling of the store."""
        diag = self.x == 0
        bits = np.uint64(initial.index)
        signs = 1 - 2 * (_popcount(self.z[diag] & bits) & 1)
        return float(np.dot(signs, self.c[diag]))


# ---------------------------------------------------------------------------
# conjugation rules
# ---------------------------------------------------------------------------


def _product_phase(x1, z1, x2, z2) -> np.ndarray:
    """Power of ``i`` in ``P1 P2 = i^e P3`` for Hermitian strings (Y = iXZ)."""
    x3, z3 = x1 ^ x2, z1 ^ z2
    e = _popcount(x1 & z1) + _popcount(x2 & z2) + 2 * _popcount(z1 & x2) - _popcount(x3 & z3)
    return e % 4


def rotate(store: PauliStore, generator: PauliString, angle: float) -> PauliStore:
    """Conjugate ``O -> U^dag O U`` with ``U = exp(-i angle G / 2)`` in place.

    Anticommuting terms become ``cos(angle) P - i sin(angle) P G``; the product
    carries ``i^{odd}``, so the new coefficient stays real.
    """
    if abs(abs(complex(generator.coeff)) - 1) > 1e-12:
        raise ValueError("rotation generators must have unit coefficient")
    if angle == 0 or len(store) == 0:
        return store
    gx, gz = generator.masks()
    xpos, zpos = _bit_positions(gx), _bit_positions(gz)
    kept, px, pz, pc, grp = _branch(
        store.x, store.z, store.c, np.uint64(gx), np.uint64(gz), math.cos(angle), math.sin(angle), xpos, zpos
    )
    if pc.size == 0:
        return store
    px, pz, pc = _canonical_order(px, pz, pc, grp, xpos.size + zpos.size)
    store.x, store.z, store.c = _merge_sum(store.x, store.z, kept, px, pz, pc, ZERO_TOL)
    return store


def _letter_table() -> tuple[np.ndarray, np.ndarray]:
    """fSWAP conjugation on letter pairs: index ``4*la + lb`` (I, X, Y, Z)."""
    pauli = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1.0, -1.0])]
    new = np.zeros(16, dtype=np.int64)
    sign = np.zeros(16)
    for code in range(16):
        a, b = divmod(code, 4)
        m = FSWAP_MATRIX @ np.kron(pauli[a], pauli[b]) @ FSWAP_MATRIX
        for c2 in range(16):
            a2, b2 = divmod(c2, 4)
            ov = np.vdot(np.kron(pauli[a2], pauli[b2]).ravel(), m.ravel()) / 4
            if abs(abs(ov) - 1) < 1e-12:
                new[code], sign[code] = c2, ov.real
    return new, sign


_FSWAP_NEW, _FSWAP_SIGN = _letter_table()
_LETTER_OF_BITS = np.array([0, 3, 1, 2])  # index 2*x + z -> I, Z, X, Y
_BITS_OF_LETTER = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.uint64)  # I X Y Z -> (x, z)


def conjugate_fswap(store: PauliStore, qa: int, qb: int) -> PauliStore:
    """``O -> fSWAP O fSWAP`` (fSWAP is Hermitian and self-inverse)."""
    if len(store) == 0:
        return store
    one = np.uint64(1)
    xa, za = (store.x >> np.uint64(qa)) & one, (store.z >> np.uint64(qa)) & one
    xb, zb = (store.x >> np.uint64(qb)) & one, (store.z >> np.uint64(qb)) & one
    la = _LETTER_OF_BITS[(2 * xa + za).astype(np.int64)]
    lb = _LETTER_OF_BITS[(2 * xb + zb).astype(np.int64)]
    code = 4 * la + lb
    new = _FSWAP_NEW[code]
    na, nb = np.divmod(new, 4)
    clear = ~np.uint64((1 << qa) | (1 << qb))
    x = store.x & clear
    z = store.z & clear
    x |= (_BITS_OF_LETTER[na, 0] << np.uint64(qa)) | (_BITS_OF_LETTER[nb, 0] << np.uint64(qb))
    z |= (_BITS_OF_LETTER[na, 1] << np.uint64(qa)) | (_BITS_OF_LETTER[nb, 1] << np.uint64(qb))
    # a bijection that only rewrites two letters: each letter pair keeps its order
    store.x, store.z, store.c = _sort_runs(x, z, store.c * _FSWAP_SIGN[code], code, 16)
    return store


def conjugate_gate(store: PauliStore, g: Gate) -> PauliStore:
    """Heisenberg conjugation ``U^dag O U`` by one abstract gate."""
    k = g.kind
    if k == "RZ":
        return rotate(store, PauliString({g.qubits[0]: "Z"}), g.theta)
    if k == "RZZ":
        return rotate(store, PauliString({g.qubits[0]: "Z", g.qubits[1]: "Z"}), g.theta)
    if k == "RXXplusYY":
        a, b = g.qubits
        rotate(store, PauliString({a: "X", b: "X"}), g.theta)
        return rotate(store, PauliString({a: "Y", b: "Y"}), g.theta)
    if k == "FSWAP":
        return conjugate_fswap(store, *g.qubits)
    if k in ("PREP",):
        return store
    raise ValueError(f"cannot propagate through {k!r}; prepare states via the Fock evaluation")


# ---------------------------------------------------------------------------
# truncated propagation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationPolicy:
    """Drop terms with weight > mw, XY-weight > mw_xy or |c| < delta_min after each step."""

    mw: int = 8
    delta_min: float = 1e-5
    mw_xy: int | None = None

    def __post_init__(self) -> None:
        if self.mw < 1:
            raise ValueError("mw must be at least 1")
        if not self.delta_min >= 0:
            raise ValueError("delta_min must be non-negative")
        if self.mw_xy is None:
            object.__setattr__(self, "mw_xy", self.mw // 2)
        if self.mw_xy < 0:
            raise ValueError("mw_xy must be non-negative")

    @classmethod
    def disabled(cls, n_qubits: int = MAX_QUBITS) -> "TruncationPolicy":
        return cls(mw=n_qubits, delta_min=0.0, mw_xy=n_qubits)


def truncate(store: PauliStore, policy: TruncationPolicy) -> dict[str, int]:
    """Apply the policy in rule order; each dropped term is tallied under its first failing rule.

    """
    tally = dict.fromkeys(RULES, 0)
    for rule in RULES:
        if rule == "weight":
            bad = store.weight() > policy.mw
        elif rule == "xy_weight":
            bad = store.xy_weight() > policy.mw_xy
        else:
            bad = np.abs(store.c) < policy.delta_min
        tally[rule] = int(bad.sum())
        if tally[rule]:
            store.keep(~bad)
    return tally


@dataclass
class StepCensus:
    end_step: int  # first end time whose pulled-back operator includes this step
    back_step: int  # backward steps completed for that end time
    size_before: int
    size_after: int
    discarded: dict[str, int]


@dataclass
class PropagationRun:
    values: np.ndarray  # expectation per forward step count 0..n
    census: list[StepCensus]
    policy: TruncationPolicy

    def totals(self) -> dict[str, int]:
        out = dict.fromkeys(RULES, 0)
        for row in self.census:
            for k, v in row.discarded.items():
                out[k] += v
        return out


def term_census(run: PropagationRun) -> list[dict]:
    """Per backward step: store size before/after truncation and discards by rule."""
    rows = []
    for r in run.census:
        row = {"end_step": r.end_step, "back_step": r.back_step, "size_before": r.size_before, "size_after": r.size_after}
        row.update({f"discard_{k}": v for k, v in r.discarded.items()})
        rows.append(row)
    return rows


def _relabel(p: PauliString, qubit_of_mode: Sequence[int]) -> PauliString:
    return PauliString({qubit_of_mode[q]: letter for q, letter in p.letters}, p.coeff)


def _apply_step(store: PauliStore, layers) -> None:
    for layer in reversed(layers):
        for g in layer:
            conjugate_gate(store, g)


def propagate(
    observable: PauliString,
    params: HubbardParams,
    dt: float,
    n_steps: int,
    policy: TruncationPolicy,
    initial: FockState,
    ordering: str = "pair_interleaved",
) -> PropagationRun:
    """Expectation of ``observable`` after 0..n_steps Trotter steps.

    ``observable`` is written on canonical (pair-interleaved) mode indices and
    mapped onto whichever qubits carry those modes at each end time.  The
    observable is pulled back one Trotter step at a time and truncated after
    each step.  Because step ``k+2`` repeats step ``k``, the pulled-back
    operator for end time ``s+2`` is the one for ``s`` conjugated by steps 2
    and 1, so two chains (even and odd ``s``) reproduce every per-end-time
    backward run, truncation included.
    """
    if not isinstance(initial, FockState):
        raise TypeError("initial state must be a Fock state")
    if any(letter != "Z" for _, letter in observable.letters):
        raise ValueError("the Fock evaluation needs a Z-type observable")
    if initial.L != params.L:
        raise ValueError("initial state size does not match the model")
    if int(n_steps) != n_steps or n_steps < 0:
        raise ValueError("n_steps must be a non-negative integer")
    n = 2 * params.L
    steps = trotter_step_layers(params, dt, 2, ordering)
    circuit = build_trotter_circuit(params, dt, 2, ordering=ordering)
    start = circuit.perm_after(0)
    state = FockState(tuple(initial.occupation(s, sp) for s, sp in start.labels))
    values = np.empty(n_steps + 1)
    census: list[StepCensus] = []

    def pull_back(store: PauliStore, k: int, end: int, back: int) -> None:
        _apply_step(store, steps[k])
        before = len(store)
        tally = truncate(store, policy)
        census.append(StepCensus(end, back, before, len(store), tally))

    for parity in (0, 1):
        if parity > n_steps:
            break
        perm = circuit.perm_after(parity)
        qubit_of_mode = [0] * n
        for q, cidx in enumerate(perm.canonical()):
            qubit_of_mode[cidx] = q
        store = PauliStore.from_pauli(_relabel(observable, qubit_of_mode), n)
        if parity:
            pull_back(store, 0, 1, 1)
        values[parity] = store.fock_expectation(state)
        for s in range(parity + 2, n_steps + 1, 2):
            pull_back(store, 1, s, s - 1)
            pull_back(store, 0, s, s)
            values[s] = store.fock_expectation(state)
    census.sort(key=lambda r: (r.end_step, r.back_step))
    return PropagationRun(values, census, policy)


def occupation_observable(mode: int) -> PauliString:
    """``Z`` on canonical mode ``mode``; ``<n> = (1 - <Z>)/2``."""
    return PauliString({mode: "Z"})


def ppp_occupations(
    params: HubbardParams,
    dt: float,
    n_steps: int,
    policy: TruncationPolicy,
    initial: FockState,
    modes: Sequence[int] | None = None,
    ordering: str = "pair_interleaved",
) -> tuple[np.ndarray, list[PropagationRun]]:
    """Occupations per step for ``modes`` (all by default), shape ``(n_steps+1, len(modes))``."""
    modes = list(range(2 * params.L)) if modes is None else list(modes)
    runs = [propagate(occupation_observable(m), params, dt, n_steps, policy, initial, ordering) for m in modes]
    occ = np.column_stack([(1 - r.values) / 2 for r in runs])
    return occ, runs
