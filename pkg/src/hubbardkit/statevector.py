"""Statevector executor, exact-evolution oracle, sampling and estimators.

Amplitude index ``x`` stores qubit ``J`` in bit ``J`` (least significant
first).  A state may live on the full register or on an explicit list of basis
indices (the conserved ``(N_up, N_down)`` sector), which is how the exact
oracle reaches chains that do not fit in a full register.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .circuit import Circuit, Gate, ModePermutation, gate_matrix
from .model import (
    DENSE_QUBIT_CAP,
    FockState,
    HubbardParams,
    SizeError,
    build_hamiltonian,
    mode_label,
    spin_masks,
)
from .shots import ShotTable

DEFAULT_QUBIT_CAP = 24
SECTOR_QUBIT_CAP = 28
_EIGH_DIM = 2048


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray
    basis: np.ndarray | None = None  # sorted basis indices when sector-restricted

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def indices(self) -> np.ndarray:
        if self.basis is not None:
            return self.basis
        return np.arange(1 << self.n_qubits, dtype=np.int64)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def full(self) -> np.ndarray:
        """Amplitudes on the whole register (only for registers within the cap)."""
        if self.basis is None:
            return self.amplitudes
        if self.n_qubits > DEFAULT_QUBIT_CAP:
            raise SizeError(f"cannot expand a {self.n_qubits}-qubit sector state")
        out = np.zeros(1 << self.n_qubits, dtype=complex)
        out[self.basis] = self.amplitudes
        return out

    def z_expectations(self) -> np.ndarray:
        p = self.probabilities()
        idx = self.indices()
        return np.array([p @ (1 - 2 * ((idx >> j) & 1)) for j in range(self.n_qubits)], dtype=float)

    def fidelity(self, other: "StateVector") -> float:
        return float(abs(np.vdot(self.full(), other.full())) ** 2)


@dataclass(frozen=True)
class NoiseModel:
    """Synthetic noise: two-qubit Pauli errors after each two-qubit gate and readout flips.

    ``p10`` is p(read 1 | prepared 0), ``p01`` is p(read 0 | prepared 1); each is
    a scalar or one value per qubit.
    """

    p_dep2q: float = 0.0
    p10: float | tuple[float, ...] = 0.0
    p01: float | tuple[float, ...] = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p10", "p01"):
            v = getattr(self, name)
            if not np.isscalar(v):
                object.__setattr__(self, name, tuple(float(x) for x in v))
        vals = [self.p_dep2q] + list(np.ravel(self.p10)) + list(np.ravel(self.p01))
        if any(not 0.0 <= float(v) <= 1.0 for v in vals):
            raise ValueError("noise probabilities must lie in [0, 1]")

    def readout_rates(self, width: int) -> tuple[np.ndarray, np.ndarray]:
        def expand(v):
            arr = np.broadcast_to(np.asarray(v, dtype=float), (width,)) if np.isscalar(v) else np.asarray(v)
            if arr.shape != (width,):
                raise ValueError(f"readout rates need {width} entries")
            return np.array(arr, dtype=float)

        return expand(self.p10), expand(self.p01)

    @property
    def is_noiseless(self) -> bool:
        p10, p01 = np.ravel(self.p10), np.ravel(self.p01)
        return self.p_dep2q == 0 and not p10.any() and not p01.any()


NOISELESS = NoiseModel()


@dataclass(frozen=True)
class Estimate:
    value: float
    std_err: float
    n_shots: int | None = None


# ---------------------------------------------------------------------------
# gate kernels; ``psi`` has shape (batch, 2**n) and is modified in place
# ---------------------------------------------------------------------------


def _view1(psi: np.ndarray, q: int) -> np.ndarray:
    return psi.reshape(-1, 2, 1 << q)


def _view2(psi: np.ndarray, q: int) -> np.ndarray:
    # axis 1 = bit q+1, axis 2 = bit q
    return psi.reshape(-1, 2, 2, 1 << q)


def apply_1q(psi: np.ndarray, m: np.ndarray, q: int) -> None:
    v = _view1(psi, q)
    a0 = v[:, 0, :].copy()
    a1 = v[:, 1, :]
    v[:, 0, :] = m[0, 0] * a0 + m[0, 1] * a1
    v[:, 1, :] = m[1, 0] * a0 + m[1, 1] * a1


def apply_rz(psi: np.ndarray, theta: float, q: int) -> None:
    v = _view1(psi, q)
    v[:, 0, :] *= np.exp(-0.5j * theta)
    v[:, 1, :] *= np.exp(0.5j * theta)


def apply_x(psi: np.ndarray, q: int) -> None:
    v = _view1(psi, q)
    v[:, [0, 1], :] = v[:, [1, 0], :]


def apply_2q(psi: np.ndarray, m: np.ndarray, qa: int, qb: int, n: int) -> None:
    """4x4 gate with index ``2*bit_a + bit_b``."""
    if abs(qa - qb) == 1:
        lo = min(qa, qb)
        if qa > qb:  # axis order (a, b) already
            mm = m
        else:  # swap roles so that the view's (bit lo+1, bit lo) = (b, a)
            perm = [0, 2, 1, 3]
            mm = m[np.ix_(perm, perm)]
        v = _view2(psi, lo)
        old = v.reshape(v.shape[0], 4, v.shape[3]).copy()
        new = np.einsum("ij,bjk->bik", mm, old)
        v[:] = new.reshape(v.shape)
        return
    batch = psi.shape[0]
    t = psi.reshape((batch,) + (2,) * n)
    ax = (1 + n - 1 - qa, 1 + n - 1 - qb)
    out = np.tensordot(m.reshape(2, 2, 2, 2), t, axes=([2, 3], list(ax)))
    out = np.moveaxis(out, [0, 1], list(ax))
    psi[:] = out.reshape(batch, -1)


def apply_rzz(psi: np.ndarray, theta: float, qa: int, qb: int, n: int) -> None:
    if abs(qa - qb) != 1:
        apply_2q(psi, gate_matrix(Gate("RZZ", (qa, qb), theta)), qa, qb, n)
        return
    v = _view2(psi, min(qa, qb))
    same, diff = np.exp(-0.5j * theta), np.exp(0.5j * theta)
    v[:, 0, 0, :] *= same
    v[:, 1, 1, :] *= same
    v[:, 0, 1, :] *= diff
    v[:, 1, 0, :] *= diff


def apply_hop(psi: np.ndarray, theta: float, qa: int, qb: int, n: int) -> None:
    if abs(qa - qb) != 1:
        apply_2q(psi, gate_matrix(Gate("RXXplusYY", (qa, qb), theta)), qa, qb, n)
        return
    v = _view2(psi, min(qa, qb))
    c, s = math.cos(theta), -1j * math.sin(theta)
    a01 = v[:, 0, 1, :].copy()
    a10 = v[:, 1, 0, :]
    v[:, 0, 1, :] = c * a01 + s * a10
    v[:, 1, 0, :] = s * a01 + c * a10


def apply_fswap(psi: np.ndarray, qa: int, qb: int, n: int) -> None:
    if abs(qa - qb) != 1:
        apply_2q(psi, gate_matrix(Gate("FSWAP", (qa, qb))), qa, qb, n)
        return
    v = _view2(psi, min(qa, qb))
    v[:, [0, 1], [1, 0], :] = v[:, [1, 0], [0, 1], :]
    v[:, 1, 1, :] *= -1


def _native_matrix(g: Gate) -> np.ndarray:
    from .compiler import native_matrix

    return native_matrix(g)


def apply_gate(psi: np.ndarray, g: Gate, n: int) -> None:
    k = g.kind
    if k == "PREP":
        return
    if k == "RZ":
        apply_rz(psi, g.theta, g.qubits[0])
    elif k == "X":
        apply_x(psi, g.qubits[0])
    elif k == "RZZ":
        apply_rzz(psi, g.theta, *g.qubits, n)
    elif k == "RXXplusYY":
        apply_hop(psi, g.theta, *g.qubits, n)
    elif k == "FSWAP":
        apply_fswap(psi, *g.qubits, n)
    elif k == "CZ":
        apply_rzz_cz(psi, *g.qubits, n)
    elif len(g.qubits) == 1:
        apply_1q(psi, _native_matrix(g), g.qubits[0])
    else:
        apply_2q(psi, _native_matrix(g), *g.qubits, n)


def apply_rzz_cz(psi: np.ndarray, qa: int, qb: int, n: int) -> None:
    if abs(qa - qb) != 1:
        apply_2q(psi, np.diag([1, 1, 1, -1]).astype(complex), qa, qb, n)
        return
    _view2(psi, min(qa, qb))[:, 1, 1, :] *= -1


# two-qubit Paulis for error injection; index 4*a + b over I, X, Y, Z
_PAULI_1Q = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]


def apply_pauli_pair(psi_row: np.ndarray, code: int, qa: int, qb: int) -> None:
    """Apply Pauli ``code`` (1..15, ``4*a + b``) to a single state row in place."""
    a, b = divmod(code, 4)
    row = psi_row.reshape(1, -1)
    if a:
        apply_1q(row, _PAULI_1Q[a], qa)
    if b:
        apply_1q(row, _PAULI_1Q[b], qb)


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


def _check_width(n: int, cap: int) -> None:
    if n > cap:
        raise SizeError(f"{n} qubits exceeds the statevector cap of {cap}")


def basis_state(n_qubits: int, initial: FockState | None = None) -> np.ndarray:
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[initial.index if initial is not None else 0] = 1.0
    return psi


def _circuit_layers(circuit) -> tuple[tuple[Gate, ...], ...]:
    return tuple(tuple(layer) for layer in circuit.layers)


def _error_schedule(circuit, noise: NoiseModel, trajectories: Sequence[int]):
    """Per two-qubit gate, the list of ``(row, pauli_code)`` errors to inject."""
    n2 = sum(1 for layer in circuit.layers for g in layer if len(g.qubits) == 2)
    hits: list[list[tuple[int, int]]] = [[] for _ in range(n2)]
    if noise.p_dep2q <= 0 or n2 == 0:
        return hits
    for row, traj in enumerate(trajectories):
        rng = np.random.default_rng([noise.seed, 1, int(traj)])
        fire = rng.random(n2) < noise.p_dep2q
        codes = rng.integers(1, 16, size=n2)
        for gi in np.flatnonzero(fire):
            hits[gi].append((row, int(codes[gi])))
    return hits


def evolve(
    circuit,
    initial: FockState | None = None,
    noise: NoiseModel | None = None,
    trajectories: Sequence[int] = (0,),
    snapshots: Sequence[int] | None = None,
    cap: int = DEFAULT_QUBIT_CAP,
    psi0: np.ndarray | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run ``circuit`` on a batch of trajectories.

    Returns the final ``(batch, 2**n)`` array and copies taken after each prefix
    length listed in ``snapshots`` (a length of 0 is the input state).
    """
    n = circuit.width
    _check_width(n, cap)
    noise = noise or NOISELESS
    batch = len(trajectories)
    if psi0 is not None:
        psi = np.array(np.broadcast_to(psi0, (batch, psi0.shape[-1])), dtype=complex)
    else:
        psi = np.tile(basis_state(n, initial), (batch, 1))
    hits = _error_schedule(circuit, noise, trajectories)
    wanted = sorted(set(snapshots or ()))
    taken: dict[int, np.ndarray] = {}
    if 0 in wanted:
        taken[0] = psi.copy()
    gi = 0
    for li, layer in enumerate(_circuit_layers(circuit)):
        for g in layer:
            apply_gate(psi, g, n)
            if len(g.qubits) == 2:
                for row, code in hits[gi]:
                    apply_pauli_pair(psi[row], code, *g.qubits)
                gi += 1
        if li + 1 in wanted:
            taken[li + 1] = psi.copy()
    return psi, [taken[k] for k in (snapshots or ())]


def run(
    circuit,
    initial: FockState | None = None,
    noise: NoiseModel | None = None,
    trajectory: int = 0,
    cap: int = DEFAULT_QUBIT_CAP,
) -> StateVector:
    """Apply ``circuit`` (abstract or native) to the Fock state ``initial``.

    Circuits that carry their own preparation should be run from ``|0...0>``.
    With two-qubit noise the result is one stochastic trajectory.
    """
    psi, _ = evolve(circuit, initial, noise, (trajectory,), cap=cap)
    return StateVector(circuit.width, psi[0])


def circuit_unitary(circuit, cap: int = 12) -> np.ndarray:
    n = circuit.width
    _check_width(n, cap)
    psi = np.eye(1 << n, dtype=complex)
    for layer in _circuit_layers(circuit):
        for g in layer:
            apply_gate(psi, g, n)
    return psi.T


def trotter_snapshots(
    circuit: Circuit,
    initial: FockState | None = None,
    noise: NoiseModel | None = None,
    trajectories: Sequence[int] = (0,),
    cap: int = DEFAULT_QUBIT_CAP,
) -> list[np.ndarray]:
    """States after 0, 1, ..., n Trotter steps (Z-basis equivalent, physical labels)."""
    ends = [0] + list(circuit.step_ends)
    if circuit.has_prep:
        prep_len = next(i for i, layer in enumerate(circuit.layers) if any(g.kind == "PREP" for g in layer)) + 1
        ends[0] = prep_len
    _, snaps = evolve(circuit, initial, noise, trajectories, snapshots=ends, cap=cap)
    return snaps


# ---------------------------------------------------------------------------
# exact evolution
# ---------------------------------------------------------------------------


def sector_basis(L: int, n_up: int, n_down: int) -> np.ndarray:
    """Sorted basis indices with the given particle numbers per spin."""
    from itertools import combinations

    from .model import DOWN, UP, mode_index

    ups = [mode_index(i, UP, L) for i in range(L)]
    dns = [mode_index(i, DOWN, L) for i in range(L)]
    up_idx = np.array([sum(1 << ups[i] for i in c) for c in combinations(range(L), n_up)], dtype=np.int64)
    dn_idx = np.array([sum(1 << dns[i] for i in c) for c in combinations(range(L), n_down)], dtype=np.int64)
    basis = (up_idx[:, None] | dn_idx[None, :]).ravel()
    basis.sort()
    return basis


def sector_dimension(L: int, n_up: int, n_down: int) -> int:
    return math.comb(L, n_up) * math.comb(L, n_down)


def sector_hamiltonian(params: HubbardParams, basis: np.ndarray) -> sp.csr_matrix:
    """Projection of the qubit Hamiltonian (with its constant) onto ``basis``."""
    ham = build_hamiltonian(params)
    dim = len(basis)
    rows, cols, data = [], [], []
    for term in ham.pauli_sum(include_constant=True).terms():
        x, z = term.masks()
        ny = bin(x & z).count("1")
        target = basis ^ x
        pos = np.searchsorted(basis, target)
        pos = np.minimum(pos, dim - 1)
        ok = basis[pos] == target
        sign = 1 - 2 * (np.bitwise_count(basis & z) & 1).astype(np.int64)
        vals = term.coeff * (1j**ny) * sign
        rows.append(pos[ok])
        cols.append(np.arange(dim)[ok])
        data.append(vals[ok])
    h = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    h.sum_duplicates()
    return h


def full_hamiltonian(params: HubbardParams) -> sp.csr_matrix:
    return build_hamiltonian(params).to_sparse(include_constant=True)


def _evolve_vector(h, v0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """``exp(-iHt) v0`` for each ``t``; rows of the result follow ``times``."""
    dim = h.shape[0]
    if dim <= _EIGH_DIM:
        hd = h.toarray() if sp.issparse(h) else h
        w, vecs = np.linalg.eigh(hd)
        c = vecs.conj().T @ v0
        return np.array([vecs @ (np.exp(-1j * w * t) * c) for t in times])
    out = np.empty((len(times), dim), dtype=complex)
    hm = (-1j) * h.tocsc()
    uniform = len(times) > 2 and np.allclose(np.diff(times), times[1] - times[0])
    if uniform:
        res = expm_multiply(hm, v0, start=times[0], stop=times[-1], num=len(times), endpoint=True)
        return np.asarray(res)
    for k, t in enumerate(times):
        out[k] = expm_multiply(hm * t, v0) if t != 0 else v0
    return out


def exact_evolve(
    params: HubbardParams,
    initial: FockState,
    t,
    sector: bool | None = None,
):
    """``exp(-iHt)|initial>`` with the continuous-time Hamiltonian.

    ``t`` may be a scalar (one :class:`StateVector`) or a sequence (a list).
    By default the conserved (N_up, N_down) block is used once the register
    exceeds 16 qubits; the block is limited to 28 qubits.
    """
    n = 2 * params.L
    if initial.L != params.L:
        raise ValueError("initial state size does not match the model")
    if sector is None:
        sector = n > DENSE_QUBIT_CAP
    if sector:
        if n > SECTOR_QUBIT_CAP:
            raise SizeError(f"{n} qubits exceeds the sector-restricted oracle cap of {SECTOR_QUBIT_CAP}")
        basis = sector_basis(params.L, initial.n_up, initial.n_down)
        h = sector_hamiltonian(params, basis)
        v0 = np.zeros(len(basis), dtype=complex)
        v0[np.searchsorted(basis, initial.index)] = 1.0
    else:
        if n > DENSE_QUBIT_CAP:
            raise SizeError(f"{n} qubits exceeds the full-space oracle cap of {DENSE_QUBIT_CAP}")
        basis = None
        h = full_hamiltonian(params)
        v0 = basis_state(n, initial)
    scalar = np.isscalar(t)
    times = np.atleast_1d(np.asarray(t, dtype=float))
    vecs = _evolve_vector(h, v0, times)
    states = [StateVector(n, vecs[k], basis) for k in range(len(times))]
    return states[0] if scalar else states


def exact_occupations(params: HubbardParams, initial: FockState, times) -> np.ndarray:
    """Canonical-order occupations, shape ``(len(times), 2L)``."""
    states = exact_evolve(params, initial, list(np.atleast_1d(times)))
    return np.array([(1 - s.z_expectations()) / 2 for s in states])


# ---------------------------------------------------------------------------
# sampling and estimation
# ---------------------------------------------------------------------------


def _probabilities(state) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(state, StateVector):
        p = state.probabilities()
        idx = state.indices()
    else:
        p = np.abs(np.asarray(state)) ** 2
        idx = np.arange(p.size, dtype=np.int64)
    keep = p > 0
    p, idx = p[keep], idx[keep]
    return p / p.sum(), idx


def apply_readout_noise(keys: np.ndarray, width: int, noise: NoiseModel, rng) -> np.ndarray:
    p10, p01 = noise.readout_rates(width)
    if not p10.any() and not p01.any():
        return keys
    keys = keys.copy()
    for q in range(width):
        bit = (keys >> q) & 1
        flip_p = np.where(bit == 1, p01[q], p10[q])
        flips = rng.random(keys.size) < flip_p
        keys ^= flips.astype(np.int64) << q
    return keys


def sample_probabilities(
    p: np.ndarray,
    n_shots: int,
    width: int,
    noise: NoiseModel | None = None,
    seed: int = 0,
    indices: np.ndarray | None = None,
) -> ShotTable:
    """Multinomial sampling of a probability vector followed by per-bit readout flips."""
    if n_shots < 1:
        raise ValueError("n_shots must be positive")
    noise = noise or NOISELESS
    p = np.asarray(p, dtype=float)
    idx = np.arange(p.size, dtype=np.int64) if indices is None else np.asarray(indices, dtype=np.int64)
    keep = p > 0
    p, idx = p[keep], idx[keep]
    rng = np.random.default_rng([seed, 2])
    counts = rng.multinomial(n_shots, p / p.sum())
    keys = np.repeat(idx, counts)
    keys = apply_readout_noise(keys, width, noise, rng)
    uniq, cnt = np.unique(keys, return_counts=True)
    return ShotTable(width, dict(zip(uniq.tolist(), cnt.tolist())))


def sample(
    state,
    n_shots: int,
    noise: NoiseModel | None = None,
    seed: int | None = None,
    width: int | None = None,
) -> ShotTable:
    """Sample ``|amplitude|^2`` of a :class:`StateVector` or amplitude array, then apply readout flips."""
    noise = noise or NOISELESS
    width = width if width is not None else state.n_qubits
    p, idx = _probabilities(state)
    return sample_probabilities(p, n_shots, width, noise, noise.seed if seed is None else seed, idx)


def step_distributions(
    circuit: Circuit,
    initial: FockState | None = None,
    noise: NoiseModel | None = None,
    n_trajectories: int = 1,
    cap: int = DEFAULT_QUBIT_CAP,
) -> list[np.ndarray]:
    """Trajectory-averaged measurement distributions after each Trotter step (physical labels)."""
    noise = noise or NOISELESS
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be positive")
    if noise.p_dep2q == 0:
        n_trajectories = 1
    snaps = trotter_snapshots(circuit, initial, noise, range(n_trajectories), cap)
    return [np.mean(np.abs(psi) ** 2, axis=0) for psi in snaps]


def sample_steps(
    circuit: Circuit,
    n_shots: int,
    initial: FockState | None = None,
    noise: NoiseModel | None = None,
    n_trajectories: int = 1,
    seed: int = 0,
    cap: int = DEFAULT_QUBIT_CAP,
) -> list[ShotTable]:
    """Shots after each Trotter step; step ``s`` uses the sampling seed ``[seed, s]``."""
    noise = noise or NOISELESS
    dists = step_distributions(circuit, initial, noise, n_trajectories, cap)
    return [
        sample_probabilities(p, n_shots, circuit.width, noise, int(np.random.SeedSequence([seed, s]).generate_state(1)[0]))
        for s, p in enumerate(dists)
    ]


def z_estimate(shots: ShotTable, qubits: Sequence[int]) -> Estimate:
    """Estimate of ``<Z_q1 Z_q2 ...>`` with binomial standard error."""
    keys, vals = shots.arrays()
    mask = 0
    for q in qubits:
        mask |= 1 << q
    parity = (np.bitwise_count(keys & mask) & 1).astype(np.int64)
    n = int(vals.sum())
    value = float(((1 - 2 * parity) * vals).sum() / n)
    return Estimate(value, math.sqrt(max(1 - value**2, 0.0) / n), n)


def occupations(source, perm: ModePermutation | None = None) -> list[Estimate]:
    """Per-mode ``<n> = (1 - <Z>)/2`` in canonical mode order.

    ``perm`` gives the labeling of the source's qubits (identity by default).
    Shot-based estimates carry the binomial error of ``<Z>`` halved.
    """
    if isinstance(source, ShotTable):
        width = source.width
        raw = []
        for q in range(width):
            z = z_estimate(source, [q])
            raw.append(Estimate((1 - z.value) / 2, z.std_err / 2, z.n_shots))
    elif isinstance(source, StateVector):
        width = source.n_qubits
        raw = [Estimate(float((1 - z) / 2), 0.0, None) for z in source.z_expectations()]
    else:
        raise TypeError(f"cannot read occupations from {type(source).__name__}")
    if perm is None or perm.is_identity():
        return raw
    out: list[Estimate | None] = [None] * width
    for q, c in enumerate(perm.canonical()):
        out[c] = raw[q]
    return out  # type: ignore[return-value]


def occupation_values(source, perm: ModePermutation | None = None) -> np.ndarray:
    return np.array([e.value for e in occupations(source, perm)])


# ---------------------------------------------------------------------------
# Trotter runs and Trotter error
# ---------------------------------------------------------------------------


def trotter_occupations(
    params: HubbardParams,
    dt: float,
    n_steps: int,
    initial: FockState,
    cap: int = DEFAULT_QUBIT_CAP,
    ordering: str = "pair_interleaved",
) -> np.ndarray:
    """Noiseless Trotter occupations, canonical order, shape ``(n_steps+1, 2L)``."""
    from .circuit import build_trotter_circuit

    circ = build_trotter_circuit(params, dt, n_steps, initial, ordering=ordering)
    snaps = trotter_snapshots(circ, cap=cap)
    out = []
    for s, psi in enumerate(snaps):
        sv = StateVector(circ.width, psi[0])
        out.append(occupation_values(sv, circ.perm_after(s)))
    return np.array(out)


@dataclass(frozen=True)
class ErrorRow:
    dt: float
    step: int
    time: float
    rmse: float


def trotter_error_scan(
    params: HubbardParams,
    dt_list: Sequence[float],
    n_steps: int | None,
    initial: FockState,
    total_time: float | None = None,
    reference: Callable | None = None,
) -> list[ErrorRow]:
    """Occupation RMSE between Trotter and exact evolution at every step.

    Either ``n_steps`` (same count for every ``dt``) or ``total_time`` (count
    ``round(T/dt)``) must be given.  The RMSE averages over all ``2L`` modes.
    """
    from .analysis import rmse

    if (n_steps is None) == (total_time is None):
        raise ValueError("give exactly one of n_steps and total_time")
    reference = reference or exact_occupations
    rows: list[ErrorRow] = []
    for dt in dt_list:
        n = int(round(total_time / dt)) if total_time is not None else int(n_steps)
        trot = trotter_occupations(params, dt, n, initial)
        times = dt * np.arange(n + 1)
        exact = reference(params, initial, times)
        for s in range(n + 1):
            rows.append(ErrorRow(float(dt), s, float(times[s]), rmse(trot[s], exact[s])))
    return rows
