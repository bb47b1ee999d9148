"""Layered Trotter and echo circuits for the pair-interleaved chain.

One Trotter step, in time order:

    RZ layer -> hopping on (2j+1, 2j+2) -> RZZ on (2i, 2i+1) -> fSWAP on (2i, 2i+1)
    -> hopping on (2j+1, 2j+2) -> RZ layer

The fSWAP layer turns the long-range hops into short ones at the cost of
exchanging the spin labels of every site, so consecutive steps alternate
between two labelings.  The labeling is tracked in ``Circuit.mode_perm`` and
undone classically after measurement.

Rotation conventions: ``RZ(t) = exp(-i t Z/2)``, ``RZZ(t) = exp(-i t ZZ/2)``,
``RXXplusYY(t) = exp(-i t (XX+YY)/2)``.  For two-qubit gates on ``(a, b)`` the
4x4 matrix index is ``2*bit_a + bit_b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import (
    SPINS,
    FockState,
    HubbardParams,
    Spin,
    mode_index,
    mode_label,
)
from .shots import ShotTable

ABSTRACT_KINDS = ("RZ", "RZZ", "RXXplusYY", "FSWAP", "X", "PREP")
_ARITY = {"RZ": 1, "X": 1, "RZZ": 2, "RXXplusYY": 2, "FSWAP": 2, "PREP": 0}
_PARAMETRIC = {"RZ", "RZZ", "RXXplusYY"}


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    theta: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if self.theta is not None:
            object.__setattr__(self, "theta", float(self.theta))
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"{self.kind} acts twice on the same qubit: {self.qubits}")

    @property
    def is_two_qubit(self) -> bool:
        return len(self.qubits) == 2

    def to_dict(self) -> dict:
        return {"kind": self.kind, "qubits": list(self.qubits), "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        return cls(d["kind"], tuple(d["qubits"]), d.get("theta"))


def validate_abstract_gate(g: Gate, width: int) -> None:
    if g.kind not in ABSTRACT_KINDS:
        raise ValueError(f"unknown gate kind {g.kind!r}")
    if g.kind != "PREP" and len(g.qubits) != _ARITY[g.kind]:
        raise ValueError(f"{g.kind} expects {_ARITY[g.kind]} qubits, got {g.qubits}")
    if any(not 0 <= q < width for q in g.qubits):
        raise ValueError(f"{g.kind} on {g.qubits} outside a {width}-qubit register")
    if g.is_two_qubit and abs(g.qubits[0] - g.qubits[1]) != 1:
        raise ValueError(f"{g.kind} on non-adjacent qubits {g.qubits}")
    if (g.kind in _PARAMETRIC) != (g.theta is not None):
        raise ValueError(f"{g.kind} angle mismatch: theta={g.theta}")


@dataclass(frozen=True)
class ModePermutation:
    """``labels[J]`` is the (site, spin) mode currently stored on qubit ``J``."""

    labels: tuple[tuple[int, Spin], ...]

    def __post_init__(self) -> None:
        labels = tuple((int(s), sp) for s, sp in self.labels)
        L = len(labels) // 2
        if sorted(labels) != sorted((i, s) for i in range(L) for s in SPINS):
            raise ValueError("mode labels must be a bijection onto all (site, spin) pairs")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def identity(cls, L: int) -> "ModePermutation":
        return cls(tuple(mode_label(j, L) for j in range(2 * L)))

    @property
    def L(self) -> int:
        return len(self.labels) // 2

    def swap(self, a: int, b: int) -> "ModePermutation":
        labels = list(self.labels)
        labels[a], labels[b] = labels[b], labels[a]
        return ModePermutation(tuple(labels))

    def canonical(self) -> tuple[int, ...]:
        """``canonical()[J]`` is the pair-interleaved index of the mode on qubit ``J``."""
        return tuple(mode_index(s, sp, self.L) for s, sp in self.labels)

    def qubit_of(self, site: int, spin: Spin) -> int:
        return self.labels.index((site, spin))

    def is_identity(self) -> bool:
        return self == ModePermutation.identity(self.L)

    def to_list(self) -> list:
        return [[s, sp] for s, sp in self.labels]

    @classmethod
    def from_list(cls, L: int, items) -> "ModePermutation":
        perm = cls(tuple((int(s), str(sp)) for s, sp in items))
        if perm.L != L:
            raise ValueError(f"permutation covers {perm.L} sites, expected {L}")
        return perm


@dataclass(frozen=True)
class Circuit:
    """Abstract gate layers; gates within a layer act on disjoint qubits.

    ``step_ends[s]`` counts the layers that complete step ``s+1`` apart from its
    trailing RZ layer, so a prefix of that length measures like an ``s+1``-step
    circuit in the Z basis.
    """

    width: int
    layers: tuple[tuple[Gate, ...], ...]
    mode_perm: ModePermutation
    step_ends: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        layers = tuple(tuple(layer) for layer in self.layers)
        for layer in layers:
            used: set[int] = set()
            for g in layer:
                validate_abstract_gate(g, self.width)
                if used & set(g.qubits):
                    raise ValueError(f"overlapping gates in one layer: {layer}")
                used |= set(g.qubits)
        if self.mode_perm.L * 2 != self.width:
            raise ValueError("mode permutation width mismatch")
        object.__setattr__(self, "layers", layers)

    @property
    def L(self) -> int:
        return self.width // 2

    def gates(self) -> Iterable[Gate]:
        for layer in self.layers:
            yield from layer

    def perm_after(self, steps: int) -> ModePermutation:
        """Qubit labeling after ``steps`` Trotter steps (or echo half-steps)."""
        if self.mode_perm == interleaved_labels(self.L):
            return self.mode_perm
        perm = ModePermutation.identity(self.L)
        if steps % 2:
            for i in range(self.L):
                perm = perm.swap(2 * i, 2 * i + 1)
        return perm

    @property
    def has_prep(self) -> bool:
        return any(g.kind == "PREP" for g in self.gates())

    def count(self, kind: str | None = None) -> int:
        return sum(1 for g in self.gates() if kind is None or g.kind == kind)

    def two_qubit_layers(self) -> int:
        return sum(1 for layer in self.layers if any(g.is_two_qubit for g in layer))

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "layers": [[g.to_dict() for g in layer] for layer in self.layers],
            "mode_perm": self.mode_perm.to_list(),
            "step_ends": list(self.step_ends),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Circuit":
        layers = tuple(tuple(Gate.from_dict(g) for g in layer) for layer in d["layers"])
        perm = ModePermutation(tuple((s, sp) for s, sp in d["mode_perm"]))
        return cls(int(d["width"]), layers, perm, tuple(d.get("step_ends", ())))

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Trotter circuits
# ---------------------------------------------------------------------------


def _rz_angles(params: HubbardParams, perm: ModePermutation, dt: float) -> list[float]:
    """Angles of exp(-i dt/2 * H_1Q) in the labeling ``perm``."""
    U = params.onsite()
    mu = params.chemical()
    out = []
    for site, spin in perm.labels:
        coeff = (mu[site, SPINS.index(spin)] - U[site] / 2) / 2
        out.append(coeff * dt)
    return out


def _prep_layers(initial: FockState, perm: ModePermutation | None = None) -> list[list[Gate]]:
    if perm is None:
        xs = [Gate("X", (j,)) for j, b in enumerate(initial.bits) if b]
    else:
        xs = [Gate("X", (j,)) for j, (s, sp) in enumerate(perm.labels) if initial.occupation(s, sp)]
    layers = [xs] if xs else []
    return layers + [[Gate("PREP", ())]]


def _step_layers(params: HubbardParams, dt: float, perm: ModePermutation):
    """Forward step as ``(layers, perm_after)``; both RZ layers included."""
    L = params.L
    t = params.hopping()
    U = params.onsite()
    hop = [Gate("RXXplusYY", (2 * j + 1, 2 * j + 2), -t[j] * dt) for j in range(L - 1)]
    rz_in = [Gate("RZ", (q,), a) for q, a in enumerate(_rz_angles(params, perm, dt))]
    rzz = [Gate("RZZ", (2 * i, 2 * i + 1), U[i] * dt / 2) for i in range(L)]
    fsw = [Gate("FSWAP", (2 * i, 2 * i + 1)) for i in range(L)]
    after = perm
    for i in range(L):
        after = after.swap(2 * i, 2 * i + 1)
    rz_out = [Gate("RZ", (q,), a) for q, a in enumerate(_rz_angles(params, after, dt))]
    return [rz_in, hop, rzz, fsw, list(hop), rz_out], after


def interleaved_labels(L: int) -> ModePermutation:
    """Up/down-per-site ordering: qubit ``2i`` holds ``(i, up)``, ``2i+1`` holds ``(i, down)``."""
    return ModePermutation(tuple((i, sp) for i in range(L) for sp in ("up", "down")))


def _interleaved_step_layers(params: HubbardParams, dt: float, perm: ModePermutation):
    """One step in the interleaved ordering; same-spin neighbours are two qubits apart.

    Each bond is served by an fSWAP that brings the two same-spin pairs next to
    each other, both hops, and the undoing fSWAP, so the labeling is restored.
    """
    L = params.L
    t = params.hopping()
    U = params.onsite()
    mids = {0: [], 1: []}
    hops = {0: [], 1: []}
    for i in range(L - 1):
        mids[i % 2].append(Gate("FSWAP", (2 * i + 1, 2 * i + 2)))
        hops[i % 2] += [
            Gate("RXXplusYY", (2 * i, 2 * i + 1), -t[i] * dt),
            Gate("RXXplusYY", (2 * i + 2, 2 * i + 3), -t[i] * dt),
        ]
    rz = [Gate("RZ", (q,), a) for q, a in enumerate(_rz_angles(params, perm, dt))]
    rzz = [Gate("RZZ", (2 * i, 2 * i + 1), U[i] * dt / 2) for i in range(L)]
    layers = [rz, rzz, mids[0], hops[0], mids[0] + mids[1], hops[1], mids[1], list(rz)]
    return [layer for layer in layers if layer], perm


ORDERINGS = ("pair_interleaved", "interleaved")


def trotter_step_layers(
    params: HubbardParams, dt: float, n_steps: int, ordering: str = "pair_interleaved"
) -> list[list[list[Gate]]]:
    """Unmerged per-step layers; step ``k`` and step ``k+2`` are identical."""
    _check_dt_steps(dt, n_steps, 1)
    if ordering == "pair_interleaved":
        perm, builder = ModePermutation.identity(params.L), _step_layers
    elif ordering == "interleaved":
        perm, builder = interleaved_labels(params.L), _interleaved_step_layers
    else:
        raise ValueError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
    steps = []
    for _ in range(n_steps):
        layers, perm = builder(params, dt, perm)
        steps.append(layers)
    return steps


def invert_gate(g: Gate) -> Gate:
    if g.theta is None:
        return g
    return Gate(g.kind, g.qubits, -g.theta)


def _inverse_layers(layers: Sequence[Sequence[Gate]]) -> list[list[Gate]]:
    return [[invert_gate(g) for g in layer] for layer in reversed(layers)]


def _merge_rz(a: Sequence[Gate], b: Sequence[Gate]) -> list[Gate]:
    angles: dict[int, float] = {}
    for g in list(a) + list(b):
        if g.kind != "RZ":
            raise ValueError("only RZ layers can be merged")
        angles[g.qubits[0]] = angles.get(g.qubits[0], 0.0) + g.theta
    return [Gate("RZ", (q,), angles[q]) for q in sorted(angles)]


def _append_step(layers: list[list[Gate]], step: list[list[Gate]]) -> None:
    """Append a step, fusing its leading RZ layer into a trailing RZ layer."""
    if layers and layers[-1] and all(g.kind == "RZ" for g in layers[-1]):
        layers[-1] = _merge_rz(layers[-1], step[0])
        layers.extend(step[1:])
    else:
        layers.extend(step)


def _check_dt_steps(dt: float, n_steps: int, minimum: int) -> None:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if int(n_steps) != n_steps or n_steps < minimum:
        raise ValueError(f"n_steps must be an integer >= {minimum}, got {n_steps}")


def build_trotter_circuit(
    params: HubbardParams,
    dt: float,
    n_steps: int,
    initial: FockState | None = None,
    ordering: str = "pair_interleaved",
) -> Circuit:
    """``n_steps`` Trotter steps of length ``dt``.

    With ``initial`` the circuit starts with X gates preparing that Fock state
    from ``|0...0>`` followed by a PREP marker.  The interleaved ordering is a
    first-order comparison circuit with a fixed qubit labeling.
    """
    _check_dt_steps(dt, n_steps, 1)
    if initial is not None and initial.L != params.L:
        raise ValueError("initial state size does not match the model")
    if ordering == "pair_interleaved":
        perm, builder = ModePermutation.identity(params.L), _step_layers
    elif ordering == "interleaved":
        perm, builder = interleaved_labels(params.L), _interleaved_step_layers
    else:
        raise ValueError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
    layers: list[list[Gate]] = _prep_layers(initial, perm) if initial is not None else []
    ends = []
    for _ in range(n_steps):
        step, perm = builder(params, dt, perm)
        _append_step(layers, step)
        ends.append(len(layers) - 1)
    return Circuit(2 * params.L, tuple(map(tuple, layers)), perm, tuple(ends))


def build_echo_circuit(
    params: HubbardParams,
    dt: float,
    n_steps: int,
    initial: FockState | None = None,
) -> Circuit:
    """``n/2`` Trotter steps followed by their exact gate-wise inverse."""
    _check_dt_steps(dt, n_steps, 0)
    if n_steps % 2:
        raise ValueError(f"echo circuits need an even step count, got {n_steps}")
    layers: list[list[Gate]] = _prep_layers(initial) if initial is not None else []
    perm = ModePermutation.identity(params.L)
    forward: list[list[list[Gate]]] = []
    ends = []
    for _ in range(n_steps // 2):
        step, perm = _step_layers(params, dt, perm)
        forward.append(step)
        _append_step(layers, step)
        ends.append(len(layers) - 1)
    for step in reversed(forward):
        _append_step(layers, _inverse_layers(step))
        ends.append(len(layers) - 1)
    return Circuit(2 * params.L, tuple(map(tuple, layers)), ModePermutation.identity(params.L), tuple(ends))


def strip_prep(circuit: Circuit) -> Circuit:
    """Drop the state-preparation X layer and PREP marker, if present."""
    if not circuit.has_prep:
        return circuit
    layers = list(circuit.layers)
    cut = next(i for i, layer in enumerate(layers) if any(g.kind == "PREP" for g in layer)) + 1
    shift = cut
    return Circuit(
        circuit.width,
        tuple(layers[cut:]),
        circuit.mode_perm,
        tuple(e - shift for e in circuit.step_ends),
    )


def with_prep(circuit: Circuit, initial: FockState) -> Circuit:
    body = strip_prep(circuit)
    prep = _prep_layers(initial, body.perm_after(0))
    return Circuit(
        body.width,
        tuple(map(tuple, prep)) + body.layers,
        body.mode_perm,
        tuple(e + len(prep) for e in body.step_ends),
    )


# ---------------------------------------------------------------------------
# virtual relabeling of measurement records
# ---------------------------------------------------------------------------


def relabel_index(index: int, perm: ModePermutation) -> int:
    out = 0
    for j, c in enumerate(perm.canonical()):
        out |= ((index >> j) & 1) << c
    return out


def apply_virtual_permutation(shots: ShotTable, perm: ModePermutation) -> ShotTable:
    """Reorder every bitstring so that bit ``J`` is canonical mode ``J``."""
    if shots.width != 2 * perm.L:
        raise ValueError(f"shot width {shots.width} does not match permutation on {2 * perm.L} qubits")
    if perm.is_identity():
        return shots
    counts: dict[int, int] = {}
    for k, n in shots.counts.items():
        r = relabel_index(k, perm)
        counts[r] = counts.get(r, 0) + n
    return ShotTable(shots.width, counts)


# ---------------------------------------------------------------------------
# gate matrices
# ---------------------------------------------------------------------------

_X = np.array([[0, 1], [1, 0]], dtype=complex)
FSWAP_MATRIX = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, -1]], dtype=complex)


def rz_matrix(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def rzz_matrix(theta: float) -> np.ndarray:
    return np.diag(np.exp(-0.5j * theta * np.array([1, -1, -1, 1])))


def hop_matrix(theta: float) -> np.ndarray:
    m = np.eye(4, dtype=complex)
    c, s = np.cos(theta), np.sin(theta)
    m[1, 1] = m[2, 2] = c
    m[1, 2] = m[2, 1] = -1j * s
    return m


def gate_matrix(g: Gate) -> np.ndarray:
    if g.kind == "RZ":
        return rz_matrix(g.theta)
    if g.kind == "X":
        return _X.copy()
    if g.kind == "RZZ":
        return rzz_matrix(g.theta)
    if g.kind == "RXXplusYY":
        return hop_matrix(g.theta)
    if g.kind == "FSWAP":
        return FSWAP_MATRIX.copy()
    raise ValueError(f"no matrix for gate kind {g.kind!r}")


def save_circuit(circuit: Circuit, path: str | Path) -> None:
    Path(path).write_text(circuit.to_json())


def load_circuit(path: str | Path) -> Circuit:
    return Circuit.from_json(Path(path).read_text())
