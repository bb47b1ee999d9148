"""Fermi-Hubbard chain: couplings, Fock states, Jordan-Wigner mapping, qubit Hamiltonian.

Modes are laid out on the qubit chain in pair-interleaved order
``(0,dn), (0,up), (1,up), (1,dn), (2,dn), (2,up), ...``: the two spins of a
site sit on qubits ``2i, 2i+1`` and the order of the pair alternates from site
to site, so one spin species always hops between neighbouring qubits.

Qubit ``J`` is bit ``J`` of a basis-state index (least significant first).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

Spin = Literal["up", "down"]
UP: Spin = "up"
DOWN: Spin = "down"
SPINS: tuple[Spin, Spin] = (UP, DOWN)

DENSE_QUBIT_CAP = 16


class SizeError(ValueError):
    """Raised when a request exceeds the size an exact oracle can handle."""


# ---------------------------------------------------------------------------
# couplings
# ---------------------------------------------------------------------------


def _as_tuple(values, shape: tuple[int, ...], name: str) -> tuple | None:
    if values is None:
        return None
    arr = np.asarray(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return tuple(map(tuple, arr)) if arr.ndim == 2 else tuple(float(v) for v in arr)


@dataclass(frozen=True)
class HubbardParams:
    """Couplings of the open 1D chain.

    ``t_ij`` (length ``L-1``), ``U_i`` (length ``L``) and ``mu_is`` (shape
    ``(L, 2)``, columns up/down) override the scalar values when given.
    """

    L: int
    t_h: float = 1.0
    U: float = 0.0
    mu: float = 0.0
    t_ij: tuple[float, ...] | None = None
    U_i: tuple[float, ...] | None = None
    mu_is: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "t_ij", _as_tuple(self.t_ij, (self.L - 1,), "t_ij"))
        object.__setattr__(self, "U_i", _as_tuple(self.U_i, (self.L,), "U_i"))
        object.__setattr__(self, "mu_is", _as_tuple(self.mu_is, (self.L, 2), "mu_is"))

    @property
    def n_qubits(self) -> int:
        return 2 * self.L

    def hopping(self) -> np.ndarray:
        if self.t_ij is not None:
            return np.array(self.t_ij)
        return np.full(self.L - 1, float(self.t_h))

    def onsite(self) -> np.ndarray:
        if self.U_i is not None:
            return np.array(self.U_i)
        return np.full(self.L, float(self.U))

    def chemical(self) -> np.ndarray:
        """Chemical potential per (site, spin), columns ordered (up, down)."""
        if self.mu_is is not None:
            return np.array(self.mu_is)
        return np.full((self.L, 2), float(self.mu))

    def is_homogeneous(self) -> bool:
        return (
            np.allclose(self.hopping(), self.hopping()[0])
            and np.allclose(self.onsite(), self.onsite()[0])
            and np.allclose(self.chemical(), self.chemical()[0, 0])
        )


# ---------------------------------------------------------------------------
# mode map
# ---------------------------------------------------------------------------


def _check_spin(spin: str) -> Spin:
    if spin not in SPINS:
        raise ValueError(f"spin must be 'up' or 'down', got {spin!r}")
    return spin  # type: ignore[return-value]


def mode_index(site: int, spin: Spin, L: int) -> int:
    """Qubit holding mode ``(site, spin)`` in the pair-interleaved order."""
    _check_spin(spin)
    if not 0 <= site < L:
        raise ValueError(f"site {site} out of range for L={L}")
    first = DOWN if site % 2 == 0 else UP
    return 2 * site + (0 if spin == first else 1)


def mode_label(qubit: int, L: int) -> tuple[int, Spin]:
    """Inverse of :func:`mode_index`."""
    if not 0 <= qubit < 2 * L:
        raise ValueError(f"qubit {qubit} out of range for L={L}")
    site, slot = divmod(qubit, 2)
    first, second = (DOWN, UP) if site % 2 == 0 else (UP, DOWN)
    return site, (first if slot == 0 else second)


def spin_masks(L: int) -> tuple[int, int]:
    """Bit masks selecting the up-spin and down-spin qubits."""
    up = sum(1 << mode_index(i, UP, L) for i in range(L))
    dn = sum(1 << mode_index(i, DOWN, L) for i in range(L))
    return up, dn


# ---------------------------------------------------------------------------
# Fock states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FockState:
    """Occupation-number basis state; ``bits[J]`` is the occupation of qubit ``J``."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        bits = tuple(int(b) for b in self.bits)
        if len(bits) < 4 or len(bits) % 2:
            raise ValueError("a Fock state needs 2L bits with L >= 2")
        if any(b not in (0, 1) for b in bits):
            raise ValueError("occupations must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @property
    def L(self) -> int:
        return len(self.bits) // 2

    @property
    def n_qubits(self) -> int:
        return len(self.bits)

    @property
    def index(self) -> int:
        """Basis-state index (bit J = qubit J)."""
        return sum(b << j for j, b in enumerate(self.bits))

    def occupation(self, site: int, spin: Spin) -> int:
        return self.bits[mode_index(site, spin, self.L)]

    @property
    def n_up(self) -> int:
        return sum(self.occupation(i, UP) for i in range(self.L))

    @property
    def n_down(self) -> int:
        return sum(self.occupation(i, DOWN) for i in range(self.L))

    def site_table(self) -> dict[tuple[int, Spin], int]:
        return {mode_label(j, self.L): b for j, b in enumerate(self.bits)}

    @classmethod
    def from_sites(cls, L: int, occupied: Iterable[tuple[int, Spin]]) -> "FockState":
        bits = [0] * (2 * L)
        for site, spin in occupied:
            bits[mode_index(site, spin, L)] = 1
        return cls(tuple(bits))

    @classmethod
    def from_index(cls, index: int, L: int) -> "FockState":
        return cls(tuple((index >> j) & 1 for j in range(2 * L)))


def neel_state(L: int, vacancy: int | None = None) -> FockState:
    """Half-filled Neel state, down spin on even sites; optionally one empty site."""
    if vacancy is not None and not 0 <= vacancy < L:
        raise ValueError(f"vacancy {vacancy} out of range for L={L}")
    occupied = [(i, DOWN if i % 2 == 0 else UP) for i in range(L) if i != vacancy]
    return FockState.from_sites(L, occupied)


# ---------------------------------------------------------------------------
# Pauli algebra
# ---------------------------------------------------------------------------

# (a, b) -> (power of i, product letter)
_PRODUCT = {
    ("X", "X"): (0, ""), ("Y", "Y"): (0, ""), ("Z", "Z"): (0, ""),
    ("X", "Y"): (1, "Z"), ("Y", "Z"): (1, "X"), ("Z", "X"): (1, "Y"),
    ("Y", "X"): (3, "Z"), ("Z", "Y"): (3, "X"), ("X", "Z"): (3, "Y"),
}
_IPOW = (1, 1j, -1, -1j)

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _letters_key(letters: Mapping[int, str] | Iterable[tuple[int, str]]) -> tuple[tuple[int, str], ...]:
    items = letters.items() if isinstance(letters, Mapping) else letters
    out = []
    for q, c in items:
        if c not in ("X", "Y", "Z", "I"):
            raise ValueError(f"bad Pauli letter {c!r}")
        if int(q) < 0:
            raise ValueError("qubit indices must be non-negative")
        if c != "I":
            out.append((int(q), c))
    out.sort()
    if len({q for q, _ in out}) != len(out):
        raise ValueError("repeated qubit in Pauli string")
    return tuple(out)


@dataclass(frozen=True)
class PauliString:
    """``coeff`` times a tensor product of single-qubit Paulis.

    ``letters`` holds only non-identity entries as sorted ``(qubit, letter)``
    pairs.  Products multiply phases by exact powers of ``i``.
    """

    letters: tuple[tuple[int, str], ...] = ()
    coeff: complex = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "letters", _letters_key(self.letters))
        object.__setattr__(self, "coeff", complex(self.coeff))

    @classmethod
    def from_label(cls, label: str, coeff: complex = 1.0) -> "PauliString":
        """``label[J]`` is the letter on qubit ``J`` (e.g. ``"XIZ"``)."""
        return cls(tuple((j, c) for j, c in enumerate(label)), coeff)

    @classmethod
    def single(cls, letter: str, qubit: int, coeff: complex = 1.0) -> "PauliString":
        return cls(((qubit, letter),), coeff)

    @property
    def letter_map(self) -> dict[int, str]:
        return dict(self.letters)

    @property
    def weight(self) -> int:
        return len(self.letters)

    @property
    def xy_weight(self) -> int:
        return sum(c in "XY" for _, c in self.letters)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q, _ in self.letters)

    def with_coeff(self, coeff: complex) -> "PauliString":
        return PauliString(self.letters, coeff)

    def __mul__(self, other):
        if isinstance(other, PauliString):
            a, b = self.letter_map, other.letter_map
            power = 0
            out: dict[int, str] = {}
            for q in sorted(set(a) | set(b)):
                if q not in b:
                    out[q] = a[q]
                elif q not in a:
                    out[q] = b[q]
                elif a[q] == b[q]:
                    continue
                else:
                    k, c = _PRODUCT[(a[q], b[q])]
                    power += k
                    out[q] = c
            return PauliString(tuple(out.items()), self.coeff * other.coeff * _IPOW[power % 4])
        return PauliString(self.letters, self.coeff * complex(other))

    __rmul__ = __mul__

    def commutes(self, other: "PauliString") -> bool:
        b = other.letter_map
        clashes = sum(1 for q, c in self.letters if q in b and b[q] != c)
        return clashes % 2 == 0

    def label(self, n_qubits: int) -> str:
        chars = ["I"] * n_qubits
        for q, c in self.letters:
            chars[q] = c
        return "".join(chars)

    def masks(self) -> tuple[int, int]:
        """Symplectic ``(x, z)`` bit masks; the phase convention is ``Y = iXZ``."""
        x = z = 0
        for q, c in self.letters:
            if c in "XY":
                x |= 1 << q
            if c in "ZY":
                z |= 1 << q
        return x, z

    def to_sparse(self, n_qubits: int) -> sp.csr_matrix:
        return _pauli_sparse(self.letters, n_qubits) * self.coeff

    def to_matrix(self, n_qubits: int) -> np.ndarray:
        mat = np.array([[1.0 + 0j]])
        letters = self.letter_map
        for q in reversed(range(n_qubits)):
            mat = np.kron(mat, _SINGLE[letters.get(q, "I")])
        return self.coeff * mat

    def __repr__(self) -> str:
        body = " ".join(f"{c}{q}" for q, c in self.letters) or "I"
        return f"PauliString({self.coeff:.6g} * {body})"


def _check_dense(n_qubits: int) -> None:
    if n_qubits > DENSE_QUBIT_CAP:
        raise SizeError(
            f"{n_qubits} qubits exceeds the {DENSE_QUBIT_CAP}-qubit cap of the full-space oracle"
        )


def _pauli_sparse(letters: tuple[tuple[int, str], ...], n_qubits: int) -> sp.csr_matrix:
    _check_dense(n_qubits)
    if letters and letters[-1][0] >= n_qubits:
        raise ValueError("Pauli string wider than the register")
    x = y = z = 0
    for q, c in letters:
        if c == "X":
            x |= 1 << q
        elif c == "Y":
            x |= 1 << q
            y |= 1 << q
        else:
            z |= 1 << q
    cols = np.arange(1 << n_qubits, dtype=np.int64)
    rows = cols ^ x
    sign = 1 - 2 * (np.bitwise_count(cols & (y | z)) & 1).astype(np.int64)
    data = sign * _IPOW[bin(y).count("1") % 4]
    dim = 1 << n_qubits
    return sp.csr_matrix((data.astype(complex), (rows, cols)), shape=(dim, dim))


class PauliSum:
    """Linear combination of Pauli strings, merged by letter pattern."""

    def __init__(self, terms: Iterable[PauliString] = ()):
        self._terms: dict[tuple[tuple[int, str], ...], complex] = {}
        for t in terms:
            self._add(t.letters, t.coeff)

    def _add(self, key, coeff: complex) -> None:
        self._terms[key] = self._terms.get(key, 0.0) + coeff

    @classmethod
    def identity(cls, coeff: complex = 1.0) -> "PauliSum":
        return cls([PauliString((), coeff)])

    def terms(self, tol: float = 0.0) -> list[PauliString]:
        return [
            PauliString(k, c)
            for k, c in sorted(self._terms.items(), key=lambda kv: kv[0])
            if abs(c) > tol
        ]

    def __iter__(self) -> Iterator[PauliString]:
        return iter(self.terms(1e-14))

    def __len__(self) -> int:
        return len(self.terms(1e-14))

    def __add__(self, other) -> "PauliSum":
        out = PauliSum()
        out._terms = dict(self._terms)
        others = [other] if isinstance(other, PauliString) else other.terms()
        for t in others:
            out._add(t.letters, t.coeff)
        return out

    def __sub__(self, other) -> "PauliSum":
        return self + (other * -1.0)

    def __mul__(self, other) -> "PauliSum":
        if isinstance(other, (PauliSum, PauliString)):
            rhs = [other] if isinstance(other, PauliString) else other.terms()
            out = PauliSum()
            for a in self.terms():
                for b in rhs:
                    p = a * b
                    out._add(p.letters, p.coeff)
            return out
        out = PauliSum()
        out._terms = {k: v * complex(other) for k, v in self._terms.items()}
        return out

    def __rmul__(self, other) -> "PauliSum":
        if isinstance(other, PauliString):
            return PauliSum([other]) * self
        return self * other

    def dagger(self) -> "PauliSum":
        out = PauliSum()
        out._terms = {k: np.conj(v) for k, v in self._terms.items()}
        return out

    def coefficient(self, letters=()) -> complex:
        return self._terms.get(_letters_key(letters), 0.0)

    def is_identity(self, tol: float = 1e-12) -> bool:
        terms = self.terms(tol)
        return len(terms) == 1 and terms[0].letters == () and abs(terms[0].coeff - 1) < tol

    def to_sparse(self, n_qubits: int) -> sp.csr_matrix:
        _check_dense(n_qubits)
        dim = 1 << n_qubits
        out = sp.csr_matrix((dim, dim), dtype=complex)
        for t in self.terms():
            out = out + t.to_sparse(n_qubits)
        return out

    def to_matrix(self, n_qubits: int) -> np.ndarray:
        return self.to_sparse(n_qubits).toarray()

    def __repr__(self) -> str:
        return f"PauliSum({self.terms(1e-14)})"


# ---------------------------------------------------------------------------
# Jordan-Wigner
# ---------------------------------------------------------------------------


def jw_mode_operator(kind: str, qubit: int) -> PauliSum:
    """Ladder or number operator for the mode on ``qubit``.

    ``c_J = Z_0 ... Z_{J-1} (X_J + iY_J)/2`` so that ``c_J`` annihilates a ``|1>``
    occupation on qubit ``J``.
    """
    string = tuple((k, "Z") for k in range(qubit))
    if kind == "number":
        return PauliSum([PauliString((), 0.5), PauliString(((qubit, "Z"),), -0.5)])
    if kind == "annihilation":
        sign = 1.0
    elif kind == "creation":
        sign = -1.0
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    return PauliSum(
        [
            PauliString(string + ((qubit, "X"),), 0.5),
            PauliString(string + ((qubit, "Y"),), sign * 0.5j),
        ]
    )


def jw_operator(kind: str, site: int, spin: Spin, L: int) -> PauliSum:
    """Jordan-Wigner image of ``c``, ``c^dagger`` or ``n`` for ``(site, spin)``."""
    return jw_mode_operator(kind, mode_index(site, spin, L))


# ---------------------------------------------------------------------------
# qubit Hamiltonian
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QubitizedHamiltonian:
    """Qubit Hamiltonian split into the four groups the circuit treats separately.

    ``H = sum(h_short + h_long + h_1q + h_u2q) + dropped_constant``.
    """

    n_qubits: int
    h_short: tuple[PauliString, ...]
    h_long: tuple[PauliString, ...]
    h_1q: tuple[PauliString, ...]
    h_u2q: tuple[PauliString, ...]
    dropped_constant: float

    def groups(self) -> dict[str, tuple[PauliString, ...]]:
        return {"short": self.h_short, "long": self.h_long, "1q": self.h_1q, "u2q": self.h_u2q}

    def pauli_sum(self, include_constant: bool = True) -> PauliSum:
        terms = list(self.h_short + self.h_long + self.h_1q + self.h_u2q)
        if include_constant:
            terms.append(PauliString((), self.dropped_constant))
        return PauliSum(terms)

    def to_sparse(self, include_constant: bool = True) -> sp.csr_matrix:
        return self.pauli_sum(include_constant).to_sparse(self.n_qubits)

    def to_matrix(self, include_constant: bool = True) -> np.ndarray:
        return self.to_sparse(include_constant).toarray()


def build_hamiltonian(params: HubbardParams) -> QubitizedHamiltonian:
    L = params.L
    t = params.hopping()
    U = params.onsite()
    mu = params.chemical()

    h_short: list[PauliString] = []
    h_long: list[PauliString] = []
    for j in range(L - 1):
        a, b = 2 * j + 1, 2 * j + 2
        for p in ("X", "Y"):
            h_short.append(PauliString(((a, p), (b, p)), -t[j] / 2))
        a, b = 2 * j, 2 * j + 3
        for p in ("X", "Y"):
            h_long.append(PauliString(((a, p), (a + 1, "Z"), (a + 2, "Z"), (b, p)), -t[j] / 2))

    h_1q: list[PauliString] = []
    for q in range(2 * L):
        site, spin = mode_label(q, L)
        m = mu[site, SPINS.index(spin)]
        h_1q.append(PauliString(((q, "Z"),), (m - U[site] / 2) / 2))

    h_u2q = [PauliString(((2 * i, "Z"), (2 * i + 1, "Z")), U[i] / 4) for i in range(L)]
    constant = float(U.sum() / 4 - mu.sum() / 2)
    return QubitizedHamiltonian(2 * L, tuple(h_short), tuple(h_long), tuple(h_1q), tuple(h_u2q), constant)


def number_operator_sparse(L: int, spin: Spin | None = None) -> sp.csr_matrix:
    """Diagonal N_up, N_down or total N on the full register."""
    n = 2 * L
    _check_dense(n)
    up, dn = spin_masks(L)
    mask = {UP: up, DOWN: dn, None: up | dn}[spin]
    idx = np.arange(1 << n, dtype=np.int64)
    return sp.diags(np.bitwise_count(idx & mask).astype(float)).tocsr()


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    params: HubbardParams
    initial: FockState


def initial_state_from_dict(spec: Mapping, L: int) -> FockState:
    kind = spec.get("kind", "neel")
    if kind == "neel":
        return neel_state(L, spec.get("vacancy"))
    if kind == "fock":
        bits = spec.get("bits")
        if bits is None:
            raise ValueError("fock initial state needs 'bits'")
        if isinstance(bits, str):
            bits = [int(c) for c in bits]
        state = FockState(tuple(bits))
        if state.L != L:
            raise ValueError(f"initial state has {len(state.bits)} bits, expected {2 * L}")
        return state
    raise ValueError(f"unknown initial state kind {kind!r}")


def model_from_dict(data: Mapping) -> ModelConfig:
    missing = [k for k in ("L",) if k not in data]
    if missing:
        raise ValueError(f"model config missing fields: {missing}")
    params = HubbardParams(
        L=data["L"],
        t_h=float(data.get("t_h", 1.0)),
        U=float(data.get("U", 0.0)),
        mu=float(data.get("mu", 0.0)),
        t_ij=data.get("t_ij"),
        U_i=data.get("U_i"),
        mu_is=data.get("mu_is"),
    )
    initial = initial_state_from_dict(data.get("initial_state", {"kind": "neel"}), params.L)
    return ModelConfig(params, initial)


def load_model_config(path: str | Path) -> ModelConfig:
    return model_from_dict(json.loads(Path(path).read_text()))


def model_to_dict(params: HubbardParams, initial: FockState | None = None) -> dict:
    out: dict = {"L": params.L, "t_h": params.t_h, "U": params.U, "mu": params.mu}
    for name in ("t_ij", "U_i", "mu_is"):
        value = getattr(params, name)
        if value is not None:
            out[name] = [list(v) if isinstance(v, tuple) else v for v in value]
    if initial is not None:
        out["initial_state"] = {"kind": "fock", "bits": "".join(map(str, initial.bits))}
    return out
