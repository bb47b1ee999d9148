"""Lowering of abstract Trotter circuits to the native set {RZ, RX, RZZ, CZ, X, SX}.

Three block rewrites carry all two-qubit cost:

* a lone hopping rotation becomes a two-RZZ sandwich (closed form);
* hop -> RZ (x) RZ -> hop on the same pair across a step boundary becomes one
  two-RZZ block whose angles are solved numerically;
* RZZ followed by fSWAP (or the reverse) on a site pair becomes one
  three-RZZ block whose angles are solved numerically.

When the first qubit of an RZZ/fSWAP pair is still in a known computational
basis state (after state preparation), the first RZZ of that block collapses
to an RZ on the second qubit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .circuit import (
    ABSTRACT_KINDS,
    Circuit,
    Gate,
    ModePermutation,
    hop_matrix,
    rz_matrix,
    rzz_matrix,
    FSWAP_MATRIX,
)

NATIVE_KINDS = ("RZ", "RX", "RZZ", "CZ", "X", "SX")
SYNTH_TOL = 1e-12
HALF_PI = math.pi / 2

# reference two-qubit metrics of the interleaved ordering for L=52, 20 steps
INTERLEAVED_REFERENCE = {"L": 52, "n_steps": 20, "d2q": 263, "n2q": 8844}


class SynthesisError(RuntimeError):
    """Numerical angle synthesis did not reach the acceptance tolerance."""


# ---------------------------------------------------------------------------
# native gates
# ---------------------------------------------------------------------------

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_SX = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]])
_CZ = np.diag([1, 1, 1, -1]).astype(complex)


def rx_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def native_matrix(g: Gate) -> np.ndarray:
    k = g.kind
    if k == "RZ":
        return rz_matrix(g.theta)
    if k == "RX":
        return rx_matrix(g.theta)
    if k == "SX":
        return _SX.copy()
    if k == "X":
        return _X.copy()
    if k == "RZZ":
        return rzz_matrix(g.theta)
    if k == "CZ":
        return _CZ.copy()
    raise ValueError(f"{k!r} is not a native gate")


def wrap_angle(theta: float) -> float:
    """Map to (-pi, pi]."""
    w = math.remainder(theta, 2 * math.pi)
    return math.pi if w == -math.pi else w


def schedule_layers(width: int, gates: Iterable[Gate]) -> tuple[tuple[Gate, ...], ...]:
    """As-soon-as-possible layering of a gate sequence."""
    level = [0] * width
    layers: list[list[Gate]] = []
    for g in gates:
        at = max((level[q] for q in g.qubits), default=0)
        if at == len(layers):
            layers.append([])
        layers[at].append(g)
        for q in g.qubits:
            level[q] = at + 1
    return tuple(tuple(layer) for layer in layers)


@dataclass(frozen=True)
class NativeCircuit:
    width: int
    layers: tuple[tuple[Gate, ...], ...]
    mode_perm: ModePermutation
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for layer in self.layers:
            used: set[int] = set()
            for g in layer:
                if g.kind not in NATIVE_KINDS:
                    raise ValueError(f"non-native gate {g.kind!r} in native circuit")
                if any(q >= self.width or q < 0 for q in g.qubits):
                    raise ValueError(f"gate {g} outside width {self.width}")
                if used & set(g.qubits):
                    raise ValueError("overlapping gates in one layer")
                used |= set(g.qubits)

    @classmethod
    def from_gates(cls, width, gates, mode_perm, provenance=None) -> "NativeCircuit":
        return cls(width, schedule_layers(width, gates), mode_perm, dict(provenance or {}))

    @property
    def L(self) -> int:
        return self.width // 2

    def gates(self) -> Iterable[Gate]:
        for layer in self.layers:
            yield from layer

    @property
    def has_prep(self) -> bool:
        return False

    def count(self, kind: str | None = None) -> int:
        return sum(1 for g in self.gates() if kind is None or g.kind == kind)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "layers": [[g.to_dict() for g in layer] for layer in self.layers],
            "mode_perm": self.mode_perm.to_list(),
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "NativeCircuit":
        layers = tuple(tuple(Gate.from_dict(g) for g in layer) for layer in d["layers"])
        perm = ModePermutation(tuple((s, sp) for s, sp in d["mode_perm"]))
        return cls(int(d["width"]), layers, perm, dict(d.get("provenance", {})))


@dataclass(frozen=True)
class CompileMetrics:
    d2q: int
    n2q: int


def metrics(native: NativeCircuit) -> CompileMetrics:
    """Two-qubit depth (ASAP over two-qubit gates only) and two-qubit count."""
    level = [0] * native.width
    n2q = 0
    for g in native.gates():
        if len(g.qubits) == 2:
            a, b = g.qubits
            level[a] = level[b] = max(level[a], level[b]) + 1
            n2q += 1
    return CompileMetrics(max(level, default=0), n2q)


def expected_metrics(L: int, n_steps: int) -> CompileMetrics:
    """Closed-form counts for a standard prepared Trotter circuit."""
    return CompileMetrics(5 * n_steps + 2, (5 * L - 2) * n_steps + 2 * (L - 1) - 1)


# ---------------------------------------------------------------------------
# block templates: lists of (kind, role, angle) in time order; role 0/1 is the
# first/second qubit of the abstract gate
# ---------------------------------------------------------------------------


def _template_matrix(ops) -> np.ndarray:
    u = np.eye(4, dtype=complex)
    for kind, role, theta in ops:
        if kind == "RZZ":
            m = rzz_matrix(theta)
        else:
            m1 = native_matrix(Gate(kind, (0,), theta))
            m = np.kron(m1, _I2) if role == 0 else np.kron(_I2, m1)
        u = m @ u
    return u


def hop_sandwich_ops(theta: float) -> list:
    """Exact two-RZZ form of ``RXXplusYY(theta)``."""
    ops = []
    for r in (0, 1):
        ops.append(("RZ", r, HALF_PI))
    for r in (0, 1):
        ops.append(("SX", r, None))
    for r in (0, 1):
        ops.append(("RZ", r, HALF_PI))
    ops.append(("RZZ", None, theta))
    for r in (0, 1):
        ops += [("RX", r, -HALF_PI), ("RZ", r, -HALF_PI)]
    ops.append(("RZZ", None, theta))
    for r in (0, 1):
        ops.append(("RX", r, -HALF_PI))
    return ops


def boundary_ops(p: Sequence[float]) -> list:
    """Two-RZZ template for hop -> RZ (x) RZ -> hop; ``p = (a1, b1, a2, b2, phi1, phi2)``."""
    a1, b1, a2, b2, phi1, phi2 = p
    ops = [("RZ", 0, a1), ("RZ", 1, b1)]
    for r in (0, 1):
        ops += [("RX", r, HALF_PI), ("RZ", r, -HALF_PI)]
    ops.append(("RZZ", None, phi1))
    for r in (0, 1):
        ops.append(("RX", r, HALF_PI))
    ops.append(("RZZ", None, phi2))
    for r in (0, 1):
        ops += [("RZ", r, -HALF_PI), ("RX", r, HALF_PI)]
    ops += [("RZ", 0, a2), ("RZ", 1, b2)]
    return ops


def _u3_ops(role: int, theta: float, phi: float, lam: float) -> list:
    return [
        ("RZ", role, lam),
        ("SX", role, None),
        ("RZ", role, theta + math.pi),
        ("SX", role, None),
        ("RZ", role, phi + math.pi),
    ]


def _hn_ops(role: int, pre: float) -> list:
    return [("RZ", role, pre + HALF_PI), ("SX", role, None), ("RZ", role, HALF_PI)]


def fswap_block_ops(p: Sequence[float]) -> list:
    """Three-RZZ template for ``fSWAP . RZZ``; ``p`` has 18 entries.

    The first qubit sees only an RZ before the first RZZ, which is what makes
    that RZZ removable when the first qubit is in a known basis state.
    """
    ops = [("RZ", 0, p[3]), ("RZ", 1, p[5]), ("SX", 1, None), ("RZ", 1, p[4])]
    ops.append(("RZZ", None, p[0]))
    ops += _hn_ops(0, p[15]) + _u3_ops(1, p[6], p[7], p[8])
    ops.append(("RZZ", None, p[1]))
    ops += _hn_ops(0, p[16]) + _hn_ops(1, p[17])
    ops.append(("RZZ", None, p[2]))
    ops += _u3_ops(0, p[9], p[10], p[11]) + _u3_ops(1, p[12], p[13], p[14])
    return ops


def phase_aligned_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius distance after aligning the global phase on ``b``'s largest entry."""
    k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(a[k]) == 0:
        return float(np.linalg.norm(a - b))
    ph = a[k] / b[k]
    ph /= abs(ph)
    return float(np.linalg.norm(a - ph * b))


def _solve(builder, n_params: int, target: np.ndarray, restarts: int = 40) -> tuple[float, ...]:
    def resid(x):
        d = np.exp(1j * x[-1]) * _template_matrix(builder(x[:-1])) - target
        return np.concatenate([d.real.ravel(), d.imag.ravel()])

    best = math.inf
    for seed in range(restarts):
        x0 = np.random.default_rng(seed).uniform(-3, 3, n_params + 1)
        r = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        params = tuple(wrap_angle(v) for v in r.x[:-1])
        err = phase_aligned_distance(_template_matrix(builder(params)), target)
        if err < SYNTH_TOL:
            return params
        best = min(best, err)
    raise SynthesisError(f"angle synthesis residual {best:.3e} above {SYNTH_TOL:.0e}")


def _key(*vals: float) -> tuple[float, ...]:
    return tuple(round(v, 13) + 0.0 for v in vals)


@lru_cache(maxsize=None)
def _fswap_params(theta: float) -> tuple[float, ...]:
    return _solve(fswap_block_ops, 18, FSWAP_MATRIX @ rzz_matrix(theta))


@lru_cache(maxsize=None)
def _boundary_params(ta: float, tb: float, za: float, zb: float) -> tuple[float, ...]:
    target = hop_matrix(tb) @ np.kron(rz_matrix(za), rz_matrix(zb)) @ hop_matrix(ta)
    return _solve(boundary_ops, 6, target)


def fswap_block(theta: float) -> list:
    return fswap_block_ops(_fswap_params(*_key(theta)))


def boundary_block(ta: float, tb: float, za: float, zb: float) -> list:
    return boundary_ops(_boundary_params(*_key(ta, tb, za, zb)))


# ---------------------------------------------------------------------------
# lowering
# ---------------------------------------------------------------------------


def _emit(ops: list, qubits: tuple[int, int], out: list[Gate]) -> None:
    for kind, role, theta in ops:
        if kind == "RZZ":
            out.append(Gate("RZZ", qubits, wrap_angle(theta)))
        else:
            out.append(Gate(kind, (qubits[role],), None if theta is None else wrap_angle(theta)))


def _cancel_first_rzz(ops: list, bit: int) -> list:
    """Replace the first RZZ by the RZ it reduces to when role 0 holds ``|bit>``."""
    out = list(ops)
    i = next(k for k, op in enumerate(out) if op[0] == "RZZ")
    theta = out[i][2]
    out[i] = ("RZ", 1, theta if bit == 0 else -theta)
    return out


def _next_on(flat: list[Gate], start: int, qubits: set[int]) -> int | None:
    for k in range(start, len(flat)):
        if qubits & set(flat[k].qubits):
            return k
    return None


def lower(circuit: Circuit, cancel_known: bool = True) -> NativeCircuit:
    """Native-gate version of an abstract circuit, equal up to global phase.

    Circuits that begin with a PREP marker are assumed to start in ``|0...0>``;
    the marker itself is dropped.
    """
    flat = list(circuit.gates())
    for g in flat:
        if g.kind not in ABSTRACT_KINDS:
            raise ValueError(f"unknown gate kind {g.kind!r}")
    known: dict[int, int] = {q: 0 for q in range(circuit.width)} if circuit.has_prep else {}
    used = [False] * len(flat)
    out: list[Gate] = []
    for k, g in enumerate(flat):
        if used[k]:
            continue
        used[k] = True
        kind = g.kind
        if kind == "PREP":
            continue
        if kind == "X":
            out.append(g)
            q = g.qubits[0]
            if q in known:
                known[q] ^= 1
            continue
        if kind == "RZ":
            out.append(Gate("RZ", g.qubits, wrap_angle(g.theta)))
            continue
        a, b = g.qubits
        pair = {a, b}
        nxt = _next_on(flat, k + 1, pair)
        if kind in ("RZZ", "FSWAP"):
            partner = "FSWAP" if kind == "RZZ" else "RZZ"
            if nxt is not None and flat[nxt].kind == partner and set(flat[nxt].qubits) == pair:
                used[nxt] = True
                theta = g.theta if kind == "RZZ" else flat[nxt].theta
                ops = fswap_block(theta)
                _lower_block(ops, g.qubits, known, cancel_known, out)
            elif kind == "FSWAP":
                _lower_block(fswap_block(0.0), g.qubits, known, cancel_known, out)
            else:
                out.append(Gate("RZZ", g.qubits, wrap_angle(g.theta)))
            known.pop(a, None)
            known.pop(b, None)
            continue
        # hopping rotation: look for RZs then a matching hop on the same pair
        za = zb = 0.0
        k2 = k + 1
        partner_idx = None
        members = []
        while True:
            nxt = _next_on(flat, k2, pair)
            if nxt is None:
                break
            h = flat[nxt]
            if h.kind == "RZ":
                if h.qubits[0] == a:
                    za += h.theta
                else:
                    zb += h.theta
                members.append(nxt)
                k2 = nxt + 1
                continue
            if h.kind == "RXXplusYY" and h.qubits == g.qubits:
                partner_idx = nxt
            break
        if partner_idx is not None:
            for m in members + [partner_idx]:
                used[m] = True
            _emit(boundary_block(g.theta, flat[partner_idx].theta, za, zb), g.qubits, out)
        else:
            _emit(hop_sandwich_ops(g.theta), g.qubits, out)
        known.pop(a, None)
        known.pop(b, None)
    prov = {"source_width": circuit.width, "source_layers": len(circuit.layers)}
    return NativeCircuit.from_gates(circuit.width, out, circuit.mode_perm, prov)


def _lower_block(ops, qubits, known, cancel_known, out) -> None:
    a = qubits[0]
    if cancel_known and a in known:
        ops = _cancel_first_rzz(ops, known[a])
    _emit(ops, qubits, out)


# ---------------------------------------------------------------------------
# single-qubit fusion and twirling
# ---------------------------------------------------------------------------


def zyz_angles(u: np.ndarray) -> tuple[float, float, float]:
    """``(theta, phi, lam)`` with ``u ~ RZ(phi) RY(theta) RZ(lam)`` up to phase."""
    v = u / np.sqrt(np.linalg.det(u))
    alpha, beta = v[0, 0], v[1, 0]
    theta = 2 * math.atan2(abs(beta), abs(alpha))
    arg_a = np.angle(alpha) if abs(alpha) > 1e-14 else 0.0
    arg_b = np.angle(beta) if abs(beta) > 1e-14 else 0.0
    return theta, float(-arg_a + arg_b), float(-arg_a - arg_b)


def single_qubit_gates(u: np.ndarray, q: int, atol: float = 1e-12) -> list[Gate]:
    """Canonical native form: nothing, one RZ, or RZ SX RZ SX RZ."""
    v = u / np.sqrt(np.linalg.det(u))
    if abs(v[1, 0]) < atol and abs(v[0, 1]) < atol:
        lam = wrap_angle(2 * float(np.angle(v[1, 1])))
        if abs(lam) < atol:
            return []
        return [Gate("RZ", (q,), lam)]
    theta, phi, lam = zyz_angles(u)
    return [
        Gate("RZ", (q,), wrap_angle(lam)),
        Gate("SX", (q,)),
        Gate("RZ", (q,), wrap_angle(theta + math.pi)),
        Gate("SX", (q,)),
        Gate("RZ", (q,), wrap_angle(phi + math.pi)),
    ]


def fuse_single_qubit(width: int, gates: Iterable[Gate]) -> list[Gate]:
    """Merge every run of single-qubit gates into its canonical form."""
    pending: dict[int, np.ndarray] = {}
    out: list[Gate] = []

    def flush(q: int) -> None:
        m = pending.pop(q, None)
        if m is not None:
            out.extend(single_qubit_gates(m, q))

    for g in gates:
        if len(g.qubits) == 1:
            q = g.qubits[0]
            pending[q] = native_matrix(g) @ pending.get(q, _I2)
        else:
            for q in g.qubits:
                flush(q)
            out.append(g)
    for q in sorted(pending):
        flush(q)
    return out


_PAULI = (_I2, _X, np.array([[0, -1j], [1j, 0]]), np.diag([1.0 + 0j, -1.0]))
# two-qubit Paulis (index 4*a + b) commuting with Z(x)Z
RZZ_TWIRL_SET = (0, 3, 12, 15, 5, 6, 9, 10)  # II IZ ZI ZZ XX XY YX YY


def _pauli2(code: int) -> np.ndarray:
    a, b = divmod(code, 4)
    return np.kron(_PAULI[a], _PAULI[b])


def _cz_conjugate(code: int) -> int:
    """Pauli code ``P'`` with ``CZ P CZ = P'`` up to sign."""
    m = _CZ @ _pauli2(code) @ _CZ
    for c in range(16):
        if abs(abs(np.vdot(_pauli2(c).ravel(), m.ravel())) - 4) < 1e-9:
            return c
    raise AssertionError("CZ maps Paulis to Paulis")


_CZ_TABLE = tuple(_cz_conjugate(c) for c in range(16))


def twirl_pair(kind: str, code: int) -> tuple[int, int]:
    """(before, after) Pauli codes leaving the two-qubit gate unchanged."""
    if kind == "CZ":
        return code, _CZ_TABLE[code]
    if kind == "RZZ":
        if code not in RZZ_TWIRL_SET:
            raise ValueError(f"Pauli {code} does not commute with ZZ")
        return code, code
    raise ValueError(f"no twirl rule for {kind}")


def twirl(native: NativeCircuit, n_twirl: int, seed: int) -> list[NativeCircuit]:
    """Randomly Pauli-twirled variants with the Paulis folded into 1Q gates."""
    if n_twirl < 1:
        raise ValueError("n_twirl must be at least 1")
    variants = []
    gates = list(native.gates())
    for v in range(n_twirl):
        rng = np.random.default_rng([int(seed), v])
        seq: list[Gate] = []
        for g in gates:
            if len(g.qubits) != 2:
                seq.append(g)
                continue
            if g.kind == "CZ":
                code = int(rng.integers(16))
            else:
                code = RZZ_TWIRL_SET[int(rng.integers(len(RZZ_TWIRL_SET)))]
            before, after = twirl_pair(g.kind, code)
            seq += _pauli_gates(before, g.qubits)
            seq.append(g)
            seq += _pauli_gates(after, g.qubits)
        fused = fuse_single_qubit(native.width, seq)
        prov = dict(native.provenance, twirl_seed=int(seed), twirl_index=v)
        variants.append(NativeCircuit.from_gates(native.width, fused, native.mode_perm, prov))
    return variants


def _pauli_gates(code: int, qubits: tuple[int, int]) -> list[Gate]:
    out = []
    for letter, q in zip(divmod(code, 4), qubits):
        if letter == 1:
            out.append(Gate("X", (q,)))
        elif letter == 2:  # Y ~ X then RZ(pi)
            out += [Gate("X", (q,)), Gate("RZ", (q,), math.pi)]
        elif letter == 3:
            out.append(Gate("RZ", (q,), math.pi))
    return out


# ---------------------------------------------------------------------------
# ordering comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderingReport:
    L: int
    n_steps: int
    pair_interleaved: CompileMetrics
    interleaved: CompileMetrics
    interleaved_reference: CompileMetrics | None

    @property
    def depth_reduction(self) -> float:
        ref = self.interleaved_reference or self.interleaved
        return 1 - self.pair_interleaved.d2q / ref.d2q


def ordering_comparison(L: int, n_steps: int) -> OrderingReport:
    """Two-qubit metrics of both orderings for the same workload."""
    from .circuit import build_trotter_circuit
    from .model import HubbardParams, neel_state

    if L < 2:
        raise ValueError("L must be at least 2")
    params = HubbardParams(L=L, U=2.0)
    pair = metrics(lower(build_trotter_circuit(params, 0.1, n_steps, neel_state(L))))
    inter = metrics(lower(build_trotter_circuit(params, 0.1, n_steps, neel_state(L), ordering="interleaved")))
    ref = None
    if (L, n_steps) == (INTERLEAVED_REFERENCE["L"], INTERLEAVED_REFERENCE["n_steps"]):
        ref = CompileMetrics(INTERLEAVED_REFERENCE["d2q"], INTERLEAVED_REFERENCE["n2q"])
    return OrderingReport(L, n_steps, pair, inter, ref)


def save_native(native: NativeCircuit, path: str | Path) -> None:
    Path(path).write_text(native.to_json())


def metrics_csv(rows: Sequence[tuple[int, int, CompileMetrics]]) -> str:
    lines = ["L,n_steps,d2q,n2q"]
    lines += [f"{L},{n},{m.d2q},{m.n2q}" for L, n, m in rows]
    return "\n".join(lines) + "\n"
