import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def fermion_ops(n_modes: int) -> list[np.ndarray]:
    """Dense annihilation operators built from the occupation basis directly.

    ``c_J |n> = (-1)^{n_0 + ... + n_{J-1}} |n - e_J>`` when ``n_J = 1``; bit J of
    the basis index is mode J.
    """
    dim = 1 << n_modes
    ops = []
    for j in range(n_modes):
        c = np.zeros((dim, dim))
        for idx in range(dim):
            if (idx >> j) & 1:
                sign = (-1) ** bin(idx & ((1 << j) - 1)).count("1")
                c[idx ^ (1 << j), idx] = sign
        ops.append(c)
    return ops


def hubbard_dense(L: int, t, U, mu, mode) -> np.ndarray:
    """Hubbard chain from ladder operators; ``mode(site, spin)`` gives the ordering."""
    n = 2 * L
    c = fermion_ops(n)
    t = np.broadcast_to(np.asarray(t, float), (L - 1,))
    U = np.broadcast_to(np.asarray(U, float), (L,))
    mu = np.broadcast_to(np.asarray(mu, float), (L, 2))
    h = np.zeros((1 << n, 1 << n))
    for i in range(L - 1):
        for spin in ("up", "down"):
            a, b = c[mode(i, spin)], c[mode(i + 1, spin)]
            h -= t[i] * (a.T @ b + b.T @ a)
    for i in range(L):
        nu = c[mode(i, "up")].T @ c[mode(i, "up")]
        nd = c[mode(i, "down")].T @ c[mode(i, "down")]
        h += U[i] * nu @ nd - mu[i, 0] * nu - mu[i, 1] * nd
    return h


@pytest.fixture
def dense_hubbard():
    return hubbard_dense


# acceptance verdicts, echoed in the terminal summary so they survive output capture
_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
