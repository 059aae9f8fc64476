import numpy as np
import pytest

import multitime as mt

SIGMA = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def random_hermitian(d, rng, scale=1.0):
    m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return scale * (m + m.conj().T) / 2


def random_density(d, rng, rank=None):
    k = rank or d
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    rho = g @ g.conj().T
    return mt.QState(rho / np.trace(rho).real)


def random_unitary(d, rng):
    m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(m)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_cptp(d_in, rng, d_out=None):
    """Random CPTP channel via a Wishart Choi renormalized on the input leg."""
    d_out = d_out or d_in
    n = d_in * d_out
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    g = g @ g.conj().T
    s = mt.partial_trace(g, (d_in, d_out), keep=[0])
    w, v = np.linalg.eigh(s)
    s_isqrt = (v * (1 / np.sqrt(w))) @ v.conj().T
    lift = np.kron(s_isqrt, np.eye(d_out))
    return mt.Channel(d_in, d_out, lift @ g @ lift / d_in)


def random_dynamics(rng, d_sys=2, d_env=2, n_segments=3, dt=0.3):
    h = random_hermitian(d_sys * d_env, rng)
    h = h / mt.op_norm(h)
    env = random_density(d_env, rng, rank=1)
    return mt.build_dynamics(h, env, n_segments, dt)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
