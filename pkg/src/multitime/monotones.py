"""Information monotones of multitime processes.

All quantities are relative entropies in bits (base-2 logarithms), which
puts the identity qubit channel at exactly 2 bits. Three reference objects
matter: the process itself, its Markov marginal (product of step-pair
marginals), and its full marginal (product of single-leg marginals). Total
information I, non-Markovianity N and Markov information M are the three
pairwise relative entropies, and satisfy I = M + N.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import kron_all, partial_trace, require_hermitian
from .process import Channel, ProcessTensor

# Eigenvalues of the reference state below this are treated as outside its
# support; argument mass landing there beyond SUPPORT_TOL means +infinity.
EIG_CLAMP = 1e-12
SUPPORT_TOL = 1e-9

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class MonotoneReport:
    """I, M, N in bits plus the worst support violation encountered."""

    i_bits: float
    m_bits: float
    n_bits: float
    support_violation: float

    @property
    def finite(self) -> bool:
        return all(map(math.isfinite, (self.i_bits, self.m_bits, self.n_bits)))


def _rel_entropy_core(rho: np.ndarray, sigma: np.ndarray) -> tuple[float, float]:
    """Relative entropy in bits and the rho-mass outside supp(sigma).

    Support membership is decided at machine-zero scale (relative to the
    largest eigenvalue); eigenvalues inside the support are still floored
    at EIG_CLAMP before taking logs.
    """
    rho = require_hermitian(rho)
    sigma = require_hermitian(sigma)
    p, u = np.linalg.eigh(rho)
    q, v = np.linalg.eigh(sigma)
    if p[0] < -1e-9 or q[0] < -1e-9:
        raise ValueError("relative entropy needs positive semidefinite arguments")
    p = np.maximum(p, 0.0)
    # overlap[i, j] = |<u_i|v_j>|^2
    overlap = np.abs(u.conj().T @ v) ** 2
    mass_on_q = p @ overlap
    zero_cut = float(q[-1]) * len(q) * 1e-16
    violation = float(np.sum(mass_on_q[q <= zero_cut]))
    ent = float(np.sum(p[p > 0] * np.log(p[p > 0]))) / LOG2
    cross = float(mass_on_q @ np.log(np.maximum(q, EIG_CLAMP))) / LOG2
    value = ent - cross
    if violation > SUPPORT_TOL:
        return math.inf, violation
    return value, violation


def rel_entropy(rho: np.ndarray, sigma: np.ndarray) -> float:
    """S(rho || sigma) = tr(rho log2 rho - rho log2 sigma), or +inf.

    Both arguments must be Hermitian PSD with unit trace (within 1e-9);
    infinity is signalled when rho has more than SUPPORT_TOL of mass
    outside the support of sigma.
    """
    for name, m in (("rho", rho), ("sigma", sigma)):
        tr = np.trace(np.asarray(m)).real
        if abs(tr - 1.0) > 1e-9:
            raise ValueError(f"{name} trace {tr} is not 1 within 1e-9")
    value, _ = _rel_entropy_core(np.asarray(rho), np.asarray(sigma))
    return value


def support_violation(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Mass of rho outside the (clamped) support of sigma."""
    _, violation = _rel_entropy_core(np.asarray(rho), np.asarray(sigma))
    return violation


def mkv_marginal(t: ProcessTensor) -> ProcessTensor:
    """Markov marginal: product of the (i_{j-1}, o_j) step-pair marginals.

    Adjacent leg ordering makes the reassembly permutation-free; the result
    is the nearest Markov process in the relative-entropy sense.
    """
    pairs = [t.pair_marginal(j) for j in range(1, t.n_slots + 2)]
    return ProcessTensor(kron_all(pairs), t.leg_dims, t.times)


def full_marginal(t: ProcessTensor) -> ProcessTensor:
    """Fully uncorrelated marginal: product of all single-leg marginals."""
    legs = [t.leg_marginal(pos) for pos in range(len(t.leg_dims))]
    return ProcessTensor(kron_all(legs), t.leg_dims, t.times)


def monotone_report(t: ProcessTensor) -> MonotoneReport:
    """Total information I, Markov information M, non-Markovianity N.

    I = S(T || T_marg), N = S(T || T_Mkv), M = S(T_Mkv || T_marg); when all
    are finite they satisfy I = M + N.
    """
    mkv = mkv_marginal(t).choi
    marg = full_marginal(t).choi
    i_bits, v1 = _rel_entropy_core(t.choi, marg)
    n_bits, v2 = _rel_entropy_core(t.choi, mkv)
    m_bits, v3 = _rel_entropy_core(mkv, marg)
    return MonotoneReport(i_bits, m_bits, n_bits, max(v1, v2, v3))


def channel_information(c: Channel | ProcessTensor) -> float:
    """Input-output mutual information of a channel, in bits.

    Accepts a Channel or a 0-slot process; ranges over [0, 2 log2 d] with
    the maximum attained by unitary channels.
    """
    if isinstance(c, ProcessTensor):
        if c.n_slots != 0:
            raise ValueError("channel_information needs a channel or a 0-slot process")
        choi, d_in, d_out = c.choi, c.leg_dims[0], c.leg_dims[1]
        marg_in = c.leg_marginal(0)
        marg_out = c.leg_marginal(1)
    else:
        choi, d_in, d_out = c.choi, c.d_in, c.d_out
        marg_in = partial_trace(choi, (d_in, d_out), keep=[0])
        marg_out = partial_trace(choi, (d_in, d_out), keep=[1])
    value, _ = _rel_entropy_core(choi, np.kron(marg_in, marg_out))
    return value
