"""Pulse-sequence optimization by see-saw semidefinite programming.

The figure of merit is the largest eigenvalue of the resulting channel's
unit-trace Choi state, a proxy for input-output mutual information that is
linear in each slot's control Choi once the top eigenvector is frozen. The
see-saw sweeps the slots in ascending order, alternating per slot between
refreshing that eigenvector and re-optimizing the slot over the CPTP cone.

The per-slot subproblem
    maximize tr(F A)  s.t.  A >= 0,  Tr_out A = I/d
is solved with a damped-Newton log-barrier on the affine slice of the cone;
problems are tiny (4x4 for qubits), and the barrier's central-path point
yields a dual certificate Y with kron(Y, I) >= F essentially for free.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.linalg

from .control import ControlSequence
from .linalg import partial_trace, require_hermitian
from .process import (Channel, QState, SEDynamics, apply_on_factors, channel_compose,
                      channel_from_unitary, channel_of, channel_of_batch,
                      extend_with_identity_env, identity_channel)

GAP_TOL = 1e-6
DUAL_FEAS_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SdpResult:
    """Optimal CPTP Choi with the certificate that proves it.

    ``dual_matrix`` Y satisfies kron(Y, I_out) >= F - DUAL_FEAS_TOL and
    tr(Y)/d_in - primal_value == duality_gap <= GAP_TOL.
    """

    choi: Channel
    primal_value: float
    dual_matrix: np.ndarray
    duality_gap: float
    iterations: int


@dataclass(eq=False)
class SeesawTrace:
    """One see-saw run: per-sweep objective values and the final controls."""

    objective_history: list[float]
    controls: ControlSequence
    converged: bool

    @property
    def objective(self) -> float:
        return self.objective_history[-1]

    @property
    def sweeps(self) -> int:
        return len(self.objective_history) - 1


@lru_cache(maxsize=None)
def hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal basis of n x n Hermitian matrices, tr(E_i E_j) = delta_ij.

    Diagonal units first, then symmetric and antisymmetric off-diagonal
    pairs (the generalized Gell-Mann set up to normalization).
    """
    mats = []
    for k in range(n):
        e = np.zeros((n, n), dtype=np.complex128)
        e[k, k] = 1.0
        mats.append(e)
    for j in range(n):
        for k in range(j + 1, n):
            e = np.zeros((n, n), dtype=np.complex128)
            e[j, k] = e[k, j] = 1.0 / np.sqrt(2.0)
            mats.append(e)
            e = np.zeros((n, n), dtype=np.complex128)
            e[j, k] = -1j / np.sqrt(2.0)
            e[k, j] = 1j / np.sqrt(2.0)
            mats.append(e)
    out = np.array(mats)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _tp_nullspace_basis(d_in: int, d_out: int) -> np.ndarray:
    """Orthonormal Hermitian matrices B with Tr_out B = 0.

    These span the directions along which a Choi state can move without
    breaking trace preservation.
    """
    n = d_in * d_out
    full = hermitian_basis(n)
    small = hermitian_basis(d_in)
    # Real coefficient matrix of B -> Tr_out(B) between Hermitian bases.
    lmap = np.empty((d_in * d_in, n * n))
    for k, e in enumerate(full):
        reduced = partial_trace(e, (d_in, d_out), keep=[0])
        lmap[:, k] = [np.trace(f @ reduced).real for f in small]
    _, s, vt = np.linalg.svd(lmap)
    rank = int(np.sum(s > 1e-12))
    coeffs = vt[rank:]
    basis = np.einsum("ck,kab->cab", coeffs, full)
    basis.flags.writeable = False
    return basis


def _exact_line_search(f: np.ndarray, a: np.ndarray, da: np.ndarray, mu: float) -> float:
    """Maximize t -> tr(f(a + t da)) + mu logdet(a + t da) along the step.

    Along the line, phi(t) - phi(0) = t c1 + mu sum_i log(1 + t g_i) with
    g_i the eigenvalues of a^{-1} da, so a scalar Newton solve suffices.
    """
    g = np.linalg.eigvals(np.linalg.solve(a, da)).real
    c1 = float(np.einsum("ab,ba->", f, da).real)
    neg = g[g < 0]
    t_max = np.inf if neg.size == 0 else 0.999 / float(np.max(-neg))
    t = min(1.0, 0.9 * t_max)
    for _ in range(60):
        if c1 + mu * float(np.sum(g / (1.0 + t * g))) > 0:
            break
        t *= 0.5
    else:
        return 0.0
    for _ in range(30):
        denom = 1.0 + t * g
        dphi = c1 + mu * float(np.sum(g / denom))
        d2phi = -mu * float(np.sum((g / denom) ** 2))
        if d2phi >= 0:
            break
        t_new = t - dphi / d2phi
        if not np.isfinite(t_new) or t_new <= 0:
            break
        if np.isfinite(t_max):
            t_new = min(t_new, 0.9999 * t_max)
        if abs(t_new - t) < 1e-12 * max(1.0, t):
            t = t_new
            break
        t = t_new
    return t


def sdp_max_linear_cptp(f: np.ndarray, d_in: int, d_out: int,
                        gap_tol: float = GAP_TOL, max_newton: int = 2000,
                        warm_start: np.ndarray | None = None) -> SdpResult:
    """Maximize tr(f A) over Choi states of CPTP maps.

    Path-following log-barrier: maximize tr(fA) + mu log det A on the
    affine slice, shrinking mu until the certified duality gap is below
    ``gap_tol``. ``warm_start`` (a feasible Choi, such as the previous
    see-saw iterate) skips most of the path. Raises RuntimeError if the
    Newton budget runs out.
    """
    f = require_hermitian(f)
    n = d_in * d_out
    if f.shape[0] != n:
        raise ValueError(f"objective dimension {f.shape[0]} != d_in*d_out = {n}")
    basis = _tp_nullspace_basis(d_in, d_out)
    f_coeff = np.einsum("kab,ba->k", basis, f).real
    eye_out = np.eye(d_out)

    def certificate(a: np.ndarray, mu: float):
        # Central-path stationarity F + mu A^{-1} = Y ⊗ I identifies the dual;
        # off-path residue is absorbed by shifting Y back into feasibility.
        a_inv = np.linalg.inv(a)
        z = f + mu * (a_inv + a_inv.conj().T) / 2
        y = partial_trace(z, (d_in, d_out), keep=[0]) / d_out
        slack = np.kron(y, eye_out) - f
        lam_min = float(np.min(np.linalg.eigvalsh((slack + slack.conj().T) / 2)))
        if lam_min < 0:
            y = y + (-lam_min) * np.eye(d_in)
        gap = float(np.trace(y).real) / d_in - float(np.trace(f @ a).real)
        return y, gap

    scale = max(1.0, float(np.max(np.abs(np.linalg.eigvalsh(f)))))
    mu_target = 0.45 * gap_tol / n
    mu_floor = 1e-12 * scale
    if warm_start is not None:
        a = 0.9 * warm_start + 0.1 * np.eye(n) / n
        mu = max(3e-2 * scale, mu_target)
    else:
        a = np.eye(n, dtype=np.complex128) / n
        mu = 0.5 * scale
    # The stationarity residual F + mu A^{-1} - Y ⊗ I feeds straight into the
    # certificate, so the terminal centering targets the gradient norm; the
    # Newton decrement alone is blind to stiff barrier directions.
    res_tol = 0.05 * gap_tol
    newton_steps = [0]

    def center(mu: float, res_goal: float | None, iter_cap: int) -> None:
        nonlocal a
        for _ in range(iter_cap):
            a_inv = np.linalg.inv(a)
            a_inv = (a_inv + a_inv.conj().T) / 2
            ainv_b = np.einsum("ab,kbc->kac", a_inv, basis)
            grad = f_coeff + mu * np.einsum("kaa->k", ainv_b).real
            if res_goal is not None and float(np.linalg.norm(grad)) <= res_goal:
                return
            hess = np.einsum("kab,lba->kl", ainv_b, ainv_b).real
            try:
                step = np.linalg.solve(hess, grad) / mu
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, grad, rcond=None)[0] / mu
            decrement = float(grad @ step)
            if res_goal is None and decrement <= 1e-3 * mu:
                return
            newton_steps[0] += 1
            if newton_steps[0] > max_newton:
                raise RuntimeError("SDP solver did not converge within the Newton budget")
            da = np.einsum("k,kab->ab", step, basis)
            t = _exact_line_search(f, a, da, mu)
            if t <= 0.0:
                return
            a = a + t * da
            a = (a + a.conj().T) / 2

    try:
        while mu > mu_target:
            center(mu, None, 8)
            mu = max(mu * 0.1, mu_target)
        while True:
            center(mu, res_tol, 60)
            y, gap = certificate(a, mu)
            if gap <= 0.9 * gap_tol:
                break
            if mu <= mu_floor:
                raise RuntimeError(f"SDP certificate too loose: duality gap {gap:.3e} > {gap_tol}")
            mu = max(mu * 0.25, mu_floor)
    except RuntimeError:
        if warm_start is None:
            raise
        # a poor warm start can strand the barrier near a vertex; redo cold
        return sdp_max_linear_cptp(f, d_in, d_out, gap_tol, max_newton, None)

    primal = float(np.trace(f @ a).real)
    return SdpResult(Channel(d_in, d_out, a), primal, y, gap, newton_steps[0])


def _controls_map(controls) -> dict[int, Channel]:
    if controls is None:
        return {}
    return dict(getattr(controls, "slots", controls))


def probe_slot_functional(dyn: SEDynamics, controls, slot: int, v: np.ndarray) -> np.ndarray:
    """Hermitian F with <v|C(A_slot)|v> = tr(F A_slot) for every slot Choi.

    Built by pushing the d^4 Hermitian basis elements through the (linear)
    channel map at the probed slot, with all other slots closed by the
    given controls.
    """
    d = dyn.d_sys
    if not 1 <= slot <= dyn.n_slots:
        raise ValueError(f"slot {slot} out of range 1..{dyn.n_slots}")
    v = np.asarray(v, dtype=np.complex128).reshape(-1)
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError("probe vector must be normalized")
    v = v / norm
    ops = {j: ch.choi for j, ch in _controls_map(controls).items() if j != slot}
    basis = hermitian_basis(d * d)
    chois = channel_of_batch(dyn, ops, slot, basis)
    g = np.einsum("a,kab,b->k", v.conj(), chois, v).real
    fmat = np.einsum("k,kab->ab", g, basis)
    return (fmat + fmat.conj().T) / 2


def principal_eigpair(h: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and a deterministically phased top eigenvector."""
    w, vmat = np.linalg.eigh((h + h.conj().T) / 2)
    vec = vmat[:, -1].copy()
    idx = int(np.argmax(np.abs(vec)))
    vec = vec * (np.abs(vec[idx]) / vec[idx])
    return float(w[-1]), vec


def nearest_unitary_channel(ch: Channel) -> Channel:
    """Project onto the closest unitary channel via the polar factor."""
    k = ch.kraus_operators()[0]
    u, _ = scipy.linalg.polar(k)
    return channel_from_unitary(u)


def odd_seesaw(dyn: SEDynamics, slots: Iterable[int], init: ControlSequence | None = None,
               max_sweeps: int = 200, tol: float = 1e-7,
               restrict_unitary: bool = False, label: str = "odd") -> SeesawTrace:
    """Maximize the channel's top Choi eigenvalue over per-slot operations.

    Sweeps ascending slot order, refreshing the top eigenvector after every
    slot update (refreshing only once per sweep stalls badly in practice).
    A slot update is kept only if it does not lower the current-eigenvector
    objective, so the recorded per-sweep history is non-decreasing. Stops
    when the per-sweep improvement drops below ``tol``.
    """
    d = dyn.d_sys
    slots = sorted(set(int(s) for s in slots))
    for s in slots:
        if not 1 <= s <= dyn.n_slots:
            raise ValueError(f"slot {s} out of range 1..{dyn.n_slots}")
    controls: dict[int, Channel] = {j: identity_channel(d) for j in slots}
    if init is not None:
        for j, ch in init.slots.items():
            if j in controls:
                controls[j] = ch

    def closed_choi() -> np.ndarray:
        return channel_of(dyn, {j: c.choi for j, c in controls.items()})

    obj, v = principal_eigpair(closed_choi())
    history = [obj]
    converged = not slots
    warm: dict[int, np.ndarray] = {}
    for _ in range(max_sweeps if slots else 0):
        for j in slots:
            fmat = probe_slot_functional(dyn, controls, j, v)
            g_cur = float(np.trace(fmat @ controls[j].choi).real)
            res = sdp_max_linear_cptp(fmat, d, d, warm_start=warm.get(j))
            cand = res.choi
            warm[j] = cand.choi
            if restrict_unitary:
                cand = nearest_unitary_channel(cand)
            if float(np.trace(fmat @ cand.choi).real) > g_cur:
                controls[j] = cand
            obj, v = principal_eigpair(closed_choi())
        history.append(obj)
        if history[-1] - history[-2] < tol:
            converged = True
            break
    return SeesawTrace(history, ControlSequence(controls, label=label), converged)


def modd(dyn: SEDynamics, block: int, max_sweeps: int = 200, tol: float = 1e-7,
         restrict_unitary: bool = False,
         on_trace: Callable[[str, SeesawTrace], None] | None = None) -> ControlSequence:
    """Multitimescale optimization: per-block fine pulses, then a coarse layer.

    Each block's interior slots are optimized on a block-local process whose
    environment state is propagated forward (a maximally mixed system is fed
    at each block boundary). The fine pulses are then absorbed into coarse
    effective steps and the block-boundary slots get their own see-saw.
    """
    if dyn.inserted_controls:
        raise ValueError("modd expects raw dynamics; insert the result afterwards")
    n = dyn.n_segments
    if n % block != 0:
        raise ValueError(f"block {block} does not divide {n} segments")
    n_blocks = n // block
    d, de = dyn.d_sys, dyn.d_env

    fine: dict[int, Channel] = {}
    env = dyn.rho_env0
    for b in range(n_blocks):
        seg_lo = b * block
        block_dyn = SEDynamics(d, de, env, dyn.segments[seg_lo:seg_lo + block],
                               dyn.durations[seg_lo:seg_lo + block])
        trace = odd_seesaw(block_dyn, range(1, block), max_sweeps=max_sweeps, tol=tol,
                           restrict_unitary=restrict_unitary, label=f"modd-fine-{b}")
        if on_trace is not None:
            on_trace(f"fine-{b}", trace)
        for local, ch in trace.controls.slots.items():
            fine[seg_lo + local] = ch
        if b < n_blocks - 1:
            env = _evolve_env(block_dyn, trace.controls)

    coarse_segments = []
    for b in range(n_blocks):
        seg_lo = b * block
        eff = dyn.segments[seg_lo]
        for local in range(1, block):
            pulse = extend_with_identity_env(fine[seg_lo + local], de)
            eff = channel_compose(dyn.segments[seg_lo + local], channel_compose(pulse, eff))
        coarse_segments.append(eff)
    coarse_durations = tuple(float(sum(dyn.durations[b * block:(b + 1) * block])) for b in range(n_blocks))
    coarse_dyn = SEDynamics(d, de, dyn.rho_env0, coarse_segments, coarse_durations)
    trace = odd_seesaw(coarse_dyn, range(1, n_blocks), max_sweeps=max_sweeps, tol=tol,
                       restrict_unitary=restrict_unitary, label="modd-coarse")
    if on_trace is not None:
        on_trace("coarse", trace)

    combined = dict(fine)
    for local, ch in trace.controls.slots.items():
        combined[local * block] = ch
    return ControlSequence(combined, label="modd")


def _evolve_env(block_dyn: SEDynamics, controls: ControlSequence) -> QState:
    """Environment state after feeding a maximally mixed system through a block."""
    d, de = block_dyn.d_sys, block_dyn.d_env
    rho = np.kron(np.eye(d) / d, block_dyn.rho_env0.matrix)
    dims = [d, de]
    for k, seg in enumerate(block_dyn.segments):
        rho = apply_on_factors(rho, dims, seg.choi, d * de, [0, 1])
        ctrl = controls.slots.get(k + 1)
        if ctrl is not None:
            rho = apply_on_factors(rho, dims, ctrl.choi, d, [0])
    return QState(partial_trace(rho, dims, keep=[1]))
