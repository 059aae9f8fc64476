"""Process-tensor algebra.

Channels and multitime processes are carried as unit-trace Choi states. A
channel's Choi matrix lives on (input, output) legs; an n-slot process lives
on 2(n+1) chronologically ordered legs (i0, o1, i1, ..., i_n, o_{n+1}), so
that each constituent step occupies the adjacent pair (i_{j-1}, o_j).

Fine-grained dynamics are never materialized as giant Choi states. They are
kept implicit in :class:`SEDynamics` (initial environment state plus a list
of joint system-environment step channels), and explicit Choi states are
built only for the small number of slots actually left open.

Binary file layout for :func:`save_dynamics` / :func:`save_process` is
documented in the README (section "File formats").
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

from . import linalg
from .linalg import as_cmatrix, kron, kron_all, partial_trace, permute_subsystems, propagator

# Construction tolerances: eigenvalues above PSD_TOL of zero pass untouched,
# dips down to -REPAIR_LIMIT are clamped away and the trace renormalized,
# anything worse is an error.
PSD_TOL = 1e-10
REPAIR_LIMIT = 1e-8
TRACE_TOL = 1e-10
TP_TOL = 1e-9
CAUSALITY_TOL = 1e-8


def maximally_entangled(d: int) -> np.ndarray:
    """Unit-trace maximally entangled state on a d x d pair."""
    v = np.eye(d, dtype=np.complex128).reshape(d * d)
    return np.outer(v, v.conj()) / d


def _repair_psd(m: np.ndarray, what: str) -> np.ndarray:
    """Hermitize, clamp slightly negative eigenvalues, renormalize trace."""
    h = linalg.require_hermitian(m)
    tr = np.trace(h).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"{what}: trace {tr} is not 1 within {TRACE_TOL}")
    w, v = np.linalg.eigh(h)
    wmin = float(w[0])
    if wmin < -REPAIR_LIMIT:
        raise ValueError(f"{what}: not positive semidefinite (min eigenvalue {wmin:.3e})")
    if wmin < 0.0:
        w = np.maximum(w, 0.0)
        h = (v * w) @ v.conj().T
        h = (h + h.conj().T) / 2
        h = h / np.trace(h).real
    return h


@dataclass(frozen=True, eq=False)
class QState:
    """Density operator: Hermitian, PSD, unit trace."""

    matrix: np.ndarray

    def __init__(self, matrix):
        m = _repair_psd(as_cmatrix(matrix), "QState")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def maximally_mixed(d: int) -> QState:
    return QState(np.eye(d) / d)


@dataclass(frozen=True, eq=False)
class Channel:
    """CPTP map stored as a unit-trace Choi state on (in, out) legs."""

    d_in: int
    d_out: int
    choi: np.ndarray

    def __init__(self, d_in: int, d_out: int, choi):
        c = as_cmatrix(choi)
        if c.shape[0] != d_in * d_out:
            raise ValueError(f"Choi dimension {c.shape[0]} != d_in*d_out = {d_in * d_out}")
        c = _repair_psd(c, "Channel")
        marg_in = partial_trace(c, (d_in, d_out), keep=[0])
        if np.max(np.abs(marg_in - np.eye(d_in) / d_in)) > TP_TOL:
            raise ValueError("Channel is not trace preserving: Tr_out(choi) != I/d_in")
        c.flags.writeable = False
        object.__setattr__(self, "d_in", int(d_in))
        object.__setattr__(self, "d_out", int(d_out))
        object.__setattr__(self, "choi", c)

    def kraus_operators(self, tol: float = 1e-12) -> list[np.ndarray]:
        """Kraus decomposition from the Choi eigenvectors."""
        w, v = np.linalg.eigh(self.choi * self.d_in)
        ops = []
        for k in range(len(w) - 1, -1, -1):
            if w[k] > tol:
                ops.append(np.sqrt(w[k]) * v[:, k].reshape(self.d_in, self.d_out).T)
        return ops


def identity_channel(d: int) -> Channel:
    return Channel(d, d, maximally_entangled(d))


def channel_from_unitary(u: np.ndarray) -> Channel:
    """Channel rho -> u rho u†. The Choi state is rank one."""
    u = as_cmatrix(u)
    d = u.shape[0]
    if np.max(np.abs(u.conj().T @ u - np.eye(d))) > 1e-10:
        raise ValueError("matrix is not unitary within 1e-10")
    # v[(i, a)] = u[a, i] / sqrt(d) is the vectorized unitary on (in, out) legs
    v = (u.T / np.sqrt(d)).reshape(d * d)
    return Channel(d, d, np.outer(v, v.conj()))


def apply_choi(choi: np.ndarray, d_in: int, d_out: int, mat: np.ndarray) -> np.ndarray:
    """Action of a map on an arbitrary matrix: d_in * Tr_in[(mat^T ⊗ I) choi].

    Linear in both arguments; ``choi`` need not be a physical Choi state
    (used for linearization probes as well as for channel application).
    """
    c4 = np.asarray(choi, dtype=np.complex128).reshape(d_in, d_out, d_in, d_out)
    m = np.asarray(mat, dtype=np.complex128)
    return d_in * np.einsum("iajb,ij->ab", c4, m)


def channel_apply(c: Channel, rho: QState) -> QState:
    """Apply a channel to a state."""
    if rho.dim != c.d_in:
        raise ValueError(f"state dimension {rho.dim} != channel input {c.d_in}")
    return QState(apply_choi(c.choi, c.d_in, c.d_out, rho.matrix))


def channel_compose(later: Channel, earlier: Channel) -> Channel:
    """Choi of later∘earlier (later acts after earlier)."""
    if earlier.d_out != later.d_in:
        raise ValueError(f"cannot compose: earlier output {earlier.d_out} != later input {later.d_in}")
    # Applying `later` to the output leg of `earlier`'s Choi gives the
    # composition's Choi directly, with the contraction factor built in.
    e4 = earlier.choi.reshape(earlier.d_in, earlier.d_out, earlier.d_in, earlier.d_out)
    l4 = later.choi.reshape(later.d_in, later.d_out, later.d_in, later.d_out)
    out4 = later.d_in * np.einsum("aAbB,iajb->iAjB", l4, e4)
    d = earlier.d_in * later.d_out
    return Channel(earlier.d_in, later.d_out, out4.reshape(d, d))


@dataclass(frozen=True, eq=False)
class LindbladGenerator:
    """GKSL generator: Hamiltonian part plus jump operators with rates."""

    h: np.ndarray
    jumps: tuple[np.ndarray, ...]
    rates: tuple[float, ...]

    def __init__(self, h, jumps=(), rates=()):
        hm = linalg.require_hermitian(as_cmatrix(h))
        jumps = tuple(as_cmatrix(j) for j in jumps)
        rates = tuple(float(r) for r in rates)
        if len(jumps) != len(rates):
            raise ValueError("need one rate per jump operator")
        if any(r < 0 for r in rates):
            raise ValueError("rates must be nonnegative")
        if any(j.shape != hm.shape for j in jumps):
            raise ValueError("jump operator dimensions inconsistent with h")
        hm.flags.writeable = False
        object.__setattr__(self, "h", hm)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "rates", rates)

    @property
    def dim(self) -> int:
        return self.h.shape[0]


def lindblad_superoperator(g: LindbladGenerator) -> np.ndarray:
    """GKSL superoperator matrix acting on row-major vectorized matrices."""
    d = g.dim
    eye = np.eye(d)
    s = -1j * (np.kron(g.h, eye) - np.kron(eye, g.h.T))
    for gamma, L in zip(g.rates, g.jumps):
        LdL = L.conj().T @ L
        s = s + gamma * (np.kron(L, L.conj()) - 0.5 * np.kron(LdL, eye) - 0.5 * np.kron(eye, LdL.T))
    return s


def lindblad_segment(g: LindbladGenerator, tau: float) -> Channel:
    """Channel exp(tau * GKSL) via the full superoperator exponential."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    d = g.dim
    phi = scipy.linalg.expm(float(tau) * lindblad_superoperator(g))
    # Column (i, j) of the superoperator is Phi(|i><j|); rearrange to Choi legs.
    choi4 = phi.reshape(d, d, d, d).transpose(2, 0, 3, 1) / d
    return Channel(d, d, choi4.reshape(d * d, d * d))


@dataclass(frozen=True, eq=False)
class SEDynamics:
    """Implicit fine-grained process: environment state plus joint se steps.

    ``inserted_controls`` holds system-only channels absorbed into the
    process at interior slots (slot j sits between segments j and j+1,
    j = 1 .. n_segments-1). They act immediately before the slot opening.
    """

    d_sys: int
    d_env: int
    rho_env0: QState
    segments: tuple[Channel, ...]
    durations: tuple[float, ...]
    inserted_controls: dict[int, Channel] = field(default_factory=dict)

    def __init__(self, d_sys, d_env, rho_env0, segments, durations=None, inserted_controls=None):
        d_sys, d_env = int(d_sys), int(d_env)
        segments = tuple(segments)
        if not segments:
            raise ValueError("need at least one segment")
        d_se = d_sys * d_env
        if rho_env0.dim != d_env:
            raise ValueError(f"environment state dimension {rho_env0.dim} != d_env {d_env}")
        for s in segments:
            if s.d_in != d_se or s.d_out != d_se:
                raise ValueError("segments must act on the joint system-environment space")
        if durations is None:
            durations = (1.0,) * len(segments)
        durations = tuple(float(t) for t in durations)
        if len(durations) != len(segments):
            raise ValueError("need one duration per segment")
        controls = dict(inserted_controls or {})
        for slot, ch in controls.items():
            if not 1 <= slot <= len(segments) - 1:
                raise ValueError(f"control slot {slot} out of range 1..{len(segments) - 1}")
            if ch.d_in != d_sys or ch.d_out != d_sys:
                raise ValueError("inserted controls must act on the system alone")
        object.__setattr__(self, "d_sys", d_sys)
        object.__setattr__(self, "d_env", d_env)
        object.__setattr__(self, "rho_env0", rho_env0)
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "inserted_controls", controls)

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def n_slots(self) -> int:
        return len(self.segments) - 1

    def slot_times(self) -> tuple[float, ...]:
        cum = np.cumsum(self.durations)
        return tuple(float(t) for t in cum[:-1])


def build_dynamics(h_se: np.ndarray, rho_env0: QState, n_segments: int, dt: float,
                   d_sys: int | None = None) -> SEDynamics:
    """Dynamics made of identical unitary steps exp(-i h_se dt)."""
    h_se = linalg.require_hermitian(as_cmatrix(h_se))
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    d_env = rho_env0.dim
    if h_se.shape[0] % d_env != 0:
        raise ValueError("h_se dimension is not divisible by the environment dimension")
    ds = h_se.shape[0] // d_env
    if d_sys is not None and d_sys != ds:
        raise ValueError(f"d_sys {d_sys} inconsistent with h_se and rho_env0")
    seg = channel_from_unitary(propagator(h_se, dt))
    return SEDynamics(ds, d_env, rho_env0, (seg,) * int(n_segments), (float(dt),) * int(n_segments))


def extend_with_identity_env(ctrl: Channel, d_env: int) -> Channel:
    """Lift a system-only channel to the joint space as (channel ⊗ identity)."""
    d = ctrl.d_in
    if ctrl.d_out != d:
        raise ValueError("only square channels can be lifted to the joint space")
    c4 = ctrl.choi.reshape(d, d, d, d)
    psi4 = maximally_entangled(d_env).reshape(d_env, d_env, d_env, d_env)
    out8 = np.einsum("aAbB,eEfF->aeAEbfBF", c4, psi4)
    d_se = d * d_env
    return Channel(d_se, d_se, out8.reshape(d_se * d_se, d_se * d_se))


def insert_controls(dyn: SEDynamics, assignment: Mapping[int, Channel]) -> SEDynamics:
    """Absorb system-only controls into the dynamics at the given slots.

    A control landing on an already-controlled slot composes after the
    existing one (new after old).
    """
    controls = dict(dyn.inserted_controls)
    for slot, ch in assignment.items():
        slot = int(slot)
        if not 1 <= slot <= dyn.n_slots:
            raise ValueError(f"slot {slot} out of range 1..{dyn.n_slots}")
        controls[slot] = channel_compose(ch, controls[slot]) if slot in controls else ch
    return SEDynamics(dyn.d_sys, dyn.d_env, dyn.rho_env0, dyn.segments, dyn.durations, controls)


@dataclass(frozen=True, eq=False)
class ProcessTensor:
    """Unit-trace Choi state of a multitime process.

    Legs are chronological: (i0, o1, i1, ..., i_n, o_{n+1}); ``leg_dims``
    lists each leg's dimension (all equal to the system dimension for
    processes built from dynamics; composition can mix dimensions).
    """

    n_slots: int
    leg_dims: tuple[int, ...]
    choi: np.ndarray
    times: tuple[float, ...]

    def __init__(self, choi, leg_dims, times=(), validate=True):
        leg_dims = tuple(int(d) for d in leg_dims)
        if len(leg_dims) < 2 or len(leg_dims) % 2 != 0:
            raise ValueError("a process needs an even number of legs, at least two")
        n = len(leg_dims) // 2 - 1
        c = as_cmatrix(choi)
        if c.shape[0] != int(np.prod(leg_dims)):
            raise ValueError("Choi dimension does not match the product of leg dimensions")
        times = tuple(float(t) for t in times)
        if times and len(times) != n:
            raise ValueError(f"expected {n} slot times, got {len(times)}")
        c = _repair_psd(c, "ProcessTensor")
        if validate:
            self._check_comb(c, leg_dims)
        c.flags.writeable = False
        object.__setattr__(self, "n_slots", n)
        object.__setattr__(self, "leg_dims", leg_dims)
        object.__setattr__(self, "choi", c)
        object.__setattr__(self, "times", times)

    @staticmethod
    def _check_comb(c: np.ndarray, leg_dims: tuple[int, ...]) -> None:
        n_legs = len(leg_dims)
        # Input legs sit at even positions and are fed by the experimenter,
        # so each must be maximally mixed on its own.
        for pos in range(0, n_legs, 2):
            d = leg_dims[pos]
            marg = partial_trace(c, leg_dims, keep=[pos])
            if np.max(np.abs(marg - np.eye(d) / d)) > TP_TOL:
                raise ValueError(f"input leg {pos} marginal deviates from I/d beyond {TP_TOL}")
        if n_legs >= 4:
            # Causality: discarding the final output decouples the last input.
            head = partial_trace(c, leg_dims, keep=list(range(n_legs - 1)))
            earlier = partial_trace(c, leg_dims, keep=list(range(n_legs - 2)))
            d_last_in = leg_dims[n_legs - 2]
            expect = kron(earlier, np.eye(d_last_in) / d_last_in)
            if np.max(np.abs(head - expect)) > CAUSALITY_TOL:
                raise ValueError("causality violated: final input leg stays correlated "
                                 "after the final output is discarded")

    @property
    def d_sys(self) -> int:
        if len(set(self.leg_dims)) != 1:
            raise ValueError("process has mixed leg dimensions; no single d_sys")
        return self.leg_dims[0]

    def slot_legs(self, slot: int) -> tuple[int, int]:
        """Leg positions (o_slot, i_slot) of an intermediate slot (1-based)."""
        if not 1 <= slot <= self.n_slots:
            raise ValueError(f"slot {slot} out of range 1..{self.n_slots}")
        return 2 * slot - 1, 2 * slot

    def pair_marginal(self, j: int) -> np.ndarray:
        """Marginal of constituent step j (1-based) on legs (i_{j-1}, o_j)."""
        return partial_trace(self.choi, self.leg_dims, keep=[2 * j - 2, 2 * j - 1])

    def leg_marginal(self, pos: int) -> np.ndarray:
        return partial_trace(self.choi, self.leg_dims, keep=[pos])


def apply_on_factors(state: np.ndarray, dims: list[int], op_choi: np.ndarray,
                     d_op: int, targets: list[int]) -> np.ndarray:
    """(map ⊗ id)(state) with the map acting on the listed tensor factors.

    Accepts arbitrary matrices for ``op_choi`` (linear extension), as long
    as input and output dimensions agree.
    """
    n = len(dims)
    rest = [i for i in range(n) if i not in targets]
    perm = list(targets) + rest
    moved = permute_subsystems(state, dims, perm)
    d_rest = int(np.prod([dims[i] for i in rest])) if rest else 1
    m4 = moved.reshape(d_op, d_rest, d_op, d_rest)
    c4 = op_choi.reshape(d_op, d_op, d_op, d_op)
    out4 = d_op * np.einsum("iajb,irjs->arbs", c4, m4)
    out = out4.reshape(d_op * d_rest, d_op * d_rest)
    new_dims = [dims[p] for p in perm]
    return permute_subsystems(out, new_dims, linalg.invert_permutation(perm))


def choi_of_process(dyn: SEDynamics, open_slots: Iterable[int]) -> ProcessTensor:
    """Build the explicit process tensor over the given open slots.

    A fresh maximally entangled pair is fed at the initial input and at
    every open slot; inserted controls at closed (and open) slots are
    applied as part of the underlying process, right before any opening.
    """
    open_slots = sorted(set(int(s) for s in open_slots))
    for s in open_slots:
        if not 1 <= s <= dyn.n_slots:
            raise ValueError(f"open slot {s} out of range 1..{dyn.n_slots}")
    d, de = dyn.d_sys, dyn.d_env
    m = len(open_slots)
    if d ** (2 * (m + 1)) > 2 ** 16:
        raise ValueError(f"refusing to materialize {m} open slots at d_sys={d}")

    state = kron(maximally_entangled(d), dyn.rho_env0.matrix)
    dims = [d, d, de]  # stored i0, live system, environment
    for k, seg in enumerate(dyn.segments):
        s_pos, e_pos = len(dims) - 2, len(dims) - 1
        state = apply_on_factors(state, dims, seg.choi, d * de, [s_pos, e_pos])
        slot = k + 1
        if slot > dyn.n_slots:
            break
        ctrl = dyn.inserted_controls.get(slot)
        if ctrl is not None:
            state = apply_on_factors(state, dims, ctrl.choi, d, [s_pos])
        if slot in open_slots:
            state = kron(state, maximally_entangled(d))
            dims = dims + [d, d]
            # old live system becomes the stored o_slot leg; the fresh
            # half becomes the new live system; env stays last
            k_s = len(dims) - 4
            perm = list(range(k_s)) + [k_s, k_s + 2, k_s + 3, k_s + 1]
            state = permute_subsystems(state, dims, perm)
            dims = [dims[p] for p in perm]
    choi = partial_trace(state, dims, keep=list(range(len(dims) - 1)))
    leg_dims = tuple(dims[:-1])
    slot_times = dyn.slot_times()
    times = tuple(slot_times[s - 1] for s in open_slots)
    return ProcessTensor(choi, leg_dims, times)


def coarse_grain(dyn: SEDynamics, keep_slots: Iterable[int]) -> ProcessTensor:
    """Close all slots outside ``keep_slots`` with identity operations."""
    return choi_of_process(dyn, keep_slots)


def channel_of(dyn: SEDynamics, slot_ops: Mapping[int, np.ndarray] | None = None) -> np.ndarray:
    """Raw Choi matrix (legs i0, o1) of the channel with every slot closed.

    ``slot_ops`` places additional operators (arbitrary matrices on the
    system Choi space, applied linearly) at slots, after any controls
    already absorbed in the dynamics. Supports a leading batch axis on one
    slot's operator via :func:`channel_of_batch`.
    """
    return _closed_choi(dyn, dict(slot_ops or {}), None)


def channel_of_batch(dyn: SEDynamics, slot_ops: Mapping[int, np.ndarray],
                     probe_slot: int, probe_stack: np.ndarray) -> np.ndarray:
    """Like :func:`channel_of` but evaluating a stack of operators at one slot.

    Returns an array of shape (len(stack), d^2, d^2).
    """
    return _closed_choi(dyn, dict(slot_ops), (int(probe_slot), probe_stack))


def _closed_choi(dyn: SEDynamics, slot_ops: dict[int, np.ndarray],
                 probe: tuple[int, np.ndarray] | None) -> np.ndarray:
    d, de = dyn.d_sys, dyn.d_env
    psi4 = maximally_entangled(d).reshape(d, d, d, d)  # [x, a, y, b]
    state = np.einsum("xayb,ef->xaeybf", psi4, dyn.rho_env0.matrix)
    for k, seg in enumerate(dyn.segments):
        c8 = seg.choi.reshape(d, de, d, de, d, de, d, de)
        state = (d * de) * np.einsum("aeAEbfBF,...xaeybf->...xAEyBF", c8, state)
        slot = k + 1
        if slot > dyn.n_slots:
            break
        ctrl = dyn.inserted_controls.get(slot)
        if ctrl is not None:
            c4 = ctrl.choi.reshape(d, d, d, d)
            state = d * np.einsum("aAbB,...xaeybf->...xAeyBf", c4, state)
        if probe is not None and probe[0] == slot:
            stack = np.asarray(probe[1], dtype=np.complex128).reshape(-1, d, d, d, d)
            state = d * np.einsum("kaAbB,xaeybf->kxAeyBf", stack, state)
        elif slot in slot_ops:
            c4 = np.asarray(slot_ops[slot], dtype=np.complex128).reshape(d, d, d, d)
            state = d * np.einsum("aAbB,...xaeybf->...xAeyBf", c4, state)
    choi4 = np.einsum("...xaeybe->...xayb", state)
    return choi4.reshape(choi4.shape[:-4] + (d * d, d * d))


def contract(t: ProcessTensor, controls) -> ProcessTensor:
    """Close a subset of slots with a control sequence.

    Computes d^{2|S|} * Tr_S[ T (I_rest ⊗ A_S^T) ] with the slot Choi
    matrices placed on the (o_j, i_j) leg pairs; the prefactor restores
    unit trace.
    """
    slots_map: Mapping[int, Channel] = getattr(controls, "slots", controls)
    closing = sorted(int(s) for s in slots_map)
    if not closing:
        return t
    for s in closing:
        if not 1 <= s <= t.n_slots:
            raise ValueError(f"slot {s} out of range 1..{t.n_slots}")
        o_leg, i_leg = t.slot_legs(s)
        ch = slots_map[s]
        if ch.d_in != t.leg_dims[o_leg] or ch.d_out != t.leg_dims[i_leg]:
            raise ValueError(f"control at slot {s} has wrong dimensions")
    closed_legs = [leg for s in closing for leg in t.slot_legs(s)]
    kept_legs = [i for i in range(len(t.leg_dims)) if i not in closed_legs]
    perm = kept_legs + closed_legs
    moved = permute_subsystems(t.choi, t.leg_dims, perm)
    d_kept = int(np.prod([t.leg_dims[i] for i in kept_legs]))
    d_closed = int(np.prod([t.leg_dims[i] for i in closed_legs]))
    a_block = kron_all([slots_map[s].choi for s in closing])
    m4 = moved.reshape(d_kept, d_closed, d_kept, d_closed)
    out = np.einsum("rsqu,su->rq", m4, a_block)
    factor = float(np.prod([t.leg_dims[leg] for leg in closed_legs]))
    new_leg_dims = tuple(t.leg_dims[i] for i in kept_legs)
    remaining = [s for s in range(1, t.n_slots + 1) if s not in closing]
    times = tuple(t.times[s - 1] for s in remaining) if t.times else ()
    return ProcessTensor(factor * out, new_leg_dims, times)


def parallel_compose(a: ProcessTensor, b: ProcessTensor) -> ProcessTensor:
    """Two independent experiments considered jointly.

    The Choi state is the tensor product with concatenated leg bookkeeping.
    The seam between the factors appears as one extra formal slot, so the
    composite carries n_a + n_b + 1 slots.
    """
    return ProcessTensor(kron(a.choi, b.choi), a.leg_dims + b.leg_dims)


def sequential_compose(later: ProcessTensor, earlier: ProcessTensor) -> ProcessTensor:
    """Append ``later`` after ``earlier``; the join becomes a new slot.

    The composite is Markovian across the join: earlier's final output leg
    and later's initial input leg form the (o, i) pair of the new slot.
    """
    d_join_out = earlier.leg_dims[-1]
    d_join_in = later.leg_dims[0]
    if d_join_out != d_join_in:
        raise ValueError(f"cannot join: earlier output dim {d_join_out} != later input dim {d_join_in}")
    return ProcessTensor(kron(earlier.choi, later.choi), earlier.leg_dims + later.leg_dims)


# ---------------------------------------------------------------------------
# Serialization (little-endian; complex entries as f64 re/im pairs)

_DYN_MAGIC = b"MTDYN001"
_PT_MAGIC = b"MTPTN001"


def _write_complex(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())


def _read_complex(fh, count: int) -> np.ndarray:
    buf = fh.read(16 * count)
    if len(buf) != 16 * count:
        raise ValueError("truncated file")
    return np.frombuffer(buf, dtype="<c16").astype(np.complex128)


def save_dynamics(dyn: SEDynamics, path: str) -> None:
    d_se = dyn.d_sys * dyn.d_env
    with open(path, "wb") as fh:
        fh.write(_DYN_MAGIC)
        fh.write(struct.pack("<4I", dyn.d_sys, dyn.d_env, dyn.n_segments, len(dyn.inserted_controls)))
        fh.write(struct.pack(f"<{dyn.n_segments}d", *dyn.durations))
        _write_complex(fh, dyn.rho_env0.matrix)
        for seg in dyn.segments:
            _write_complex(fh, seg.choi)
        for slot in sorted(dyn.inserted_controls):
            fh.write(struct.pack("<I", slot))
            _write_complex(fh, dyn.inserted_controls[slot].choi)


def load_dynamics(path: str) -> SEDynamics:
    with open(path, "rb") as fh:
        if fh.read(8) != _DYN_MAGIC:
            raise ValueError(f"{path} is not a dynamics file")
        d_sys, d_env, n_seg, n_ctrl = struct.unpack("<4I", fh.read(16))
        durations = struct.unpack(f"<{n_seg}d", fh.read(8 * n_seg))
        rho = QState(_read_complex(fh, d_env * d_env).reshape(d_env, d_env))
        d_se = d_sys * d_env
        segments = []
        for _ in range(n_seg):
            c = _read_complex(fh, d_se ** 4).reshape(d_se * d_se, d_se * d_se)
            segments.append(Channel(d_se, d_se, c))
        controls = {}
        for _ in range(n_ctrl):
            (slot,) = struct.unpack("<I", fh.read(4))
            c = _read_complex(fh, d_sys ** 4).reshape(d_sys * d_sys, d_sys * d_sys)
            controls[slot] = Channel(d_sys, d_sys, c)
    return SEDynamics(d_sys, d_env, rho, segments, durations, controls)


def save_process(t: ProcessTensor, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_PT_MAGIC)
        fh.write(struct.pack("<2I", t.n_slots, len(t.leg_dims)))
        fh.write(struct.pack(f"<{len(t.leg_dims)}I", *t.leg_dims))
        fh.write(struct.pack("<I", len(t.times)))
        if t.times:
            fh.write(struct.pack(f"<{len(t.times)}d", *t.times))
        _write_complex(fh, t.choi)


def load_process(path: str) -> ProcessTensor:
    with open(path, "rb") as fh:
        if fh.read(8) != _PT_MAGIC:
            raise ValueError(f"{path} is not a process-tensor file")
        n_slots, n_legs = struct.unpack("<2I", fh.read(8))
        leg_dims = struct.unpack(f"<{n_legs}I", fh.read(4 * n_legs))
        (n_times,) = struct.unpack("<I", fh.read(4))
        times = struct.unpack(f"<{n_times}d", fh.read(8 * n_times)) if n_times else ()
        dim = int(np.prod(leg_dims))
        choi = _read_complex(fh, dim * dim).reshape(dim, dim)
    return ProcessTensor(choi, leg_dims, times)
