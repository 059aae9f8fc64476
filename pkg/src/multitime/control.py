"""Control sequences: Pauli pulse trains, DD/CDD, measure-and-reprepare.

A control sequence is a memoryless assignment of one channel per slot. A
terminal pulse (after the last free evolution) can be recorded but is kept
out of metric-affecting insertion by default: a final system unitary cannot
change I, M or N.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .process import Channel, QState, channel_compose, channel_from_unitary

PAULI = {
    "I": np.eye(2, dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


def pauli_channel(label: str) -> Channel:
    """Unitary conjugation channel for a Pauli label."""
    if label not in PAULI:
        raise ValueError(f"unknown Pauli label {label!r}")
    return channel_from_unitary(PAULI[label])


@dataclass(frozen=True, eq=False)
class PulseGroup:
    """A set of unitaries whose twirl averages system operators away."""

    elements: tuple[np.ndarray, ...]

    def __init__(self, elements):
        elements = tuple(np.asarray(e, dtype=np.complex128) for e in elements)
        for e in elements:
            d = e.shape[0]
            if np.max(np.abs(e.conj().T @ e - np.eye(d))) > 1e-10:
                raise ValueError("pulse group elements must be unitary")
        object.__setattr__(self, "elements", elements)


def qubit_pulse_group() -> PulseGroup:
    return PulseGroup([PAULI[p] for p in "IXYZ"])


@dataclass(frozen=True, eq=False)
class ControlSequence:
    """Per-slot channels (strictly increasing slot indices) plus a label."""

    slots: dict[int, Channel]
    label: str
    terminal: Channel | None = None

    def __init__(self, slots: Mapping[int, Channel], label: str = "", terminal: Channel | None = None):
        ordered = {int(k): slots[k] for k in sorted(slots)}
        if any(k < 1 for k in ordered):
            raise ValueError("slot indices start at 1")
        object.__setattr__(self, "slots", ordered)
        object.__setattr__(self, "label", str(label))
        object.__setattr__(self, "terminal", terminal)

    def slot_indices(self) -> tuple[int, ...]:
        return tuple(self.slots)


def dd_sequence(n_slots: int, pattern: Sequence[str] = ("X", "Z"),
                include_terminal: bool = False, label: str = "dd") -> ControlSequence:
    """Cyclic decoupling train: slot j carries pattern[(j-1) mod len].

    The default [X, Z] pattern makes the toggling frame sweep the whole
    group {I, X, Y, Z} every four pulses. With ``include_terminal`` the
    pulse that would land after the final segment is recorded separately.
    """
    if n_slots < 1:
        raise ValueError("need at least one slot")
    if not pattern:
        raise ValueError("empty pulse pattern")
    slots = {j: pauli_channel(pattern[(j - 1) % len(pattern)]) for j in range(1, n_slots + 1)}
    terminal = pauli_channel(pattern[n_slots % len(pattern)]) if include_terminal else None
    return ControlSequence(slots, label=label, terminal=terminal)


def cdd_sequence(n_fine: int, block: int, fine_pattern: Sequence[str] = ("X", "Z"),
                 coarse_pattern: Sequence[str] = ("X", "Z"),
                 include_terminal: bool = False, label: str = "cdd") -> ControlSequence:
    """Concatenated decoupling: a second pulse train on the block timescale.

    Fine DD runs on every slot; at block boundaries (slots block, 2*block,
    ...) the coarse pulse is composed after the fine one.
    """
    if (n_fine + 1) % block != 0:
        raise ValueError(f"block {block} does not divide {n_fine + 1} segments")
    fine = dd_sequence(n_fine, fine_pattern, include_terminal=include_terminal, label=label)
    slots = dict(fine.slots)
    boundaries = list(range(block, n_fine + 1, block))
    for k, slot in enumerate(boundaries, start=1):
        coarse = pauli_channel(coarse_pattern[(k - 1) % len(coarse_pattern)])
        slots[slot] = channel_compose(coarse, slots[slot])
    terminal = fine.terminal
    if include_terminal:
        k_term = (n_fine + 1) // block
        coarse_term = pauli_channel(coarse_pattern[(k_term - 1) % len(coarse_pattern)])
        terminal = channel_compose(coarse_term, terminal)
    return ControlSequence(slots, label=label, terminal=terminal)


def measure_reprepare(povm: Sequence[np.ndarray], preps: Sequence[QState]) -> Channel:
    """Entanglement-breaking channel rho -> sum_a tr(Pi_a rho) pi_a."""
    if len(povm) != len(preps):
        raise ValueError("need one re-preparation per POVM effect")
    if not povm:
        raise ValueError("empty POVM")
    effects = [np.asarray(e, dtype=np.complex128) for e in povm]
    d = effects[0].shape[0]
    total = sum(effects)
    if np.max(np.abs(total - np.eye(d))) > 1e-10:
        raise ValueError("POVM effects must sum to the identity")
    for e in effects:
        if np.min(np.linalg.eigvalsh((e + e.conj().T) / 2)) < -1e-10:
            raise ValueError("POVM effects must be positive semidefinite")
    d_out = preps[0].dim
    choi = np.zeros((d * d_out, d * d_out), dtype=np.complex128)
    for e, prep in zip(effects, preps):
        choi += np.kron(e.T, prep.matrix) / d
    return Channel(d, d_out, choi)


def constant_channel(d_in: int, beta: QState) -> Channel:
    """Zero-capacity channel mapping every input to the fixed state beta."""
    return measure_reprepare([np.eye(d_in)], [beta])
