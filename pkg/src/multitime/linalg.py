"""Dense complex linear algebra primitives.

Everything here operates on square complex numpy arrays ("CMatrix"). The
routines are thin, contract-checked wrappers around LAPACK via numpy:
Hermitian eigendecompositions, eigenvalue-wise matrix functions, tensor
products, partial traces and subsystem permutations. All functions are pure
and never mutate their arguments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

# Relative asymmetry below which an almost-Hermitian input is silently
# symmetrized; above it we refuse (likely a logic error upstream).
HERM_TOL = 1e-10

CMatrix = np.ndarray


def as_cmatrix(a) -> np.ndarray:
    """Coerce to a square complex128 matrix with finite entries."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.view(np.float64))):
        raise ValueError("matrix contains NaN or Inf entries")
    return m


@dataclass(frozen=True)
class SubsystemShape:
    """Tensor-factor structure annotating a square matrix.

    ``dims`` lists the per-factor dimensions; ``total`` is their product and
    must equal the dimension of any matrix this shape annotates.
    """

    dims: tuple[int, ...]

    def __init__(self, dims: Iterable[int]):
        dims = tuple(int(d) for d in dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"invalid subsystem dims {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self) -> int:
        return len(self.dims)


def _dims_of(shape: SubsystemShape | Sequence[int]) -> tuple[int, ...]:
    if isinstance(shape, SubsystemShape):
        return shape.dims
    return SubsystemShape(shape).dims


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product."""
    return np.kron(np.asarray(a, dtype=np.complex128), np.asarray(b, dtype=np.complex128))


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Kronecker product of a sequence (left to right)."""
    out = np.asarray(mats[0], dtype=np.complex128)
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def partial_trace(a: np.ndarray, shape: SubsystemShape | Sequence[int],
                  keep: Iterable[int]) -> np.ndarray:
    """Trace out all tensor factors not listed in ``keep``.

    ``keep`` is a set of factor indices; the output factor order follows the
    original ordering of the kept factors. The total trace is preserved.
    """
    a = as_cmatrix(a)
    dims = _dims_of(shape)
    if int(np.prod(dims)) != a.shape[0]:
        raise ValueError(f"shape {dims} does not match matrix dimension {a.shape[0]}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {len(dims)} factors")
    n = len(dims)
    t = a.reshape(dims + dims)
    # Trace the dropped factors pairwise, from the back so indices stay valid.
    for idx in reversed(range(n)):
        if idx not in keep:
            row_axis = idx
            col_axis = idx + (t.ndim // 2)
            t = np.trace(t, axis1=row_axis, axis2=col_axis)
    d_keep = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(d_keep, d_keep)


def permute_subsystems(a: np.ndarray, shape: SubsystemShape | Sequence[int],
                       perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: output factor ``j`` is input factor ``perm[j]``.

    Conjugates both row and column indices, so trace and spectrum are
    preserved; applying the inverse permutation round-trips exactly.
    """
    a = as_cmatrix(a)
    dims = _dims_of(shape)
    if int(np.prod(dims)) != a.shape[0]:
        raise ValueError(f"shape {dims} does not match matrix dimension {a.shape[0]}")
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(len(dims))):
        raise ValueError(f"{perm} is not a permutation of {len(dims)} factors")
    n = len(dims)
    t = a.reshape(dims + dims)
    t = np.transpose(t, perm + [p + n for p in perm])
    d = int(np.prod(dims))
    return np.ascontiguousarray(t.reshape(d, d))


def invert_permutation(perm: Sequence[int]) -> list[int]:
    inv = [0] * len(perm)
    for j, p in enumerate(perm):
        inv[p] = j
    return inv


def require_hermitian(a: np.ndarray, tol: float = HERM_TOL) -> np.ndarray:
    """Return the Hermitian part of ``a``; error if the asymmetry is large.

    Inputs within ``tol`` relative asymmetry are symmetrized silently, which
    absorbs round-off accumulated in long channel compositions.
    """
    a = as_cmatrix(a)
    herm = (a + a.conj().T) / 2
    scale = np.linalg.norm(a)
    if scale > 0:
        asym = np.linalg.norm(a - a.conj().T) / scale
        if asym > tol:
            raise ValueError(f"matrix is not Hermitian (relative asymmetry {asym:.3e})")
    return herm


def herm_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Returns ``(w, v)`` with eigenvalues ``w`` sorted descending and ``v``
    unitary with matching columns, so that ``a = v @ diag(w) @ v†``.
    """
    h = require_hermitian(a)
    w, v = np.linalg.eigh(h)
    return w[::-1].copy(), np.ascontiguousarray(v[:, ::-1])


def herm_func(a: np.ndarray, f: Callable[[float], float]) -> np.ndarray:
    """Apply a real scalar function to a Hermitian matrix eigenvalue-wise.

    Raises if ``f`` is undefined (NaN/Inf or exception) at any eigenvalue;
    the caller decides how to clamp.
    """
    w, v = herm_eig(a)
    try:
        with np.errstate(invalid="ignore", divide="ignore"):
            fw = np.array([float(f(x)) for x in w])
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"function undefined at an eigenvalue: {exc}") from exc
    if not np.all(np.isfinite(fw)):
        bad = w[~np.isfinite(fw)]
        raise ValueError(f"function undefined at eigenvalue(s) {bad}")
    return (v * fw) @ v.conj().T


def propagator(h: np.ndarray, t: float) -> np.ndarray:
    """Unitary ``exp(-i h t)`` for Hermitian ``h`` (t in inverse-energy units)."""
    w, v = herm_eig(h)
    phases = np.exp(-1j * w * float(t))
    return (v * phases) @ v.conj().T


def op_norm(a: np.ndarray) -> float:
    """Largest absolute eigenvalue of a Hermitian matrix."""
    h = require_hermitian(a)
    return float(np.max(np.abs(np.linalg.eigvalsh(h))))
