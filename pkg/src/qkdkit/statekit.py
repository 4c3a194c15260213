"""Validated Hermitian operators, density operators, channels and measurements.

All matrices are dense complex numpy arrays. Objects are immutable after
construction: the stored arrays are flagged read-only and every operator is
symmetrized to ``(M + M^dagger) / 2`` before any spectral test.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadTrace,
    DimensionOverflow,
    DimMismatch,
    EigensolverFailure,
    InvalidChannel,
    NotHermitian,
    NotPSD,
    ParseError,
    ValidationError,
)

DEFAULT_MAX_DIM = 4096


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by all validators.

    ``psd`` is relative: an eigenvalue counts as negative only below
    ``-psd * (1 + ||M||_1)``.
    """

    herm: float = 1e-9
    trace: float = 1e-9
    psd: float = 1e-9
    cptp: float = 1e-9

    def psd_floor(self, matrix: np.ndarray) -> float:
        return self.psd * (1.0 + float(np.abs(np.linalg.eigvalsh(matrix)).sum()))

    def to_json(self) -> dict:
        return {"herm": self.herm, "trace": self.trace, "psd": self.psd, "cptp": self.cptp}


DEFAULT_TOLERANCES = Tolerances()


def max_dimension() -> int:
    """Dense-dimension ceiling, overridable through ``QKDKIT_MAX_DIM``."""
    raw = os.environ.get("QKDKIT_MAX_DIM")
    if raw is None:
        return DEFAULT_MAX_DIM
    try:
        value = int(raw)
    except ValueError as exc:
        raise ParseError(f"QKDKIT_MAX_DIM must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ParseError("QKDKIT_MAX_DIM must be positive")
    return value


def _check_dim(dim: int) -> None:
    ceiling = max_dimension()
    if dim > ceiling:
        raise DimensionOverflow(f"dimension {dim} exceeds ceiling {ceiling}")


def _frozen(matrix: np.ndarray) -> np.ndarray:
    matrix = np.array(matrix, dtype=complex)
    matrix.setflags(write=False)
    return matrix


def _square(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {m.shape}")
    _check_dim(m.shape[0])
    return m


def eigh(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        return np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc


def eigvalsh(matrix: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(matrix)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc


def symmetrize(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=complex)
    return 0.5 * (m + m.conj().T)


class HermitianOperator:
    """A square complex matrix equal to its conjugate transpose."""

    def __init__(self, matrix, tol: Tolerances = DEFAULT_TOLERANCES):
        m = _square(matrix)
        asym = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if asym > tol.herm:
            raise NotHermitian(f"asymmetry {asym:.3g} exceeds tolerance {tol.herm:.3g}")
        self._matrix = _frozen(symmetrize(m))

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    def trace(self) -> float:
        return float(np.trace(self._matrix).real)

    def eigvals(self) -> np.ndarray:
        return eigvalsh(self._matrix)

    def __sub__(self, other: HermitianOperator) -> HermitianOperator:
        _same_dim(self, other)
        return HermitianOperator(self.matrix - other.matrix)

    def __add__(self, other: HermitianOperator) -> HermitianOperator:
        _same_dim(self, other)
        return HermitianOperator(self.matrix + other.matrix)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._matrix, dtype=dtype)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"

    def to_json(self) -> dict:
        return operator_to_json(self._matrix)


def _psd_clean(m: np.ndarray, tol: Tolerances) -> np.ndarray:
    """Reject eigenvalues below the PSD floor and clip the tolerated ones to zero."""
    vals, vecs = eigh(m)
    floor = tol.psd * (1.0 + float(np.abs(vals).sum()))
    if vals.size and vals[0] < -floor:
        raise NotPSD(f"minimum eigenvalue {vals[0]:.3g} below -{floor:.3g}")
    if vals.size and vals[0] < 0:
        vals = np.clip(vals, 0.0, None)
        m = (vecs * vals) @ vecs.conj().T
    return m


class DensityOperator(HermitianOperator):
    """Positive semi-definite, unit-trace Hermitian operator."""

    def __init__(self, matrix, tol: Tolerances = DEFAULT_TOLERANCES):
        super().__init__(matrix, tol)
        m = np.array(self._matrix)
        tr = float(np.trace(m).real)
        if abs(tr - 1.0) > tol.trace:
            raise BadTrace(f"trace {tr:.12g} differs from 1 by more than {tol.trace:.3g}")
        cleaned = _psd_clean(m, tol)
        if cleaned is not m:
            cleaned = cleaned / np.trace(cleaned).real
        self._matrix = _frozen(symmetrize(cleaned))


class SubnormalizedOperator(HermitianOperator):
    """Positive semi-definite Hermitian operator with trace in ``[0, 1]``."""

    def __init__(self, matrix, tol: Tolerances = DEFAULT_TOLERANCES):
        super().__init__(matrix, tol)
        m = np.array(self._matrix)
        tr = float(np.trace(m).real)
        if tr < -tol.trace or tr > 1.0 + tol.trace:
            raise BadTrace(f"trace {tr:.12g} outside [0, 1]")
        self._matrix = _frozen(symmetrize(_psd_clean(m, tol)))

    @property
    def weight(self) -> float:
        return self.trace()


def _same_dim(a, b) -> None:
    da, db = np.shape(a)[0], np.shape(b)[0]
    if da != db:
        raise DimMismatch(f"dimension mismatch: {da} vs {db}")


def as_matrix(x) -> np.ndarray:
    """Return the underlying complex array of an operator or array-like."""
    if isinstance(x, HermitianOperator):
        return x.matrix
    return np.asarray(x, dtype=complex)


def validate_density(matrix, tol: Tolerances = DEFAULT_TOLERANCES) -> DensityOperator:
    """Validate ``matrix`` as a density operator.

    Raises:
        NotHermitian, NotPSD, BadTrace: when the corresponding check fails.
    """
    return DensityOperator(matrix, tol)


def schatten_1_norm(h) -> float:
    """Sum of absolute eigenvalues of a Hermitian operator."""
    m = as_matrix(h)
    if m.shape == (1, 1):
        return float(abs(m[0, 0].real))
    return float(np.abs(eigvalsh(symmetrize(m))).sum())


def jordan_decompose(delta) -> tuple[np.ndarray, np.ndarray]:
    """Split a Hermitian operator into positive and negative parts.

    The parts have orthogonal supports and sum to the input; the negative
    part is returned as a negative semi-definite matrix.
    """
    vals, vecs = eigh(symmetrize(as_matrix(delta)))
    pos = (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T
    neg = (vecs * np.clip(vals, None, 0.0)) @ vecs.conj().T
    return symmetrize(pos), symmetrize(neg)


def tensor(a, b) -> DensityOperator:
    """Kronecker product of two density operators."""
    ma, mb = as_matrix(a), as_matrix(b)
    _check_dim(ma.shape[0] * mb.shape[0])
    return DensityOperator(np.kron(ma, mb))


def partial_trace(rho, dims: Sequence[int], keep: Iterable[int]) -> DensityOperator:
    """Trace out every factor of ``dims`` not listed in ``keep``.

    Kept factors stay in ascending order.
    """
    m = as_matrix(rho)
    dims = [int(d) for d in dims]
    if int(np.prod(dims)) != m.shape[0]:
        raise DimMismatch(f"factor dims {dims} do not multiply to {m.shape[0]}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimMismatch(f"keep indices {keep} out of range for {len(dims)} factors")
    n = len(dims)
    t = m.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # trace from the highest index so remaining axis numbers stay valid
    for count, i in enumerate(sorted(traced, reverse=True)):
        width = n - count
        t = np.trace(t, axis1=i, axis2=i + width)
    d = int(np.prod([dims[k] for k in keep])) if keep else 1
    return DensityOperator(t.reshape(d, d))


class KrausChannel:
    """Completely positive map given by Kraus operators.

    Args:
        kraus_ops: matrices of shape ``(dim_out, dim_in)``.
        trace_preserving: require ``sum K^dagger K = 1``; otherwise only
            ``sum K^dagger K <= 1`` is required.
    """

    def __init__(self, kraus_ops, trace_preserving: bool = True, tol: Tolerances = DEFAULT_TOLERANCES):
        ops = [np.asarray(k, dtype=complex) for k in kraus_ops]
        if not ops:
            raise InvalidChannel("a channel needs at least one Kraus operator")
        shape = ops[0].shape
        if any(k.ndim != 2 or k.shape != shape for k in ops):
            raise DimMismatch("Kraus operators must share one 2-d shape")
        _check_dim(max(shape))
        gram = sum(k.conj().T @ k for k in ops)
        eye = np.eye(shape[1])
        if trace_preserving:
            dev = float(np.max(np.abs(gram - eye)))
            if dev > tol.cptp:
                raise InvalidChannel(f"sum K^dagger K deviates from identity by {dev:.3g}")
        else:
            low = float(eigvalsh(symmetrize(eye - gram))[0])
            if low < -tol.cptp:
                raise InvalidChannel(f"sum K^dagger K exceeds identity by {-low:.3g}")
        self.kraus_ops = tuple(_frozen(k) for k in ops)
        self.trace_preserving = trace_preserving

    @property
    def dim_in(self) -> int:
        return self.kraus_ops[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.kraus_ops[0].shape[0]

    @property
    def mode(self) -> str:
        return "trace-preserving" if self.trace_preserving else "trace-non-increasing"

    def __call__(self, rho):
        return apply_channel(self, rho)

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        """Apply to a raw array without wrapping the result."""
        return sum(k @ matrix @ k.conj().T for k in self.kraus_ops)

    @classmethod
    def identity(cls, dim: int) -> KrausChannel:
        return cls([np.eye(dim)])

    @classmethod
    def depolarizing(cls, p: float, dim: int = 2) -> KrausChannel:
        """``rho -> (1 - p) rho + p * 1/dim``, written with Weyl operators."""
        if not 0.0 <= p <= 1.0:
            raise InvalidChannel("depolarizing probability must be in [0, 1]")
        weyl = _weyl_basis(dim)
        ops = [np.sqrt(1.0 - p + p / dim**2) * weyl[0]]
        ops += [np.sqrt(p / dim**2) * w for w in weyl[1:]]
        return cls(ops)

    @classmethod
    def dephasing(cls, dim: int = 2) -> KrausChannel:
        return cls([np.diag(np.eye(dim)[i]) for i in range(dim)])


def _weyl_basis(dim: int) -> list[np.ndarray]:
    shift = np.roll(np.eye(dim), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(dim) / dim))
    return [
        np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)
        for a in range(dim)
        for b in range(dim)
    ]


def apply_channel(ch: KrausChannel, rho):
    """Apply ``ch`` to a density or subnormalized operator.

    A trace-preserving channel keeps the input kind; a trace-non-increasing
    one always returns a :class:`SubnormalizedOperator`.
    """
    m = as_matrix(rho)
    if m.shape[0] != ch.dim_in:
        raise DimMismatch(f"channel expects dimension {ch.dim_in}, got {m.shape[0]}")
    out = ch.apply(m)
    if ch.trace_preserving and not isinstance(rho, SubnormalizedOperator):
        return DensityOperator(out)
    return SubnormalizedOperator(out)


class Povm:
    """Positive operator-valued measure; elements sum to the identity."""

    def __init__(self, elements, tol: Tolerances = DEFAULT_TOLERANCES):
        elems = [HermitianOperator(e, tol) for e in elements]
        if not elems:
            raise ValidationError("a POVM needs at least one element")
        dim = elems[0].dim
        for e in elems:
            _same_dim(elems[0], e)
            if e.eigvals()[0] < -tol.psd_floor(e.matrix):
                raise NotPSD("POVM element is not positive semi-definite")
        total = sum(e.matrix for e in elems)
        dev = float(np.max(np.abs(total - np.eye(dim))))
        if dev > tol.cptp:
            raise InvalidChannel(f"POVM elements sum to identity only within {dev:.3g}")
        self.elements = tuple(elems)

    @property
    def dim(self) -> int:
        return self.elements[0].dim

    def probabilities(self, rho) -> np.ndarray:
        m = as_matrix(rho)
        return np.array([float(np.trace(e.matrix @ m).real) for e in self.elements])

    @classmethod
    def basis(cls, unitary: np.ndarray | None = None, dim: int = 2) -> Povm:
        """Projective measurement onto the columns of ``unitary``."""
        u = np.eye(dim) if unitary is None else np.asarray(unitary, dtype=complex)
        return cls([np.outer(u[:, i], u[:, i].conj()) for i in range(u.shape[1])])


@dataclass(frozen=True)
class HelstromResult:
    effect: np.ndarray = field(repr=False)
    advantage: float


def helstrom(rho, sigma) -> HelstromResult:
    """Optimal effect for telling ``rho`` from ``sigma``.

    The effect is the projector onto the positive eigenspace of
    ``rho - sigma``; its advantage ``tr[effect (rho - sigma)]`` is half the
    1-norm of the difference.
    """
    a, b = as_matrix(rho), as_matrix(sigma)
    _same_dim(a, b)
    vals, vecs = eigh(symmetrize(a - b))
    mask = vals > 0
    proj = vecs[:, mask] @ vecs[:, mask].conj().T
    return HelstromResult(effect=symmetrize(proj), advantage=float(vals[mask].sum()))


# --- random ensembles -------------------------------------------------------


def _ginibre(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-ensemble state ``G G^dagger / tr(G G^dagger)`` of the given rank."""
    g = _ginibre(rng, dim, dim if rank is None else rank)
    m = g @ g.conj().T
    return symmetrize(m / np.trace(m).real)


def random_pure(dim: int, rng: np.random.Generator) -> np.ndarray:
    return random_density(dim, rng, rank=1)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(_ginibre(rng, dim, dim))
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    return symmetrize(_ginibre(rng, dim, dim))


def random_channel(dim_in: int, rng: np.random.Generator, dim_out: int | None = None,
                   n_kraus: int = 2) -> KrausChannel:
    """Random CPTP map from a Haar-like isometry cut into Kraus blocks.

    ``n_kraus`` is raised if needed so the isometry exists.
    """
    dim_out = dim_in if dim_out is None else dim_out
    n_kraus = max(n_kraus, -(-dim_in // dim_out))
    v, _ = np.linalg.qr(_ginibre(rng, dim_out * n_kraus, dim_in))
    ops = [v[i * dim_out:(i + 1) * dim_out, :] for i in range(n_kraus)]
    return KrausChannel(ops)


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def projector(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex)
    return np.outer(v, v.conj())


def maximally_mixed(dim: int) -> DensityOperator:
    return DensityOperator(np.eye(dim) / dim)


# --- serialization ----------------------------------------------------------


def operator_to_json(matrix) -> dict:
    m = as_matrix(matrix)
    return {
        "dim": int(m.shape[0]),
        "entries": [[float(z.real), float(z.imag)] for z in m.reshape(-1)],
    }


def operator_from_json(obj) -> np.ndarray:
    """Parse ``{"dim": n, "entries": [[re, im], ...]}`` into an array."""
    try:
        dim = int(obj["dim"])
        entries = obj["entries"]
        if dim < 1 or len(entries) != dim * dim:
            raise ParseError(f"expected {dim * dim} entries, got {len(entries)}")
        flat = np.array([complex(float(re), float(im)) for re, im in entries])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed operator JSON: {exc}") from exc
    _check_dim(dim)
    return flat.reshape(dim, dim)
