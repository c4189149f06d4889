"""Two-qubit polarization states: bases, operators and the density-matrix type.

Basis ordering throughout is |HH>, |HV>, |VH>, |VV>, with the first qubit the
biexciton (XX) photon and the second the exciton (X) photon.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import NotHermitian, NotPhysical, OutOfRange

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
PSD_TOL = 1e-9

_S2 = 1.0 / np.sqrt(2.0)

LABELS = ("H", "V", "D", "A", "R", "L")

# R=(H+iV)/sqrt2, L=(H-iV)/sqrt2; with this choice |Phi+> is cross-correlated
# in the circular basis.
_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([_S2, _S2], dtype=complex),
    "A": np.array([_S2, -_S2], dtype=complex),
    "R": np.array([_S2, 1j * _S2], dtype=complex),
    "L": np.array([_S2, -1j * _S2], dtype=complex),
}

ORTHOGONAL = {"H": "V", "V": "H", "D": "A", "A": "D", "R": "L", "L": "R"}

# analyzer pairs for each Pauli axis: (+1 eigenstate, -1 eigenstate)
AXIS_BASES = {"x": ("D", "A"), "y": ("R", "L"), "z": ("H", "V")}

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"i": I2, "x": SX, "y": SY, "z": SZ}
SY_SY = np.kron(SY, SY)

PHI_PLUS = np.array([_S2, 0, 0, _S2], dtype=complex)


@dataclass(frozen=True)
class PolarizationBasis:
    label: str

    def __post_init__(self):
        if self.label not in _KETS:
            raise OutOfRange(f"unknown polarization label {self.label!r}")

    @property
    def ket(self) -> np.ndarray:
        return _KETS[self.label].copy()

    @property
    def orthogonal(self) -> "PolarizationBasis":
        return PolarizationBasis(ORTHOGONAL[self.label])

    def __str__(self):
        return self.label


BasisLike = Union[PolarizationBasis, str]


def _ket(b: BasisLike) -> np.ndarray:
    label = b.label if isinstance(b, PolarizationBasis) else b
    try:
        return _KETS[label]
    except KeyError:
        raise OutOfRange(f"unknown polarization label {label!r}") from None


def hermitian_eigen(m, tol: float = 1e-10):
    """Eigen-decomposition of a Hermitian matrix.

    Returns ``(w, v)`` with eigenvalues ``w`` sorted in descending order and
    the matching orthonormal eigenvectors as the columns of ``v``.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotHermitian(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotHermitian("matrix has non-finite entries")
    if np.max(np.abs(m - m.conj().T), initial=0.0) > tol:
        raise NotHermitian("matrix is not Hermitian within tolerance")
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return w[::-1].copy(), v[:, ::-1].copy()


def projector(b1: BasisLike, b2: BasisLike) -> np.ndarray:
    """Rank-one projector |b1><b1| (x) |b2><b2|."""
    k = np.kron(_ket(b1), _ket(b2))
    return np.outer(k, k.conj())


def pauli_product(a: str, b: str) -> np.ndarray:
    return np.kron(PAULIS[a], PAULIS[b])


class DensityMatrix:
    """Immutable validated 4x4 two-qubit density matrix.

    Asymmetry up to 1e-12 is symmetrized away and eigenvalues in [-1e-9, 0)
    are clamped to zero before renormalizing. Anything worse raises.
    """

    __slots__ = ("_mat",)

    def __init__(self, mat):
        m = np.array(mat, dtype=complex)
        if m.shape != (4, 4):
            raise NotPhysical(f"density matrix must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NotPhysical("density matrix has non-finite entries")
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
            raise NotHermitian("density matrix is not Hermitian")
        m = 0.5 * (m + m.conj().T)
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise NotPhysical(f"trace {tr!r} differs from 1")
        w, v = np.linalg.eigh(m)
        if w[0] < -PSD_TOL:
            raise NotPhysical(f"negative eigenvalue {w[0]:.3e}")
        if w[0] < 0.0:
            w = np.clip(w, 0.0, None)
            m = (v * w) @ v.conj().T
            m = 0.5 * (m + m.conj().T)
        m = m / np.trace(m).real
        m.setflags(write=False)
        object.__setattr__(self, "_mat", m)

    def __setattr__(self, name, value):
        raise AttributeError("DensityMatrix is immutable")

    @property
    def mat(self) -> np.ndarray:
        return self._mat

    def __array__(self, dtype=None, copy=None):
        return np.array(self._mat, dtype=dtype)

    def __repr__(self):
        return f"DensityMatrix({np.array2string(self._mat, precision=4)})"

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix":
        k = np.asarray(ket, dtype=complex)
        n = np.linalg.norm(k)
        if k.shape != (4,) or abs(n - 1.0) > 1e-12:
            raise NotPhysical("two-qubit ket must be a unit 4-vector")
        return cls(np.outer(k, k.conj()))

    @classmethod
    def nearest(cls, m) -> "DensityMatrix":
        """Project a Hermitian-ish matrix onto the state space by clipping eigenvalues."""
        m = np.asarray(m, dtype=complex)
        m = 0.5 * (m + m.conj().T)
        w, v = np.linalg.eigh(m)
        w = np.clip(w, 0.0, None)
        if w.sum() <= 0.0:
            return cls(np.eye(4) / 4)
        w = w / w.sum()
        out = (v * w) @ v.conj().T
        return cls(0.5 * (out + out.conj().T))

    def to_dict(self) -> dict:
        return {"re": self._mat.real.tolist(), "im": self._mat.imag.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DensityMatrix":
        re = np.asarray(d["re"], dtype=float)
        im = np.asarray(d["im"], dtype=float)
        if re.shape != (4, 4) or im.shape != (4, 4):
            raise NotPhysical("'re' and 'im' must both be 4x4")
        return cls(re + 1j * im)

    @classmethod
    def from_json(cls, s: str) -> "DensityMatrix":
        return cls.from_dict(json.loads(s))


def as_matrix(rho) -> np.ndarray:
    return rho.mat if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def expectation(rho, obs) -> complex:
    obs = np.asarray(obs, dtype=complex)
    if not np.all(np.isfinite(obs)):
        raise OutOfRange("observable has non-finite entries")
    return complex(np.trace(as_matrix(rho) @ obs))


def bell_phi_plus() -> DensityMatrix:
    return DensityMatrix.from_ket(PHI_PLUS)


def maximally_mixed() -> DensityMatrix:
    return DensityMatrix(np.eye(4) / 4)


def werner_state(p: float) -> DensityMatrix:
    """p |Phi+><Phi+| + (1-p) I/4."""
    if not 0.0 <= p <= 1.0:
        raise OutOfRange(f"Werner weight must lie in [0, 1], got {p}")
    return DensityMatrix(p * np.outer(PHI_PLUS, PHI_PLUS.conj()) + (1.0 - p) / 4 * np.eye(4))
