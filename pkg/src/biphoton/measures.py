"""Mixedness, entanglement, nonlocality and fidelity of two-qubit states."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalFailure, OutOfRange
from .qcore import SY_SY, DensityMatrix, as_matrix, hermitian_eigen, pauli_product

R_CLAMP_TOL = 1e-8

STATE_POINT_FIELDS = ("gate_t0_ps", "gate_dt_ps", "s_lin", "tangle", "fidelity", "m_chsh")


def linear_entropy(rho) -> float:
    m = as_matrix(rho)
    purity = np.real(np.trace(m @ m))
    return float(4.0 / 3.0 * (1.0 - purity))


def spin_flip_spectrum(rho) -> np.ndarray:
    """Square roots of the eigenvalues of rho (sy x sy) rho* (sy x sy), descending.

    With rho = W W^dag (W = V sqrt(w)), these are the singular values of
    W^T (sy x sy) W, which keeps round-off in the null space second order.
    The Hermitian similar matrix sqrt(rho) (sy x sy) rho* (sy x sy) sqrt(rho)
    is used to screen for unphysical input.
    """
    m = as_matrix(rho)
    w, v = hermitian_eigen(m)
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T
    r = s @ SY_SY @ m.conj() @ SY_SY @ s
    rw, _ = hermitian_eigen(0.5 * (r + r.conj().T))
    if rw[-1] < -R_CLAMP_TOL:
        raise NumericalFailure(f"spin-flipped operator has eigenvalue {rw[-1]:.3e}")
    wm = v * np.sqrt(np.clip(w, 0.0, None))
    return np.linalg.svd(wm.T @ SY_SY @ wm, compute_uv=False)


def concurrence(rho) -> float:
    lam = spin_flip_spectrum(rho)
    return float(max(lam[0] - lam[1] - lam[2] - lam[3], 0.0))


def tangle(rho) -> float:
    return concurrence(rho) ** 2


def fidelity_phi_plus(rho) -> float:
    m = as_matrix(rho)
    return float((m[0, 0].real + m[3, 3].real) / 2 + m[0, 3].real)


_CORR_AXIS = {"rectilinear": ("z", 1.0), "diagonal": ("x", 1.0), "circular": ("y", -1.0)}


def correlation(rho, basis: str) -> float:
    """Polarization correlation in one analyzer basis.

    The circular correlation carries a minus sign so that all three equal +1
    on |Phi+>; R/L cross coincidences count as correlated.
    """
    try:
        axis, sign = _CORR_AXIS[basis]
    except KeyError:
        raise OutOfRange(f"unknown correlation basis {basis!r}") from None
    m = as_matrix(rho)
    return float(sign * np.real(np.trace(m @ pauli_product(axis, axis))))


def fidelity_from_correlations(c_hv: float, c_da: float, c_rl: float) -> float:
    for c in (c_hv, c_da, c_rl):
        if not -1.0 - 1e-12 <= c <= 1.0 + 1e-12:
            raise OutOfRange(f"correlation {c} outside [-1, 1]")
    return (1.0 + c_hv + c_da + c_rl) / 4.0


def correlation_matrix(rho) -> np.ndarray:
    m = as_matrix(rho)
    axes = "xyz"
    return np.array(
        [[np.real(np.trace(m @ pauli_product(a, b))) for b in axes] for a in axes]
    )


def chsh_parameter(rho) -> float:
    """Horodecki M(rho); the largest attainable CHSH value is 2*sqrt(M)."""
    t = correlation_matrix(rho)
    w = np.linalg.eigvalsh(t.T @ t)
    return float(w[-1] + w[-2])


def werner_curve(s_lin: float) -> float:
    """Tangle of the Werner state having linear entropy ``s_lin``."""
    if not 0.0 <= s_lin <= 1.0:
        raise OutOfRange(f"linear entropy must lie in [0, 1], got {s_lin}")
    p = math.sqrt(1.0 - s_lin)
    return max(0.0, (3.0 * p - 1.0) / 2.0) ** 2


def werner_linear_entropy_for_tangle(t: float) -> float:
    """Inverse of werner_curve on the entangled branch (0 < t <= 1)."""
    if not 0.0 < t <= 1.0:
        raise OutOfRange(f"tangle must lie in (0, 1], got {t}")
    p = (2.0 * math.sqrt(t) + 1.0) / 3.0
    return 1.0 - p * p


@dataclass(frozen=True)
class StatePoint:
    s_lin: float
    tangle: float
    fidelity: float
    m_chsh: float
    gate: Optional[object] = None

    def __post_init__(self):
        tol = 1e-9
        for name, hi in (("s_lin", 1.0), ("tangle", 1.0), ("fidelity", 1.0), ("m_chsh", 2.0)):
            v = getattr(self, name)
            if not -tol <= v <= hi + tol:
                raise OutOfRange(f"{name}={v} outside [0, {hi}]")

    @property
    def chsh_max(self) -> float:
        return 2.0 * math.sqrt(max(self.m_chsh, 0.0))

    def csv_row(self) -> list:
        t0 = getattr(self.gate, "t_g", float("nan"))
        dt = getattr(self.gate, "dt_g", float("nan"))
        return [t0, dt, self.s_lin, self.tangle, self.fidelity, self.m_chsh]


def state_point(rho, gate=None) -> StatePoint:
    return StatePoint(
        s_lin=linear_entropy(rho),
        tangle=tangle(rho),
        fidelity=fidelity_phi_plus(rho),
        m_chsh=chsh_parameter(rho),
        gate=gate,
    )


__all__ = [
    "DensityMatrix",
    "StatePoint",
    "chsh_parameter",
    "concurrence",
    "correlation",
    "correlation_matrix",
    "fidelity_from_correlations",
    "fidelity_phi_plus",
    "linear_entropy",
    "spin_flip_spectrum",
    "state_point",
    "tangle",
    "werner_curve",
    "werner_linear_entropy_for_tangle",
]
