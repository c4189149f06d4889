"""Time-gated biphoton density matrix of the XX -> X -> vacuum cascade.

Times are in ps, energies in ueV. Infinite lifetimes (``math.inf``) are legal
and translate to exactly zero rates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Literal, Tuple

import numpy as np

from .errors import ModelNonPhysical, NotPhysical, OutOfRange
from .qcore import DensityMatrix, PSD_TOL

HBAR_UEV_PS = 658.2119569  # ueV ps

OffdiagCoefficient = Literal["p", "p_squared_over_p_prime"]
PopulationWeight = Literal["whole_peak", "gate_resolved"]
GateScheme = Literal["whole_peak", "widening", "shifting"]


def _rate(tau: float) -> float:
    return 0.0 if math.isinf(tau) else 1.0 / tau


@dataclass(frozen=True)
class CascadeParams:
    fss_S: float
    tau_r: float
    tau_ss: float = math.inf
    tau_hv: float = math.inf
    d: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.fss_S) and self.fss_S >= 0):
            raise OutOfRange(f"fine-structure splitting must be finite and >= 0, got {self.fss_S}")
        if not (math.isfinite(self.tau_r) and self.tau_r > 0):
            raise OutOfRange(f"tau_r must be finite and > 0, got {self.tau_r}")
        for name in ("tau_ss", "tau_hv"):
            v = getattr(self, name)
            if math.isnan(v) or v <= 0:
                raise OutOfRange(f"{name} must be > 0, got {v}")
        if not 0.0 <= self.d <= 1.0:
            raise OutOfRange(f"background ratio d must lie in [0, 1], got {self.d}")

    @property
    def gamma0(self) -> float:
        """Decay rate of the co-polarized populations (1/ps)."""
        return 1.0 / self.tau_r + _rate(self.tau_ss)

    @property
    def gamma_c(self) -> complex:
        """Complex decay rate of the |HH><VV| coherence (1/ps)."""
        return self.gamma0 + _rate(self.tau_hv) - 1j * self.fss_S / HBAR_UEV_PS

    def p(self, k: float = 1.0) -> float:
        return k / (1.0 + self.tau_r * _rate(self.tau_ss))

    def p_prime(self, k: float = 1.0) -> float:
        return k / (1.0 + self.tau_r * _rate(self.tau_ss) + self.tau_r * _rate(self.tau_hv))

    def replace(self, **kw) -> "CascadeParams":
        d = dict(fss_S=self.fss_S, tau_r=self.tau_r, tau_ss=self.tau_ss, tau_hv=self.tau_hv, d=self.d)
        d.update(kw)
        return CascadeParams(**d)

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeParams":
        def t(key):
            v = d.get(key)
            return math.inf if v is None else float(v)

        try:
            return cls(
                fss_S=float(d["S_ueV"]),
                tau_r=float(d["tau_r_ps"]),
                tau_ss=t("tau_ss_ps"),
                tau_hv=t("tau_hv_ps"),
                d=float(d.get("d", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, OutOfRange):
                raise
            raise OutOfRange(f"invalid cascade parameters: {exc}") from exc

    def to_dict(self) -> dict:
        def t(v):
            return None if math.isinf(v) else v

        return {
            "S_ueV": self.fss_S,
            "tau_r_ps": self.tau_r,
            "tau_ss_ps": t(self.tau_ss),
            "tau_hv_ps": t(self.tau_hv),
            "d": self.d,
        }

    @classmethod
    def from_json(cls, s: str) -> "CascadeParams":
        return cls.from_dict(json.loads(s))


# parameters quoted for the measured dot
DOT_PARAMS = CascadeParams(fss_S=0.36, tau_r=560.0, tau_ss=2800.0, tau_hv=2300.0, d=0.008)
IDEAL_PARAMS = CascadeParams(fss_S=0.0, tau_r=560.0)


@dataclass(frozen=True)
class GateWindow:
    t_g: float
    dt_g: float
    scheme: str = "whole_peak"

    def __post_init__(self):
        if not (math.isfinite(self.t_g) and self.t_g >= 0):
            raise OutOfRange(f"gate start must be finite and >= 0, got {self.t_g}")
        if math.isnan(self.dt_g) or self.dt_g <= 0:
            raise OutOfRange(f"gate width must be > 0, got {self.dt_g}")
        if self.scheme not in ("whole_peak", "widening", "shifting"):
            raise OutOfRange(f"unknown gate scheme {self.scheme!r}")

    @property
    def t_end(self) -> float:
        return self.t_g + self.dt_g


def pure_state_at(t: float, params: CascadeParams) -> np.ndarray:
    """(|HH> + exp(i S t / hbar) |VV>) / sqrt(2)."""
    if t < 0:
        raise OutOfRange("dwell time must be >= 0")
    phase = params.fss_S * t / HBAR_UEV_PS
    return np.array([1.0, 0.0, 0.0, np.exp(1j * phase)], dtype=complex) / math.sqrt(2.0)


def _expm1(z: complex) -> complex:
    if isinstance(z, complex) and z.imag != 0.0:
        x, y = z.real, z.imag
        return complex(
            math.expm1(x) * math.cos(y) - 2.0 * math.sin(y / 2) ** 2,
            math.exp(x) * math.sin(y),
        )
    return math.expm1(float(z.real if isinstance(z, complex) else z))


def _window_integral(rate, t0: float, dt: float, tau_r: float):
    """(1/tau_r) * integral_{t0}^{t0+dt} exp(-rate t) dt, accurate for tiny dt."""
    head = np.exp(-rate * t0)
    if math.isinf(dt):
        return head / (tau_r * rate)
    # (e^{-r t0} - e^{-r (t0+dt)}) = -e^{-r t0} expm1(-r dt)
    return -head * _expm1(-rate * dt) / (tau_r * rate)


def i0_integral(gate: GateWindow, params: CascadeParams) -> float:
    return float(np.real(_window_integral(params.gamma0, gate.t_g, gate.dt_g, params.tau_r)))


def ic_integral(gate: GateWindow, params: CascadeParams) -> complex:
    g = params.gamma_c
    if g.imag == 0.0:
        return complex(_window_integral(g.real, gate.t_g, gate.dt_g, params.tau_r))
    return complex(_window_integral(g, gate.t_g, gate.dt_g, params.tau_r))


def signal_fraction(gate: GateWindow, params: CascadeParams) -> float:
    """Fraction of emitted pairs whose dwell time falls inside the gate."""
    return float(_window_integral(1.0 / params.tau_r, gate.t_g, gate.dt_g, params.tau_r))


def k_fraction(gate: GateWindow, params: CascadeParams) -> float:
    """Share of gated coincidences that stem from the dot.

    The background is a flat coincidence density d/tau_r per ps, measured in
    units of the dot's zero-delay coincidence density.
    """
    if params.d == 0.0:
        return 1.0
    sig = signal_fraction(gate, params)
    bg = params.d * gate.dt_g / params.tau_r
    if math.isinf(bg):
        return 0.0
    return sig / (sig + bg)


def correlated_weight(
    gate: GateWindow, params: CascadeParams, population_weight: PopulationWeight = "whole_peak"
) -> float:
    """Weight p of the correlated component in the gated state.

    ``whole_peak`` uses k/(1+tau_r/tau_ss) for every gate. ``gate_resolved``
    uses k*I0/Sig, the spin-scattering survival averaged over the gate itself;
    both agree on a gate covering the full decay.
    """
    k = k_fraction(gate, params)
    if population_weight == "whole_peak":
        return params.p(k)
    if population_weight == "gate_resolved":
        sig = signal_fraction(gate, params)
        if sig == 0.0:
            return 0.0
        return k * i0_integral(gate, params) / sig
    raise OutOfRange(f"unknown population weight {population_weight!r}")


def coherence_ratio(gate: GateWindow, params: CascadeParams) -> complex:
    """I_c / I_0 for the gate."""
    i0 = i0_integral(gate, params)
    if i0 == 0.0:
        # gate lies where both integrands underflow; use the asymptotic ratio
        return complex(np.exp(-(params.gamma_c - params.gamma0) * gate.t_g))
    return ic_integral(gate, params) / i0


def gated_matrix_array(
    gate: GateWindow,
    params: CascadeParams,
    offdiag_coefficient: OffdiagCoefficient = "p",
    population_weight: PopulationWeight = "whole_peak",
) -> np.ndarray:
    p = correlated_weight(gate, params, population_weight)
    if offdiag_coefficient == "p":
        c = p
    elif offdiag_coefficient == "p_squared_over_p_prime":
        k = k_fraction(gate, params)
        pp = params.p_prime(k) * (p / params.p(k) if k > 0 else 1.0)
        c = p * p / pp if pp > 0 else 0.0
    else:
        raise OutOfRange(f"unknown off-diagonal coefficient {offdiag_coefficient!r}")
    corner = 0.5 * c * coherence_ratio(gate, params)
    m = np.diag([(1 + p) / 4, (1 - p) / 4, (1 - p) / 4, (1 + p) / 4]).astype(complex)
    m[3, 0] = corner
    m[0, 3] = np.conj(corner)
    return m


def gated_density_matrix(
    gate: GateWindow,
    params: CascadeParams,
    offdiag_coefficient: OffdiagCoefficient = "p",
    population_weight: PopulationWeight = "whole_peak",
) -> DensityMatrix:
    """Gated biphoton state in the |HH>,|HV>,|VH>,|VV> basis.

    Diagonal ((1+p), (1-p), (1-p), (1+p))/4 and corner (c/2) I_c/I_0, with
    c = p (default) or c = p**2/p' (the coefficient implied by the zero-gate
    limit formulas).
    """
    m = gated_matrix_array(gate, params, offdiag_coefficient, population_weight)
    # X-shaped matrix: the only eigenvalue that can go negative is (1+p)/4 - |corner|
    lowest = m[0, 0].real - abs(m[3, 0])
    if lowest < -PSD_TOL:
        raise ModelNonPhysical(
            f"gated state has eigenvalue {lowest:.3e}; coefficient convention "
            f"{offdiag_coefficient!r} is inconsistent with these parameters"
        )
    try:
        return DensityMatrix(m)
    except NotPhysical as exc:
        raise ModelNonPhysical(str(exc)) from exc


def gate_sequence(scheme: str, dt_step: float, count: int) -> List[GateWindow]:
    if not dt_step > 0 or count < 1:
        raise OutOfRange("gate step must be > 0 and count >= 1")
    if scheme == "widening":
        return [GateWindow(0.0, n * dt_step, "widening") for n in range(1, count + 1)]
    if scheme == "shifting":
        return [GateWindow(n * dt_step, dt_step, "shifting") for n in range(count)]
    raise OutOfRange(f"unknown gate scheme {scheme!r}")


def zero_gate_limits(
    params: CascadeParams,
    offdiag_coefficient: OffdiagCoefficient = "p_squared_over_p_prime",
    k: float = 1.0,
) -> Tuple[float, float]:
    """(fidelity, linear entropy) of a vanishing gate at t=0.

    The default coefficient gives f = (1+p)/4 + p^2/(2p') and
    S_L = (-2p^4/p'^2 - p^2 + 3)/3; with ``"p"`` the Werner forms
    ((1+3p)/4, 1-p^2) come out. Under the flat-background mapping a vanishing
    gate has k = 1/(1+d), so pass that to compare against gated states with d > 0.
    """
    if not 0.0 < k <= 1.0:
        raise OutOfRange(f"k must lie in (0, 1], got {k}")
    p = params.p(k)
    if offdiag_coefficient == "p":
        pp = p
    elif offdiag_coefficient == "p_squared_over_p_prime":
        pp = params.p_prime(k)
    else:
        raise OutOfRange(f"unknown off-diagonal coefficient {offdiag_coefficient!r}")
    f = (1 + p) / 4 + p**2 / (2 * pp)
    s_lin = (-2 * p**4 / pp**2 - p**2 + 3) / 3
    return f, s_lin
