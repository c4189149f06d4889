"""Recover (S, tau_HV, d) from gated state points with tau_r, tau_ss held fixed."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .cascade import (
    CascadeParams,
    GateWindow,
    coherence_ratio,
    correlated_weight,
    k_fraction,
)
from .errors import ModelNonPhysical, NonConvergence, OutOfRange
from .measures import StatePoint

S_BOUNDS = (0.0, 5.0)  # ueV
TAU_HV_BOUNDS = (100.0, 100_000.0)  # ps, plus infinity
D_BOUNDS = (0.0, 0.2)

# optimizer coordinates: S/S_max, rate_hv*tau_min, d/d_max, all in [0, 1];
# rate 0 means tau_HV = infinity
_RATE_MAX = 1.0 / TAU_HV_BOUNDS[0]
_RATE_MIN = 1.0 / TAU_HV_BOUNDS[1]


@dataclass
class FitProblem:
    observations: Sequence[StatePoint]
    tau_r: float
    tau_ss: float
    weights: Optional[Sequence[float]] = None
    fix_d: Optional[float] = None
    offdiag_coefficient: str = "p"
    population_weight: str = "whole_peak"

    def __post_init__(self):
        if len(self.observations) < 3:
            raise OutOfRange("a fit needs at least 3 observations")
        for ob in self.observations:
            if not isinstance(ob.gate, GateWindow):
                raise OutOfRange("every observation must carry its gate window")
        if not (math.isfinite(self.tau_r) and self.tau_r > 0):
            raise OutOfRange("tau_r must be finite and positive")
        if math.isnan(self.tau_ss) or self.tau_ss <= 0:
            raise OutOfRange("tau_ss must be positive")
        if self.weights is not None and len(self.weights) != len(self.observations):
            raise OutOfRange("one weight per observation")
        if self.fix_d is not None and not D_BOUNDS[0] <= self.fix_d <= D_BOUNDS[1]:
            raise OutOfRange("fixed d outside its bounds")

    def params(self, s: float, tau_hv: float, d: float) -> CascadeParams:
        return CascadeParams(fss_S=s, tau_r=self.tau_r, tau_ss=self.tau_ss, tau_hv=tau_hv, d=d)


@dataclass
class FitResult:
    s_hat: float
    tau_hv_hat: float
    d_hat: float
    objective: float
    uncertainty: Tuple[float, float, float]
    converged: bool
    evaluations: int = 0
    restarts: List[float] = field(default_factory=list)
    note: str = "residuals on (S_L, T, f) summaries; uncertainties are curvature-based 1-sigma"

    def to_dict(self) -> dict:
        def inf_none(v):
            return None if math.isinf(v) else v

        return {
            "S_ueV": self.s_hat,
            "tau_hv_ps": inf_none(self.tau_hv_hat),
            "d": self.d_hat,
            "objective": self.objective,
            "sigma_S_ueV": self.uncertainty[0],
            "sigma_tau_hv_ps": inf_none(float(self.uncertainty[1])),
            "sigma_d": self.uncertainty[2],
            "converged": self.converged,
            "evaluations": self.evaluations,
            "restart_objectives": self.restarts,
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def predicted_point(
    gate: GateWindow,
    params: CascadeParams,
    offdiag_coefficient: str = "p",
    population_weight: str = "whole_peak",
) -> Tuple[float, float, float]:
    """Closed-form (S_L, T, f) of the gated X-shaped model state."""
    p = correlated_weight(gate, params, population_weight)
    if offdiag_coefficient == "p":
        c = p
    else:
        k = k_fraction(gate, params)
        pp = params.p_prime(k) * (p / params.p(k) if k > 0 else 1.0)
        c = p * p / pp if pp > 0 else 0.0
    corner = 0.5 * c * coherence_ratio(gate, params)
    a, b = (1 + p) / 4, (1 - p) / 4
    if a - abs(corner) < -1e-9:
        raise ModelNonPhysical("model state is not positive semidefinite")
    purity = 2 * a * a + 2 * b * b + 2 * abs(corner) ** 2
    s_lin = 4.0 / 3.0 * (1.0 - purity)
    tangle = (2.0 * max(0.0, abs(corner) - b)) ** 2
    fidelity = a + corner.real
    return s_lin, tangle, fidelity


def _theta_from_x(x) -> Tuple[float, float, float]:
    s = x[0] * S_BOUNDS[1]
    rate = x[1] * _RATE_MAX
    tau = math.inf if rate <= 0 else 1.0 / rate
    d = x[2] * D_BOUNDS[1]
    return s, tau, d


def _x_from_theta(s, tau_hv, d) -> np.ndarray:
    rate = 0.0 if math.isinf(tau_hv) else 1.0 / tau_hv
    return np.array([s / S_BOUNDS[1], rate / _RATE_MAX, d / D_BOUNDS[1]])


def fit_objective(theta: Tuple[float, float, float], problem: FitProblem) -> float:
    s, tau_hv, d = theta
    if not (S_BOUNDS[0] <= s <= S_BOUNDS[1] and D_BOUNDS[0] <= d <= D_BOUNDS[1]):
        raise OutOfRange("theta outside bounds")
    if not (math.isinf(tau_hv) or TAU_HV_BOUNDS[0] - 1e-9 <= tau_hv):
        raise OutOfRange("tau_HV outside bounds")
    params = problem.params(s, tau_hv, d)
    w = problem.weights if problem.weights is not None else [1.0] * len(problem.observations)
    total = 0.0
    for wi, ob in zip(w, problem.observations):
        sl, t, f = predicted_point(
            ob.gate, params, problem.offdiag_coefficient, problem.population_weight
        )
        total += wi * ((sl - ob.s_lin) ** 2 + (t - ob.tangle) ** 2 + (f - ob.fidelity) ** 2)
    return total


def _penalized(x, problem: FitProblem) -> float:
    x = np.clip(x, 0.0, 1.0)
    if problem.fix_d is not None:
        x = x.copy()
        x[2] = problem.fix_d / D_BOUNDS[1]
    try:
        return fit_objective(_theta_from_x(x), problem)
    except ModelNonPhysical:
        return 1e6


def _curvature_sigma(x: np.ndarray, problem: FitProblem, n_free: int) -> Tuple[float, float, float]:
    f0 = _penalized(x, problem)
    n_res = 3 * len(problem.observations)
    resid_var = f0 / max(n_res - n_free, 1)
    scales = (S_BOUNDS[1], _RATE_MAX, D_BOUNDS[1])
    sig = []
    for ax in range(3):
        if ax == 2 and problem.fix_d is not None:
            sig.append(0.0)
            continue
        h = 2e-3
        centre = min(max(x[ax], 2 * h), 1 - 2 * h)
        offs = np.arange(-2, 3) * h
        vals = []
        for o in offs:
            xx = x.copy()
            xx[ax] = centre + o
            vals.append(_penalized(xx, problem))
        a = np.polyfit(offs + centre - x[ax], vals, 2)[0]
        if a <= 0:
            sig.append(math.inf)
            continue
        # objective ~ f0 + a dx^2; one sigma where the rise equals the residual variance
        sig.append(math.sqrt(resid_var / a))
    s_sig = sig[0] * scales[0]
    rate = x[1] * _RATE_MAX
    rate_sig = sig[1] * scales[1]
    tau_sig = math.inf if rate <= 0 else rate_sig / rate**2
    return s_sig, tau_sig, sig[2] * scales[2]


def fit(
    problem: FitProblem,
    restarts: int = 10,
    seed: int = 0,
    max_evaluations: int = 200_000,
    strict: bool = False,
) -> FitResult:
    """Bounded simplex descent from a seeded Latin-hypercube set of starts."""
    starts = qmc.LatinHypercube(d=3, seed=seed).random(restarts)
    bounds = [(0.0, 1.0)] * 3
    best = None
    evals = 0
    history = []
    converged_any = False
    per_run = max(max_evaluations // max(restarts, 1), 100)
    for x0 in starts:
        if problem.fix_d is not None:
            x0 = x0.copy()
            x0[2] = problem.fix_d / D_BOUNDS[1]
        res = minimize(
            _penalized,
            x0,
            args=(problem,),
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-9, "fatol": 1e-15, "maxfev": per_run, "adaptive": True},
        )
        # restart once from the optimum to shake out simplex collapse
        res2 = minimize(
            _penalized,
            res.x,
            args=(problem,),
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-10, "fatol": 1e-17, "maxfev": min(per_run, 3000), "adaptive": True},
        )
        evals += res.nfev + res2.nfev
        history.append(float(res2.fun))
        ok = bool(res.success or res2.success)
        converged_any |= ok
        if best is None or res2.fun < best[0]:
            best = (float(res2.fun), np.clip(res2.x, 0.0, 1.0), ok)
    value, x, ok = best
    if problem.fix_d is not None:
        x[2] = problem.fix_d / D_BOUNDS[1]
    x, value = _snap_tau_hv(x, value, problem)
    s, tau, d = (float(v) for v in _theta_from_x(x))
    n_free = 2 if problem.fix_d is not None else 3
    result = FitResult(
        s_hat=s,
        tau_hv_hat=tau,
        d_hat=d,
        objective=value,
        uncertainty=_curvature_sigma(x, problem, n_free),
        converged=ok,
        evaluations=evals,
        restarts=history,
    )
    if strict and not ok:
        raise NonConvergence("parameter fit did not converge", result=result)
    return result


def _snap_tau_hv(x: np.ndarray, value: float, problem: FitProblem):
    """Keep tau_HV inside [100 ps, 100 ns] or exactly infinite."""
    rate = x[1] * _RATE_MAX
    if rate == 0.0 or rate >= _RATE_MIN:
        return x, value
    candidates = []
    for r in (0.0, _RATE_MIN):
        xx = x.copy()
        xx[1] = r / _RATE_MAX
        candidates.append((_penalized(xx, problem), r, xx))
    v, _, xx = min(candidates, key=lambda c: (c[0], c[1]))
    return xx, v


def synthetic_observations(
    params: CascadeParams,
    gates: Sequence[GateWindow],
    offdiag_coefficient: str = "p",
    population_weight: str = "whole_peak",
) -> List[StatePoint]:
    """Noiseless model state points, one per gate."""
    from .cascade import gated_density_matrix
    from .measures import state_point

    return [
        state_point(gated_density_matrix(g, params, offdiag_coefficient, population_weight), g)
        for g in gates
    ]
