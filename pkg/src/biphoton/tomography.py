"""Maximum-likelihood two-qubit tomography from 36 analyzer configurations."""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import NonConvergence, OutOfRange
from .qcore import AXIS_BASES, LABELS, DensityMatrix, pauli_product, projector

CONFIGS: List[Tuple[str, str]] = list(itertools.product(LABELS, LABELS))
CONFIG_INDEX = {c: i for i, c in enumerate(CONFIGS)}
PROJECTORS = np.array([projector(a, b) for a, b in CONFIGS])  # (36, 4, 4)

# the 9 complete 4-outcome groups, one per pair of analyzer axes
GROUPS = {
    (ax1, ax2): [
        CONFIG_INDEX[(b1, b2)]
        for b1 in AXIS_BASES[ax1]
        for b2 in AXIS_BASES[ax2]
    ]
    for ax1 in "xyz"
    for ax2 in "xyz"
}

COUNT_FLOOR = 0.5  # counts; keeps the Gaussian weight finite for dark settings


class CoincidenceTable:
    """Coincidence counts for the full {H,V,D,A,R,L}^2 analyzer grid."""

    __slots__ = ("_counts",)

    def __init__(self, counts):
        if isinstance(counts, dict):
            arr = np.zeros(36)
            keys = {(str(a), str(b)) for a, b in counts}
            if keys != set(CONFIGS):
                raise OutOfRange("coincidence table needs exactly the 36 analyzer settings")
            for (a, b), n in counts.items():
                arr[CONFIG_INDEX[(str(a), str(b))]] = n
        else:
            arr = np.array(counts, dtype=float).reshape(-1)
            if arr.size != 36:
                raise OutOfRange(f"coincidence table needs 36 entries, got {arr.size}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise OutOfRange("counts must be finite and non-negative")
        if not np.any(arr > 0):
            raise OutOfRange("coincidence table is empty")
        arr.setflags(write=False)
        object.__setattr__(self, "_counts", arr)

    def __setattr__(self, name, value):
        raise AttributeError("CoincidenceTable is immutable")

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    def __getitem__(self, key) -> float:
        a, b = key
        return float(self._counts[CONFIG_INDEX[(str(a), str(b))]])

    def as_dict(self) -> Dict[Tuple[str, str], float]:
        return {c: float(n) for c, n in zip(CONFIGS, self._counts)}

    def group_totals(self) -> Dict[Tuple[str, str], float]:
        return {g: float(self._counts[idx].sum()) for g, idx in GROUPS.items()}

    def scaled(self, factor: float) -> "CoincidenceTable":
        return CoincidenceTable(self._counts * factor)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["basis_xx", "basis_x", "counts"])
        for (a, b), n in zip(CONFIGS, self._counts):
            w.writerow([a, b, int(n) if float(n).is_integer() else n])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CoincidenceTable":
        rows = [r for r in text.splitlines() if r.strip() and not r.startswith("#")]
        reader = csv.DictReader(rows)
        counts = {}
        for r in reader:
            key = (r["basis_xx"].strip(), r["basis_x"].strip())
            if key in counts:
                raise OutOfRange(f"duplicate row for {key}")
            counts[key] = float(r["counts"])
        return cls(counts)


def normalization(table: CoincidenceTable) -> float:
    """Mean total over the 9 complete projector groups."""
    return float(np.mean(list(table.group_totals().values())))


def expected_counts(rho, n_norm: float) -> np.ndarray:
    """n_norm * Tr(rho P) for the 36 settings, ordered as ``CONFIGS``."""
    if not n_norm > 0:
        raise OutOfRange("n_norm must be > 0")
    m = rho.mat if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    return n_norm * np.real(np.einsum("ij,kji->k", m, PROJECTORS))


def expected_table(rho, n_norm: float) -> CoincidenceTable:
    return CoincidenceTable(expected_counts(rho, n_norm))


# --- Cholesky-style parameterization: rho = T^dag T / Tr(T^dag T), T lower triangular

_LOWER = [(i, j) for i in range(4) for j in range(i)]  # 6 strictly-lower entries


def t_to_matrix(t: np.ndarray) -> np.ndarray:
    tm = np.zeros((4, 4), dtype=complex)
    tm[np.diag_indices(4)] = t[:4]
    for n, (i, j) in enumerate(_LOWER):
        tm[i, j] = t[4 + 2 * n] + 1j * t[5 + 2 * n]
    return tm


def rho_from_t(t: np.ndarray) -> np.ndarray:
    tm = t_to_matrix(np.asarray(t, dtype=float))
    a = tm.conj().T @ tm
    return a / np.real(np.trace(a))


def t_from_rho(rho, floor: float = 1e-12) -> np.ndarray:
    """Lower-triangular T with T^dag T = rho (rho regularized by ``floor`` I)."""
    m = rho.mat if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    m = 0.5 * (m + m.conj().T) + floor * np.eye(4)
    j = np.eye(4)[::-1]
    lo = np.linalg.cholesky(j @ m @ j)
    tm = j @ lo.conj().T @ j
    # make the diagonal real and positive
    ph = np.exp(-1j * np.angle(np.diag(tm)))
    tm = ph[:, None] * tm
    t = np.empty(16)
    t[:4] = np.real(np.diag(tm))
    for n, (i, k) in enumerate(_LOWER):
        t[4 + 2 * n] = tm[i, k].real
        t[5 + 2 * n] = tm[i, k].imag
    return t


def _objective_terms(nbar: np.ndarray, counts: np.ndarray):
    den = np.maximum(nbar, COUNT_FLOOR)
    diff = nbar - counts
    value = np.sum(diff * diff / (2 * den))
    grad = np.where(nbar > COUNT_FLOOR, diff / den - diff * diff / (2 * den * den), diff / den)
    return value, grad


def nll_objective(t, table: CoincidenceTable, n_norm: Optional[float] = None) -> float:
    """Gaussian-approximated Poisson negative log-likelihood."""
    if n_norm is None:
        n_norm = normalization(table)
    nbar = expected_counts(rho_from_t(np.asarray(t, dtype=float)), n_norm)
    return float(_objective_terms(nbar, table.counts)[0])


def _value_and_grad(t: np.ndarray, counts: np.ndarray, n_norm: float, scale: float):
    tm = t_to_matrix(t)
    a = tm.conj().T @ tm
    tr = np.real(np.trace(a))
    rho = a / tr
    nbar = n_norm * np.real(np.einsum("ij,kji->k", rho, PROJECTORS))
    value, dn = _objective_terms(nbar, counts)
    # dF/drho as a Hermitian matrix, then through the trace normalization
    g = n_norm * np.einsum("k,kij->ij", dn, PROJECTORS)
    h = (g - np.real(np.trace(g @ rho)) * np.eye(4)) / tr
    mgrad = (h @ tm.conj().T).T
    grad = np.empty(16)
    grad[:4] = 2 * np.real(np.diag(mgrad))
    for n, (i, j) in enumerate(_LOWER):
        grad[4 + 2 * n] = 2 * mgrad[i, j].real
        grad[5 + 2 * n] = -2 * mgrad[i, j].imag
    return value / scale, grad / scale


def linear_inversion_start(table: CoincidenceTable) -> DensityMatrix:
    """Stokes-parameter estimate clipped to the nearest physical state."""
    counts = table.counts
    stokes = np.zeros((4, 4))  # index 0 = identity, 1..3 = x, y, z
    stokes[0, 0] = 1.0
    axes = "xyz"
    # sign of each outcome within a group: (+,+), (+,-), (-,+), (-,-)
    s1 = np.array([1, 1, -1, -1])
    s2 = np.array([1, -1, 1, -1])
    partial1 = {a: [] for a in axes}
    partial2 = {a: [] for a in axes}
    for (ax1, ax2), idx in GROUPS.items():
        n = counts[idx]
        tot = n.sum()
        if tot <= 0:
            continue
        stokes[1 + axes.index(ax1), 1 + axes.index(ax2)] = np.dot(s1 * s2, n) / tot
        partial1[ax1].append(np.dot(s1, n) / tot)
        partial2[ax2].append(np.dot(s2, n) / tot)
    for a in axes:
        if partial1[a]:
            stokes[1 + axes.index(a), 0] = np.mean(partial1[a])
        if partial2[a]:
            stokes[0, 1 + axes.index(a)] = np.mean(partial2[a])
    labels = "ixyz"
    m = sum(
        stokes[i, j] * pauli_product(labels[i], labels[j]) for i in range(4) for j in range(4)
    ) / 4
    return DensityMatrix.nearest(m)


@dataclass
class FitReport:
    objective: float
    iterations: int
    evaluations: int
    converged: bool
    start: DensityMatrix
    restarts: int
    best_restart: int
    n_norm: float
    trace: List[float] = field(default_factory=list)
    assumptions: str = "all 36 settings integrated for equal durations"

    def to_dict(self) -> dict:
        return {
            "final_objective": self.objective,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "restarts": self.restarts,
            "best_restart": self.best_restart,
            "n_norm": self.n_norm,
            "linear_inversion_start": self.start.to_dict(),
            "assumptions": self.assumptions,
        }


def reconstruct(
    table: CoincidenceTable,
    restarts: int = 5,
    seed: int = 0,
    max_evaluations: int = 200_000,
    gtol: float = 1e-12,
    strict: bool = False,
) -> Tuple[DensityMatrix, FitReport]:
    """Maximum-likelihood density matrix for a coincidence table.

    The first run starts from the linear-inversion estimate; ``restarts``
    further runs start from seeded random perturbations of it. The lowest
    objective wins, ties going to the earliest run.
    """
    n_norm = normalization(table)
    counts = table.counts
    scale = max(n_norm, 1.0)
    start = linear_inversion_start(table)
    t0 = t_from_rho(start, floor=1e-6)
    rng = np.random.default_rng(seed)

    starts = [t0]
    for _ in range(restarts):
        starts.append(t0 + rng.normal(scale=0.1, size=16) * np.abs(t0).max())

    budget = max_evaluations
    best = None
    total_iters = 0
    total_evals = 0
    for n, ts in enumerate(starts):
        if budget <= 0:
            break
        trace: List[float] = []

        def fun(x):
            return _value_and_grad(x, counts, n_norm, scale)

        res = minimize(
            fun,
            ts,
            jac=True,
            method="L-BFGS-B",
            callback=lambda xk: trace.append(fun(xk)[0] * scale),
            options={"maxfun": budget, "maxiter": 20_000, "gtol": gtol, "ftol": 1e-15, "maxcor": 30},
        )
        budget -= res.nfev
        total_iters += res.nit
        total_evals += res.nfev
        value = float(res.fun * scale)
        ok = bool(res.success) or _stalled_at_optimum(res)
        if best is None or value < best[0] - 1e-12 * max(1.0, abs(best[0])):
            best = (value, res.x, ok, n, trace)
    value, x, ok, idx, trace = best
    rho = DensityMatrix(rho_from_t(x))
    report = FitReport(
        objective=value,
        iterations=total_iters,
        evaluations=total_evals,
        converged=ok,
        start=start,
        restarts=restarts,
        best_restart=idx,
        n_norm=n_norm,
        trace=trace,
    )
    if strict and not ok:
        raise NonConvergence("tomography did not converge", result=(rho, report))
    return rho, report


def _stalled_at_optimum(res) -> bool:
    # L-BFGS-B reports ABNORMAL line searches when the objective is flat to
    # machine precision; that is a converged fit, not a failure.
    msg = str(getattr(res, "message", ""))
    return "ABNORMAL" in msg and np.max(np.abs(res.jac)) < 1e-6


def table_correlations(table: CoincidenceTable) -> Tuple[float, float, float]:
    """(C_H/V, C_D/A, C_R/L) straight from the counts."""
    out = []
    for ax, flip in (("z", 1.0), ("x", 1.0), ("y", -1.0)):
        n = table.counts[GROUPS[(ax, ax)]]
        tot = n.sum()
        c = 0.0 if tot == 0 else (n[0] - n[1] - n[2] + n[3]) / tot
        out.append(float(flip * c))
    return tuple(out)
