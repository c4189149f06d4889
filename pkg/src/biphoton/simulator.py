"""Monte Carlo coincidence histograms for the 36 analyzer settings.

Each setting draws its own emitted pairs from an independent stream,
``SeedSequence(seed, spawn_key=(index,))``, so a histogram does not depend on
the order in which settings are simulated.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cascade import HBAR_UEV_PS, CascadeParams, GateWindow
from .errors import EmptyHistogram, Misaligned, OutOfRange
from .measures import fidelity_from_correlations
from .qcore import _KETS
from .tomography import CONFIG_INDEX, CONFIGS, CoincidenceTable, table_correlations

log = logging.getLogger(__name__)

ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    params: CascadeParams
    n_pairs: int
    bin_width: float = 64.0
    window: float = 3072.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_pairs) != self.n_pairs or self.n_pairs < 1:
            raise OutOfRange("n_pairs must be a positive integer")
        if not (self.bin_width > 0 and self.window > 0):
            raise OutOfRange("bin width and window must be positive")
        ratio = self.window / self.bin_width
        if abs(ratio - round(ratio)) > ALIGN_TOL:
            raise OutOfRange("bin width must divide the histogram window")
        if not 0 <= self.seed < 2**64:
            raise OutOfRange("seed must be an unsigned 64-bit integer")

    @property
    def n_bins(self) -> int:
        return int(round(self.window / self.bin_width))

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "n_pairs": int(self.n_pairs),
            "bin_width_ps": self.bin_width,
            "window_ps": self.window,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        try:
            return cls(
                params=CascadeParams.from_dict(d["params"]),
                n_pairs=int(d["n_pairs"]),
                bin_width=float(d.get("bin_width_ps", 64.0)),
                window=float(d.get("window_ps", 3072.0)),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, OutOfRange):
                raise
            raise OutOfRange(f"invalid simulation config: {exc}") from exc

    @classmethod
    def from_json(cls, s: str) -> "SimConfig":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class TdcHistogram:
    """Coincidence counts versus XX-X delay; row ``i`` is setting ``CONFIGS[i]``."""

    counts: np.ndarray  # (36, n_bins)
    bin_width: float

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != 36:
            raise OutOfRange("histogram needs 36 rows")
        if np.any(c < 0):
            raise OutOfRange("histogram bins must be non-negative")

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def window(self) -> float:
        return self.n_bins * self.bin_width

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width

    def shifted(self, bins: int) -> "TdcHistogram":
        """Delay every count by ``bins`` bins, dropping what falls off the end."""
        out = np.zeros_like(self.counts)
        if bins < self.n_bins:
            out[:, bins:] = self.counts[:, : self.n_bins - bins]
        return TdcHistogram(out, self.bin_width)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["basis_xx", "basis_x", "bin_start_ps", "counts"])
        starts = self.bin_starts
        for (a, b), row in zip(CONFIGS, self.counts):
            for s, n in zip(starts, row):
                w.writerow([a, b, _fmt_num(s), int(n)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TdcHistogram":
        lines = [r for r in text.splitlines() if r.strip() and not r.startswith("#")]
        rows = list(csv.DictReader(lines))
        if not rows:
            raise OutOfRange("histogram file has no data rows")
        starts = sorted({float(r["bin_start_ps"]) for r in rows})
        if len(starts) < 1:
            raise OutOfRange("histogram file has no bins")
        width = starts[1] - starts[0] if len(starts) > 1 else float(rows[0].get("bin_width_ps", 64.0))
        n_bins = len(starts)
        for i, s in enumerate(starts):
            if abs(s - i * width) > ALIGN_TOL * max(1.0, width):
                raise OutOfRange("histogram bins must be contiguous from 0")
        counts = np.zeros((36, n_bins), dtype=np.int64)
        seen = np.zeros((36, n_bins), dtype=bool)
        for r in rows:
            key = (r["basis_xx"].strip(), r["basis_x"].strip())
            if key not in CONFIG_INDEX:
                raise OutOfRange(f"unknown analyzer setting {key}")
            i = CONFIG_INDEX[key]
            j = int(round(float(r["bin_start_ps"]) / width))
            counts[i, j] = int(r["counts"])
            seen[i, j] = True
        if not seen.all():
            raise OutOfRange("histogram file is missing rows")
        return cls(counts, width)


def _fmt_num(x: float):
    return int(x) if float(x).is_integer() else x


def config_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _amplitudes(config: Tuple[str, str]) -> Tuple[complex, complex]:
    """<b1 b2|HH> and <b1 b2|VV>."""
    k1, k2 = _KETS[config[0]], _KETS[config[1]]
    return complex(np.conj(k1[0] * k2[0])), complex(np.conj(k1[1] * k2[1]))


def sample_events(cfg: SimConfig, config) -> np.ndarray:
    """Delay histogram (length ``cfg.n_bins``) for one analyzer setting.

    Per emitted pair: the dwell time is exponential in tau_r; the pair is
    replaced by an unpolarized one with probability 1 - exp(-t/tau_ss),
    otherwise its HH/VV coherence is erased with probability
    1 - exp(-t/tau_hv); a click is then a Bernoulli draw with the projection
    probability. A flat unpolarized background of d/tau_r per ps (in units of
    n_pairs, shared over the four outcomes of an analyzer pair) is added.
    """
    config = (str(config[0]), str(config[1]))
    index = CONFIG_INDEX[config]
    p = cfg.params
    rng = config_rng(cfg.seed, index)
    n = int(cfg.n_pairs)

    t = rng.exponential(p.tau_r, size=n)
    u_ss = rng.random(n)
    u_hv = rng.random(n)
    u_click = rng.random(n)

    a_hh, a_vv = _amplitudes(config)
    scattered = u_ss < -np.expm1(-t / p.tau_ss)
    dephased = ~scattered & (u_hv < -np.expm1(-t / p.tau_hv))
    coherent = ~scattered & ~dephased

    prob = np.full(n, 0.25)
    prob[dephased] = 0.5 * (abs(a_hh) ** 2 + abs(a_vv) ** 2)
    phase = np.exp(1j * p.fss_S * t[coherent] / HBAR_UEV_PS)
    prob[coherent] = 0.5 * np.abs(a_hh + phase * a_vv) ** 2

    clicked = (u_click < prob) & (t < cfg.window)
    bins = np.floor(t[clicked] / cfg.bin_width).astype(np.int64)
    hist = np.bincount(bins, minlength=cfg.n_bins)[: cfg.n_bins]

    if p.d > 0:
        mean_bg = n * p.d / (4.0 * p.tau_r) * cfg.window
        n_bg = rng.poisson(mean_bg)
        t_bg = rng.random(n_bg) * cfg.window
        hist = hist + np.bincount(
            np.floor(t_bg / cfg.bin_width).astype(np.int64), minlength=cfg.n_bins
        )[: cfg.n_bins]
    return hist.astype(np.int64)


def simulate_histogram(cfg: SimConfig) -> TdcHistogram:
    rows = [sample_events(cfg, c) for c in CONFIGS]
    return TdcHistogram(np.array(rows, dtype=np.int64), cfg.bin_width)


def _bin_index(edge: float, width: float) -> int:
    x = edge / width
    j = round(x)
    if abs(x - j) > ALIGN_TOL * max(1.0, abs(x)):
        raise Misaligned(f"gate edge {edge} ps is not on a {width} ps bin boundary")
    return int(j)


def gate_counts(h: TdcHistogram, gate: GateWindow) -> CoincidenceTable:
    """Sum the bins whose centres lie in [t_g, t_g + dt_g)."""
    if math.isinf(gate.dt_g):
        raise Misaligned("gate must end on a bin boundary")
    lo = _bin_index(gate.t_g, h.bin_width)
    hi = _bin_index(gate.t_end, h.bin_width)
    if hi > h.n_bins:
        raise Misaligned(f"gate end {gate.t_end} ps lies beyond the {h.window} ps histogram")
    return CoincidenceTable(np.asarray(h.counts)[:, lo:hi].sum(axis=1))


def simulate_experiment(
    cfg: SimConfig, gates: Sequence[GateWindow], histogram: Optional[TdcHistogram] = None
) -> List[Tuple[GateWindow, Optional[CoincidenceTable]]]:
    """One simulated histogram set, integrated over every gate.

    Gates that collect no coincidences at all yield ``None``.
    """
    h = simulate_histogram(cfg) if histogram is None else histogram
    out = []
    for g in gates:
        try:
            out.append((g, gate_counts(h, g)))
        except OutOfRange as exc:
            if isinstance(exc, Misaligned):
                raise
            log.warning("gate [%g, %g] ps collected no coincidences", g.t_g, g.t_end)
            out.append((g, None))
    return out


def find_time_origin(h: TdcHistogram) -> float:
    """Start of the single bin with the highest |Phi+> fidelity (earliest on ties)."""
    counts = np.asarray(h.counts)
    if not np.any(counts > 0):
        raise EmptyHistogram("histogram has no counts")
    best_f = -math.inf
    best = 0
    for j in range(h.n_bins):
        col = counts[:, j]
        if not np.any(col > 0):
            continue
        f = fidelity_from_correlations(*table_correlations(CoincidenceTable(col)))
        if f > best_f + 1e-12:
            best_f, best = f, j
    return float(best * h.bin_width)
