"""File helpers: atomic writes, provenance headers and state-point CSVs."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import numbers
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from .cascade import GateWindow
from .errors import OutOfRange
from .measures import STATE_POINT_FIELDS, StatePoint


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_of(data) -> str:
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    command: str
    inputs: Sequence[str] = ()
    outputs: Sequence[str] = ()
    config_hash: str = ""
    seed: Optional[int] = None
    version: str = ""
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "config_sha256": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "timestamp": self.timestamp,
        }

    def header(self) -> str:
        """'#'-prefixed lines; the timestamp line is always last."""
        d = self.as_dict()
        lines = [f"# {k}: {json.dumps(v)}" for k, v in d.items() if k != "timestamp"]
        lines.append(f"# timestamp: {self.timestamp}")
        return "\n".join(lines) + "\n"


def strip_comments(text: str) -> str:
    return "\n".join(l for l in text.splitlines() if not l.startswith("#")) + "\n"


def _fmt(v) -> str:
    if isinstance(v, numbers.Real) and not isinstance(v, (bool, int)):
        v = float(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


def state_points_csv(points: Iterable[StatePoint], extra: Optional[dict] = None) -> str:
    """CSV body for state points; ``extra`` maps column name -> per-row values."""
    points = list(points)
    extra = extra or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(STATE_POINT_FIELDS) + list(extra))
    for i, sp in enumerate(points):
        w.writerow([_fmt(float(v)) for v in sp.csv_row()] + [_fmt(col[i]) for col in extra.values()])
    return buf.getvalue()


def read_state_points(text: str, prefer_count_fidelity: bool = True) -> List[StatePoint]:
    lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(STATE_POINT_FIELDS) - set(reader.fieldnames or [])
    if missing:
        raise OutOfRange(f"state-point CSV lacks columns {sorted(missing)}")
    out = []
    for row in reader:
        f = row["fidelity"]
        if prefer_count_fidelity and row.get("fidelity_corr") not in (None, "", "nan"):
            f = row["fidelity_corr"]
        t0, dt = float(row["gate_t0_ps"]), float(row["gate_dt_ps"])
        gate = None if math.isnan(t0) or math.isnan(dt) else GateWindow(t0, dt, row.get("scheme") or "whole_peak")
        out.append(
            StatePoint(
                s_lin=float(row["s_lin"]),
                tangle=float(row["tangle"]),
                fidelity=float(f),
                m_chsh=float(row["m_chsh"]),
                gate=gate,
            )
        )
    return out
