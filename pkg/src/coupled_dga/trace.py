"""Per-round metric traces and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ("round", "feas_sq", "opt_sq", "consensus_sq", "dist_sq", "delta_h_omega_sq", "wall_time_s")
METRIC_COLUMNS = ("feas_sq", "opt_sq", "consensus_sq", "dist_sq", "delta_h_omega_sq", "gap_omega_sq", "wall_time_s")


@dataclass
class IterationTrace:
    """Metrics for rounds ``0..K``; row ``k`` describes ``h^k``.

    ``opt_sq[k]`` is ``||x^k - x^{k-1}||^2`` and ``delta_h_omega_sq[k]`` is
    ``||h^k - h^{k-1}||_Omega^2``; both are NaN at round 0. ``wall_time_s``
    accumulates compute-phase time only.
    """

    variant: str = "dga"
    rounds: list[int] = field(default_factory=list)
    feas_sq: list[float] = field(default_factory=list)
    opt_sq: list[float] = field(default_factory=list)
    consensus_sq: list[float] = field(default_factory=list)
    dist_sq: list[float] = field(default_factory=list)
    delta_h_omega_sq: list[float] = field(default_factory=list)
    gap_omega_sq: list[float] = field(default_factory=list)
    wall_time_s: list[float] = field(default_factory=list)
    history: list | None = None
    status: str = "running"
    message: str = ""
    final_state: object = None

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def completed_rounds(self) -> int:
        return self.rounds[-1] if self.rounds else 0

    def column(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def append(self, **row) -> None:
        self.rounds.append(int(row.pop("round")))
        for name in METRIC_COLUMNS:
            getattr(self, name).append(float(row.pop(name, math.nan)))
        if row:
            raise TypeError(f"unknown trace fields {sorted(row)}")

    def to_csv(self, target=None, timing: bool = True) -> str:
        """Write the CSV trace; with ``timing=False`` the time column is left blank."""

        def fmt(v: float) -> str:
            return "" if math.isnan(v) else repr(float(v))

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in range(len(self)):
            w.writerow([
                self.rounds[k],
                fmt(self.feas_sq[k]),
                fmt(self.opt_sq[k]),
                fmt(self.consensus_sq[k]),
                fmt(self.dist_sq[k]),
                fmt(self.delta_h_omega_sq[k]),
                fmt(self.wall_time_s[k]) if timing else "",
            ])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        last = -1
        return {
            "variant": self.variant,
            "status": self.status,
            "message": self.message,
            "rounds": self.completed_rounds,
            **{
                name: (None if math.isnan(getattr(self, name)[last]) else getattr(self, name)[last])
                for name in METRIC_COLUMNS
            },
        }
