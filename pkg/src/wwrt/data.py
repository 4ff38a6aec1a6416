"""Observation containers shared by the simulator, the models and the I/O layer."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ObservationSet:
    """Wastewater replicates and/or weekly case counts on a day-offset clock.

    Wastewater rows are ``(time, replicate, concentration)`` with times in
    days since the epoch and concentrations in copies/mL. Case week ``u``
    (1-based) covers ``(week_length * (u - 1), week_length * u]``.
    """

    ww_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ww_replicate: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    ww_conc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    case_weeks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    case_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    case_tests: np.ndarray | None = None
    week_length: float = 7.0

    def __post_init__(self):
        t = _frozen(self.ww_times, float)
        rep = _frozen(self.ww_replicate, int)
        conc = _frozen(self.ww_conc, float)
        if not (t.shape == rep.shape == conc.shape) or t.ndim != 1:
            raise ValidationError("wastewater columns must be equal-length 1-D arrays")
        if np.any(~np.isfinite(conc)) or np.any(conc <= 0):
            raise ValidationError("wastewater concentrations must be positive and finite")
        if np.any(~np.isfinite(t)):
            raise ValidationError("wastewater times must be finite")
        if len(rep) and rep.min() < 1:
            raise ValidationError("replicate indices start at 1")
        order = np.lexsort((rep, t))
        if len(t) > 1:
            ts, rs = t[order], rep[order]
            dup = (np.diff(ts) == 0) & (np.diff(rs) == 0)
            if np.any(dup):
                i = int(np.argmax(dup))
                raise ValidationError(f"duplicate wastewater row at time {ts[i]} replicate {rs[i]}")
        object.__setattr__(self, "ww_times", _frozen(t[order], float))
        object.__setattr__(self, "ww_replicate", _frozen(rep[order], int))
        object.__setattr__(self, "ww_conc", _frozen(conc[order], float))

        weeks = _frozen(self.case_weeks, int)
        counts = np.asarray(self.case_counts)
        if weeks.shape != counts.shape or weeks.ndim != 1:
            raise ValidationError("case columns must be equal-length 1-D arrays")
        if np.any(counts < 0):
            raise ValidationError("case counts must be nonnegative")
        if len(weeks) and (weeks.min() < 1 or np.any(np.diff(np.sort(weeks)) != 1)):
            raise ValidationError("case weeks must be contiguous and start at 1 or later")
        order = np.argsort(weeks, kind="stable")
        object.__setattr__(self, "case_weeks", _frozen(weeks[order], int))
        object.__setattr__(self, "case_counts", _frozen(counts[order], float))
        if self.case_tests is not None:
            tests = np.asarray(self.case_tests, dtype=float)
            if tests.shape != weeks.shape or np.any(tests < 0):
                raise ValidationError("tests column must match weeks and be nonnegative")
            object.__setattr__(self, "case_tests", _frozen(tests[order], float))

    @property
    def has_wastewater(self) -> bool:
        return len(self.ww_times) > 0

    @property
    def has_cases(self) -> bool:
        return len(self.case_weeks) > 0

    @property
    def n_wastewater(self) -> int:
        return len(self.ww_times)

    def sample_times(self) -> np.ndarray:
        return np.unique(self.ww_times)

    def case_bin_edges(self) -> np.ndarray:
        """Left and right edges (days) of each case week."""
        u = self.case_weeks.astype(float)
        return np.stack([(u - 1) * self.week_length, u * self.week_length], axis=1)

    def replicate_subset(self, k: int) -> "ObservationSet":
        """Keep replicates 1..k at every sample time."""
        if k < 1:
            raise ValidationError("need at least one replicate")
        keep = self.ww_replicate <= k
        return replace(
            self,
            ww_times=self.ww_times[keep],
            ww_replicate=self.ww_replicate[keep],
            ww_conc=self.ww_conc[keep],
        )

    def replicate_means(self, k: int) -> "ObservationSet":
        """Replace replicates 1..k at each time by their arithmetic mean (replicate 1)."""
        sub = self.replicate_subset(k)
        times, inverse = np.unique(sub.ww_times, return_inverse=True)
        sums = np.bincount(inverse, weights=sub.ww_conc)
        counts = np.bincount(inverse)
        return replace(
            sub,
            ww_times=times,
            ww_replicate=np.ones(len(times), dtype=int),
            ww_conc=sums / counts,
        )

    def without_cases(self) -> "ObservationSet":
        return replace(self, case_weeks=np.zeros(0, dtype=int), case_counts=np.zeros(0), case_tests=None)

    def without_wastewater(self) -> "ObservationSet":
        return replace(self, ww_times=np.zeros(0), ww_replicate=np.zeros(0, dtype=int), ww_conc=np.zeros(0))

    def merge(self, other: "ObservationSet") -> "ObservationSet":
        """Wastewater from ``self`` combined with cases from ``other``."""
        return replace(
            self,
            case_weeks=other.case_weeks,
            case_counts=other.case_counts,
            case_tests=other.case_tests,
            week_length=other.week_length,
        )
