"""Reading and writing delimited tables, run configuration and the LA recipe.

Every table written here starts with one provenance comment line::

    # wwrt version=<v> seed=<seed> config=sha256:<hex>

Parsers skip lines starting with ``#``. Dates are ISO ``YYYY-MM-DD`` on
disk and integer day offsets from a configurable epoch in memory.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bayes.model import MODEL_VARIANTS
from .bayes.priors import NAMED_PROFILES, Normal, PriorSpec
from .data import ObservationSet
from .errors import ValidationError

# ----------------------------------------------------------------- provenance


def config_hash(config) -> str:
    """sha256 of the canonical JSON form of ``config`` (a dict or dataclass)."""
    if hasattr(config, "__dataclass_fields__"):
        config = asdict(config)
    text = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def provenance_line(seed=None, config=None) -> str:
    digest = config_hash(config if config is not None else {})
    return f"# wwrt version={__version__} seed={'none' if seed is None else seed} config=sha256:{digest}\n"


def write_table(path, header, rows, *, seed=None, config=None) -> None:
    """Write a comma-separated table with the provenance line first."""
    buf = io.StringIO()
    buf.write(provenance_line(seed, config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "NA"
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def read_table(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Header and ``(line_number, fields)`` rows, skipping comments and blank lines."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    header = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        values = next(csv.reader([line]))
        values = [v.strip() for v in values]
        if header is None:
            header = [v.lower() for v in values]
            continue
        if len(values) != len(header):
            raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, found {len(values)}")
        rows.append((lineno, values))
    if header is None:
        raise ValidationError(f"{path}: no header line")
    return header, rows


def _date(text, where) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ValidationError(f"{where}: invalid ISO date {text!r}") from None


def _number(text, where, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise ValidationError(f"{where}: not a number: {text!r}") from None
    if kind is float and not math.isfinite(value):
        raise ValidationError(f"{where}: value must be finite")
    return value


def day_offset(date: dt.date, epoch: dt.date) -> int:
    return (date - epoch).days


def offset_date(offset: float, epoch: dt.date) -> dt.date:
    if float(offset) != int(offset):
        raise ValidationError("only whole-day times can be written as dates")
    return epoch + dt.timedelta(days=int(offset))


# ---------------------------------------------------------------- wastewater

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f", ""}


def parse_wastewater(path, epoch: dt.date | str | None = None) -> tuple[ObservationSet, dt.date]:
    """Read ``date,replicate,concentration[,exclude]`` rows.

    Returns the observations and the epoch used. By default the epoch is the
    day before the first sample, so the first sample is at day 1. Rows with
    a true ``exclude`` flag are dropped.
    """
    header, rows = read_table(path)
    need = ["date", "replicate", "concentration"]
    if header[:3] != need or len(header) > 4 or (len(header) == 4 and header[3] != "exclude"):
        raise ValidationError(f"{path}: header must be date,replicate,concentration[,exclude]")
    dates, reps, conc = [], [], []
    seen = {}
    for lineno, v in rows:
        where = f"{path}:{lineno}"
        if len(v) == 4:
            flag = v[3].lower()
            if flag not in _TRUE | _FALSE:
                raise ValidationError(f"{where}: exclude must be true/false, got {v[3]!r}")
            if flag in _TRUE:
                continue
        d = _date(v[0], where)
        r = _number(v[1], where, int)
        c = _number(v[2], where)
        if r < 1:
            raise ValidationError(f"{where}: replicate numbers start at 1")
        if c <= 0:
            raise ValidationError(f"{where}: concentration must be positive, got {v[2]}")
        if (d, r) in seen:
            raise ValidationError(f"{where}: duplicate date and replicate (first at line {seen[(d, r)]})")
        seen[(d, r)] = lineno
        dates.append(d)
        reps.append(r)
        conc.append(c)
    if not dates:
        raise ValidationError(f"{path}: no wastewater rows")
    epoch = _epoch(epoch, min(dates))
    times = [day_offset(d, epoch) for d in dates]
    return ObservationSet(ww_times=times, ww_replicate=reps, ww_conc=conc), epoch


def _epoch(epoch, first: dt.date) -> dt.date:
    if epoch is None:
        return first - dt.timedelta(days=1)
    return _date(epoch, "epoch") if isinstance(epoch, str) else epoch


def write_wastewater(path, obs: ObservationSet, epoch: dt.date, *, seed=None, config=None) -> None:
    rows = [
        (offset_date(t, epoch).isoformat(), int(r), float(c))
        for t, r, c in zip(obs.ww_times, obs.ww_replicate, obs.ww_conc)
    ]
    write_table(path, ["date", "replicate", "concentration"], rows, seed=seed, config=config)


# --------------------------------------------------------------------- cases


def parse_cases(path, epoch: dt.date | str | None = None, scale: float = 1.0) -> tuple[ObservationSet, dt.date]:
    """Read ``week_start,cases[,tests]`` rows into weekly bins.

    Week ``u`` covers days ``(7(u - 1), 7u]`` after the epoch, so a week
    starting on date ``d`` is week ``(d - epoch - 1) / 7 + 1``. By default
    the epoch is the day before the first week start. Counts are multiplied
    by ``scale`` and rounded to whole cases.
    """
    if not 0 < scale:
        raise ValidationError("case scale must be positive")
    header, rows = read_table(path)
    if header[:2] != ["week_start", "cases"] or len(header) > 3 or (len(header) == 3 and header[2] != "tests"):
        raise ValidationError(f"{path}: header must be week_start,cases[,tests]")
    starts, counts, tests = [], [], []
    for lineno, v in rows:
        where = f"{path}:{lineno}"
        starts.append(_date(v[0], where))
        c = _number(v[1], where)
        if c < 0:
            raise ValidationError(f"{where}: case counts must be nonnegative")
        counts.append(c)
        if len(v) == 3:
            t = _number(v[2], where)
            if t < 0:
                raise ValidationError(f"{where}: test counts must be nonnegative")
            tests.append(t)
    if not starts:
        raise ValidationError(f"{path}: no case rows")
    order = np.argsort(starts, kind="stable")
    starts = [starts[i] for i in order]
    for a, b in zip(starts, starts[1:]):
        if (b - a).days != 7:
            raise ValidationError(f"{path}: weeks are not contiguous between {a} and {b}")
    epoch = _epoch(epoch, starts[0])
    offsets = [day_offset(s, epoch) - 1 for s in starts]
    if any(o % 7 for o in offsets) or offsets[0] < 0:
        raise ValidationError(f"{path}: week starts are not aligned with the epoch {epoch}")
    weeks = [o // 7 + 1 for o in offsets]
    scaled = np.round(np.asarray(counts)[order] * scale)
    obs = ObservationSet(
        case_weeks=weeks,
        case_counts=scaled,
        case_tests=np.asarray(tests)[order] if tests else None,
    )
    return obs, epoch


def write_cases(path, obs: ObservationSet, epoch: dt.date, *, seed=None, config=None) -> None:
    header = ["week_start", "cases"] + (["tests"] if obs.case_tests is not None else [])
    rows = []
    for k, u in enumerate(obs.case_weeks):
        row = [offset_date(7 * (u - 1) + 1, epoch).isoformat(), float(obs.case_counts[k])]
        if obs.case_tests is not None:
            row.append(float(obs.case_tests[k]))
        rows.append(row)
    write_table(path, header, rows, seed=seed, config=config)


# ------------------------------------------------------------- LA initial state


@dataclass(frozen=True)
class LAInitRecipe:
    """Initial compartments from recent case history.

    E + I is the case total of the last ``ei_window`` days and R1 the total
    of the ``r1_window`` days before that; both are multiplied by
    ``underreport`` and ``fraction``. E takes ``e_share`` of E + I.
    """

    ei_window: int = 11
    r1_window: int = 18
    underreport: float = 5.0
    fraction: float = 0.48
    e_share: float = 1 / 3
    sd: float = 0.05

    def __post_init__(self):
        if self.ei_window < 1 or self.r1_window < 1:
            raise ValidationError("look-back windows must be positive")
        if not 0 < self.fraction <= 1:
            raise ValidationError("service-population fraction must lie in (0, 1]")
        if not self.underreport > 0:
            raise ValidationError("under-reporting multiplier must be positive")
        if not 0 <= self.e_share <= 1:
            raise ValidationError("E share must lie in [0, 1]")


@dataclass(frozen=True)
class InitCenters:
    E0: float
    I0: float
    R1_0: float
    degenerate: bool

    def priors(self, sd: float = 0.05) -> dict:
        return {"E0": Normal(self.E0, sd), "I0": Normal(self.I0, sd), "R1_0": Normal(self.R1_0, sd)}


def la_init_conditions(daily_cases, recipe: LAInitRecipe | None = None) -> InitCenters:
    """Prior centers for E(0), I(0), R1(0) from daily cases ending the day before the fit.

    ``daily_cases`` is a sequence of daily counts or an ``ObservationSet``
    with one-day bins. At least ``ei_window + r1_window`` days are needed.
    """
    recipe = recipe or LAInitRecipe()
    if isinstance(daily_cases, ObservationSet):
        if daily_cases.week_length != 1:
            raise ValidationError("the recipe needs daily case bins (week_length = 1)")
        daily_cases = daily_cases.case_counts
    x = np.asarray(daily_cases, dtype=float)
    need = recipe.ei_window + recipe.r1_window
    if x.ndim != 1 or len(x) < need:
        raise ValidationError(f"need at least {need} days of case history, got {len(x)}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValidationError("daily cases must be finite and nonnegative")
    mult = recipe.underreport * recipe.fraction
    ei = x[-recipe.ei_window :].sum() * mult
    r1 = x[-need : -recipe.ei_window].sum() * mult
    return InitCenters(
        E0=float(ei * recipe.e_share),
        I0=float(ei * (1 - recipe.e_share)),
        R1_0=float(r1),
        degenerate=bool(ei == 0 and r1 == 0),
    )


# ---------------------------------------------------------------- run config


@dataclass(frozen=True)
class RunConfig:
    """Settings for one ``fit`` run (flat YAML mapping)."""

    variant: str = "EIRR-ww"
    wastewater: str | None = None
    cases: str | None = None
    epoch: str | None = None
    case_scale: float = 1.0
    prior_profile: str = "paper-baseline"
    priors: dict = field(default_factory=dict)
    cadence: float = 7.0
    resolution: float = 1.0
    n_segments: int | None = None
    population: float | None = None
    nonshedding: float = 0.0
    replicates: int | None = None
    replicate_mean: bool = False
    chains: int = 4
    warmup: int = 500
    iterations: int = 500
    metric: str = "dense"

    def __post_init__(self):
        if self.variant not in MODEL_VARIANTS:
            raise ValidationError(f"unknown model variant {self.variant!r}; expected one of {MODEL_VARIANTS}")
        if self.prior_profile not in NAMED_PROFILES:
            raise ValidationError(f"unknown prior profile {self.prior_profile!r}")
        if not (self.cadence > 0 and self.resolution > 0):
            raise ValidationError("cadence and resolution must be positive")
        ratio = self.cadence / self.resolution
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValidationError(f"cadence {self.cadence} is not a multiple of the resolution {self.resolution}")
        if self.chains < 1 or self.iterations < 1 or self.warmup < 0:
            raise ValidationError("need chains >= 1, iterations >= 1 and warmup >= 0")
        if self.replicates is not None and self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if self.metric not in ("diag", "dense"):
            raise ValidationError("metric must be 'diag' or 'dense'")
        if self.wastewater is None and self.cases is None:
            raise ValidationError("the config names no data file (wastewater or cases)")
        if not isinstance(self.priors, dict):
            raise ValidationError("priors must map parameter names to prior expressions")
        self.prior_spec()

    @classmethod
    def from_mapping(cls, data: dict, base_dir: Path | None = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValidationError("the config file must hold a key: value mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("wastewater", "cases"):
            if data.get(key) and base_dir is not None and not Path(data[key]).is_absolute():
                data[key] = str(base_dir / data[key])
        if data.get("epoch") is not None:
            data["epoch"] = str(data["epoch"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ValidationError(f"config {path} is not valid YAML: {exc}") from exc
        return cls.from_mapping(data or {}, Path(path).resolve().parent)

    def dump(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=True)

    def prior_spec(self) -> PriorSpec:
        base = NAMED_PROFILES[self.prior_profile]()
        return base.with_overrides(**self.priors) if self.priors else base

    def load_data(self) -> tuple[ObservationSet, dt.date]:
        """Observations named by the config, with wastewater and cases on one epoch."""
        ww = cases = None
        epoch = self.epoch
        if self.wastewater:
            ww, epoch = parse_wastewater(self.wastewater, epoch)
            if self.replicates is not None:
                ww = ww.replicate_means(self.replicates) if self.replicate_mean else ww.replicate_subset(self.replicates)
        if self.cases:
            cases, epoch = parse_cases(self.cases, epoch, self.case_scale)
        if ww is not None and cases is not None:
            data = ww.merge(cases)
        else:
            data = ww if ww is not None else cases
        if data.has_wastewater:
            gaps = np.diff(data.sample_times())
            if gaps.size and self.resolution > gaps.min() + 1e-12:
                raise ValidationError(
                    f"grid resolution {self.resolution} exceeds the smallest sampling interval {gaps.min()}"
                )
        return data, epoch
