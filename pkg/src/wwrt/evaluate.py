"""Frequentist metrics for posterior R_t and the scenario harness.

All metrics compare a posterior summary with the true R_t on a common daily
grid. The harness fits one model variant to each of a set of datasets that
share a single simulated epidemic, so the truth is fixed across datasets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logit

from .bayes.fit import fit
from .bayes.model import CASE_VARIANTS, MODEL_VARIANTS, Posterior
from .bayes.priors import LogitNormal, Normal, PriorSpec, paper_baseline
from .data import ObservationSet
from .errors import NumericalFailure, ValidationError, WwrtError
from .shedding import DEFAULT_SD_LOG10, SheddingProfile, concentration_series, default_profile
from .sim import EventLog, SimConfig, simulate_epidemic
from .synth import synthesize_cases, synthesize_wastewater

log = logging.getLogger(__name__)

# --------------------------------------------------------------------- metrics


def _paired(a, b, what):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise ValidationError(f"{what}: lengths differ ({a.shape[0]} vs {b.shape[0]})")
    if a.shape[0] == 0:
        raise ValidationError(f"{what}: empty input")
    return a, b


def _intervals(intervals) -> np.ndarray:
    iv = np.asarray(intervals, dtype=float)
    if iv.ndim != 2 or iv.shape[1] != 2:
        raise ValidationError("intervals must have shape (time, 2)")
    return iv


def envelope(intervals, truth) -> float:
    """Share of time points whose interval ``[lo, hi]`` contains the truth."""
    iv, truth = _paired(_intervals(intervals), truth, "envelope")
    return float(np.mean((iv[:, 0] <= truth) & (truth <= iv[:, 1])))


def mciw(intervals) -> float:
    """Mean credible interval width."""
    iv = _intervals(intervals)
    if iv.shape[0] == 0:
        raise ValidationError("mciw: empty input")
    width = iv[:, 1] - iv[:, 0]
    if np.any(width < 0):
        raise ValidationError(f"mciw: upper bound below lower bound at index {int(np.argmax(width < 0))}")
    return float(np.mean(width))


def abs_deviation(medians, truth) -> float:
    """Mean absolute difference between posterior medians and the truth."""
    m, truth = _paired(medians, truth, "abs_deviation")
    return float(np.mean(np.abs(m - truth)))


def masv(series) -> float:
    """Mean absolute sequential variation: mean of |s_t - s_(t-1)|."""
    s = np.asarray(series, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise ValidationError("masv needs a series of length >= 2")
    return float(np.mean(np.abs(np.diff(s))))


def step_to_daily(values, knots, days) -> np.ndarray:
    """Expand a step function (value ``values[k]`` from ``knots[k]``) to ``days``."""
    idx = np.searchsorted(np.asarray(knots, dtype=float), np.asarray(days, dtype=float), side="right") - 1
    if np.any(idx < 0):
        raise ValidationError("a day precedes the first knot")
    return np.asarray(values)[idx]


@dataclass(frozen=True)
class MetricReport:
    scenario: str
    dataset: int
    envelope_80: float
    envelope_95: float
    mciw_80: float
    mciw_95: float
    abs_deviation: float
    masv: float
    true_masv: float
    ok: bool = True
    message: str = ""

    METRICS = ("envelope_80", "envelope_95", "mciw_80", "mciw_95", "abs_deviation", "masv", "true_masv")

    def long_rows(self):
        """(scenario, dataset, metric, value) rows."""
        return [(self.scenario, self.dataset, m, getattr(self, m)) for m in self.METRICS]


def score_rt(summary, truth, scenario="", dataset=0) -> MetricReport:
    """Metrics for an R_t summary (median plus 80/95% bands) against the daily truth."""
    truth = np.asarray(truth, dtype=float)
    return MetricReport(
        scenario=scenario,
        dataset=dataset,
        envelope_80=envelope(summary.interval(0.8), truth),
        envelope_95=envelope(summary.interval(0.95), truth),
        mciw_80=mciw(summary.interval(0.8)),
        mciw_95=mciw(summary.interval(0.95)),
        abs_deviation=abs_deviation(summary.median, truth),
        masv=masv(summary.median),
        true_masv=masv(truth),
    )


def aggregate(reports) -> dict:
    """Median and quartiles of each metric over the successful rows."""
    ok = [r for r in reports if r.ok]
    out = {"n_ok": len(ok), "n_failed": len(reports) - len(ok)}
    for m in MetricReport.METRICS:
        vals = np.array([getattr(r, m) for r in ok])
        if vals.size:
            q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
        else:
            q1 = med = q3 = math.nan
        out[m] = {"q25": float(q1), "median": float(med), "q75": float(q3)}
    return out


# --------------------------------------------------------------- desk set-up


@dataclass(frozen=True)
class DeskSetup:
    """Scaled-down version of the baseline simulation study."""

    population: int = 10_000
    initial_E: int = 20
    initial_I: int = 20
    warmup: float = 77.0
    n_weeks: int = 8
    # R0 schedule on the output clock (day 0 = end of warm-up)
    r0_times: tuple = (-77.0, -42.0, -14.0, -7.0, 0.0, 7.0)
    r0_values: tuple = (1.75, 0.7, 0.8, 0.85, 0.9, 2.5)
    sample_times: tuple = tuple(float(t) for t in range(1, 56, 2))
    n_replicates: int = 10
    rho: float = 0.011
    tau: float = 0.5
    df: float = 2.99
    psi: float = 0.2
    phi: float = 57.55
    sd_log10: float = DEFAULT_SD_LOG10
    epidemic_seed: int = 2024
    concentration_seed: int = 5

    @property
    def horizon(self) -> float:
        return 7.0 * self.n_weeks

    def sim_config(self) -> SimConfig:
        return SimConfig(
            population=self.population,
            initial_E=self.initial_E,
            initial_I=self.initial_I,
            r0_times=self.r0_times,
            r0_values=self.r0_values,
            warmup=self.warmup,
            horizon=self.horizon,
            seed=self.epidemic_seed,
        )


@dataclass
class DeskTruth:
    setup: DeskSetup
    log: EventLog
    days: np.ndarray  # left ends of the daily grid steps
    rt: np.ndarray  # true R_t = R0(t) S(t) / N on ``days``
    initial_state: dict  # S, E, I, R1, R2 at day 0
    true_conc: np.ndarray  # population concentration at the sample times


def desk_truth(setup: DeskSetup | None = None, profile: SheddingProfile | None = None) -> DeskTruth:
    """Simulate the single epidemic and its fixed concentration realization."""
    setup = setup or DeskSetup()
    profile = profile or default_profile()
    cfg = setup.sim_config()
    events = simulate_epidemic(cfg)
    days = np.arange(0.0, setup.horizon)
    counts = events.counts_at(days)
    rt = cfg.r0_at(days) * counts[:, 0] / setup.population
    c0 = events.counts_at([0.0])[0]
    conc = concentration_series(events, profile, setup.sample_times, setup.sd_log10, seed=setup.concentration_seed)
    return DeskTruth(
        setup=setup,
        log=events,
        days=days,
        rt=rt,
        initial_state=dict(zip(("S", "E", "I", "R1", "R2"), (float(v) for v in c0))),
        true_conc=conc,
    )


def desk_datasets(truth: DeskTruth, n_datasets: int = 10, seed: int = 0) -> list[ObservationSet]:
    """Wastewater replicates plus weekly cases; dataset ``k`` uses child ``k`` of ``seed``."""
    if n_datasets < 1:
        raise ValidationError("need at least one dataset")
    s = truth.setup
    out = []
    for child in np.random.SeedSequence(seed).spawn(n_datasets):
        ww_seed, case_seed = child.spawn(2)
        ww = synthesize_wastewater(truth.true_conc, s.rho, s.tau, s.df, s.n_replicates, s.sample_times, seed=ww_seed)
        cases = synthesize_cases(truth.log, s.psi, s.phi, s.n_weeks, seed=case_seed)
        out.append(ww.merge(cases))
    return out


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    """One column of the scenario grid.

    ``treatment`` is ``"replicates"`` (keep replicates 1..k) or ``"mean"``
    (average replicates 1..k into one value per time). ``init_scale``
    centers the initial-count priors at that multiple of the truth, and
    ``lambda_center`` moves the median of the lambda prior.
    """

    label: str
    variant: str = "EIRR-ww"
    treatment: str = "replicates"
    k: int = 3
    init_scale: float = 1.0
    lambda_center: float | None = None
    prior_overrides: dict = field(default_factory=dict)
    n_datasets: int | None = None

    def __post_init__(self):
        if self.variant not in MODEL_VARIANTS:
            raise ValidationError(f"unknown model variant {self.variant!r}")
        if self.treatment not in ("replicates", "mean"):
            raise ValidationError("treatment must be 'replicates' or 'mean'")
        if self.k < 1:
            raise ValidationError("k must be at least 1")
        if self.n_datasets is not None and self.n_datasets < 1:
            raise ValidationError("n_datasets must be at least 1")
        if not self.init_scale > 0:
            raise ValidationError("init_scale must be positive")
        if self.lambda_center is not None and not 0 < self.lambda_center < 1:
            raise ValidationError("lambda_center must lie in (0, 1)")

    def priors(self, state: dict, base: PriorSpec | None = None) -> tuple[PriorSpec, float]:
        """Priors centered on the true initial state, plus N - P for the S variants."""
        base = base or paper_baseline()
        over, nonshedding = initial_condition_priors(self.variant, state, self.init_scale, base)
        if self.lambda_center is not None:
            over["lambda"] = LogitNormal(float(logit(self.lambda_center)), base["lambda"].sigma)
        over.update(self.prior_overrides)
        return base.with_overrides(name=self.label, **over), nonshedding

    def treat(self, data: ObservationSet) -> ObservationSet:
        if self.variant in CASE_VARIANTS:
            return data.without_wastewater()
        ww = data.without_cases()
        return ww.replicate_subset(self.k) if self.treatment == "replicates" else ww.replicate_means(self.k)


def _fraction_prior(value: float, base: LogitNormal) -> LogitNormal:
    value = min(max(value, 1e-6), 1 - 1e-6)
    return LogitNormal(float(logit(value)), base.sigma)


def initial_condition_priors(variant: str, state: dict, scale: float, base: PriorSpec) -> tuple[dict, float]:
    """Initial-condition prior overrides centered at ``scale`` times the true E and I.

    The linear variants get Normal priors on the counts (R1 is not scaled).
    The S variants get logit-normal priors on the nested fractions, with the
    susceptible count absorbing the change in E and I so that the modelled
    population P is unchanged.
    """
    E, I = scale * state["E"], scale * state["I"]
    R1 = state["R1"]
    if variant == "EIRR-ww":
        return {"E0": Normal(E, base["E0"].sd), "I0": Normal(I, base["I0"].sd), "R1_0": Normal(R1, base["R1_0"].sd)}, 0.0
    if variant == "EIR-cases":
        return {"E0": Normal(E, base["E0"].sd), "I0": Normal(I, base["I0"].sd)}, 0.0
    N = sum(state.values())
    if variant == "SEIRR-ww":
        nonshedding = state["R2"]
        P = N - nonshedding
        S = P - E - I - R1
        if S <= 0:
            raise ValidationError("scaled initial E and I exceed the shedding population")
        return {
            "S_SEIR1": _fraction_prior(S / P, base["S_SEIR1"]),
            "I_EIR1": _fraction_prior(I / (P - S), base["I_EIR1"]),
            "R1_ER1": _fraction_prior(R1 / (P - S - I), base["R1_ER1"]),
        }, nonshedding
    nonshedding = state["R1"] + state["R2"]
    P = N - nonshedding
    S = P - E - I
    if S <= 0:
        raise ValidationError("scaled initial E and I exceed the population")
    return {
        "S_EI": _fraction_prior(S / P, base["S_EI"]),
        "I_EI": _fraction_prior(I / (P - S), base["I_EI"]),
    }, nonshedding


@dataclass(frozen=True)
class FitSettings:
    n_chains: int = 4
    n_warmup: int = 500
    n_iter: int = 500
    resolution: float = 1.0
    cadence: float = 7.0


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    reports: list
    fits: list
    aggregates: dict

    def long_rows(self):
        return [row for r in self.reports for row in r.long_rows()]


def build_posterior(cfg: ScenarioConfig, data: ObservationSet, truth: DeskTruth, settings: FitSettings) -> Posterior:
    n_segments = int(math.ceil(truth.setup.horizon / settings.cadence))
    priors, nonshedding = cfg.priors(truth.initial_state)
    kwargs = {}
    if cfg.variant in ("SEIRR-ww", "SEIR-cases"):
        kwargs = {"population": truth.setup.population, "nonshedding": nonshedding}
    return Posterior(
        cfg.variant,
        cfg.treat(data),
        priors,
        resolution=settings.resolution,
        cadence=settings.cadence,
        n_segments=n_segments,
        **kwargs,
    )


def run_scenario(
    cfg: ScenarioConfig,
    datasets,
    truth: DeskTruth,
    seed: int = 0,
    settings: FitSettings | None = None,
    keep_fits: bool = False,
) -> ScenarioResult:
    """Fit ``cfg.variant`` to every dataset and score posterior R_t against the truth.

    Every dataset is fitted with the same sampler seed, so identical
    datasets give identical rows. Fits that fail (numerical failure or an
    R-hat warning) are kept as flagged rows and left out of the aggregates.
    """
    settings = settings or FitSettings()
    if cfg.n_datasets is not None:
        datasets = list(datasets)[: cfg.n_datasets]
    reports, fits = [], []
    for i, data in enumerate(datasets):
        try:
            post = build_posterior(cfg, data, truth, settings)
            res = fit(post, n_chains=settings.n_chains, n_warmup=settings.n_warmup, n_iter=settings.n_iter, seed=seed)
            summary = res.functionals().summaries["rt"]
            days = truth.days
            daily = _DailySummary(summary, days)
            rep = score_rt(daily, truth.rt, cfg.label, i)
            if res.draws.warnings and any("R-hat" in w for w in res.draws.warnings):
                rep = MetricReport(**{**asdict(rep), "ok": False, "message": "; ".join(res.draws.warnings)})
            reports.append(rep)
            fits.append(res if keep_fits else None)
        except (NumericalFailure, WwrtError) as exc:
            if isinstance(exc, ValidationError):
                raise
            log.warning("scenario %s dataset %d failed: %s", cfg.label, i, exc)
            nan = math.nan
            reports.append(MetricReport(cfg.label, i, nan, nan, nan, nan, nan, nan, masv(truth.rt), False, str(exc)))
            fits.append(None)
    return ScenarioResult(cfg, reports, fits, aggregate(reports))


class _DailySummary:
    """A posterior R_t summary re-expressed on the truth's daily grid by step interpolation."""

    def __init__(self, summary, days):
        knots = summary.times
        self.median = step_to_daily(summary.median, knots, days)
        self._bands = {
            lvl: np.stack([step_to_daily(summary.lower[lvl], knots, days), step_to_daily(summary.upper[lvl], knots, days)], axis=1)
            for lvl in summary.lower
        }

    def interval(self, level):
        return self._bands[level]


def standard_scenarios() -> list[ScenarioConfig]:
    """The scenario grid of the simulation study (baseline, replicate treatments, prior shifts)."""
    return [
        ScenarioConfig("EIRR-ww baseline", "EIRR-ww", "replicates", 3),
        ScenarioConfig("EIR-cases", "EIR-cases"),
        ScenarioConfig("SEIRR-ww", "SEIRR-ww", "replicates", 3),
        ScenarioConfig("SEIR-cases", "SEIR-cases"),
        ScenarioConfig("1-rep", "EIRR-ww", "replicates", 1),
        ScenarioConfig("10-rep", "EIRR-ww", "replicates", 10),
        ScenarioConfig("3-mean", "EIRR-ww", "mean", 3),
        ScenarioConfig("10-mean", "EIRR-ww", "mean", 10),
        ScenarioConfig("Low Init", "EIRR-ww", "replicates", 3, init_scale=0.75),
        ScenarioConfig("High Init", "EIRR-ww", "replicates", 3, init_scale=4 / 3),
        ScenarioConfig("Low Prop", "EIRR-ww", "replicates", 3, lambda_center=0.8),
    ]
