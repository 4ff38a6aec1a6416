"""Agent-based stochastic SEIRR simulation.

``simulate_epidemic`` follows the individual Gillespie scheme: when an
individual is infected, all three of its future transition times are drawn
at once, and the only event that must be simulated sequentially is the next
infection. ``gillespie_reference`` is the textbook per-event SSA on
compartment counts and exists so the two engines can be compared.

Randomness: every entry point takes an integer seed. Independent runs
derived from one root seed use ``spawn_seeds``, which splits a
``numpy.random.SeedSequence``; run ``k`` always gets child ``k``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .epi import RateParams
from .errors import InvalidParameterError, ValidationError

COMPARTMENTS = ("S", "E", "I", "R1", "R2")


def spawn_seeds(root_seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent child seeds; child ``k`` depends only on ``root_seed`` and ``k``."""
    return np.random.SeedSequence(root_seed).spawn(n)


@dataclass(frozen=True)
class SimConfig:
    """Settings for one agent-based run.

    The output clock has day 0 at the end of the warm-up, so the run covers
    ``[-warmup, horizon]``. ``r0_times`` are on the output clock; the first
    value also applies before the first time.
    """

    population: int
    initial_E: int
    initial_I: int
    r0_times: tuple[float, ...]
    r0_values: tuple[float, ...]
    gamma: float = 1 / 4
    nu: float = 1 / 7
    eta: float = 1 / 18
    warmup: float = 0.0
    horizon: float = 100.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "r0_times", tuple(float(t) for t in self.r0_times))
        object.__setattr__(self, "r0_values", tuple(float(v) for v in self.r0_values))
        if self.population < 0 or self.initial_E < 0 or self.initial_I < 0:
            raise ValidationError("counts must be nonnegative")
        if self.initial_E + self.initial_I > self.population:
            raise ValidationError("initial E + I exceeds the population")
        RateParams(self.gamma, self.nu, self.eta)
        if len(self.r0_times) != len(self.r0_values) or not self.r0_times:
            raise ValidationError("R0 schedule needs matching, nonempty times and values")
        if any(b <= a for a, b in zip(self.r0_times, self.r0_times[1:])):
            raise ValidationError("R0 schedule times must be increasing")
        if any(v < 0 or not math.isfinite(v) for v in self.r0_values):
            raise InvalidParameterError("R0 values must be finite and nonnegative")
        if self.warmup < 0 or self.horizon < 0:
            raise ValidationError("warmup and horizon must be nonnegative")

    @property
    def start(self) -> float:
        return -float(self.warmup)

    def r0_at(self, t):
        idx = np.searchsorted(self.r0_times, t, side="right") - 1
        return np.asarray(self.r0_values)[np.clip(idx, 0, len(self.r0_values) - 1)]

    def with_seed(self, seed) -> "SimConfig":
        return _replace(self, seed=seed)


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


@dataclass(frozen=True)
class EventLog:
    """Per-individual transition times for everyone ever infected.

    Times are on the output clock. Individuals exposed before the run have
    ``infection = nan``; individuals infectious at the start have
    ``onset = start``. Transition times beyond the end of the run are kept:
    they were drawn at infection and remain valid.
    """

    population: int
    start: float
    end: float
    infection: np.ndarray
    onset: np.ndarray
    recovery: np.ndarray
    stop: np.ndarray
    seeded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        for name in ("infection", "onset", "recovery", "stop"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        seeded = np.array(self.seeded, dtype=bool)
        if seeded.shape != self.onset.shape:
            seeded = np.isnan(self.infection)
        seeded.setflags(write=False)
        object.__setattr__(self, "seeded", seeded)

    def __len__(self) -> int:
        return len(self.onset)

    @property
    def n_infected(self) -> int:
        """Infections that happened during the run (seeds excluded)."""
        return int(np.sum(~np.isnan(self.infection)))

    def check_order(self) -> bool:
        inf = np.where(np.isnan(self.infection), -np.inf, self.infection)
        ok = (inf < self.onset) | (self.seeded & (inf <= self.onset))
        return bool(np.all(ok & (self.onset < self.recovery) & (self.recovery < self.stop)))

    def counts_at(self, times) -> np.ndarray:
        """Compartment counts (S, E, I, R1, R2) at each time; shape (len(times), 5)."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(t < self.start - 1e-9) or np.any(t > self.end + 1e-9):
            raise ValidationError("requested times fall outside the simulated window")
        inf = np.sort(np.where(np.isnan(self.infection), -np.inf, self.infection))
        ons = np.sort(self.onset)
        rec = np.sort(self.recovery)
        stp = np.sort(self.stop)
        n_inf = np.searchsorted(inf, t, side="right")
        n_ons = np.searchsorted(ons, t, side="right")
        n_rec = np.searchsorted(rec, t, side="right")
        n_stp = np.searchsorted(stp, t, side="right")
        return np.stack(
            [self.population - n_inf, n_inf - n_ons, n_ons - n_rec, n_rec - n_stp, n_stp],
            axis=1,
        )

    def onsets_in(self, edges) -> np.ndarray:
        """Number of E->I transitions in each half-open bin ``(edges[k], edges[k + 1]]``."""
        edges = np.asarray(edges, dtype=float)
        ons = np.sort(self.onset[~self.seeded | (self.onset > self.start)])
        cum = np.searchsorted(ons, edges, side="right")
        return np.diff(cum)

    def shedding_mask(self, t: float) -> np.ndarray:
        """Individuals in I or R1 at time ``t``."""
        return (self.onset <= t) & (self.stop > t)

    def rows(self):
        for k in range(len(self)):
            yield k, self.infection[k], self.onset[k], self.recovery[k], self.stop[k]


def simulate_epidemic(config: SimConfig) -> EventLog:
    """Run the individual Gillespie algorithm with R0 changepoints.

    The total infection rate is ``beta * s * i / N`` with
    ``beta = R0(t) * nu``. Each new infection immediately draws its latent,
    infectious and shedding durations from Exp(gamma), Exp(nu), Exp(eta).
    """
    N = int(config.population)
    if N == 0:
        raise ValidationError("population must be positive")
    rng = np.random.default_rng(config.seed)
    g, nu, eta = config.gamma, config.nu, config.eta
    start, end = config.start, float(config.horizon)

    infection: list[float] = []
    onset: list[float] = []
    recovery: list[float] = []
    stop: list[float] = []
    # heap of (time, kind, individual); kind 0 = onset, 1 = recovery
    events: list[tuple[float, int, int]] = []

    for _ in range(config.initial_E):
        x, y, z = rng.exponential((1 / g, 1 / nu, 1 / eta))
        infection.append(math.nan)
        onset.append(start + x)
        recovery.append(start + x + y)
        stop.append(start + x + y + z)
        heapq.heappush(events, (onset[-1], 0, len(onset) - 1))
        heapq.heappush(events, (recovery[-1], 1, len(onset) - 1))
    for _ in range(config.initial_I):
        y, z = rng.exponential((1 / nu, 1 / eta))
        infection.append(math.nan)
        onset.append(start)
        recovery.append(start + y)
        stop.append(start + y + z)
        heapq.heappush(events, (recovery[-1], 1, len(onset) - 1))

    s = N - config.initial_E - config.initial_I
    i = config.initial_I
    t = start
    cps = [c for c in config.r0_times if c > start]
    cp_idx = 0
    beta = float(config.r0_at(start)) * nu

    while t < end:
        next_cp = cps[cp_idx] if cp_idx < len(cps) else math.inf
        next_ev = events[0][0] if events else math.inf
        rate = beta * s * i / N
        n_e = t + rng.exponential(1 / rate) if (s > 0 and i > 0 and rate > 0) else math.inf
        n_t = min(n_e, next_ev, next_cp)
        if n_t == math.inf or n_t > end:
            break
        t = n_t
        if n_t == n_e:
            x, y, z = rng.exponential((1 / g, 1 / nu, 1 / eta))
            k = len(onset)
            infection.append(t)
            onset.append(t + x)
            recovery.append(t + x + y)
            stop.append(t + x + y + z)
            heapq.heappush(events, (onset[k], 0, k))
            heapq.heappush(events, (recovery[k], 1, k))
            s -= 1
        elif n_t == next_ev:
            _, kind, _ = heapq.heappop(events)
            i += 1 if kind == 0 else -1
        else:
            beta = float(config.r0_at(t)) * nu
            cp_idx += 1

    return EventLog(
        population=N,
        start=start,
        end=end,
        infection=np.array(infection),
        onset=np.array(onset),
        recovery=np.array(recovery),
        stop=np.array(stop),
        seeded=np.isnan(np.array(infection, dtype=float)) if infection else np.zeros(0, dtype=bool),
    )


def gillespie_reference(config: SimConfig, days) -> np.ndarray:
    """Classic per-event SSA on counts; returns (S, E, I, R1, R2) at each day.

    Used to validate ``simulate_epidemic``; not needed for normal use.
    """
    N = int(config.population)
    if N == 0:
        raise ValidationError("population must be positive")
    rng = np.random.default_rng(config.seed)
    days = np.asarray(days, dtype=float)
    out = np.empty((len(days), 5))
    S, E, I, R1, R2 = N - config.initial_E - config.initial_I, config.initial_E, config.initial_I, 0, 0
    g, nu, eta = config.gamma, config.nu, config.eta
    t = config.start
    cps = [c for c in config.r0_times if c > t]
    cp_idx = 0
    beta = float(config.r0_at(t)) * nu
    d = 0
    while d < len(days):
        rates = (beta * S * I / N, g * E, nu * I, eta * R1)
        total = sum(rates)
        next_cp = cps[cp_idx] if cp_idx < len(cps) else math.inf
        t_next = t + rng.exponential(1 / total) if total > 0 else math.inf
        boundary = min(next_cp, t_next)
        while d < len(days) and days[d] < boundary:
            out[d] = (S, E, I, R1, R2)
            d += 1
        if d >= len(days) or boundary == math.inf:
            break
        t = boundary
        if t_next > next_cp:
            beta = float(config.r0_at(t)) * nu
            cp_idx += 1
            continue
        u = rng.random() * total
        if u < rates[0]:
            S, E = S - 1, E + 1
        elif u < rates[0] + rates[1]:
            E, I = E - 1, I + 1
        elif u < rates[0] + rates[1] + rates[2]:
            I, R1 = I - 1, R1 + 1
        else:
            R1, R2 = R1 - 1, R2 + 1
    out[d:] = (S, E, I, R1, R2)
    return out
