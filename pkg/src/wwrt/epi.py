"""Deterministic compartmental dynamics.

The linear EIRR/EIR systems are propagated exactly with a matrix
exponential; the nonlinear SEIR/SEIRR systems use fixed-step RK4.
Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError, NumericalFailure, ValidationError

VARIANTS: dict[str, tuple[str, ...]] = {
    "EIRR": ("E", "I", "R1", "R2"),
    "EIRR-with-C": ("E", "I", "R1", "R2", "C"),
    "EIR-with-C": ("E", "I", "R", "C"),
    "SEIR-with-C": ("S", "E", "I", "R", "C"),
    "SEIRR": ("S", "E", "I", "R1", "R2"),
}
LINEAR_VARIANTS = ("EIRR", "EIRR-with-C", "EIR-with-C")
NONLINEAR_VARIANTS = ("SEIR-with-C", "SEIRR")

# eigenvalue pairs closer than this make the diagonalisation unreliable
EIGEN_GAP_TOL = 1e-8
_COND_TOL = 1e8
_NEG_TOL = 1e-9


def _check_rate(name: str, value: float, allow_zero: bool = False) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise InvalidParameterError(f"{name} must be a positive finite rate, got {value!r}")
    return value


@dataclass(frozen=True)
class RateParams:
    """Transition rates in 1/days: latent exit, infectious exit, shedding exit."""

    gamma: float
    nu: float
    eta: float

    def __post_init__(self):
        for name in ("gamma", "nu", "eta"):
            object.__setattr__(self, name, _check_rate(name, getattr(self, name)))


@dataclass(frozen=True)
class CompartmentState:
    """Compartment counts at a single time point."""

    variant: str
    values: np.ndarray

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        values = np.array(self.values, dtype=float)
        if values.shape != (len(VARIANTS[self.variant]),):
            raise ValidationError(
                f"{self.variant} needs {len(VARIANTS[self.variant])} compartments, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("compartment counts must be finite")
        if np.any(values < 0):
            raise ValidationError("compartment counts must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_counts(cls, variant: str, **counts: float) -> "CompartmentState":
        names = VARIANTS[variant]
        missing = set(names) - set(counts)
        if missing:
            raise ValidationError(f"missing compartments {sorted(missing)} for {variant}")
        return cls(variant, np.array([counts[n] for n in names], dtype=float))

    @property
    def names(self) -> tuple[str, ...]:
        return VARIANTS[self.variant]

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def total(self) -> float:
        return float(self.values.sum())

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


@dataclass(frozen=True)
class Trajectory:
    """Compartment states on a time grid; ``values`` has shape (len(times), k)."""

    variant: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("times", "values"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def names(self) -> tuple[str, ...]:
        return VARIANTS[self.variant]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> CompartmentState:
        return CompartmentState(self.variant, self.values[i])


@dataclass(frozen=True)
class RtTrajectory:
    """Piecewise-constant reproduction number.

    ``values[i]`` holds on ``[changepoints[i], changepoints[i + 1])``; the
    last value extends to infinity and the first one also covers earlier
    times. For the S-models the values are basic reproduction numbers.
    """

    changepoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        cps = np.array(self.changepoints, dtype=float)
        vals = np.array(self.values, dtype=float)
        if cps.ndim != 1 or cps.shape != vals.shape or len(cps) == 0:
            raise ValidationError("changepoints and values must be equal-length 1-D arrays")
        if np.any(np.diff(cps) <= 0):
            raise ValidationError("changepoints must be strictly increasing")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise InvalidParameterError("reproduction numbers must be positive and finite")
        cps.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "changepoints", cps)
        object.__setattr__(self, "values", vals)

    def segment_index(self, t):
        idx = np.searchsorted(self.changepoints, t, side="right") - 1
        return np.clip(idx, 0, len(self.values) - 1)

    def value_at(self, t):
        return self.values[self.segment_index(t)]

    def alpha_schedule(self, nu: float) -> "AlphaSchedule":
        return AlphaSchedule(self.changepoints, self.values * _check_rate("nu", nu))


@dataclass(frozen=True)
class AlphaSchedule:
    """New-infection rate per infectious individual, on the Rt changepoint grid."""

    changepoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        RtTrajectory(self.changepoints, self.values)  # same structural checks
        for name in ("changepoints", "values"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def segment_index(self, t):
        idx = np.searchsorted(self.changepoints, t, side="right") - 1
        return np.clip(idx, 0, len(self.values) - 1)

    def value_at(self, t):
        return self.values[self.segment_index(t)]


def build_eirr_generator(alpha: float, params: RateParams) -> np.ndarray:
    """Generator V of the EIRR system, so that d/dt (E, I, R1, R2) = V @ state."""
    return build_generator(alpha, params, "EIRR")


def build_generator(alpha: float, params: RateParams, variant: str = "EIRR") -> np.ndarray:
    """Linear generator for one of the immigration-driven variants.

    The ``-with-C`` variants carry a bookkeeping row ``dC/dt = gamma * E``,
    so their columns no longer sum to zero.
    """
    alpha = _check_rate("alpha", alpha, allow_zero=True)
    g, n, e = params.gamma, params.nu, params.eta
    if variant == "EIRR":
        return np.array(
            [
                [-g, alpha, 0.0, 0.0],
                [g, -n, 0.0, 0.0],
                [0.0, n, -e, 0.0],
                [0.0, 0.0, e, 0.0],
            ]
        )
    if variant == "EIRR-with-C":
        V = np.zeros((5, 5))
        V[:4, :4] = build_generator(alpha, params, "EIRR")
        V[4, 0] = g
        return V
    if variant == "EIR-with-C":
        return np.array(
            [
                [-g, alpha, 0.0, 0.0],
                [g, -n, 0.0, 0.0],
                [0.0, n, 0.0, 0.0],
                [g, 0.0, 0.0, 0.0],
            ]
        )
    raise ValidationError(f"no linear generator for variant {variant!r}")


@dataclass(frozen=True)
class MatrixExponential:
    """exp(V * dt) for a fixed generator V and arbitrary dt >= 0.

    Uses an eigendecomposition when the eigenvectors are well conditioned and
    no two eigenvalues nearly coincide; otherwise every call goes through
    scipy's scaling-and-squaring Pade approximant.
    """

    generator: np.ndarray
    eigvals: np.ndarray | None = field(init=False, default=None)
    eigvecs: np.ndarray | None = field(init=False, default=None)
    eigvecs_inv: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self):
        V = np.array(self.generator, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1] or not np.all(np.isfinite(V)):
            raise ValidationError("generator must be a finite square matrix")
        V.setflags(write=False)
        object.__setattr__(self, "generator", V)
        w, W = np.linalg.eig(V)
        if np.all(np.abs(w.imag) < 1e-12) and _well_separated(w.real, V) and np.linalg.cond(W) < _COND_TOL:
            W = W.real
            object.__setattr__(self, "eigvals", w.real)
            object.__setattr__(self, "eigvecs", W)
            object.__setattr__(self, "eigvecs_inv", np.linalg.inv(W))

    @property
    def uses_eigendecomposition(self) -> bool:
        return self.eigvals is not None

    def __call__(self, dt: float) -> np.ndarray:
        dt = float(dt)
        if not math.isfinite(dt) or dt < 0:
            raise ValidationError(f"time step must be finite and nonnegative, got {dt!r}")
        if dt == 0:
            return np.eye(self.generator.shape[0])
        if self.eigvals is None:
            return scipy.linalg.expm(self.generator * dt)
        return (self.eigvecs * np.exp(self.eigvals * dt)) @ self.eigvecs_inv


def _well_separated(eigvals: np.ndarray, V: np.ndarray) -> bool:
    # Exactly-zero columns (R2, C) contribute semisimple zero eigenvalues;
    # only the remaining spectrum is checked for near-coincidences.
    n_null = int(np.sum(np.all(V == 0, axis=0)))
    order = np.argsort(np.abs(eigvals))
    dynamic = eigvals[order[n_null:]] if n_null else eigvals
    scale = max(1.0, float(np.max(np.abs(eigvals))))
    for a, b in itertools.combinations(dynamic, 2):
        if abs(a - b) < EIGEN_GAP_TOL * scale:
            return False
    return True


def _clamp(values: np.ndarray, scale: float) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NumericalFailure("compartment counts became non-finite")
    if np.any(values < -_NEG_TOL * max(scale, 1.0)):
        raise NumericalFailure(f"compartment went negative: {values.min():.3e}")
    return np.maximum(values, 0.0)


def propagate_linear(state: CompartmentState, generator: np.ndarray, dt: float) -> CompartmentState:
    """Advance ``state`` by ``dt`` days under the linear system ``generator``."""
    x = np.asarray(state.values, dtype=float)
    if generator.shape != (len(x), len(x)):
        raise ValidationError(f"generator shape {generator.shape} does not match {state.variant}")
    if not math.isfinite(float(dt)) or dt < 0:
        raise ValidationError(f"dt must be finite and nonnegative, got {dt!r}")
    out = MatrixExponential(generator)(dt) @ x
    return CompartmentState(state.variant, _clamp(out, x.sum()))


def _check_grid(grid, changepoints) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 1 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be a strictly increasing 1-D array")
    inside = changepoints[(changepoints > grid[0]) & (changepoints < grid[-1])]
    on_grid = np.isclose(inside[:, None], grid[None, :], rtol=0, atol=1e-9).any(axis=1)
    if not np.all(on_grid):
        raise ValidationError(f"changepoints {inside[~on_grid].tolist()} do not lie on the grid")
    return grid


def solve_piecewise(
    init: CompartmentState,
    schedule: AlphaSchedule,
    params: RateParams,
    grid,
) -> Trajectory:
    """Exact solution of a linear variant under a piecewise-constant alpha.

    The state at ``grid[0]`` is ``init``; each grid interval uses the alpha of
    the segment containing its left endpoint.
    """
    if init.variant not in LINEAR_VARIANTS:
        raise ValidationError(f"solve_piecewise needs a linear variant, got {init.variant}")
    grid = _check_grid(grid, schedule.changepoints)
    seg = schedule.segment_index(grid[:-1] + 1e-12)
    out = np.empty((len(grid), len(init.values)))
    out[0] = init.values
    scale = init.total()
    cache: dict[int, MatrixExponential] = {}
    for j, dt in enumerate(np.diff(grid)):
        k = int(seg[j])
        if k not in cache:
            cache[k] = MatrixExponential(build_generator(schedule.values[k], params, init.variant))
        out[j + 1] = _clamp(cache[k](dt) @ out[j], scale)
    return Trajectory(init.variant, grid, out)


def seir_rhs(state: np.ndarray, beta: float, params: RateParams, population: float, variant: str) -> np.ndarray:
    """Right-hand side of the nonlinear S-models."""
    g, n, e = params.gamma, params.nu, params.eta
    S, E, I = state[0], state[1], state[2]
    infection = beta * S * I / population
    if variant == "SEIRR":
        R1 = state[3]
        return np.array([-infection, infection - g * E, g * E - n * I, n * I - e * R1, e * R1])
    if variant == "SEIR-with-C":
        return np.array([-infection, infection - g * E, g * E - n * I, n * I, g * E])
    raise ValidationError(f"no nonlinear right-hand side for variant {variant!r}")


def solve_nonlinear(
    init: CompartmentState,
    r0_schedule: RtTrajectory,
    params: RateParams,
    population: float,
    grid,
    step: float = 0.1,
) -> Trajectory:
    """Fixed-step RK4 solution of SEIRR or SEIR-with-C.

    The transmission rate is ``beta = R0 * nu`` with R0 read from
    ``r0_schedule``. Each grid interval is split into equal substeps no
    longer than ``step`` days.
    """
    if init.variant not in NONLINEAR_VARIANTS:
        raise ValidationError(f"solve_nonlinear needs SEIRR or SEIR-with-C, got {init.variant}")
    if not population > 0:
        raise InvalidParameterError("population must be positive")
    if not 0 < step <= 0.1 + 1e-15:
        raise ValidationError("RK4 step must be in (0, 0.1] days")
    grid = _check_grid(grid, r0_schedule.changepoints)
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4_grid(init, r0_schedule, params, population, grid, step)


def _rk4_grid(init, r0_schedule, params, population, grid, step):
    seg = r0_schedule.segment_index(grid[:-1] + 1e-12)
    out = np.empty((len(grid), len(init.values)))
    out[0] = y = np.array(init.values, dtype=float)
    scale = init.total()
    for j, dt in enumerate(np.diff(grid)):
        beta = r0_schedule.values[seg[j]] * params.nu
        n_sub = max(1, math.ceil(dt / step - 1e-9))
        h = dt / n_sub
        for _ in range(n_sub):
            k1 = seir_rhs(y, beta, params, population, init.variant)
            k2 = seir_rhs(y + 0.5 * h * k1, beta, params, population, init.variant)
            k3 = seir_rhs(y + 0.5 * h * k2, beta, params, population, init.variant)
            k4 = seir_rhs(y + h * k3, beta, params, population, init.variant)
            y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        y = _clamp(y, scale)
        out[j + 1] = y
    return Trajectory(init.variant, grid, out)


def effective_r(alpha: float, nu: float) -> float:
    """Rt of the EIRR/EIR models: alpha / nu."""
    nu = _check_rate("nu", nu)
    return float(alpha) / nu


def seir_effective_r(beta: float, nu: float, susceptible: float, population: float) -> float:
    """Rt of the S-models: (beta / nu) * S / N."""
    nu = _check_rate("nu", nu)
    if not population > 0:
        raise InvalidParameterError("population must be positive")
    if not 0 <= susceptible <= population:
        raise InvalidParameterError("susceptible count must lie in [0, N]")
    return float(beta) / nu * float(susceptible) / float(population)
