"""Loo fading statistics and the three-state Markov shadowing chain.

Each shadowing state is described by Loo parameters (alpha, psi, MP) in dB:
the direct path is log-normal with dB-mean ``alpha`` and dB-std ``psi``, the
diffuse multipath is Rayleigh with average power ``MP``.  Internally the
density works with the natural-log parameters

    mu = alpha * ln(10) / 20
    sqrt(d0) = psi * ln(10) / 20
    b0 = 10**(MP / 10) / 2        (per-component multipath variance)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml
from scipy import integrate, special

_DB_TO_NEPER = math.log(10.0) / 20.0


class ChannelState(enum.IntEnum):
    LOS = 0
    SHADOW = 1
    DEEP_SHADOW = 2

    @classmethod
    def parse(cls, value) -> "ChannelState":
        if isinstance(value, ChannelState):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        try:
            return _STATE_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown channel state {value!r}") from None

    @property
    def label(self) -> str:
        return _STATE_LABELS[self]


_STATE_ALIASES = {
    "los": ChannelState.LOS,
    "lineofsight": ChannelState.LOS,
    "shadow": ChannelState.SHADOW,
    "deepshadow": ChannelState.DEEP_SHADOW,
}
_STATE_LABELS = {
    ChannelState.LOS: "LOS",
    ChannelState.SHADOW: "Shadow",
    ChannelState.DEEP_SHADOW: "DeepShadow",
}

STATES = tuple(ChannelState)


class IntegrationError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class LooParams:
    """Loo parameters in dB. ``mp_db = -inf`` means no multipath."""

    alpha_db: float
    psi_db: float
    mp_db: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha_db) and math.isfinite(self.psi_db)):
            raise ValueError("alpha_db and psi_db must be finite")
        if self.psi_db < 0:
            raise ValueError(f"psi_db must be >= 0, got {self.psi_db}")
        if math.isnan(self.mp_db) or self.mp_db == math.inf:
            raise ValueError(f"mp_db must be finite or -inf, got {self.mp_db}")


@dataclass(frozen=True)
class LooInternal:
    mu: float
    d0: float
    b0: float

    def __post_init__(self):
        if self.d0 < 0 or self.b0 < 0:
            raise ValueError("d0 and b0 must be non-negative")


def loo_to_internal(p: LooParams) -> LooInternal:
    sqrt_d0 = p.psi_db * _DB_TO_NEPER
    return LooInternal(
        mu=p.alpha_db * _DB_TO_NEPER,
        d0=sqrt_d0 * sqrt_d0,
        b0=10.0 ** (p.mp_db / 10.0) / 2.0,
    )


def internal_to_loo(i: LooInternal) -> LooParams:
    mp_db = 10.0 * math.log10(2.0 * i.b0) if i.b0 > 0 else -math.inf
    return LooParams(
        alpha_db=i.mu / _DB_TO_NEPER,
        psi_db=math.sqrt(i.d0) / _DB_TO_NEPER,
        mp_db=mp_db,
    )


def _log_ive(x):
    # ln(I0(x) * exp(-x)); ive never overflows for x >= 0
    return np.log(special.ive(0, x))


def bessel_i0_log(x: float) -> float:
    """Natural log of the modified Bessel function I0, finite for large x."""
    if x < 0:
        raise ValueError(f"bessel_i0_log requires x >= 0, got {x!r}")
    return float(_log_ive(x) + x)


def _rice_pdf(r: float, s: float, b0: float) -> float:
    if r == 0.0:
        return 0.0
    log_val = math.log(r / b0) - (r - s) ** 2 / (2 * b0) + float(_log_ive(r * s / b0))
    return math.exp(log_val)


def _loo_pdf_scalar(r: float, internal: LooInternal) -> float:
    if r < 0:
        raise ValueError(f"amplitude must be >= 0, got {r!r}")
    mu, d0, b0 = internal.mu, internal.d0, internal.b0
    if b0 <= 0:
        raise ValueError("Loo density requires a multipath component (b0 > 0)")
    if r == 0.0:
        return 0.0
    if d0 == 0.0:
        return _rice_pdf(r, math.exp(mu), b0)

    width = 8.0 * math.sqrt(d0)
    lo, hi = mu - width, mu + width
    log_pref = math.log(r / (b0 * math.sqrt(2 * math.pi * d0)))

    # integrate over u = ln(s); ds / s = du
    def integrand(u):
        s = math.exp(u)
        return math.exp(log_pref - (u - mu) ** 2 / (2 * d0) - (r - s) ** 2 / (2 * b0)
                        + float(_log_ive(r * s / b0)))

    points = [math.log(r)] if lo < math.log(r) < hi else None
    value, err, *_ = integrate.quad(integrand, lo, hi, points=points, full_output=1,
                                    epsabs=1e-13, epsrel=1e-10, limit=400)
    if err > 1e-6:
        raise IntegrationError(f"Loo pdf quadrature error estimate {err:.3g} at r={r}")
    return value


def loo_pdf(r, p: LooParams):
    """Amplitude density of the Loo model, scalar or elementwise over an array."""
    internal = loo_to_internal(p)
    if np.ndim(r) == 0:
        return _loo_pdf_scalar(float(r), internal)
    r = np.asarray(r, dtype=float)
    return np.array([_loo_pdf_scalar(v, internal) for v in r.ravel()]).reshape(r.shape)


def amplitude_upper_bound(p: LooParams, tail_sigma: float = 9.0) -> float:
    """An amplitude beyond which the Loo density is negligible."""
    i = loo_to_internal(p)
    return math.exp(i.mu + tail_sigma * math.sqrt(i.d0)) + tail_sigma * math.sqrt(i.b0)


def loo_cdf_grid(p: LooParams, points: int = 2001, r_max: float | None = None):
    """Tabulate the CDF by cumulative Simpson integration of :func:`loo_pdf`.

    Returns ``(r, cdf)`` on a uniform grid from 0 to ``r_max``.
    """
    if r_max is None:
        r_max = amplitude_upper_bound(p)
    r = np.linspace(0.0, r_max, points)
    pdf = loo_pdf(r, p)
    cdf = integrate.cumulative_simpson(pdf, x=r, initial=0.0)
    return r, cdf


def mixture_pdf(r, chain: "MarkovChain", per_state: Sequence[LooParams]):
    if len(per_state) != len(chain.state_probs):
        raise ValueError("need one LooParams per chain state")
    total = 0.0
    for weight, params in zip(chain.state_probs, per_state):
        if weight > 0:
            total = total + weight * loo_pdf(r, params)
    return total if np.ndim(r) else float(total)


def sample_loo(p: LooParams, count: int, rng: np.random.Generator,
               random_phase: bool = False) -> np.ndarray:
    """Draw ``count`` i.i.d. complex channel gains.

    The direct path is ``10**(x/20)`` with ``x ~ N(alpha, psi**2)``, by default
    with zero phase; the multipath is ``sqrt(b0) * (g1 + j g2)``.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    b0 = loo_to_internal(p).b0
    direct = 10.0 ** (rng.normal(p.alpha_db, p.psi_db, size=count) / 20.0)
    g = rng.standard_normal((2, count))
    h = direct.astype(complex)
    if random_phase:
        h = h * np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=count))
    if b0 > 0:
        h = h + math.sqrt(b0) * (g[0] + 1j * g[1])
    return h


@dataclass(frozen=True)
class MarkovChain:
    state_probs: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.state_probs, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        n = probs.shape[0] if probs.ndim == 1 else -1
        if probs.ndim != 1 or trans.shape != (n, n):
            raise ValueError("state_probs must be length n and transition n x n")
        if np.any(probs < 0) or np.any(probs > 1) or np.any(trans < 0) or np.any(trans > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"state_probs sum to {probs.sum()!r}, expected 1")
        bad_rows = np.flatnonzero(np.abs(trans.sum(axis=1) - 1.0) > 1e-12)
        if bad_rows.size:
            raise ValueError(f"transition rows {bad_rows.tolist()} do not sum to 1")
        object.__setattr__(self, "state_probs", probs)
        object.__setattr__(self, "transition", trans)


def is_primitive(transition: np.ndarray) -> bool:
    """True when the chain is irreducible and aperiodic.

    A non-negative n x n matrix is primitive iff its ((n-1)**2 + 1)-th power
    is strictly positive.
    """
    n = transition.shape[0]
    adj = (transition > 0).astype(np.int64)
    power = np.eye(n, dtype=np.int64)
    for _ in range((n - 1) ** 2 + 1):
        power = np.minimum(power @ adj, 1)
    return bool(np.all(power > 0))


def stationary_distribution(chain: MarkovChain, tol: float = 1e-12,
                            max_iter: int = 1_000_000) -> np.ndarray:
    if not is_primitive(chain.transition):
        raise ConvergenceError("transition matrix is not irreducible and aperiodic")
    n = chain.transition.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ chain.transition
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    raise ConvergenceError(f"no convergence after {max_iter} iterations")


def sample_state_sequence(chain: MarkovChain, steps: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Simulate ``steps`` states; returns an int8 array of ChannelState values."""
    if steps <= 0:
        raise ValueError("steps must be positive")
    u = rng.random(steps)
    cum_init = np.cumsum(chain.state_probs)
    cum_rows = np.cumsum(chain.transition, axis=1)
    cum_rows[:, -1] = 1.0
    cum_init[-1] = 1.0
    rows = [row.tolist() for row in cum_rows]
    out = np.empty(steps, dtype=np.int8)
    state = int(np.searchsorted(cum_init, u[0], side="right"))
    out[0] = state
    last = len(rows[0]) - 1
    for t, draw in enumerate(u[1:].tolist(), start=1):
        row = rows[state]
        state = 0
        while state < last and draw >= row[state]:
            state += 1
        out[t] = state
    return out


ENVIRONMENTS = ("open", "suburban", "intermediate_tree_shadow", "heavy_tree_shadow", "urban")
ELEVATION_RANGE = (40.0, 80.0)


@dataclass
class EnvironmentTable:
    environment: str
    entries: dict[tuple[float, ChannelState], LooParams] = field(default_factory=dict)
    chain: dict[float, MarkovChain] = field(default_factory=dict)

    @property
    def elevations(self) -> list[float]:
        return sorted({elev for elev, _ in self.entries} | set(self.chain))

    def nearest_elevation(self, elevation_deg: float) -> float:
        elevs = self.elevations
        if not elevs[0] <= elevation_deg <= elevs[-1]:
            raise TableError(f"elevation {elevation_deg} outside table span "
                             f"[{elevs[0]}, {elevs[-1]}] for {self.environment}")
        # ties resolve to the lower elevation
        return min(elevs, key=lambda e: (abs(e - elevation_deg), e))

    def lookup(self, elevation_deg: float, state) -> LooParams:
        elev = self.nearest_elevation(elevation_deg)
        return self.entries[(elev, ChannelState.parse(state))]

    def chain_at(self, elevation_deg: float) -> MarkovChain:
        return self.chain[self.nearest_elevation(elevation_deg)]

    def per_state(self, elevation_deg: float) -> list[LooParams]:
        return [self.lookup(elevation_deg, s) for s in STATES]


def _as_float(value, where: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise TableError(f"{where}: expected a number, got {value!r}") from None


def _parse_environment(name: str, section: Mapping) -> EnvironmentTable:
    if not isinstance(section, Mapping):
        raise TableError(f"environment {name!r} must be a mapping")
    table = EnvironmentTable(environment=name)
    for n, item in enumerate(section.get("entries") or []):
        where = f"{name}.entries[{n}]"
        try:
            elev = _as_float(item["elevation"], where)
            state = ChannelState.parse(item["state"])
            params = LooParams(_as_float(item["alpha_db"], where),
                               _as_float(item["psi_db"], where),
                               _as_float(item["mp_db"], where))
        except KeyError as exc:
            raise TableError(f"{where}: missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise TableError(f"{where}: {exc}") from None
        if (elev, state) in table.entries:
            raise TableError(f"{where}: duplicate cell ({elev:g}, {state.label})")
        table.entries[(elev, state)] = params
    for n, item in enumerate(section.get("chains") or []):
        where = f"{name}.chains[{n}]"
        try:
            elev = _as_float(item["elevation"], where)
            table.chain[elev] = MarkovChain(np.array(item["state_probs"], dtype=float),
                                            np.array(item["transition"], dtype=float))
        except KeyError as exc:
            raise TableError(f"{where}: missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise TableError(f"{where}: {exc}") from None
    return table


def _validate(table: EnvironmentTable) -> None:
    if not table.elevations:
        raise TableError(f"environment {table.environment!r} has no entries")
    problems = []
    lo, hi = ELEVATION_RANGE
    for elev in table.elevations:
        if not lo <= elev <= hi:
            problems.append(f"elevation {elev:g} outside [{lo:g}, {hi:g}]")
        for state in STATES:
            if (elev, state) not in table.entries:
                problems.append(f"missing cell ({elev:g}, {state.label})")
        if elev not in table.chain:
            problems.append(f"missing chain at elevation {elev:g}")
    if problems:
        raise TableError(f"environment {table.environment!r}: " + "; ".join(problems))


def load_environment_table(source: str) -> dict[str, EnvironmentTable]:
    """Parse environment tables from YAML text.

    Schema::

        environments:
          <name>:
            entries:
              - {elevation: 40, state: LOS, alpha_db: -0.5, psi_db: 1.0, mp_db: -18}
              ...
            chains:
              - {elevation: 40, state_probs: [p0, p1, p2], transition: [[...], [...], [...]]}
    """
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise TableError(f"cannot parse environment table: {exc}") from None
    if not isinstance(doc, Mapping) or not isinstance(doc.get("environments"), Mapping) \
            or not doc["environments"]:
        raise TableError("environment table must contain a non-empty 'environments' mapping")
    tables = {}
    for name, section in doc["environments"].items():
        table = _parse_environment(str(name), section)
        _validate(table)
        tables[str(name)] = table
    return tables


def load_environment_file(path) -> dict[str, EnvironmentTable]:
    with open(path, encoding="utf-8") as fh:
        return load_environment_table(fh.read())


def default_environment_tables() -> dict[str, EnvironmentTable]:
    """The shipped synthetic table (not measured data)."""
    from importlib.resources import files
    text = files("satjscc").joinpath("data/synthetic_environments.yaml").read_text("utf-8")
    return load_environment_table(text)


def states_from(values: Iterable) -> list[ChannelState]:
    return [ChannelState.parse(v) for v in values]
