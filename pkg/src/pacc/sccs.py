"""Self-controlled case series: generation, likelihood, estimators, decision rule.

Each patient is observed for a fixed number of days with a single
exposure window placed uniformly at random. Events arrive as independent
per-day Bernoulli draws whose rate is exp(phi_i) off exposure and
exp(phi_i + beta) on exposure; only patients with at least one event form
a case series. The conditional likelihood of where events fall does not
involve phi, which is what lets the design absorb time-invariant
confounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from pacc.core import (
    Decision,
    GenerationFailureError,
    InvalidArgumentError,
    ModelChoice,
    RngStream,
    as_generator,
)

__all__ = [
    "PointLaw",
    "TwoPointLaw",
    "law_from_dict",
    "SccsDesign",
    "SccsParams",
    "PatientTimeline",
    "SccsDataset",
    "generate_sccs",
    "sccs_loglik",
    "sccs_mle_closed",
    "sccs_mle_numeric",
    "sccs_sample_size",
    "sccs_decide",
]

# Rows per generation chunk are sized to keep the per-day uniform matrix
# around 2M cells regardless of the observation length.
_CHUNK_CELLS = 2_000_000


@dataclass(frozen=True)
class PointLaw:
    """Degenerate law: every draw equals ``value``."""

    value: float

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.value)

    def support(self) -> tuple[float, float]:
        return (self.value, self.value)

    def to_dict(self) -> dict:
        return {"kind": "point", "value": self.value}


@dataclass(frozen=True)
class TwoPointLaw:
    """Two-point mixture: ``high`` with probability ``weight_high``, else ``low``."""

    low: float
    high: float
    weight_high: float = 0.5

    def __post_init__(self) -> None:
        if not self.low <= self.high:
            raise InvalidArgumentError("two-point law requires low <= high")
        if not 0.0 < self.weight_high < 1.0:
            raise InvalidArgumentError("weight_high must lie in (0, 1)")

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        return np.where(gen.random(size) < self.weight_high, self.high, self.low)

    def support(self) -> tuple[float, float]:
        return (self.low, self.high)

    def to_dict(self) -> dict:
        return {
            "kind": "two_point",
            "low": self.low,
            "high": self.high,
            "weight_high": self.weight_high,
        }


def law_from_dict(d: dict) -> PointLaw | TwoPointLaw:
    kind = d.get("kind")
    if kind == "point":
        return PointLaw(value=float(d["value"]))
    if kind == "two_point":
        return TwoPointLaw(
            low=float(d["low"]),
            high=float(d["high"]),
            weight_high=float(d.get("weight_high", 0.5)),
        )
    raise InvalidArgumentError(f"unknown law kind {kind!r}")


@dataclass(frozen=True)
class SccsDesign:
    """Observation window shared by every patient.

    Days are 1-based; the exposure window [start, start + exposure_days)
    must fit inside [1, total_days], so feasible starts run from 1 to
    total_days - exposure_days + 1.
    """

    total_days: int
    exposure_days: int
    exposure_start_law: str = "uniform"

    def __post_init__(self) -> None:
        if self.total_days < 2:
            raise InvalidArgumentError("total_days must be at least 2")
        if self.exposure_days < 1:
            raise InvalidArgumentError("exposure_days must be at least 1")
        if self.exposure_days >= self.total_days:
            raise InvalidArgumentError(
                f"exposure_days ({self.exposure_days}) must be smaller than "
                f"total_days ({self.total_days})"
            )
        if self.exposure_start_law != "uniform":
            raise InvalidArgumentError(
                f"unsupported exposure_start_law {self.exposure_start_law!r}"
            )

    @property
    def control_days(self) -> int:
        return self.total_days - self.exposure_days

    @property
    def max_start(self) -> int:
        return self.total_days - self.exposure_days + 1

    def to_dict(self) -> dict:
        return {"total_days": self.total_days, "exposure_days": self.exposure_days}

    @classmethod
    def from_dict(cls, d: dict) -> "SccsDesign":
        return cls(total_days=int(d["total_days"]), exposure_days=int(d["exposure_days"]))


@dataclass(frozen=True)
class SccsParams:
    """Rate parameters of the per-day Bernoulli event model.

    ``phi_law`` draws the per-patient log baseline daily rate, ``beta`` is
    the log relative incidence while exposed, and ``lambda_floor`` is the
    conservative lower bound on the per-day event probability that the
    sample-size bound consumes. Rates must stay valid probabilities:
    exp(max phi + max(beta, 0)) <= 1, and the floor may not exceed the
    smallest baseline rate.
    """

    phi_law: PointLaw | TwoPointLaw
    beta: float
    lambda_floor: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.beta):
            raise InvalidArgumentError("beta must be finite")
        lo, hi = self.phi_law.support()
        peak = math.exp(hi + max(self.beta, 0.0))
        if peak > 1.0:
            raise InvalidArgumentError(
                f"per-day event probability exp(phi + max(beta, 0)) = {peak:.6g} exceeds 1"
            )
        if not 0.0 < self.lambda_floor < 1.0:
            raise InvalidArgumentError("lambda_floor must lie in (0, 1)")
        if self.lambda_floor > math.exp(lo):
            raise InvalidArgumentError(
                f"lambda_floor {self.lambda_floor} exceeds the smallest baseline "
                f"rate exp({lo}) = {math.exp(lo):.6g}"
            )

    def to_dict(self) -> dict:
        return {
            "phi_law": self.phi_law.to_dict(),
            "beta": self.beta,
            "lambda_floor": self.lambda_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SccsParams":
        return cls(
            phi_law=law_from_dict(d["phi_law"]),
            beta=float(d["beta"]),
            lambda_floor=float(d["lambda_floor"]),
        )


@dataclass(frozen=True, eq=False)
class PatientTimeline:
    """One case: exposure start day and the sorted days on which events occurred."""

    exposure_start: int
    event_days: np.ndarray

    def __post_init__(self) -> None:
        days = np.asarray(self.event_days, dtype=np.int64)
        object.__setattr__(self, "event_days", days)
        if days.size == 0:
            raise InvalidArgumentError("a case series timeline needs at least one event")
        if days.size > 1 and not np.all(np.diff(days) > 0):
            raise InvalidArgumentError("event_days must be strictly increasing")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatientTimeline):
            return NotImplemented
        return self.exposure_start == other.exposure_start and np.array_equal(
            self.event_days, other.event_days
        )


class SccsDataset:
    """A case series: shared design plus one timeline per patient.

    Stored columnar (starts plus a CSR-style event-day layout) so that
    bound-scale cohorts stay cheap; ``patients`` materialises timeline
    records on demand. ``nu1`` and ``nu2`` are the total exposed and
    unexposed event counts across patients.
    """

    __slots__ = ("design", "_starts", "_event_days", "_indptr", "nu1", "nu2")

    def __init__(
        self,
        design: SccsDesign,
        starts: np.ndarray,
        event_days: np.ndarray,
        indptr: np.ndarray,
        nu1: int,
        nu2: int,
    ):
        self.design = design
        self._starts = starts
        self._event_days = event_days
        self._indptr = indptr
        self.nu1 = int(nu1)
        self.nu2 = int(nu2)
        if self.nu1 < 0 or self.nu2 < 0:
            raise InvalidArgumentError("event counts cannot be negative")
        if self.nu1 + self.nu2 != event_days.size:
            raise InvalidArgumentError("nu1 + nu2 must equal the total event count")

    @classmethod
    def from_patients(
        cls, design: SccsDesign, patients: Sequence[PatientTimeline]
    ) -> "SccsDataset":
        """Build and fully validate a dataset from timeline records."""
        if len(patients) == 0:
            raise InvalidArgumentError("a case series needs at least one patient")
        starts = np.empty(len(patients), dtype=np.int64)
        chunks = []
        indptr = np.zeros(len(patients) + 1, dtype=np.int64)
        for i, pt in enumerate(patients):
            if not 1 <= pt.exposure_start <= design.max_start:
                raise InvalidArgumentError(
                    f"patient {i}: exposure_start {pt.exposure_start} outside "
                    f"[1, {design.max_start}]"
                )
            days = pt.event_days
            if days[0] < 1 or days[-1] > design.total_days:
                raise InvalidArgumentError(
                    f"patient {i}: event days outside [1, {design.total_days}]"
                )
            starts[i] = pt.exposure_start
            chunks.append(days)
            indptr[i + 1] = indptr[i] + days.size
        event_days = np.concatenate(chunks)
        nu1 = _count_exposed(event_days, np.repeat(starts, np.diff(indptr)), design)
        return cls(design, starts, event_days, indptr, nu1, event_days.size - nu1)

    def __len__(self) -> int:
        return self._starts.size

    def __getitem__(self, i: int) -> PatientTimeline:
        lo, hi = self._indptr[i], self._indptr[i + 1]
        return PatientTimeline(
            exposure_start=int(self._starts[i]),
            event_days=self._event_days[lo:hi].copy(),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def patients(self) -> list[PatientTimeline]:
        return [self[i] for i in range(len(self))]

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "patients": [
                {
                    "exposure_start": int(self._starts[i]),
                    "event_days": self._event_days[self._indptr[i] : self._indptr[i + 1]]
                    .astype(int)
                    .tolist(),
                }
                for i in range(len(self))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SccsDataset":
        design = SccsDesign.from_dict(d["design"])
        patients = [
            PatientTimeline(
                exposure_start=int(p["exposure_start"]),
                event_days=np.asarray(p["event_days"], dtype=np.int64),
            )
            for p in d["patients"]
        ]
        return cls.from_patients(design, patients)


def _count_exposed(event_days: np.ndarray, starts_per_event: np.ndarray, design: SccsDesign) -> int:
    exposed = (event_days >= starts_per_event) & (
        event_days < starts_per_event + design.exposure_days
    )
    return int(np.count_nonzero(exposed))


def generate_sccs(
    design: SccsDesign,
    params: SccsParams,
    cases: int,
    rng: RngStream | np.random.Generator,
    max_attempts_per_case: int = 1_000_000,
) -> SccsDataset:
    """Draw a case series of exactly ``cases`` patients.

    Exposure starts are uniform over feasible days and independent of
    events; events are per-day Bernoulli at exp(phi_i) off exposure and
    exp(phi_i + beta) on exposure. Patients without events are redrawn
    (case-series conditioning); if the total number of attempts exceeds
    ``cases * max_attempts_per_case`` a GenerationFailureError is raised,
    which signals baseline rates too small for conditioning to terminate
    in practice.
    """
    if cases < 1:
        raise InvalidArgumentError("cases must be at least 1")
    gen = as_generator(rng)
    total, expo = design.total_days, design.exposure_days
    days = np.arange(1, total + 1, dtype=np.int64)

    chunk_rows = max(1, min(cases, _CHUNK_CELLS // total))
    attempts = 0
    budget = cases * max_attempts_per_case
    kept_starts: list[np.ndarray] = []
    kept_counts: list[np.ndarray] = []
    kept_days: list[np.ndarray] = []
    kept_nu1 = 0
    accepted = 0

    while accepted < cases:
        batch = min(chunk_rows, max(cases - accepted, 1))
        if attempts + batch > budget:
            batch = budget - attempts
            if batch <= 0:
                raise GenerationFailureError(
                    f"accepted only {accepted}/{cases} case series after "
                    f"{attempts} attempts; baseline rate too small"
                )
        attempts += batch

        phi = params.phi_law.sample(gen, batch)
        starts = gen.integers(1, design.max_start + 1, size=batch)
        exposed = (days >= starts[:, None]) & (days < (starts + expo)[:, None])
        prob = np.where(
            exposed, np.exp(phi + params.beta)[:, None], np.exp(phi)[:, None]
        )
        events = gen.random((batch, total)) < prob

        keep = events.any(axis=1)
        if not keep.any():
            continue
        events = events[keep]
        starts = starts[keep]
        exposed = exposed[keep]
        if events.shape[0] > cases - accepted:
            events = events[: cases - accepted]
            starts = starts[: cases - accepted]
            exposed = exposed[: cases - accepted]

        rows, cols = np.nonzero(events)
        kept_starts.append(starts)
        kept_counts.append(np.bincount(rows, minlength=events.shape[0]))
        kept_days.append(cols + 1)
        kept_nu1 += int(np.count_nonzero(events & exposed))
        accepted += events.shape[0]

    starts_all = np.concatenate(kept_starts)
    counts_all = np.concatenate(kept_counts)
    days_all = np.concatenate(kept_days)
    indptr = np.zeros(cases + 1, dtype=np.int64)
    np.cumsum(counts_all, out=indptr[1:])
    return SccsDataset(
        design, starts_all, days_all, indptr, kept_nu1, days_all.size - kept_nu1
    )


def sccs_loglik(dataset: SccsDataset, beta: float) -> float:
    """Conditional log-likelihood of the observed event placement at ``beta``.

    Each event contributes the log-probability of the interval it fell in:
    an exposed event gives log(e * exp(beta) / ((t - e) + e * exp(beta)))
    for exposure length e and total length t, and an unexposed event gives
    the log of its own interval length (pre- or post-exposure) over the
    same denominator. Per-patient baselines cancel, so they never appear.
    """
    design = dataset.design
    total, expo = design.total_days, design.exposure_days
    control = float(design.control_days)
    # Stable log-denominator: log((t - e) + e * exp(beta)).
    log_denom = float(np.logaddexp(math.log(control), math.log(expo) + beta))

    days = dataset._event_days
    starts = np.repeat(dataset._starts, np.diff(dataset._indptr))
    exposed = (days >= starts) & (days < starts + expo)
    n_exposed = int(np.count_nonzero(exposed))

    ll = n_exposed * (math.log(expo) + beta)
    pre = days < starts
    # Interval weights: pre-exposure length start - 1, post length
    # total - expo - start + 1; a zero-length interval cannot hold events.
    off = ~exposed
    weights = np.where(
        pre[off], starts[off] - 1, total - expo - starts[off] + 1
    ).astype(np.float64)
    ll += float(np.log(weights).sum())
    ll -= days.size * log_denom
    return ll


def sccs_mle_closed(dataset: SccsDataset) -> float:
    """Closed-form maximum-likelihood estimate of the log relative incidence.

    Equals log(nu1 / exposure_days) - log(nu2 / control_days). With events
    in only one period the estimate is a signed-infinity sentinel (+inf if
    all events are exposed, -inf if none are), which the decision rule
    consumes directly.
    """
    nu1, nu2 = dataset.nu1, dataset.nu2
    if nu1 == 0 and nu2 == 0:
        raise InvalidArgumentError("a valid case series has at least one event")
    if nu2 == 0:
        return math.inf
    if nu1 == 0:
        return -math.inf
    design = dataset.design
    return math.log(nu1 / design.exposure_days) - math.log(nu2 / design.control_days)


def sccs_mle_numeric(dataset: SccsDataset, tolerance: float = 1e-8) -> float:
    """Numeric oracle for the closed form: maximise the likelihood directly.

    Derivative-free bounded search over a bracket wide enough to contain
    any finite maximiser; requires events in both periods.
    """
    if not tolerance > 0:
        raise InvalidArgumentError("tolerance must be positive")
    if dataset.nu1 == 0 or dataset.nu2 == 0:
        raise InvalidArgumentError(
            "numeric estimate needs events in both the exposed and unexposed periods"
        )
    design = dataset.design
    ratio = design.control_days / design.exposure_days
    half_width = math.log(dataset.nu1 + dataset.nu2) + abs(math.log(ratio)) + 1.0
    res = minimize_scalar(
        lambda b: -sccs_loglik(dataset, b),
        bounds=(-half_width, half_width),
        method="bounded",
        options={"xatol": tolerance},
    )
    return float(res.x)


def sccs_sample_size(epsilon: float, delta: float, lambda_floor: float) -> int:
    """Number of cases sufficient for the (epsilon, delta) guarantee.

    Ceiling of 8 / (lambda^2 * log(delta)^2) * log(4 / epsilon), natural
    logarithms throughout. Only risk ratios above 1 are supported; at
    delta = 1 the threshold degenerates.
    """
    if not 0.0 < epsilon < 1.0:
        raise InvalidArgumentError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not delta > 1.0:
        raise InvalidArgumentError(f"delta must exceed 1 on the risk-ratio scale, got {delta}")
    if not 0.0 < lambda_floor < 1.0:
        raise InvalidArgumentError(f"lambda_floor must lie in (0, 1), got {lambda_floor}")
    bound = 8.0 / (lambda_floor**2 * math.log(delta) ** 2) * math.log(4.0 / epsilon)
    return math.ceil(bound)


def sccs_decide(dataset: SccsDataset, delta: float) -> Decision:
    """Choose M1 when the estimated log relative incidence reaches log(delta)/2.

    Ties at the threshold go to M1; the infinity sentinels decide in the
    direction of their sign.
    """
    if not delta > 1.0:
        raise InvalidArgumentError(f"delta must exceed 1 on the risk-ratio scale, got {delta}")
    statistic = sccs_mle_closed(dataset)
    threshold = math.log(delta) / 2.0
    chosen = ModelChoice.M1 if statistic >= threshold else ModelChoice.M2
    return Decision(chosen=chosen, statistic=statistic, threshold=threshold)
