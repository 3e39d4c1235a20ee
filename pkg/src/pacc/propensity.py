"""Propensity-score route: observational generation, logistic fitting,
median-normalised rejection sampling, ATE, sample sizes, decision rule.

Records are (x, z, y) with binary covariates x drawn independently, a
logistic treatment-assignment model, and an outcome probability that is
linear in treatment and covariates. The decision pipeline fits a
propensity model on one slice of the data, rebalances a second slice by
rejection sampling, and thresholds the ATE of the survivors.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from pacc.core import (
    Decision,
    DegenerateFitError,
    InvalidArgumentError,
    ModelChoice,
    PipelineFailureError,
    RngStream,
    UndefinedAteError,
    as_generator,
)

__all__ = [
    "PsParams",
    "ObsRecord",
    "ObsDataset",
    "PropensityModel",
    "PsSampleSizes",
    "generate_obs",
    "fit_logistic",
    "l1_propensity_error",
    "rejection_sample",
    "ate",
    "ps_sample_sizes",
    "ps_decide",
    "ps_pipeline",
    "ate_decision",
    "lemma1_bound",
]

_ENUM_LIMIT = 20  # exact enumeration over 2^n covariate configurations
_WEIGHT_CAP = 30.0  # |weight| beyond this is treated as separation


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=np.float64)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class PsParams:
    """Generator parameters for the observational factorisation Q, P, R.

    Q draws each covariate independently as Bernoulli(covariate_probs[j]),
    P(Z=1 | x) is logistic in x, and the outcome probability is
    outcome_base + effect * z + confound_weights . x. Construction checks
    bounded positivity against ``positivity_floor`` and that every
    composed outcome probability stays strictly inside (0, 1); nothing is
    clamped later.
    """

    n_covariates: int
    treat_weights: tuple[float, ...]
    treat_bias: float
    positivity_floor: float
    outcome_base: float
    effect: float
    confound_weights: tuple[float, ...]
    covariate_probs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        n = self.n_covariates
        if n < 1:
            raise InvalidArgumentError("n_covariates must be at least 1")
        object.__setattr__(self, "treat_weights", tuple(float(w) for w in self.treat_weights))
        object.__setattr__(
            self, "confound_weights", tuple(float(c) for c in self.confound_weights)
        )
        if len(self.treat_weights) != n or len(self.confound_weights) != n:
            raise InvalidArgumentError("weight vectors must have length n_covariates")
        if self.covariate_probs is None:
            object.__setattr__(self, "covariate_probs", (0.5,) * n)
        else:
            probs = tuple(float(p) for p in self.covariate_probs)
            if len(probs) != n:
                raise InvalidArgumentError("covariate_probs must have length n_covariates")
            if any(not 0.0 < p < 1.0 for p in probs):
                raise InvalidArgumentError("covariate probabilities must lie in (0, 1)")
            object.__setattr__(self, "covariate_probs", probs)
        if not 0.0 < self.positivity_floor < 0.5:
            raise InvalidArgumentError("positivity_floor must lie in (0, 0.5)")

        # Positivity over the full binary support reduces to the two
        # extremes of the monotone logistic index.
        lo = self.treat_bias + sum(min(w, 0.0) for w in self.treat_weights)
        hi = self.treat_bias + sum(max(w, 0.0) for w in self.treat_weights)
        p_lo = 1.0 / (1.0 + math.exp(-lo))
        p_hi = 1.0 / (1.0 + math.exp(-hi))
        if not (self.positivity_floor < p_lo and p_hi < 1.0 - self.positivity_floor):
            raise InvalidArgumentError(
                f"positivity violated: propensity range [{p_lo:.6g}, {p_hi:.6g}] "
                f"leaves ({self.positivity_floor}, {1 - self.positivity_floor})"
            )
        out_lo = self.outcome_base + min(self.effect, 0.0) + sum(
            min(c, 0.0) for c in self.confound_weights
        )
        out_hi = self.outcome_base + max(self.effect, 0.0) + sum(
            max(c, 0.0) for c in self.confound_weights
        )
        if not (0.0 < out_lo and out_hi < 1.0):
            raise InvalidArgumentError(
                f"outcome probabilities span [{out_lo:.6g}, {out_hi:.6g}], "
                "which leaves (0, 1)"
            )

    def propensity(self, x: np.ndarray) -> np.ndarray:
        """True P(Z=1 | x) for an (m, n) 0/1 matrix."""
        eta = x @ np.asarray(self.treat_weights) + self.treat_bias
        return _sigmoid(eta)

    def to_dict(self) -> dict:
        return {
            "n_covariates": self.n_covariates,
            "treat_weights": list(self.treat_weights),
            "treat_bias": self.treat_bias,
            "positivity_floor": self.positivity_floor,
            "outcome_base": self.outcome_base,
            "effect": self.effect,
            "confound_weights": list(self.confound_weights),
            "covariate_probs": list(self.covariate_probs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PsParams":
        probs = d.get("covariate_probs")
        return cls(
            n_covariates=int(d["n_covariates"]),
            treat_weights=tuple(d["treat_weights"]),
            treat_bias=float(d["treat_bias"]),
            positivity_floor=float(d["positivity_floor"]),
            outcome_base=float(d["outcome_base"]),
            effect=float(d["effect"]),
            confound_weights=tuple(d["confound_weights"]),
            covariate_probs=None if probs is None else tuple(probs),
        )


@dataclass(frozen=True)
class ObsRecord:
    """One observational draw: covariates, treatment, outcome (all 0/1)."""

    x: tuple[int, ...]
    z: int
    y: int


class ObsDataset:
    """Columnar sequence of observational records.

    Behaves as a sequence of ObsRecord but stores (N, n) covariate, z and
    y arrays so that bound-scale batches stay fast to fit and slice.
    """

    __slots__ = ("x", "z", "y")

    def __init__(self, x: np.ndarray, z: np.ndarray, y: np.ndarray):
        x = np.asarray(x, dtype=np.uint8)
        z = np.asarray(z, dtype=np.uint8)
        y = np.asarray(y, dtype=np.uint8)
        if x.ndim != 2:
            raise InvalidArgumentError("x must be a 2-D 0/1 matrix")
        if z.shape != (x.shape[0],) or y.shape != (x.shape[0],):
            raise InvalidArgumentError("z and y must be vectors matching x rows")
        self.x = x
        self.z = z
        self.y = y

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ObsDataset(self.x[i], self.z[i], self.y[i])
        return ObsRecord(
            x=tuple(int(v) for v in self.x[i]), z=int(self.z[i]), y=int(self.y[i])
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_records(cls, records: Iterable[ObsRecord]) -> "ObsDataset":
        records = list(records)
        if not records:
            raise InvalidArgumentError("cannot build a dataset from zero records")
        x = np.array([r.x for r in records], dtype=np.uint8)
        z = np.array([r.z for r in records], dtype=np.uint8)
        y = np.array([r.y for r in records], dtype=np.uint8)
        return cls(x, z, y)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(self.n_covariates)] + ["z", "y"])
        for i in range(len(self)):
            writer.writerow([int(v) for v in self.x[i]] + [int(self.z[i]), int(self.y[i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ObsDataset":
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2:
            raise InvalidArgumentError("CSV must contain a header and at least one record")
        header = rows[0]
        if len(header) < 3 or header[-2:] != ["z", "y"]:
            raise InvalidArgumentError("expected header x0..x{n-1},z,y")
        data = np.array([[int(v) for v in row] for row in rows[1:]], dtype=np.uint8)
        return cls(data[:, :-2], data[:, -2], data[:, -1])

    def to_json_obj(self) -> list:
        return [
            {"x": [int(v) for v in self.x[i]], "z": int(self.z[i]), "y": int(self.y[i])}
            for i in range(len(self))
        ]

    @classmethod
    def from_json_obj(cls, obj: list) -> "ObsDataset":
        return cls.from_records(
            ObsRecord(x=tuple(int(v) for v in r["x"]), z=int(r["z"]), y=int(r["y"]))
            for r in obj
        )


def as_obs_dataset(data) -> ObsDataset:
    if isinstance(data, ObsDataset):
        return data
    return ObsDataset.from_records(data)


@dataclass(frozen=True)
class PropensityModel:
    """Fitted logistic treatment model; predictions are always in (0, 1).

    ``capped`` records that fitting hit the weight cap (perfect or near
    separation) and stopped there instead of diverging.
    """

    weights: tuple[float, ...]
    bias: float
    capped: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not all(math.isfinite(w) for w in self.weights) or not math.isfinite(self.bias):
            raise InvalidArgumentError("model coefficients must be finite")

    def predict(self, x: np.ndarray) -> np.ndarray:
        """P(Z=1 | x) for an (m, n) 0/1 matrix."""
        eta = np.asarray(x, dtype=np.float64) @ np.asarray(self.weights) + self.bias
        return _sigmoid(eta)

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "bias": self.bias}

    @classmethod
    def from_dict(cls, d: dict) -> "PropensityModel":
        return cls(weights=tuple(d["weights"]), bias=float(d["bias"]))


@dataclass(frozen=True)
class PsSampleSizes:
    """Pipeline sizes: N1 to fit the propensity model, N2 into rejection
    sampling, N3 survivors required, and gamma = min(eps, delta, delta^2/4)."""

    gamma: float
    n1: int
    n3: int
    n2: int
    total: int

    def __post_init__(self) -> None:
        if min(self.n1, self.n2, self.n3) < 1:
            raise InvalidArgumentError("sample sizes must be at least 1")
        if self.total != self.n1 + self.n2:
            raise InvalidArgumentError("total must equal n1 + n2")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "n1": self.n1,
            "n3": self.n3,
            "n2": self.n2,
            "total": self.total,
        }


def generate_obs(
    params: PsParams, count: int, rng: RngStream | np.random.Generator
) -> ObsDataset:
    """Draw ``count`` records from the observational model Q * P * R."""
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    gen = as_generator(rng)
    n = params.n_covariates
    probs = np.asarray(params.covariate_probs)
    x = (gen.random((count, n)) < probs).astype(np.uint8)
    z = (gen.random(count) < params.propensity(x)).astype(np.uint8)
    p_y = (
        params.outcome_base
        + params.effect * z
        + x @ np.asarray(params.confound_weights)
    )
    y = (gen.random(count) < p_y).astype(np.uint8)
    return ObsDataset(x, z, y)


def fit_logistic(
    data, max_iters: int = 200, tol: float = 1e-8
) -> PropensityModel:
    """Fit P(Z=1 | x) by full-batch Newton ascent on the Bernoulli likelihood.

    Stops when the max-norm of the mean score drops below ``tol`` or after
    ``max_iters`` updates. Data with a single treatment arm cannot
    identify the model and raises DegenerateFitError; a weight walking
    past the cap (separation) stops the fit and flags the model instead
    of diverging.
    """
    ds = as_obs_dataset(data)
    if max_iters < 1:
        raise InvalidArgumentError("max_iters must be at least 1")
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    z = ds.z.astype(np.float64)
    n_treated = int(ds.z.sum())
    if n_treated == 0 or n_treated == len(ds):
        raise DegenerateFitError(
            f"all {len(ds)} records share one treatment arm; propensity not identifiable"
        )
    design = np.column_stack([ds.x.astype(np.float64), np.ones(len(ds))])
    coefs = np.zeros(design.shape[1])
    capped = False
    for _ in range(max_iters):
        p = _sigmoid(design @ coefs)
        score = design.T @ (z - p) / len(ds)
        if np.max(np.abs(score)) < tol:
            break
        w = p * (1.0 - p)
        hess = design.T @ (design * w[:, None]) / len(ds)
        hess[np.diag_indices_from(hess)] += 1e-12
        coefs = coefs + np.linalg.solve(hess, score)
        if np.max(np.abs(coefs)) > _WEIGHT_CAP:
            coefs = np.clip(coefs, -_WEIGHT_CAP, _WEIGHT_CAP)
            capped = True
            break
    return PropensityModel(
        weights=tuple(coefs[:-1]), bias=float(coefs[-1]), capped=capped
    )


def _enumerate_support(n: int) -> np.ndarray:
    if n > _ENUM_LIMIT:
        raise InvalidArgumentError(
            f"exact enumeration supports at most {_ENUM_LIMIT} covariates, got {n}"
        )
    grid = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    return grid.astype(np.float64)


def config_probabilities(params: PsParams) -> tuple[np.ndarray, np.ndarray]:
    """All 2^n covariate configurations and their exact Q-probabilities."""
    grid = _enumerate_support(params.n_covariates)
    probs = np.asarray(params.covariate_probs)
    q = np.prod(np.where(grid == 1.0, probs, 1.0 - probs), axis=1)
    return grid, q


def l1_propensity_error(model: PropensityModel, params: PsParams) -> float:
    """Exact E_Q |P(Z=1|X) - P'(Z=1|X)| by enumerating the covariate support."""
    grid, q = config_probabilities(params)
    return float(q @ np.abs(params.propensity(grid) - model.predict(grid)))


def rejection_sample(
    data, model: PropensityModel, rng: RngStream | np.random.Generator
) -> ObsDataset:
    """Keep each record with probability min(median(p_arm) / p_arm, 1).

    p_arm is the fitted probability of the record's own arm: P'(x) for
    treated records and 1 - P'(x) for untreated ones, with the median
    taken per arm over the input batch. An empty output is a legal
    outcome, reported by length, not an error.
    """
    ds = as_obs_dataset(data)
    gen = as_generator(rng)
    p1 = model.predict(ds.x)
    treated = ds.z == 1
    p_arm = np.where(treated, p1, 1.0 - p1)
    accept = np.ones(len(ds))
    for arm_mask in (treated, ~treated):
        if arm_mask.any():
            med = float(np.median(p_arm[arm_mask]))
            accept[arm_mask] = np.minimum(med / p_arm[arm_mask], 1.0)
    keep = gen.random(len(ds)) < accept
    return ObsDataset(ds.x[keep], ds.z[keep], ds.y[keep])


def ate(data) -> float:
    """Difference of arm-wise outcome means, E[Y | Z=1] - E[Y | Z=0]."""
    ds = as_obs_dataset(data)
    n1 = int(ds.z.sum())
    n0 = len(ds) - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedAteError(
            f"both arms are required for an ATE (treated={n1}, control={n0})"
        )
    y1 = int(ds.y[ds.z == 1].sum())
    y0 = int(ds.y[ds.z == 0].sum())
    return y1 / n1 - y0 / n0


def ps_sample_sizes(epsilon: float, delta: float, n_covariates: int) -> PsSampleSizes:
    """Pipeline sample sizes for the (epsilon, delta) guarantee.

    gamma = min(epsilon, delta, delta^2 / 4). N1 is the propensity-fitting
    size ceil((64 / gamma^2) * (2n * log(16e / gamma) + log(48 / epsilon))).
    N3 = ceil(log(6 / epsilon) / (2 gamma^2)) survivors suffice for the
    two-hypothesis ATE test at failure budget epsilon / 3, and
    N2 = ceil((N3 + log(3/epsilon)/2 + sqrt(2 N3 log(3/epsilon)
    + log(6/epsilon))) / delta) records enter rejection sampling.
    """
    if not 0.0 < epsilon < 1.0:
        raise InvalidArgumentError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta}")
    if n_covariates < 1:
        raise InvalidArgumentError("n_covariates must be at least 1")
    gamma = min(epsilon, delta, delta * delta / 4.0)
    n1 = math.ceil(
        64.0
        / gamma**2
        * (2.0 * n_covariates * math.log(16.0 * math.e / gamma) + math.log(48.0 / epsilon))
    )
    n3 = math.ceil(math.log(6.0 / epsilon) / (2.0 * gamma**2))
    log3e = math.log(3.0 / epsilon)
    n2 = math.ceil(
        (n3 + log3e / 2.0 + math.sqrt(2.0 * n3 * log3e + math.log(6.0 / epsilon))) / delta
    )
    return PsSampleSizes(gamma=gamma, n1=n1, n3=n3, n2=n2, total=n1 + n2)


@dataclass(frozen=True)
class PsPipelineResult:
    """Intermediate products of the decision pipeline, for reporting."""

    model: PropensityModel
    sizes: PsSampleSizes
    survivors: int
    ate: float


def ps_pipeline(
    data, delta: float, rng: RngStream | np.random.Generator, epsilon: float
) -> PsPipelineResult:
    """Run fit / rejection-sample / ATE at the sizes implied by (epsilon, delta).

    The first N1 records fit the propensity model, the next N2 go through
    rejection sampling, and the ATE is taken over the survivors. Fewer
    than N3 survivors is the halting branch and raises
    PipelineFailureError.
    """
    ds = as_obs_dataset(data)
    sizes = ps_sample_sizes(epsilon, delta, ds.n_covariates)
    if len(ds) < sizes.total:
        raise InvalidArgumentError(
            f"pipeline needs N1 + N2 = {sizes.total} records, got {len(ds)}"
        )
    model = fit_logistic(ds[: sizes.n1])
    adjusted = rejection_sample(ds[sizes.n1 : sizes.n1 + sizes.n2], model, rng)
    if len(adjusted) < sizes.n3:
        raise PipelineFailureError(
            f"rejection sampling kept {len(adjusted)} records, fewer than N3 = {sizes.n3}"
        )
    return PsPipelineResult(
        model=model, sizes=sizes, survivors=len(adjusted), ate=ate(adjusted)
    )


def ate_decision(statistic: float, delta: float) -> Decision:
    """Threshold rule on an ATE: M1 when statistic >= delta / 2 (ties to M1)."""
    threshold = delta / 2.0
    chosen = ModelChoice.M1 if statistic >= threshold else ModelChoice.M2
    return Decision(chosen=chosen, statistic=statistic, threshold=threshold)


def ps_decide(
    data, delta: float, rng: RngStream | np.random.Generator, epsilon: float
) -> Decision:
    """Choose M1 when the adjusted-sample ATE reaches delta / 2 (ties to M1)."""
    result = ps_pipeline(data, delta, rng, epsilon)
    return ate_decision(result.ate, delta)


def lemma1_bound(epsilon: float, gamma: float, delta_marginal: float, m: float) -> float:
    """Approximate-rejection-sampling bound (eps/delta + gamma)(delta/(delta-eps)) M.

    Valid whenever the marginal treatment probability exceeds the L1
    propensity error ``epsilon``; otherwise the bound is vacuous and the
    arguments are rejected.
    """
    if epsilon < 0 or gamma < 0:
        raise InvalidArgumentError("epsilon and gamma must be nonnegative")
    if not 0.0 < delta_marginal <= 1.0:
        raise InvalidArgumentError("delta_marginal must lie in (0, 1]")
    if not m > 0:
        raise InvalidArgumentError("the function ceiling m must be positive")
    if delta_marginal <= epsilon:
        raise InvalidArgumentError(
            f"bound is vacuous unless delta_marginal > epsilon "
            f"({delta_marginal} <= {epsilon})"
        )
    return (epsilon / delta_marginal + gamma) * (delta_marginal / (delta_marginal - epsilon)) * m
