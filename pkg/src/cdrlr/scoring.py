"""Pair scorers: the two-stage logistic model and three simpler baselines.

Labels follow the convention same user = 1, so high scores support the
same-user hypothesis.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import ClassVar, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from cdrlr.core_model import PairLabel, TrackPair
from cdrlr.switching import (
    DEFAULT_FEATURES,
    FEATURE_NAMES,
    ScalerParams,
    apply_scaler,
    feature_columns,
    fit_robust_scaler,
    switch_feature_matrix,
    validate_features,
)

N_SCORE_BINS = 10
SCORE_BIN_EDGES = np.arange(N_SCORE_BINS + 1) / N_SCORE_BINS

DISLOCATION_MAX_DT_S = 15 * 60
DISLOCATION_MIN_DISTANCE_M = 25_000.0


class UnscorableError(ValueError):
    """A track pair without switches carries no evidence to score."""


# -- logistic regression ----------------------------------------------------

@dataclass(frozen=True)
class LogisticModel:
    weights: tuple[float, ...]
    intercept: float
    l2_lambda: float = 1.0
    n_iter: int = 0
    converged: bool = True

    def __post_init__(self):
        if not all(np.isfinite(self.weights)) or not np.isfinite(self.intercept):
            raise ValueError("logistic model parameters must be finite")

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.weights])

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != len(self.weights):
            raise ValueError(f"expected {len(self.weights)} features, got {X.shape[-1]}")
        return X @ np.asarray(self.weights) + self.intercept

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "intercept": self.intercept,
                "l2_lambda": self.l2_lambda, "n_iter": self.n_iter, "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(tuple(float(w) for w in d["weights"]), float(d["intercept"]),
                   float(d["l2_lambda"]), int(d.get("n_iter", 0)), bool(d.get("converged", True)))


def predict_proba(m: LogisticModel, x) -> Union[float, np.ndarray]:
    """Logistic of ``w.x + b``; a 1-D ``x`` gives a float, a matrix one value per row."""
    x = np.asarray(x, dtype=float)
    p = expit(m.decision_function(x))
    return float(p) if x.ndim == 1 else p


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(len(X)), X])


def logistic_objective(theta, X, y, l2_lambda: float) -> float:
    """Summed negative log-likelihood plus ``l2_lambda * |w|^2 / 2`` (intercept free)."""
    Z = _design(X)
    z = Z @ theta
    w = theta[1:]
    return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * l2_lambda * (w @ w))


def logistic_gradient(theta, X, y, l2_lambda: float) -> np.ndarray:
    Z = _design(X)
    g = Z.T @ (expit(Z @ theta) - y)
    g[1:] += l2_lambda * theta[1:]
    return g


def fit_logistic(X, y, l2_lambda: float = 1.0, *, max_iter: int = 1000, tol: float = 1e-8,
                 init=None) -> LogisticModel:
    """L2-regularised logistic regression by damped iteratively reweighted least squares.

    Newton steps on the penalised objective are halved until the objective
    decreases. Iteration stops when the gradient norm reaches ``tol``, when
    no further decrease is representable, or after ``max_iter`` steps.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if len(X) != len(y):
        raise ValueError("X and y differ in length")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.min(initial=1) == y.max(initial=0) or len(y) == 0:
        raise ValueError("logistic regression needs samples of both classes")
    if l2_lambda < 0:
        raise ValueError("l2_lambda must be non-negative")

    Z = _design(X)
    d = Z.shape[1]
    penalty = np.full(d, float(l2_lambda))
    penalty[0] = 0.0
    theta = np.zeros(d) if init is None else np.asarray(init, dtype=float).copy()

    def objective(th):
        z = Z @ th
        return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * th @ (penalty * th))

    f = objective(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(Z @ theta)
        g = Z.T @ (p - y) + penalty * theta
        if np.linalg.norm(g) <= tol:
            converged = True
            it -= 1
            break
        H = (Z * (p * (1.0 - p))[:, None]).T @ Z + np.diag(penalty)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = theta - t * step
            fc = objective(cand)
            if fc <= f or t < 1e-10:
                break
            t *= 0.5
        if not fc < f:
            # no representable decrease left: at the optimum up to rounding
            converged = bool(np.linalg.norm(g) <= max(tol, 1e-6 * np.sqrt(len(y))))
            break
        theta, f = cand, fc
    else:
        g = Z.T @ (expit(Z @ theta) - y) + penalty * theta
        converged = bool(np.linalg.norm(g) <= tol)
    return LogisticModel(tuple(float(v) for v in theta[1:]), float(theta[0]), float(l2_lambda),
                         it, converged)


# -- pair data ----------------------------------------------------------------

@dataclass(frozen=True)
class PairData:
    """Switch feature matrix of one track pair, computed once and reused across splits."""

    pair_id: str
    label: PairLabel
    switches: np.ndarray = field(repr=False)
    users: tuple[str, ...] = ()
    phones: tuple[str, ...] = ()

    @property
    def y(self) -> int:
        if self.label is PairLabel.UNKNOWN:
            raise ValueError(f"pair {self.pair_id} has no ground-truth label")
        return int(self.label is PairLabel.SAME_USER)

    @property
    def n_switches(self) -> int:
        return len(self.switches)


def prepare_pair(pair: TrackPair) -> PairData:
    return PairData(pair.pair_id, pair.label, switch_feature_matrix(pair),
                    (pair.a.user_id, pair.b.user_id), (pair.a.phone_id, pair.b.phone_id))


def prepare_pairs(pairs: Sequence[TrackPair]) -> list[PairData]:
    return [prepare_pair(p) for p in pairs]


def _as_pair_data(pair) -> PairData:
    return pair if isinstance(pair, PairData) else prepare_pair(pair)


def _labels(pairs: Sequence[PairData]) -> np.ndarray:
    return np.array([p.y for p in pairs], dtype=float)


def _require_switches(pair: PairData):
    if pair.n_switches == 0:
        raise UnscorableError(f"unscorable: 0 switches in pair {pair.pair_id}")


# -- binning -----------------------------------------------------------------

def bin_scores(scores) -> np.ndarray:
    """Fractions of scores in ten bins [0, .1), [.1, .2), ..., [.9, 1]."""
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise UnscorableError("cannot bin an empty score list")
    if np.any((s < 0) | (s > 1)) or np.any(np.isnan(s)):
        raise ValueError("scores must lie in [0, 1]")
    idx = np.minimum(np.searchsorted(SCORE_BIN_EDGES, s, side="right") - 1, N_SCORE_BINS - 1)
    return np.bincount(idx, minlength=N_SCORE_BINS) / s.size


def onedim_edges(switches: np.ndarray, n_bins: int = 10) -> np.ndarray:
    """Per-column linear bin edges between the column minimum and maximum, shape (k, n_bins+1)."""
    if len(switches) == 0:
        raise ValueError("no switches to derive bin edges from")
    lo, hi = switches.min(axis=0), switches.max(axis=0)
    return np.linspace(lo, hi, n_bins + 1).T


def onedim_binning_features(switches: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Concatenated normalised per-feature histograms; out-of-range values go to the end bins."""
    switches = np.asarray(switches, dtype=float)
    if switches.ndim == 1:
        switches = switches[:, None]
    if len(switches) == 0:
        raise UnscorableError("cannot bin zero switches")
    blocks = []
    for col, e in enumerate(np.asarray(edges)):
        n_bins = len(e) - 1
        idx = np.clip(np.searchsorted(e, switches[:, col], side="right") - 1, 0, n_bins - 1)
        blocks.append(np.bincount(idx, minlength=n_bins) / len(switches))
    return np.concatenate(blocks)


def dislocation_count(switches: np.ndarray) -> int:
    """Switches closer in time than 15 min yet farther apart than 25 km."""
    dist = switches[:, FEATURE_NAMES.index("distance")]
    dt = switches[:, FEATURE_NAMES.index("dt")]
    return int(np.count_nonzero((dt < DISLOCATION_MAX_DT_S) & (dist > DISLOCATION_MIN_DISTANCE_M)))


# -- scorers -----------------------------------------------------------------

_REGISTRY: dict[str, type["PairScorer"]] = {}


class PairScorer(abc.ABC):
    """Maps the switches of a track pair to a similarity score in [0, 1]."""

    variant: ClassVar[str]

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if "variant" in cls.__dict__:
            _REGISTRY[cls.variant] = cls

    @abc.abstractmethod
    def fit(self, pairs: Sequence[PairData]) -> "PairScorer":
        ...

    @abc.abstractmethod
    def score_switches(self, switches: np.ndarray) -> float:
        ...

    def score(self, pair) -> float:
        pd = _as_pair_data(pair)
        _require_switches(pd)
        return self.score_switches(pd.switches)

    def score_many(self, pairs: Sequence) -> np.ndarray:
        return np.array([self.score(p) for p in pairs], dtype=float)

    @abc.abstractmethod
    def to_dict(self) -> dict:
        ...

    @staticmethod
    def from_dict(d: dict) -> "PairScorer":
        cls = _REGISTRY.get(d.get("variant"))
        if cls is None:
            raise ValueError(f"unknown scorer variant {d.get('variant')!r}")
        return cls._from_dict(d)

    @classmethod
    @abc.abstractmethod
    def _from_dict(cls, d: dict) -> "PairScorer":
        ...


def _check_fit_input(pairs: Sequence[PairData]):
    if not pairs:
        raise ValueError("no training pairs")
    for p in pairs:
        _require_switches(p)
    y = _labels(pairs)
    if y.min() == y.max():
        raise ValueError("training pairs must contain both same-user and different-user pairs")
    return y


class TwoStepLogisticScorer(PairScorer):
    """Switch-level logistic scores, binned per pair, fed to a pair-level logistic model."""

    variant = "two_step_logistic"

    def __init__(self, features: Sequence[str] = DEFAULT_FEATURES, l2_lambda: float = 1.0):
        self.features = validate_features(features)
        self.l2_lambda = float(l2_lambda)
        self.scaler: Optional[ScalerParams] = None
        self.switch_model: Optional[LogisticModel] = None
        self.pair_model: Optional[LogisticModel] = None

    def _switch_scores(self, switches: np.ndarray) -> np.ndarray:
        X = apply_scaler(self.scaler, switches[:, feature_columns(self.features)])
        return predict_proba(self.switch_model, X)

    def histogram(self, switches: np.ndarray) -> np.ndarray:
        return bin_scores(self._switch_scores(switches))

    def fit(self, pairs: Sequence[PairData]) -> "TwoStepLogisticScorer":
        y_pairs = _check_fit_input(pairs)
        cols = feature_columns(self.features)
        X = np.vstack([p.switches[:, cols] for p in pairs])
        y = np.repeat(y_pairs, [p.n_switches for p in pairs])
        self.scaler = fit_robust_scaler(X)
        self.switch_model = fit_logistic(apply_scaler(self.scaler, X), y, self.l2_lambda)
        H = np.vstack([self.histogram(p.switches) for p in pairs])
        self.pair_model = fit_logistic(H, y_pairs, self.l2_lambda)
        return self

    def score_switches(self, switches: np.ndarray) -> float:
        if self.pair_model is None:
            raise RuntimeError("scorer is not fitted")
        return predict_proba(self.pair_model, self.histogram(switches))

    def score_many(self, pairs: Sequence) -> np.ndarray:
        pds = [_as_pair_data(p) for p in pairs]
        for p in pds:
            _require_switches(p)
        if not pds:
            return np.empty(0)
        H = np.vstack([self.histogram(p.switches) for p in pds])
        return predict_proba(self.pair_model, H)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "features": list(self.features), "l2_lambda": self.l2_lambda,
                "scaler": self.scaler.to_dict(), "switch_model": self.switch_model.to_dict(),
                "pair_model": self.pair_model.to_dict()}

    @classmethod
    def _from_dict(cls, d: dict) -> "TwoStepLogisticScorer":
        s = cls(d["features"], d["l2_lambda"])
        s.scaler = ScalerParams.from_dict(d["scaler"])
        s.switch_model = LogisticModel.from_dict(d["switch_model"])
        s.pair_model = LogisticModel.from_dict(d["pair_model"])
        return s


class OneDimBinningScorer(PairScorer):
    """Per-feature 10-bin histograms concatenated into one logistic feature vector."""

    variant = "onedim_binning"

    def __init__(self, features: Sequence[str] = DEFAULT_FEATURES, l2_lambda: float = 1.0,
                 n_bins: int = 10):
        self.features = validate_features(features)
        self.l2_lambda = float(l2_lambda)
        self.n_bins = int(n_bins)
        self.edges: Optional[np.ndarray] = None
        self.model: Optional[LogisticModel] = None

    def vector(self, switches: np.ndarray) -> np.ndarray:
        return onedim_binning_features(switches[:, feature_columns(self.features)], self.edges)

    def fit(self, pairs: Sequence[PairData]) -> "OneDimBinningScorer":
        y = _check_fit_input(pairs)
        cols = feature_columns(self.features)
        self.edges = onedim_edges(np.vstack([p.switches[:, cols] for p in pairs]), self.n_bins)
        self.model = fit_logistic(np.vstack([self.vector(p.switches) for p in pairs]), y, self.l2_lambda)
        return self

    def score_switches(self, switches: np.ndarray) -> float:
        return predict_proba(self.model, self.vector(switches))

    def to_dict(self) -> dict:
        return {"variant": self.variant, "features": list(self.features), "l2_lambda": self.l2_lambda,
                "n_bins": self.n_bins, "edges": self.edges.tolist(), "model": self.model.to_dict()}

    @classmethod
    def _from_dict(cls, d: dict) -> "OneDimBinningScorer":
        s = cls(d["features"], d["l2_lambda"], d["n_bins"])
        s.edges = np.asarray(d["edges"], dtype=float)
        s.model = LogisticModel.from_dict(d["model"])
        return s


class _SingleFeatureScorer(PairScorer):
    """Logistic model on one robust-scaled pair-level summary of the switches."""

    def __init__(self, l2_lambda: float = 1.0):
        self.l2_lambda = float(l2_lambda)
        self.scaler: Optional[ScalerParams] = None
        self.model: Optional[LogisticModel] = None

    @abc.abstractmethod
    def pair_feature(self, switches: np.ndarray) -> float:
        ...

    def fit(self, pairs: Sequence[PairData]):
        y = _check_fit_input(pairs)
        x = np.array([[self.pair_feature(p.switches)] for p in pairs])
        self.scaler = fit_robust_scaler(x)
        self.model = fit_logistic(apply_scaler(self.scaler, x), y, self.l2_lambda)
        return self

    def score_switches(self, switches: np.ndarray) -> float:
        x = apply_scaler(self.scaler, np.array([[self.pair_feature(switches)]]))
        return float(predict_proba(self.model, x)[0])

    def to_dict(self) -> dict:
        return {"variant": self.variant, "l2_lambda": self.l2_lambda,
                "scaler": self.scaler.to_dict(), "model": self.model.to_dict()}

    @classmethod
    def _from_dict(cls, d: dict):
        s = cls(d["l2_lambda"])
        s.scaler = ScalerParams.from_dict(d["scaler"])
        s.model = LogisticModel.from_dict(d["model"])
        return s


class DislocationCountScorer(_SingleFeatureScorer):
    variant = "dislocation_count"

    def pair_feature(self, switches: np.ndarray) -> float:
        return float(dislocation_count(switches))


class MeanDistanceScorer(_SingleFeatureScorer):
    variant = "mean_distance"

    def pair_feature(self, switches: np.ndarray) -> float:
        return float(np.mean(switches[:, FEATURE_NAMES.index("distance")]))


class ConstantScorer(PairScorer):
    """Scores every pair identically; the reference neutral system."""

    variant = "constant"

    def __init__(self, value: float = 0.5):
        if not 0 <= value <= 1:
            raise ValueError("constant score must lie in [0, 1]")
        self.value = float(value)

    def fit(self, pairs):
        return self

    def score_switches(self, switches: np.ndarray) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"variant": self.variant, "value": self.value}

    @classmethod
    def _from_dict(cls, d: dict):
        return cls(d["value"])


SCORER_VARIANTS = ("two_step_logistic", "onedim_binning", "dislocation_count", "mean_distance")


def make_scorer(variant: str, features: Sequence[str] = DEFAULT_FEATURES,
                l2_lambda: float = 1.0) -> PairScorer:
    if variant == "two_step_logistic":
        return TwoStepLogisticScorer(features, l2_lambda)
    if variant == "onedim_binning":
        return OneDimBinningScorer(features, l2_lambda)
    if variant == "dislocation_count":
        return DislocationCountScorer(l2_lambda)
    if variant == "mean_distance":
        return MeanDistanceScorer(l2_lambda)
    if variant == "constant":
        return ConstantScorer()
    raise ValueError(f"unknown scorer variant {variant!r}; choose from {SCORER_VARIANTS}")


def fit_pair_pipeline(train_pairs: Sequence, features: Sequence[str] = DEFAULT_FEATURES,
                      l2_lambda: float = 1.0) -> TwoStepLogisticScorer:
    return TwoStepLogisticScorer(features, l2_lambda).fit([_as_pair_data(p) for p in train_pairs])


def score_track_pair(scorer: PairScorer, pair) -> float:
    return scorer.score(pair)
