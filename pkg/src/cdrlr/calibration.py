"""Score-to-likelihood-ratio calibrators and empirical LR bounds (ELUB).

Every calibrator is fitted on scores of labelled calibration pairs
(same user = 1) and maps a score to LR = P(s | same user) / P(s | different
users). Unbounded ratios (a zero denominator) come out as ``inf`` and are
meant to be clipped with :func:`clip_lr`.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import ClassVar, Sequence

import numpy as np
from scipy.stats import norm

from cdrlr.kernels import kde_logpdf, pav

MAX_LR = float(np.finfo(float).max)
MIN_LR = 1.0 / MAX_LR
_LN2 = math.log(2.0)


def _split(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if len(s) != len(y):
        raise ValueError("scores and labels differ in length")
    y = y.astype(bool) if y.dtype != bool else y
    su, du = s[y], s[~y]
    if len(su) == 0 or len(du) == 0:
        raise ValueError("calibration needs scores of both hypotheses")
    return su, du


def kde_density(samples, bandwidth: float, x):
    """Gaussian-kernel density ``mean_i phi((x - s_i)/h) / h``."""
    out = np.exp(kde_logpdf(samples, bandwidth, x))
    return float(out) if np.ndim(x) == 0 else out


def _odds_ratio_lr(p, prior_odds: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = (p / (1.0 - p)) / prior_odds
    return np.where(p >= 1.0, np.inf, np.where(p <= 0.0, 0.0, lr))


# -- isotonic regression -----------------------------------------------------

@dataclass(frozen=True)
class IsotonicFit:
    """Non-decreasing step function fitted by pool-adjacent-violators.

    ``x`` holds the distinct input values in increasing order and ``y`` the
    fitted value on each; ``fitted`` gives the fitted value of every input
    sample in its original order.
    """

    x: np.ndarray
    y: np.ndarray
    fitted: np.ndarray

    def predict(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        idx = np.clip(np.searchsorted(self.x, s, side="right") - 1, 0, len(self.x) - 1)
        return self.y[idx]


def fit_pav(scores, labels) -> IsotonicFit:
    """Least-squares non-decreasing fit of the label indicators in score order.

    Tied scores are pooled first so the result is a function of the score.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if len(s) != len(y):
        raise ValueError("scores and labels differ in length")
    if len(y) == 0 or y.min() == y.max():
        raise ValueError("isotonic calibration needs both labels")
    ux, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=y, minlength=len(ux))
    fitted_unique = pav(sums / counts, counts.astype(float))
    return IsotonicFit(ux, fitted_unique, fitted_unique[inverse.ravel()])


# -- calibrators ----------------------------------------------------------------

_REGISTRY: dict[str, type["Calibrator"]] = {}


class Calibrator(abc.ABC):
    variant: ClassVar[str]
    n_su: int = 0
    n_du: int = 0

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if "variant" in cls.__dict__:
            _REGISTRY[cls.variant] = cls

    @property
    def prior_odds(self) -> float:
        return self.n_su / self.n_du

    @property
    def fitted(self) -> bool:
        return self.n_su > 0 and self.n_du > 0

    def fit(self, scores, labels) -> "Calibrator":
        su, du = _split(scores, labels)
        self.n_su, self.n_du = len(su), len(du)
        self._fit(su, du)
        return self

    @abc.abstractmethod
    def _fit(self, su: np.ndarray, du: np.ndarray):
        ...

    def lr(self, scores) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("calibrator is not fitted")
        s = np.asarray(scores, dtype=float)
        return self._lr(s)

    @abc.abstractmethod
    def _lr(self, s: np.ndarray) -> np.ndarray:
        ...

    def to_dict(self) -> dict:
        return {"variant": self.variant, "n_su": self.n_su, "n_du": self.n_du, **self._state()}

    @abc.abstractmethod
    def _state(self) -> dict:
        ...

    @staticmethod
    def from_dict(d: dict) -> "Calibrator":
        cls = _REGISTRY.get(d.get("variant"))
        if cls is None:
            raise ValueError(f"unknown calibrator variant {d.get('variant')!r}")
        c = cls._from_state(d)
        c.n_su, c.n_du = int(d["n_su"]), int(d["n_du"])
        return c

    @classmethod
    @abc.abstractmethod
    def _from_state(cls, d: dict) -> "Calibrator":
        ...


class KdeCalibrator(Calibrator):
    variant = "kde"

    def __init__(self, bandwidth: float = 0.05):
        if not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self.bandwidth = float(bandwidth)
        self.su_scores = np.empty(0)
        self.du_scores = np.empty(0)

    def _fit(self, su, du):
        self.su_scores, self.du_scores = np.sort(su), np.sort(du)

    def _lr(self, s):
        log_num = kde_logpdf(self.su_scores, self.bandwidth, s)
        log_den = kde_logpdf(self.du_scores, self.bandwidth, s)
        with np.errstate(over="ignore"):
            return np.exp(log_num - log_den)

    def _state(self):
        return {"bandwidth": self.bandwidth, "su_scores": self.su_scores.tolist(),
                "du_scores": self.du_scores.tolist()}

    @classmethod
    def _from_state(cls, d):
        c = cls(d["bandwidth"])
        c.su_scores = np.asarray(d["su_scores"], dtype=float)
        c.du_scores = np.asarray(d["du_scores"], dtype=float)
        return c


class GaussianCalibrator(Calibrator):
    """One normal density per hypothesis (sample standard deviation)."""

    variant = "gaussian"
    MIN_SD = 1e-6

    def __init__(self):
        self.mean_su = self.sd_su = self.mean_du = self.sd_du = float("nan")

    def _fit(self, su, du):
        def sd(v):
            return max(float(np.std(v, ddof=1)) if len(v) > 1 else 0.0, self.MIN_SD)
        self.mean_su, self.sd_su = float(np.mean(su)), sd(su)
        self.mean_du, self.sd_du = float(np.mean(du)), sd(du)

    def _lr(self, s):
        log_lr = norm.logpdf(s, self.mean_su, self.sd_su) - norm.logpdf(s, self.mean_du, self.sd_du)
        with np.errstate(over="ignore"):
            return np.exp(log_lr)

    def _state(self):
        return {"mean_su": self.mean_su, "sd_su": self.sd_su, "mean_du": self.mean_du, "sd_du": self.sd_du}

    @classmethod
    def _from_state(cls, d):
        c = cls()
        c.mean_su, c.sd_su = float(d["mean_su"]), float(d["sd_su"])
        c.mean_du, c.sd_du = float(d["mean_du"]), float(d["sd_du"])
        return c


class IsotonicCalibrator(Calibrator):
    """PAV posterior in score order, converted to an LR with the calibration prior odds."""

    variant = "isotonic_pav"

    def __init__(self):
        self.iso: IsotonicFit | None = None

    def _fit(self, su, du):
        s = np.concatenate([su, du])
        y = np.concatenate([np.ones(len(su)), np.zeros(len(du))])
        self.iso = fit_pav(s, y)

    def _lr(self, s):
        return _odds_ratio_lr(self.iso.predict(s), self.prior_odds)

    def _state(self):
        return {"x": self.iso.x.tolist(), "y": self.iso.y.tolist()}

    @classmethod
    def _from_state(cls, d):
        c = cls()
        x = np.asarray(d["x"], dtype=float)
        y = np.asarray(d["y"], dtype=float)
        c.iso = IsotonicFit(x, y, y)
        return c


class IdentityCalibrator(Calibrator):
    """No calibration: the score is read as a posterior under the calibration prior."""

    variant = "none"

    def _fit(self, su, du):
        pass

    def _lr(self, s):
        return _odds_ratio_lr(s, self.prior_odds)

    def _state(self):
        return {}

    @classmethod
    def _from_state(cls, d):
        return cls()


def make_calibrator(variant: str, bandwidth: float = 0.05) -> Calibrator:
    if variant == "kde":
        return KdeCalibrator(bandwidth)
    if variant == "gaussian":
        return GaussianCalibrator()
    if variant in ("isotonic_pav", "isotonic", "pav"):
        return IsotonicCalibrator()
    if variant in ("none", "identity"):
        return IdentityCalibrator()
    raise ValueError(f"unknown calibrator variant {variant!r}")


def lr_from_score(c: Calibrator, s):
    out = c.lr(s)
    return float(out) if np.ndim(s) == 0 else out


# -- ELUB -------------------------------------------------------------------------

@dataclass(frozen=True)
class ElubBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (0 < self.lower <= 1 <= self.upper):
            raise ValueError(f"invalid LR bounds [{self.lower}, {self.upper}]")

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, d: dict) -> "ElubBounds":
        return cls(float(d["lower"]), float(d["upper"]))


def _log2_1p(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        return np.log1p(x) / _LN2


def _exp2_minus_1(k: float) -> float:
    if k >= 1024:
        return math.inf
    return math.expm1(k * _LN2)


def elub_bounds(lrs, labels) -> ElubBounds:
    """Most extreme LRs the calibration set supports with one misleading observation added.

    The upper bound U is the largest LR such that, after appending one
    different-user observation with LR = U, the different-user half of the
    cost stays at or below that of the neutral system::

        (sum_du log2(1 + LR) + log2(1 + U)) / (N_du + 1) <= 1

    The lower bound mirrors this on the same-user half with 1/LR. Bounds are
    kept within [MIN_LR, 1] and [1, MAX_LR].
    """
    lrs = np.asarray(lrs, dtype=float).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if len(lrs) != len(y):
        raise ValueError("LRs and labels differ in length")
    if np.any(np.isnan(lrs)) or np.any(lrs < 0):
        raise ValueError("LRs must be non-negative")
    su, du = lrs[y], lrs[~y]
    if len(su) == 0 or len(du) == 0:
        raise ValueError("ELUB needs LRs of both hypotheses")

    with np.errstate(divide="ignore", over="ignore"):
        k_du = (len(du) + 1) - float(np.sum(_log2_1p(du)))
        k_su = (len(su) + 1) - float(np.sum(_log2_1p(1.0 / su)))
    upper = min(max(_exp2_minus_1(k_du), 1.0), MAX_LR)
    inv_lower = min(max(_exp2_minus_1(k_su), 1.0), MAX_LR)
    return ElubBounds(max(1.0 / inv_lower, MIN_LR), upper)


def clip_lr(lr, bounds: ElubBounds):
    out = np.clip(np.asarray(lr, dtype=float), bounds.lower, bounds.upper)
    return float(out) if np.ndim(lr) == 0 else out
