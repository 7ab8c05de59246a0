"""Cllr metrics, the repeated train/calibrate/test harness and sensitivity sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from cdrlr.calibration import fit_pav, make_calibrator
from cdrlr.corpus import Corpus
from cdrlr.pipeline import LrPipeline, fit_lr_pipeline
from cdrlr.scoring import SCORER_VARIANTS, PairData, PairScorer, make_scorer
from cdrlr.switching import DEFAULT_FEATURES, validate_features
from cdrlr.synthesis import derive_seed

METRIC_COLUMNS = ("repeat", "cllr", "cllr_min", "cllr_cal", "min_lr", "max_lr", "n_su", "n_du")
HISTOGRAM_COLUMNS = ("hypothesis", "bin_left", "bin_right", "count")
MAX_SPLIT_RETRIES = 10


class ReportError(OSError):
    pass


# -- metrics -------------------------------------------------------------------------

def _lr_array(lrs, name: str) -> np.ndarray:
    a = np.asarray(lrs, dtype=float).ravel()
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    if np.any(np.isnan(a)) or np.any(a < 0):
        raise ValueError(f"{name} contains negative or NaN LRs")
    return a


def cllr(lrs_su, lrs_du) -> float:
    """Log-likelihood-ratio cost; 0 is perfect, 1 the always-LR-1 system."""
    su = _lr_array(lrs_su, "lrs_su")
    du = _lr_array(lrs_du, "lrs_du")
    with np.errstate(divide="ignore", over="ignore"):
        c_su = np.mean(np.log1p(1.0 / su)) / math.log(2)
        c_du = np.mean(np.log1p(du)) / math.log(2)
    return float(0.5 * (c_su + c_du))


def pav_transform(lrs_su, lrs_du) -> tuple[np.ndarray, np.ndarray]:
    """Post-calibrated LRs: PAV posterior over the pooled LRs divided by the prior odds."""
    su = _lr_array(lrs_su, "lrs_su")
    du = _lr_array(lrs_du, "lrs_du")
    iso = fit_pav(np.concatenate([su, du]), np.concatenate([np.ones(len(su)), np.zeros(len(du))]))
    p = iso.fitted
    prior = len(su) / len(du)
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.where(p >= 1, np.inf, np.where(p <= 0, 0.0, p / (1 - p) / prior))
    return lr[:len(su)], lr[len(su):]


def cllr_min(lrs_su, lrs_du) -> float:
    return cllr(*pav_transform(lrs_su, lrs_du))


@dataclass(frozen=True)
class MetricsRecord:
    cllr: float
    cllr_min: float
    cllr_cal: float
    min_lr: float
    max_lr: float
    n_su: int
    n_du: int

    def row(self) -> list:
        return [self.cllr, self.cllr_min, self.cllr_cal, self.min_lr, self.max_lr, self.n_su, self.n_du]


def metrics_from_lrs(lrs, labels) -> MetricsRecord:
    lrs = np.asarray(lrs, dtype=float)
    y = np.asarray(labels).astype(bool)
    su, du = lrs[y], lrs[~y]
    c = cllr(su, du)
    cm = cllr_min(su, du)
    return MetricsRecord(c, cm, c - cm, float(lrs.min()), float(lrs.max()), len(su), len(du))


METRIC_FIELDS = ("cllr", "cllr_min", "cllr_cal", "min_lr", "max_lr", "n_su", "n_du")


def summarize(records: Sequence[MetricsRecord]) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation (0 for a single record) per metric."""
    if not records:
        raise ValueError("no metrics records to summarize")
    out = {}
    for name in METRIC_FIELDS:
        v = np.array([getattr(r, name) for r in records], dtype=float)
        # rescale so LRs near the float maximum do not overflow the sums
        scale = float(np.max(np.abs(v))) if np.all(np.isfinite(v)) else 1.0
        scale = scale if scale > 0 else 1.0
        u = v / scale
        out[name] = {"mean": float(u.mean() * scale),
                     "sd": float(u.std(ddof=1) * scale) if len(v) > 1 else 0.0}
    return out


# -- experiment harness --------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    n_repeats: int = 100
    test_fraction: float = 0.2
    calibration_fraction_of_train: float = 0.5
    scorer: str = "two_step_logistic"
    calibrator: str = "kde"
    kde_bandwidth: float = 0.05
    features: tuple[str, ...] = DEFAULT_FEATURES
    days_per_track: int = 1
    events_per_hour: float = 1.0
    seed: int = 0
    l2_lambda: float = 1.0
    group_by_user: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "features", validate_features(self.features))
        for name in ("test_fraction", "calibration_fraction_of_train"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be at least 1")
        if self.days_per_track < 1:
            raise ValueError("days_per_track must be at least 1")
        if not self.events_per_hour > 0:
            raise ValueError("events_per_hour must be positive")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be at least 1")
        make_scorer(self.scorer, self.features, self.l2_lambda)
        make_calibrator(self.calibrator, self.kde_bandwidth)


@dataclass
class Split:
    model: np.ndarray
    calibration: np.ndarray
    test: np.ndarray


def stratified_split(labels, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-label random split; the second part gets ``round(fraction * n_label)`` items."""
    y = np.asarray(labels)
    first, second = [], []
    for lab in np.unique(y):
        idx = np.flatnonzero(y == lab)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(fraction * len(idx)))
        second.append(idx[:k])
        first.append(idx[k:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def _group_split(pairs: Sequence[PairData], cfg: ExperimentConfig, rng) -> Split:
    users = sorted({u for p in pairs for u in p.users})
    order = rng.permutation(len(users))
    n_test = int(round(cfg.test_fraction * len(users)))
    test_users = {users[i] for i in order[:n_test]}
    train_users = [users[i] for i in order[n_test:]]
    n_cal = int(round(cfg.calibration_fraction_of_train * len(train_users)))
    cal_users = set(train_users[:n_cal])
    parts = {"model": [], "calibration": [], "test": []}
    for k, p in enumerate(pairs):
        us = set(p.users)
        if us <= test_users:
            parts["test"].append(k)
        elif us <= cal_users:
            parts["calibration"].append(k)
        elif not us & (test_users | cal_users):
            parts["model"].append(k)
    return Split(*(np.array(parts[n], dtype=int) for n in ("model", "calibration", "test")))


def make_split(pairs: Sequence[PairData], cfg: ExperimentConfig, rng: np.random.Generator) -> Split:
    labels = np.array([p.y for p in pairs])
    for _ in range(MAX_SPLIT_RETRIES + 1):
        if cfg.group_by_user:
            split = _group_split(pairs, cfg, rng)
        else:
            train, test = stratified_split(labels, cfg.test_fraction, rng)
            m, c = stratified_split(labels[train], cfg.calibration_fraction_of_train, rng)
            split = Split(train[m], train[c], test)
        if all(len(np.unique(labels[part])) == 2
               for part in (split.model, split.calibration, split.test)):
            return split
    raise ValueError(f"could not draw a split with both labels in every partition "
                     f"after {MAX_SPLIT_RETRIES} retries")


@dataclass
class RepeatOutcome:
    index: int
    metrics: MetricsRecord
    test_lrs: np.ndarray
    test_labels: np.ndarray
    validation: Optional[MetricsRecord] = None
    validation_lrs: Optional[np.ndarray] = None
    validation_labels: Optional[np.ndarray] = None
    pipeline: Optional[LrPipeline] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    repeats: list[RepeatOutcome]

    @property
    def records(self) -> list[MetricsRecord]:
        return [r.metrics for r in self.repeats]

    @property
    def validation_records(self) -> list[MetricsRecord]:
        return [r.validation for r in self.repeats if r.validation is not None]

    def summary(self) -> dict:
        return summarize(self.records)

    def pooled_lrs(self, validation: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """All test (or validation) LRs over the repeats, split into (same user, different user)."""
        if validation:
            parts = [(r.validation_lrs, r.validation_labels) for r in self.repeats if r.validation_lrs is not None]
        else:
            parts = [(r.test_lrs, r.test_labels) for r in self.repeats]
        if not parts:
            return np.empty(0), np.empty(0)
        lrs = np.concatenate([p[0] for p in parts])
        y = np.concatenate([p[1] for p in parts]).astype(bool)
        return lrs[y], lrs[~y]


ScorerFactory = Callable[[ExperimentConfig], PairScorer]


def _default_scorer(cfg: ExperimentConfig) -> PairScorer:
    return make_scorer(cfg.scorer, cfg.features, cfg.l2_lambda)


def _run_repeat(r: int, pairs: Sequence[PairData], labels: np.ndarray, cfg: ExperimentConfig,
                scorer_factory: ScorerFactory, validation: Optional[Sequence[PairData]],
                keep_pipeline: bool) -> RepeatOutcome:
    rng = np.random.default_rng(derive_seed(cfg.seed, "repeat", r))
    split = make_split(pairs, cfg, rng)
    pipe = fit_lr_pipeline([pairs[i] for i in split.model], [pairs[i] for i in split.calibration],
                           scorer_factory(cfg), make_calibrator(cfg.calibrator, cfg.kde_bandwidth))
    test = [pairs[i] for i in split.test]
    _, _, lrs = pipe.lrs(test)
    out = RepeatOutcome(r, metrics_from_lrs(lrs, labels[split.test]), lrs, labels[split.test])
    if validation:
        vy = np.array([p.y for p in validation])
        _, _, vl = pipe.lrs(validation)
        out.validation, out.validation_lrs, out.validation_labels = metrics_from_lrs(vl, vy), vl, vy
    if keep_pipeline:
        out.pipeline = pipe
    return out


def run_experiment(data: Union[Sequence[PairData], Corpus], cfg: ExperimentConfig, *,
                   validation: Union[Sequence[PairData], Corpus, None] = None,
                   scorer_factory: Optional[ScorerFactory] = None,
                   keep_pipelines: bool = False) -> ExperimentResult:
    """Repeated stratified model / calibration / test splits, one fitted pipeline per repeat.

    ``validation`` is an optional second labelled corpus scored with every
    repeat's pipeline, never used for fitting.
    """
    pairs = _resolve(data, cfg)
    vpairs = _resolve(validation, cfg) if validation is not None else None
    labels = np.array([p.y for p in pairs])
    factory = scorer_factory or _default_scorer

    def job(r):
        return _run_repeat(r, pairs, labels, cfg, factory, vpairs, keep_pipelines)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as ex:
            repeats = list(ex.map(job, range(cfg.n_repeats)))
    else:
        repeats = [job(r) for r in range(cfg.n_repeats)]
    repeats.sort(key=lambda o: o.index)
    return ExperimentResult(cfg, repeats)


def _resolve(data, cfg: ExperimentConfig) -> list[PairData]:
    if isinstance(data, Corpus):
        return data.pairs(cfg.days_per_track, cfg.events_per_hour)
    return list(data)


# -- sweeps --------------------------------------------------------------------------------

SWEEP_DIMENSIONS = ("scorer", "calibrator", "calibration_fraction", "features", "days", "rate")

CALIBRATOR_GRID = (("none", None), ("kde", 0.025), ("kde", 0.05), ("kde", 0.1),
                   ("gaussian", None), ("isotonic_pav", None))
CALIBRATION_FRACTION_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))
DAYS_GRID = (1, 2, 3, 4)
RATE_GRID = (1.0, 0.5, 1 / 3, 0.25)


def feature_subsets() -> list[tuple[str, ...]]:
    """All non-empty subsets of (distance, dt, speed), then the four-feature variant."""
    base = DEFAULT_FEATURES
    subsets = [c for k in (3, 2, 1) for c in itertools.combinations(base, k)]
    return subsets + [base + ("bearing",)]


def compensated_days(base_days: int, base_rate: float, rate: float) -> int:
    """Track length keeping the expected number of events constant at a lower rate."""
    days = base_days * base_rate / rate
    n = int(round(days))
    if n < 1 or not math.isclose(days, n, rel_tol=1e-9):
        raise ValueError(f"rate {rate} needs a non-integer track length of {days} days")
    return n


@dataclass
class SweepRow:
    dimension: str
    value: str
    config: ExperimentConfig
    result: ExperimentResult

    def summary_row(self, validation: bool = False) -> dict:
        recs = self.result.validation_records if validation else self.result.records
        s = summarize(recs)
        out = {"dimension": self.dimension, "value": self.value, "n_repeats": len(recs)}
        for name in METRIC_FIELDS:
            out[f"{name}_mean"] = s[name]["mean"]
            out[f"{name}_sd"] = s[name]["sd"]
        return out


def sweep_grid(dimension: str, cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    rep = dataclasses.replace
    if dimension == "scorer":
        return [(v, rep(cfg, scorer=v)) for v in SCORER_VARIANTS]
    if dimension == "calibrator":
        out = []
        for variant, h in CALIBRATOR_GRID:
            label = f"kde(h={h})" if variant == "kde" else variant
            out.append((label, rep(cfg, calibrator=variant, kde_bandwidth=h or cfg.kde_bandwidth)))
        return out
    if dimension == "calibration_fraction":
        return [(f"{f:.2f}", rep(cfg, calibration_fraction_of_train=f)) for f in CALIBRATION_FRACTION_GRID]
    if dimension == "features":
        return [("+".join(fs), rep(cfg, features=fs)) for fs in feature_subsets()]
    if dimension == "days":
        return [(str(d), rep(cfg, days_per_track=d)) for d in DAYS_GRID]
    if dimension == "rate":
        out = []
        for r in RATE_GRID:
            days = compensated_days(cfg.days_per_track, cfg.events_per_hour, r)
            out.append((f"{r:.4g}", rep(cfg, events_per_hour=r, days_per_track=days)))
        return out
    raise ValueError(f"unknown sweep dimension {dimension!r}; choose from {SWEEP_DIMENSIONS}")


def sweep(data: Union[Sequence[PairData], Corpus], cfg: ExperimentConfig, dimension: str, *,
          validation: Union[Sequence[PairData], Corpus, None] = None) -> list[SweepRow]:
    if dimension in ("days", "rate") and not isinstance(data, Corpus):
        raise TypeError(f"the {dimension} sweep rebuilds tracks and needs a Corpus")
    rows = []
    for label, c in sweep_grid(dimension, cfg):
        rows.append(SweepRow(dimension, label, c, run_experiment(data, c, validation=validation)))
    return rows


# -- reports -----------------------------------------------------------------------

def metrics_csv(records: Sequence[MetricsRecord]) -> str:
    if not records:
        raise ValueError("no metrics records to export")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for i, r in enumerate(records):
        w.writerow([i] + [repr(v) if isinstance(v, float) else v for v in r.row()])
    return out.getvalue()


def lr_histogram(lrs_su, lrs_du, bin_width: float = 0.25) -> list[tuple[str, float, float, int]]:
    """Counts of log10(LR) per hypothesis on shared bins of ``bin_width``."""
    su = np.log10(np.asarray(lrs_su, dtype=float))
    du = np.log10(np.asarray(lrs_du, dtype=float))
    both = np.concatenate([su, du])
    if both.size == 0:
        raise ValueError("no LRs to histogram")
    lo = int(math.floor(both.min() / bin_width))
    hi = max(int(math.ceil(both.max() / bin_width)), lo + 1)
    edges = np.arange(lo, hi + 1) * bin_width
    rows = []
    for name, v in (("same_user", su), ("different_user", du)):
        counts, _ = np.histogram(v, bins=edges)
        rows.extend((name, float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(len(counts)))
    return rows


def lr_histogram_csv(rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(HISTOGRAM_COLUMNS)
    for name, left, right, count in rows:
        w.writerow([name, repr(left), repr(right), count])
    return out.getvalue()


def _write(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def export_report(rows: Sequence[SweepRow], out_dir, *, bin_width: float = 0.25) -> list[Path]:
    """Write per-repeat metrics, log10 LR histograms and a JSON summary for each row.

    A single row (no sweep) is written as ``metrics.csv`` / ``lr_histogram.csv``;
    sweep rows get a ``<dimension>_<value>`` prefix and an extra ``summary.csv``.
    """
    if not rows:
        raise ValueError("nothing to export")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create {out_dir}: {exc}") from exc
    written = []
    single = len(rows) == 1 and rows[0].dimension == "baseline"
    summary = {"rows": []}
    for row in rows:
        prefix = "" if single else f"{row.dimension}_{_slug(row.value)}_"
        recs = row.result.records
        written.append(out_dir / f"{prefix}metrics.csv")
        _write(written[-1], metrics_csv(recs))
        su, du = row.result.pooled_lrs()
        written.append(out_dir / f"{prefix}lr_histogram.csv")
        _write(written[-1], lr_histogram_csv(lr_histogram(su, du, bin_width)))
        entry = {"test": row.summary_row()}
        if row.result.validation_records:
            written.append(out_dir / f"{prefix}validation_metrics.csv")
            _write(written[-1], metrics_csv(row.result.validation_records))
            vsu, vdu = row.result.pooled_lrs(validation=True)
            written.append(out_dir / f"{prefix}validation_lr_histogram.csv")
            _write(written[-1], lr_histogram_csv(lr_histogram(vsu, vdu, bin_width)))
            entry["validation"] = row.summary_row(validation=True)
        entry["config"] = _config_dict(row.config)
        summary["rows"].append(entry)
    written.append(out_dir / "summary.json")
    _write(written[-1], json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if not single:
        written.append(out_dir / "summary.csv")
        _write(written[-1], summary_csv([r.summary_row() for r in rows]))
    return written


def summary_csv(summary_rows: Sequence[dict]) -> str:
    out = io.StringIO()
    cols = ["dimension", "value", "n_repeats"] + [f"{n}_{s}" for n in METRIC_FIELDS for s in ("mean", "sd")]
    w = csv.DictWriter(out, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in summary_rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return out.getvalue()


def _slug(value: str) -> str:
    return "".join(ch if ch.isalnum() or ch in ".-" else "_" for ch in value)


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["features"] = list(cfg.features)
    return d


def baseline_row(result: ExperimentResult) -> SweepRow:
    return SweepRow("baseline", "baseline", result.config, result)
