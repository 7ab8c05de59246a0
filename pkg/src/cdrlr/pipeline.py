"""Fitted LR pipeline: scorer + calibrator + ELUB bounds, stored as versioned JSON."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import jsonschema
import numpy as np

from cdrlr.calibration import Calibrator, ElubBounds, clip_lr, elub_bounds, make_calibrator
from cdrlr.scoring import PairData, PairScorer, _as_pair_data
from cdrlr.synthesis import SynthesisConfig

FORMAT = "cdrlr-pipeline"
FORMAT_VERSION = 1

_MODEL = {
    "type": "object",
    "required": ["weights", "intercept", "l2_lambda"],
    "properties": {
        "weights": {"type": "array", "items": {"type": "number"}},
        "intercept": {"type": "number"},
        "l2_lambda": {"type": "number", "minimum": 0},
    },
}

PIPELINE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "version", "scorer", "calibrator", "elub", "track_window"],
    "properties": {
        "format": {"const": FORMAT},
        "version": {"const": FORMAT_VERSION},
        "scorer": {
            "type": "object",
            "required": ["variant"],
            "properties": {
                "variant": {"enum": ["two_step_logistic", "onedim_binning", "dislocation_count",
                                     "mean_distance", "constant"]},
                "features": {"type": "array", "items": {"enum": ["distance", "dt", "speed", "bearing"]}},
                "switch_model": _MODEL,
                "pair_model": _MODEL,
                "model": _MODEL,
                "edges": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            },
        },
        "calibrator": {
            "type": "object",
            "required": ["variant", "n_su", "n_du"],
            "properties": {
                "variant": {"enum": ["kde", "gaussian", "isotonic_pav", "none"]},
                "n_su": {"type": "integer", "minimum": 1},
                "n_du": {"type": "integer", "minimum": 1},
                "bandwidth": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "elub": {
            "type": "object",
            "required": ["lower", "upper"],
            "properties": {
                "lower": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "upper": {"type": "number", "minimum": 1},
            },
        },
        "track_window": {
            "type": "object",
            "required": ["window_start_local", "window_end_local", "utc_offset_hours"],
        },
    },
}


@dataclass(frozen=True)
class LrResult:
    score: float
    lr_unclipped: float
    lr: float


@dataclass
class LrPipeline:
    scorer: PairScorer
    calibrator: Calibrator
    bounds: ElubBounds
    track_window: dict = field(default_factory=lambda: {
        "window_start_local": "07:00", "window_end_local": "22:00", "utc_offset_hours": 0.0})

    def score(self, pairs: Sequence) -> np.ndarray:
        return self.scorer.score_many(pairs)

    def lrs(self, pairs: Sequence) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Scores, unclipped LRs and clipped LRs for ``pairs``."""
        scores = self.score(pairs)
        raw = self.calibrator.lr(scores)
        return scores, raw, clip_lr(raw, self.bounds)

    def evaluate_pair(self, pair) -> LrResult:
        s, raw, lr = self.lrs([pair])
        return LrResult(float(s[0]), float(raw[0]), float(lr[0]))

    def to_dict(self) -> dict:
        return {"format": FORMAT, "version": FORMAT_VERSION, "scorer": self.scorer.to_dict(),
                "calibrator": self.calibrator.to_dict(), "elub": self.bounds.to_dict(),
                "track_window": dict(self.track_window)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def version_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "LrPipeline":
        validate_pipeline_document(d)
        return cls(PairScorer.from_dict(d["scorer"]), Calibrator.from_dict(d["calibrator"]),
                   ElubBounds.from_dict(d["elub"]), dict(d["track_window"]))

    @classmethod
    def from_json(cls, text: str) -> "LrPipeline":
        return cls.from_dict(json.loads(text))

    def synthesis_config(self, days_per_track: int = 1) -> SynthesisConfig:
        return SynthesisConfig(days_per_track=days_per_track, **self.track_window)


def validate_pipeline_document(d: dict):
    jsonschema.validate(d, PIPELINE_SCHEMA)


def fit_lr_pipeline(model_pairs: Sequence, calibration_pairs: Sequence, scorer: PairScorer,
                    calibrator: Optional[Calibrator] = None,
                    synthesis: Optional[SynthesisConfig] = None) -> LrPipeline:
    """Fit ``scorer`` on the model pairs, then calibrator and bounds on the calibration pairs."""
    model_pairs = [_as_pair_data(p) for p in model_pairs]
    cal = [_as_pair_data(p) for p in calibration_pairs]
    scorer.fit(model_pairs)
    calibrator = calibrator if calibrator is not None else make_calibrator("kde")
    scores = scorer.score_many(cal)
    labels = np.array([p.y for p in cal], dtype=bool)
    calibrator.fit(scores, labels)
    bounds = elub_bounds(calibrator.lr(scores), labels)
    window = {}
    if synthesis is not None:
        window = {"window_start_local": synthesis.window_start_local,
                  "window_end_local": synthesis.window_end_local,
                  "utc_offset_hours": synthesis.utc_offset_hours}
    pipe = LrPipeline(scorer, calibrator, bounds)
    pipe.track_window.update(window)
    return pipe


__all__ = ["LrPipeline", "LrResult", "fit_lr_pipeline", "validate_pipeline_document",
           "PIPELINE_SCHEMA", "PairData"]
