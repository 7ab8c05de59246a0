"""Labelled track-pair corpora that can be rebuilt for other track lengths and event rates."""

from __future__ import annotations

import abc
import dataclasses
from typing import Mapping, Sequence

from cdrlr.core_model import Measurement
from cdrlr.ingestion import NetmonLog
from cdrlr.scoring import PairData, prepare_pairs
from cdrlr.synthesis import (
    SynthesisConfig,
    derive_seed,
    pair_tracks,
    thin_measurements,
    tracks_from_logs,
    tracks_from_measurements,
)


class Corpus(abc.ABC):
    def __init__(self, users: Mapping[str, str], synthesis: SynthesisConfig):
        self.users = dict(users)
        self.synthesis = synthesis
        self._cache: dict[tuple[int, float], list[PairData]] = {}

    @property
    def base_rate(self) -> float:
        return self.synthesis.rate

    def pairs(self, days_per_track: int | None = None, rate: float | None = None) -> list[PairData]:
        days = self.synthesis.days_per_track if days_per_track is None else int(days_per_track)
        rate = self.base_rate if rate is None else float(rate)
        key = (days, rate)
        if key not in self._cache:
            cfg = dataclasses.replace(self.synthesis, days_per_track=days, rate=rate)
            self._cache[key] = prepare_pairs(pair_tracks(self._tracks(cfg)))
        return self._cache[key]

    @abc.abstractmethod
    def _tracks(self, cfg: SynthesisConfig):
        ...


class LogCorpus(Corpus):
    """Continuous logs; every rate is synthesised afresh by Poisson sampling."""

    def __init__(self, logs: Mapping[str, NetmonLog], users: Mapping[str, str],
                 synthesis: SynthesisConfig = SynthesisConfig()):
        super().__init__(users, synthesis)
        self.logs = dict(logs)

    def _tracks(self, cfg):
        return tracks_from_logs(self.logs, self.users, cfg)


class CdrCorpus(Corpus):
    """Event records; lower rates are obtained by thinning the recorded events.

    ``synthesis.rate`` is the event rate the records were generated at.
    """

    def __init__(self, measurements: Mapping[str, Sequence[Measurement]], users: Mapping[str, str],
                 synthesis: SynthesisConfig = SynthesisConfig()):
        super().__init__(users, synthesis)
        self.measurements = {k: list(v) for k, v in measurements.items()}

    def _tracks(self, cfg):
        if cfg.rate > self.base_rate * (1 + 1e-12):
            raise ValueError(f"cannot raise the event rate above the recorded {self.base_rate}/h")
        keep = cfg.rate / self.base_rate
        ms = {pid: thin_measurements(v, keep, derive_seed(cfg.seed, "thin", pid, cfg.rate))
              for pid, v in self.measurements.items()}
        return tracks_from_measurements(ms, self.users, cfg)
