from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

from cdrlr.core_model import GeoPoint, Measurement, PairLabel, Track, TrackPair

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DAY = 86_400
# 2021-03-01T00:00:00Z, a UTC midnight
EPOCH_DAY = 1_614_556_800
H7 = EPOCH_DAY + 7 * 3600
H22 = EPOCH_DAY + 22 * 3600


def make_track(phone_id, times, coords=None, user_id="u", start=H7, end=H22, days=1):
    if coords is None:
        coords = [(52.0, 4.0)] * len(times)
    ms = tuple(Measurement(int(t), GeoPoint(*c)) for t, c in zip(times, coords))
    return Track(phone_id, user_id, start, end, ms, days=days)


def make_pair(times_a, times_b, coords_a=None, coords_b=None, label=PairLabel.UNKNOWN):
    a = make_track("p1", times_a, coords_a)
    b = make_track("p2", times_b, coords_b)
    return TrackPair(a, b, label)


@pytest.fixture(scope="session")
def small_population():
    from cdrlr.population_sim import SimConfig, simulate_population
    return simulate_population(SimConfig(n_users=6, n_days=4, seed=3))


@pytest.fixture(scope="session")
def small_corpus(small_population):
    from cdrlr.corpus import LogCorpus
    return LogCorpus(small_population.logs, small_population.users)


@pytest.fixture(scope="session")
def default_population():
    from cdrlr.population_sim import SimConfig, simulate_population
    return simulate_population(SimConfig())


@pytest.fixture(scope="session")
def default_corpus(default_population):
    from cdrlr.corpus import LogCorpus
    return LogCorpus(default_population.logs, default_population.users)


# -- acceptance summary: one pass/fail line per criterion ----------------------------------

_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, text = marker
    _, outcomes = _CRITERIA.setdefault(number, (text, []))
    if report.when == "call" or report.outcome != "passed":
        outcomes.append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        text, outcomes = _CRITERIA[number]
        ok = outcomes and all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}")
