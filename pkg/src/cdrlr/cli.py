"""``cdrlr`` command line: simulate, synthesize, train, evaluate, compare.

Machine-readable output goes to stdout, diagnostics to stderr. Exit status
is 0 on success, 1 on a runtime error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from cdrlr import __version__
from cdrlr.config import ConfigError, build_config, config_keys, dump_flat_config, load_flat_config
from cdrlr.core_model import SECONDS_PER_DAY, Track, TrackPair
from cdrlr.corpus import CdrCorpus, Corpus, LogCorpus
from cdrlr.evaluation import (
    SWEEP_DIMENSIONS,
    ExperimentConfig,
    baseline_row,
    export_report,
    run_experiment,
    stratified_split,
    sweep,
)
from cdrlr.ingestion import (
    CdrRecord,
    parse_cdr_csv,
    parse_tower_csv,
    read_netmon_logs,
    resolve_cell_locations,
    write_cdr_csv,
    write_netmon_csv,
    write_tower_csv,
)
from cdrlr.pipeline import LrPipeline, fit_lr_pipeline
from cdrlr.population_sim import SimConfig, simulate_population
from cdrlr.scoring import make_scorer, prepare_pair
from cdrlr.calibration import make_calibrator
from cdrlr.synthesis import (
    SynthesisConfig,
    derive_seed,
    extract_daily_tracks,
    local_day,
    sample_event_times,
    synthesize_cdr,
)

log = logging.getLogger("cdrlr")

# synthesis keys an experiment config may set besides its own fields
_WINDOW_KEYS = config_keys(SynthesisConfig) - {"seed", "rate", "days_per_track"}


class CliError(Exception):
    pass


# -- file helpers ----------------------------------------------------------------------

def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path: Path, data: bytes):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


def _prepare_out_dir(path: Path, force: bool):
    if path.exists():
        if not path.is_dir():
            raise CliError(f"{path} exists and is not a directory")
        if any(path.iterdir()) and not force:
            raise CliError(f"output directory {path} is not empty (use --force to overwrite)")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {path}: {exc}") from exc


def _users_csv(users: dict[str, str]) -> bytes:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["phone_id", "user_id"])
    for pid in sorted(users):
        w.writerow([pid, users[pid]])
    return out.getvalue().encode("utf-8")


def _read_users(path: Path) -> dict[str, str]:
    text = _read_bytes(path).decode("utf-8-sig")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != ["phone_id", "user_id"]:
        raise CliError(f"{path}: expected header 'phone_id,user_id'")
    users = {}
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2 or not row[0].strip() or not row[1].strip():
            raise CliError(f"{path}:{n}: expected 'phone_id,user_id'")
        users[row[0].strip()] = row[1].strip()
    return users


def _config_values(args) -> dict[str, str]:
    return load_flat_config(args.config) if args.config else {}


def _synthesis_config(values: dict[str, str], seed: Optional[int]) -> SynthesisConfig:
    return build_config(SynthesisConfig, values, seed=seed)


def _experiment_configs(args, corpus_synthesis: SynthesisConfig) -> tuple[ExperimentConfig, SynthesisConfig]:
    values = _config_values(args)
    exp_keys = config_keys(ExperimentConfig)
    window = {k: v for k, v in values.items() if k in _WINDOW_KEYS and k not in exp_keys}
    exp_values = {k: v for k, v in values.items() if k not in window}
    defaults = {"days_per_track": corpus_synthesis.days_per_track,
                "events_per_hour": corpus_synthesis.rate}
    defaults.update({k: v for k, v in (("seed", args.seed),) if v is not None})
    for k, v in defaults.items():
        if k not in exp_values or k == "seed":
            exp_values[k] = str(v)
    cfg = build_config(ExperimentConfig, exp_values)
    syn = dataclasses.replace(corpus_synthesis, seed=cfg.seed,
                              **{k: f for k, f in _convert_window(window).items()})
    return cfg, syn


def _convert_window(window: dict[str, str]) -> dict:
    if not window:
        return {}
    probe = build_config(SynthesisConfig, window)
    return {k: getattr(probe, k) for k in window}


# -- corpus loading -----------------------------------------------------------------

def load_corpus(path: Path, seed: Optional[int]) -> Corpus:
    """A directory written by ``simulate`` (``logs/``) or ``synthesize`` (``cdr/``)."""
    if not path.is_dir():
        raise CliError(f"corpus directory {path} does not exist")
    users = _read_users(path / "users.csv")
    syn_values = {}
    if (path / "synthesis.cfg").is_file():
        syn_values = load_flat_config(path / "synthesis.cfg")
    synthesis = _synthesis_config(syn_values, seed)
    if (path / "logs").is_dir():
        logs = {}
        for f in sorted((path / "logs").glob("*.csv")):
            logs.update(read_netmon_logs(_read_bytes(f)))
        if not logs:
            raise CliError(f"no log files in {path / 'logs'}")
        return LogCorpus(logs, users, synthesis)
    if (path / "cdr").is_dir():
        records = []
        for f in sorted((path / "cdr").glob("*.csv")):
            records.extend(parse_cdr_csv(_read_bytes(f)))
        towers = []
        if (path / "towers.csv").is_file():
            towers = parse_tower_csv(_read_bytes(path / "towers.csv"))
        if not records:
            raise CliError(f"no CDR files in {path / 'cdr'}")
        return CdrCorpus(resolve_cell_locations(records, towers), users, synthesis)
    raise CliError(f"{path} holds neither logs/ nor cdr/")


# -- commands -------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = build_config(SimConfig, _config_values(args), seed=args.seed)
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    pop = simulate_population(cfg)
    cells = {}
    for pid in sorted(pop.logs):
        lg = pop.logs[pid]
        _write_bytes(out / "logs" / f"{pid}.csv", write_netmon_csv(lg))
        first = {}
        for k, code in enumerate(lg.cell_codes.tolist()):
            first.setdefault(code, k)
        for code, k in first.items():
            cells.setdefault(lg.cell_vocab[code], (float(lg.lat[k]), float(lg.lon[k])))
    _write_bytes(out / "users.csv", _users_csv(pop.users))
    _write_bytes(out / "towers.csv", _tower_bytes(cells))
    _write_bytes(out / "simulation.cfg", dump_flat_config(cfg).encode("utf-8"))
    _emit({"command": "simulate", "out": str(out), "phones": len(pop.logs),
           "users": len(set(pop.users.values())), "config": dataclasses.asdict(cfg)})
    return 0


def _tower_bytes(cells: dict[str, tuple[float, float]]) -> bytes:
    from cdrlr.ingestion import TowerRecord
    from cdrlr.core_model import GeoPoint
    return write_tower_csv(TowerRecord(c, GeoPoint(*cells[c])) for c in sorted(cells))


def cmd_synthesize(args) -> int:
    cfg = _synthesis_config(_config_values(args), args.seed)
    src = Path(args.logs)
    if not (src / "logs").is_dir():
        raise CliError(f"{src} has no logs/ directory")
    users = _read_users(src / "users.csv")
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    n_events = 0
    for f in sorted((src / "logs").glob("*.csv")):
        for pid, lg in sorted(read_netmon_logs(_read_bytes(f)).items()):
            times = sample_event_times(cfg.rate, int(lg.times[0]), int(lg.times[-1]) + 1,
                                       derive_seed(cfg.seed, "events", pid))
            ms = synthesize_cdr(lg, times)
            n_events += len(ms)
            recs = [CdrRecord(pid, m.timestamp, m.cell_id, m.location.lat, m.location.lon) for m in ms]
            _write_bytes(out / "cdr" / f"{pid}.csv", write_cdr_csv(recs))
    _write_bytes(out / "users.csv", _users_csv(users))
    _write_bytes(out / "synthesis.cfg", dump_flat_config(cfg).encode("utf-8"))
    _emit({"command": "synthesize", "out": str(out), "events": n_events})
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(Path(args.corpus), args.seed)
    cfg, syn = _experiment_configs(args, corpus.synthesis)
    corpus.synthesis = syn
    pairs = corpus.pairs(cfg.days_per_track, cfg.events_per_hour)
    labels = np.array([p.y for p in pairs])
    if len(np.unique(labels)) < 2:
        raise CliError("training corpus holds a single class of pairs; need same-user and different-user pairs")
    rng = np.random.default_rng(derive_seed(cfg.seed, "train"))
    model_idx, cal_idx = stratified_split(labels, cfg.calibration_fraction_of_train, rng)
    pipe = fit_lr_pipeline([pairs[i] for i in model_idx], [pairs[i] for i in cal_idx],
                           make_scorer(cfg.scorer, cfg.features, cfg.l2_lambda),
                           make_calibrator(cfg.calibrator, cfg.kde_bandwidth), synthesis=syn)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(f"{out} exists (use --force to overwrite)")
    _write_bytes(out, pipe.to_json().encode("utf-8"))
    _emit({"command": "train", "out": str(out), "pairs": len(pairs),
           "model_pairs": len(model_idx), "calibration_pairs": len(cal_idx),
           "elub": pipe.bounds.to_dict(), "pipeline_hash": pipe.version_hash()})
    return 0


def cmd_evaluate(args) -> int:
    corpus = load_corpus(Path(args.corpus), args.seed)
    cfg, syn = _experiment_configs(args, corpus.synthesis)
    corpus.synthesis = syn
    validation = None
    if args.validation:
        validation = load_corpus(Path(args.validation), args.seed)
        validation.synthesis = syn
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    if args.sweep:
        rows = sweep(corpus, cfg, args.sweep, validation=validation)
    else:
        rows = [baseline_row(run_experiment(corpus, cfg, validation=validation))]
    written = export_report(rows, out)
    _emit({"command": "evaluate", "out": str(out), "sweep": args.sweep,
           "files": [p.name for p in written], "rows": [r.summary_row() for r in rows]})
    return 0


def _single_phone(records: Sequence[CdrRecord], path: str) -> str:
    ids = sorted({r.phone_id for r in records})
    if len(ids) != 1:
        raise CliError(f"{path}: expected records of exactly one phone, found {len(ids)}")
    return ids[0]


def _parse_day(text: str) -> int:
    try:
        return date.fromisoformat(text).toordinal() - date(1970, 1, 1).toordinal()
    except ValueError:
        raise CliError(f"bad date {text!r}; expected YYYY-MM-DD") from None


def _day_str(day: int) -> str:
    return date.fromordinal(day + date(1970, 1, 1).toordinal()).isoformat()


def cmd_compare(args) -> int:
    pipe = LrPipeline.from_json(_read_bytes(Path(args.pipeline)).decode("utf-8"))
    rec_a = parse_cdr_csv(_read_bytes(Path(args.cdr_a)))
    rec_b = parse_cdr_csv(_read_bytes(Path(args.cdr_b)))
    if not rec_a or not rec_b:
        raise CliError("both CDR files must contain records")
    id_a, id_b = _single_phone(rec_a, args.cdr_a), _single_phone(rec_b, args.cdr_b)
    if id_a == id_b:
        print(f"note: both files carry phone id {id_a!r}; comparing them as {id_a}#a and {id_a}#b",
              file=sys.stderr)
        rec_a = [dataclasses.replace(r, phone_id=f"{id_a}#a") for r in rec_a]
        rec_b = [dataclasses.replace(r, phone_id=f"{id_b}#b") for r in rec_b]
        id_a, id_b = f"{id_a}#a", f"{id_b}#b"
    towers = parse_tower_csv(_read_bytes(Path(args.towers))) if args.towers else []
    ms = resolve_cell_locations(rec_a + rec_b, towers)

    base = pipe.synthesis_config()
    days = [local_day(m.timestamp, base) for v in ms.values() for m in v]
    first = _parse_day(args.date_from) if args.date_from else min(days)
    last = _parse_day(args.date_to) if args.date_to else max(days)
    if last < first:
        raise CliError("--date-to lies before --date-from")
    cfg = pipe.synthesis_config(days_per_track=last - first + 1)

    def track(pid):
        inside = [m for m in ms[pid] if first <= local_day(m.timestamp, cfg) <= last]
        got = extract_daily_tracks(inside, cfg, phone_id=pid, user_id="", anchor_day=first,
                                   apply_filters=False)
        if got:
            return got[0]
        start = first * SECONDS_PER_DAY - cfg.utc_offset_seconds + cfg.window_start_seconds
        end = last * SECONDS_PER_DAY - cfg.utc_offset_seconds + cfg.window_end_seconds
        return Track(pid, "", start, end, (), days=last - first + 1)

    pair = TrackPair(track(id_a), track(id_b))
    data = prepare_pair(pair)
    report = {"pair_id": pair.pair_id, "phone_a": id_a, "phone_b": id_b,
              "date_from": _day_str(first), "date_to": _day_str(last),
              "n_switches": data.n_switches, "elub": pipe.bounds.to_dict(),
              "pipeline_hash": pipe.version_hash()}
    if data.n_switches == 0:
        report["status"] = "unscorable: 0 switches"
        print("no switches in the requested range; no LR reported", file=sys.stderr)
    else:
        res = pipe.evaluate_pair(data)
        report.update(status="ok", score=res.score, lr_unclipped=res.lr_unclipped, lr=res.lr,
                      log10_lr=math.log10(res.lr))
    _emit(report)
    return 0


# -- plumbing ---------------------------------------------------------------------------

def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _emit(obj):
    sys.stdout.write(json.dumps(_finite(obj), sort_keys=True, indent=1) + "\n")


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="master random seed (overrides the config)")
    p.add_argument("--config", default=d, help="flat key = value config file")
    p.add_argument("--force", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdrlr", description="Same-user likelihood ratios for phone pairs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a population and write its network-monitor logs")
    p.add_argument("out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synthesize", help="sample Poisson CDR events from simulated logs")
    p.add_argument("logs", help="directory written by simulate")
    p.add_argument("out")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="fit a pipeline on a labelled corpus")
    p.add_argument("corpus")
    p.add_argument("out", help="pipeline JSON to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="repeated-split evaluation or a sensitivity sweep")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--sweep", choices=SWEEP_DIMENSIONS)
    p.add_argument("--validation", help="second corpus scored by every fitted pipeline")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="LR for one pair of CDR files")
    p.add_argument("pipeline")
    p.add_argument("cdr_a")
    p.add_argument("cdr_b")
    p.add_argument("--towers", help="tower database CSV for records without coordinates")
    p.add_argument("--date-from", help="first local day, YYYY-MM-DD")
    p.add_argument("--date-to", help="last local day, YYYY-MM-DD")
    p.set_defaults(func=cmd_compare)

    for sp in sub.choices.values():
        _add_globals(sp, suppress=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError, KeyError, OSError,
            jsonschema.ValidationError, json.JSONDecodeError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"cdrlr: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
