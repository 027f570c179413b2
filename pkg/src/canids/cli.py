"""Command line pipeline: gen, train, calibrate, inject, detect, eval, bench, scale.

Every stage reads and writes files under ``--out``; ``run`` chains them all.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import dataset as ds
from .attacks import AttackSpec
from .autoencoder import TrainConfig, TrainReport, load_model, save_model
from .codec import load_schema, parse_trace, save_schema, write_trace
from .detector import THRESHOLD_METHODS
from .evaluation import (
    PERIOD_POOL_MS,
    ScenarioMetrics,
    SystemSize,
    confusion,
    measure_inference_time,
    scalability_report,
)
from .pipeline import build_scenarios, calibrate_model, detect_trace, id_values, train_trace
from .synthetic import SyntheticSpec, generate
from .testbed import default_config

log = logging.getLogger("canids")

METRIC_FIELDS = ["scenario", "TP", "FN", "FP", "TN", "accuracy", "fpr"]


class PipelineError(Exception):
    pass


@dataclass
class PipelineConfig:
    seed: int
    out: str
    synthetic: dict
    test: dict
    train: dict
    variant: str = "INDRA"
    threshold_method: str = "p99_9"
    attacks: list = field(default_factory=list)
    bench: dict = field(default_factory=dict)
    scale: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    @classmethod
    def build(cls, doc: dict, seed: int | None, out: str) -> "PipelineConfig":
        merged = default_config()
        for key, value in doc.items():
            if key not in merged and key != "paths":
                raise PipelineError(f"unknown config key {key!r}")
            merged[key] = value
        if seed is not None:
            merged["seed"] = seed
        cfg = cls(out=out, **merged)
        if cfg.threshold_method not in THRESHOLD_METHODS:
            raise PipelineError(f"unknown threshold method {cfg.threshold_method!r}")
        return cfg

    def path(self, name: str) -> str:
        defaults = {
            "schema": "schema.json",
            "train_trace": "train.csv",
            "test_trace": "test.csv",
            "model_dir": "models",
            "scenario_dir": "scenarios",
            "detection_dir": "detections",
        }
        return self.paths.get(name) or os.path.join(self.out, defaults[name])

    def out_file(self, name: str) -> str:
        return os.path.join(self.out, name)

    def train_config(self) -> TrainConfig:
        opts = dict(self.train)
        opts.setdefault("seed", self.seed)
        opts.setdefault("variant", self.variant)
        return TrainConfig(**opts)

    def seeds(self) -> dict:
        return {"seed": self.seed, "synthetic_seed": self.synthetic.get("seed", 0),
                "test_seed": self.test.get("seed"), "train_seed": self.train_config().seed}


def _need(*paths: str) -> None:
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise PipelineError("missing input: " + ", ".join(missing))


def _write_json(path: str, doc) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _model_path(cfg: PipelineConfig, mid: int) -> str:
    return os.path.join(cfg.path("model_dir"), f"id{mid}.json")


def _report_path(cfg: PipelineConfig, mid: int) -> str:
    return os.path.join(cfg.path("model_dir"), f"id{mid}.report.json")


def _load_trace(cfg: PipelineConfig, path: str):
    _need(cfg.path("schema"), path)
    return parse_trace(path, load_schema(cfg.path("schema")))


def _load_models(cfg: PipelineConfig, schema) -> dict:
    paths = {mid: _model_path(cfg, mid) for mid in sorted(schema)}
    _need(*paths.values())
    return {mid: load_model(p, schema[mid].n_signals) for mid, p in paths.items()}


def _scenario_names(cfg: PipelineConfig) -> list[str]:
    names = ["normal"]
    for a in cfg.attacks:
        name = AttackSpec.from_dict(a).label()
        if name not in names:
            names.append(name)
    return names


# --------------------------------------------------------------------------
# stages


def cmd_gen(cfg: PipelineConfig) -> None:
    spec = SyntheticSpec.from_dict(cfg.synthetic)
    spec.validate(cfg.train_config().k)
    held = copy.deepcopy(spec)
    held.start_s = float(cfg.test.get("start_s", spec.start_s + spec.duration_s))
    held.duration_s = float(cfg.test.get("duration_s", spec.duration_s))
    held.seed = int(cfg.test.get("seed", spec.seed + 1))
    os.makedirs(cfg.out, exist_ok=True)
    train, test = generate(spec), generate(held)
    save_schema(train.schema, cfg.path("schema"))
    write_trace(train, cfg.path("train_trace"))
    write_trace(test, cfg.path("test_trace"))
    _write_json(cfg.out_file("gen.json"), {"seeds": cfg.seeds(), "train": spec.to_dict(), "test": held.to_dict(),
                                           "records": {"train": len(train), "test": len(test)}})
    print(f"gen: {len(train)} training and {len(test)} test records for ids {train.ids()}")


def cmd_train(cfg: PipelineConfig) -> None:
    trace = _load_trace(cfg, cfg.path("train_trace"))
    tc = cfg.train_config()
    os.makedirs(cfg.path("model_dir"), exist_ok=True)

    def progress(mid, epoch, tr, va):
        log.info("id%d epoch %d train %.6g val %.6g", mid, epoch + 1, tr, va)

    results = train_trace(trace, tc, progress=progress)
    for mid, (model, report) in results.items():
        save_model(model, _model_path(cfg, mid))
        _write_json(_report_path(cfg, mid), {"seeds": cfg.seeds(), "message_id": mid,
                                             "config": vars(tc), **report.to_dict()})
        print(f"train: id{mid} {report.epochs_run} epochs, best val {report.val_losses[report.best_epoch]:.6g}")


def cmd_calibrate(cfg: PipelineConfig) -> None:
    schema = load_schema(cfg.path("schema"))
    models = _load_models(cfg, schema)
    out = {"seeds": cfg.seeds(), "method": cfg.threshold_method, "ids": {}}
    for mid, model in models.items():
        _need(_report_path(cfg, mid))
        rep = _read_json(_report_path(cfg, mid))
        report = TrainReport(rep["train_losses"], rep["val_losses"], rep["best_epoch"], rep["best_val_losses"])
        out["ids"][str(mid)] = calibrate_model(model, report, cfg.threshold_method)
        save_model(model, _model_path(cfg, mid))
        print(f"calibrate: id{mid} {cfg.threshold_method} = {model.threshold['value']:.6g}")
    _write_json(cfg.out_file("calibration.json"), out)


def cmd_inject(cfg: PipelineConfig) -> None:
    clean = _load_trace(cfg, cfg.path("test_trace"))
    specs = [AttackSpec.from_dict(a) for a in cfg.attacks]
    scenarios = build_scenarios(clean, specs)
    d = cfg.path("scenario_dir")
    os.makedirs(d, exist_ok=True)
    for name, trace in scenarios.items():
        write_trace(trace, os.path.join(d, f"{name}.csv"))
    _write_json(cfg.out_file("scenarios.json"), {
        "seeds": cfg.seeds(), "attacks": [s.to_dict() for s in specs],
        "scenarios": {n: {"records": len(t), "positives": sum(r.label == 1 for r in t.records)}
                      for n, t in scenarios.items()}})
    print(f"inject: {len(scenarios)} scenarios ({', '.join(scenarios)})")


def _detection_rows(det, width: int):
    for rec, res in zip(det.trace.records, det.results):
        row = [repr(rec.timestamp), f"id{rec.message_id}"]
        if res.warmup:
            row += ["", "0", ""] + [""] * width
        else:
            scores = [repr(s) for s in res.scores] + [""] * (width - len(res.scores))
            row += [repr(res.message_score), str(int(res.flag)), str(res.argmax + 1)] + scores
        yield row


def cmd_detect(cfg: PipelineConfig) -> None:
    schema = load_schema(cfg.path("schema"))
    models = _load_models(cfg, schema)
    k = cfg.train_config().k
    width = max(m.n_signals for m in schema.values())
    d = cfg.path("detection_dir")
    os.makedirs(d, exist_ok=True)
    summary = {}
    for name in _scenario_names(cfg):
        trace = _load_trace(cfg, os.path.join(cfg.path("scenario_dir"), f"{name}.csv"))
        det = detect_trace(models, trace, k)
        with open(os.path.join(d, f"{name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Time", "ID", "MIS", "Flag", "ArgmaxSignal"] + [f"IS_{i + 1}" for i in range(width)])
            w.writerows(_detection_rows(det, width))
        summary[name] = {"records": len(trace), "flagged": int(sum(det.flags))}
        print(f"detect: {name} {summary[name]['flagged']}/{len(trace)} flagged")
    _write_json(cfg.out_file("detections.json"), {"seeds": cfg.seeds(), "k": k, "scenarios": summary})


def _read_column(path: str, column: str) -> list[str]:
    with open(path, newline="") as fh:
        return [row[column] for row in csv.DictReader(fh)]


def cmd_eval(cfg: PipelineConfig) -> None:
    rows, excluded = [], []
    for name in _scenario_names(cfg):
        labels_path = os.path.join(cfg.path("scenario_dir"), f"{name}.csv")
        det_path = os.path.join(cfg.path("detection_dir"), f"{name}.csv")
        _need(labels_path, det_path)
        labels = [int(v) for v in _read_column(labels_path, "Label")]
        flags = [v == "1" for v in _read_column(det_path, "Flag")]
        if len(labels) != len(flags):
            raise PipelineError(f"{name}: {len(labels)} labeled records but {len(flags)} detections")
        rows.append(ScenarioMetrics.from_counts(name, confusion(labels, flags)).to_dict())
        # sensitivity: the same scenario with warm-up records (empty MIS) left out
        scored = [m != "" for m in _read_column(det_path, "MIS")]
        kept = [(lab, f) for lab, f, s in zip(labels, flags, scored) if s]
        counts = confusion([lab for lab, _ in kept], [f for _, f in kept])
        excluded.append(ScenarioMetrics.from_counts(name, counts).to_dict())
    _write_json(cfg.out_file("metrics.json"), {"seeds": cfg.seeds(), "threshold_method": cfg.threshold_method,
                                               "scenarios": rows, "warmup_excluded": excluded})
    with open(cfg.out_file("metrics.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows({k: ("" if v is None else v) for k, v in r.items()} for r in rows)
    for r in rows:
        fpr = "n/a" if r["fpr"] is None else f"{r['fpr']:.4f}"
        print(f"eval: {r['scenario']:<12} accuracy {r['accuracy']:.4f} fpr {fpr}")


def cmd_bench(cfg: PipelineConfig) -> None:
    schema = load_schema(cfg.path("schema"))
    models = _load_models(cfg, schema)
    trace = _load_trace(cfg, cfg.path("test_trace"))
    k = cfg.train_config().k
    reps = int(cfg.bench.get("repetitions", 10))
    n = int(cfg.bench.get("n_windows", 100))
    out = {"seeds": cfg.seeds(), "repetitions": reps, "ids": {}}
    for mid, model in models.items():
        windows = ds.window_array(ds.scale(id_values(trace, mid), model.scaler), k)[:n]
        timing = measure_inference_time(model, windows, reps)
        out["ids"][str(mid)] = timing.to_dict()
        print(f"bench: id{mid} mean {timing.mean_us:.1f} us/window (min {timing.min_us:.1f}, max {timing.max_us:.1f})")
    out["mean_us"] = float(np.mean([v["mean_us"] for v in out["ids"].values()]))
    _write_json(cfg.out_file("bench.json"), out)


def cmd_scale(cfg: PipelineConfig) -> None:
    t_ids = cfg.scale.get("t_ids_us", 80.35)
    if t_ids == "bench":
        _need(cfg.out_file("bench.json"))
        t_ids = _read_json(cfg.out_file("bench.json"))["mean_us"]
    rt = float(cfg.scale.get("rt_utilization", 0.5))
    sizes = [SystemSize(int(p), int(q), rt) for p, q in cfg.scale.get("sizes", [])]
    pool = cfg.scale.get("period_pool_ms", PERIOD_POOL_MS)
    rep = scalability_report(sizes, float(t_ids), pool, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    with open(cfg.out_file("scalability.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, ["size", "ecu_index", "n_messages", "U_IDS", "U_total"], lineterminator="\n")
        w.writeheader()
        w.writerows(rep.csv_rows())
    _write_json(cfg.out_file("scalability.json"), {
        "seeds": cfg.seeds(), "t_ids_us": float(t_ids), "period_pool_ms": list(pool), "rt_utilization": rt,
        "note": "system sizes are configurable placeholders, not taken from measured vehicles",
        "summary": rep.summary()})
    for s in rep.summary():
        flag = " OVERLOADED" if s["overloaded_ecus"] else ""
        print(f"scale: {s['size']:<8} mean U_IDS {s['mean_U_IDS']:.4f} max U_total {s['max_U_total']:.4f}{flag}")


STAGES = {
    "gen": cmd_gen,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "inject": cmd_inject,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "scale": cmd_scale,
}


def cmd_run(cfg: PipelineConfig) -> None:
    for name in ("gen", "train", "calibrate", "inject", "detect", "eval", "scale"):
        STAGES[name](cfg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config (missing keys take the bundled testbed values)")
    common.add_argument("--seed", type=int, help="global seed, overrides the config")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")

    p = argparse.ArgumentParser(prog="canids", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"canids {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate clean training and test traces",
        "train": "train one autoencoder per message id",
        "calibrate": "compute threshold candidates and store the chosen one",
        "inject": "write one labeled trace per attack scenario",
        "detect": "score every scenario trace",
        "eval": "accuracy and false positive rate per scenario",
        "bench": "time per-window inference",
        "scale": "ECU utilization report for several system sizes",
        "run": "gen, train, calibrate, inject, detect, eval and scale in sequence",
        "config": "print the effective config",
    }
    for name, text in helps.items():
        sub.add_parser(name, help=text, parents=[common])
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        doc = {}
        if args.config:
            _need(args.config)
            doc = _read_json(args.config)
        cfg = PipelineConfig.build(doc, args.seed, args.out)
        if args.command == "config":
            json.dump({k: v for k, v in vars(cfg).items() if k != "out"}, sys.stdout, indent=2)
            print()
        elif args.command == "run":
            cmd_run(cfg)
        else:
            STAGES[args.command](cfg)
    except (PipelineError, ValueError, KeyError, OSError) as exc:
        print(f"canids {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
