"""Acceptance criteria 1-9.

Run under pytest (one test per criterion, summary lines printed at the end of
the session) or directly with ``python3 tests/test_acceptance.py``.  Training
on the bundled testbed dominates the runtime (roughly 20 minutes on one core).
"""

import functools
import json
import os
import random
import sys
import tempfile
import time
from fractions import Fraction

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import extended_ref  # noqa: E402
from bit_oracle import oracle_extract  # noqa: E402
from rank_oracle import sort_oracle  # noqa: E402

from canids import testbed  # noqa: E402
from canids.attacks import AttackSpec  # noqa: E402
from canids.autoencoder import INDRA, LD, LED, TrainConfig, backward, forward, init_model  # noqa: E402
from canids.cli import main as cli_main  # noqa: E402
from canids.codec import MalformedDefinitionError, MessageDef, SignalDef, extract_signals, pack_signals  # noqa: E402
from canids.detector import THRESHOLD_METHODS, calibrate_all, calibrate_threshold  # noqa: E402
from canids.evaluation import DEFAULT_SIZES, PERIOD_POOL_MS, SystemSize, ids_utilization, scalability_report  # noqa: E402
from canids.pipeline import build_scenarios, calibrate_model, detect_trace, score, train_trace  # noqa: E402
from canids.synthetic import generate  # noqa: E402

RESULTS: dict[int, str] = {}

# the learning check caps training here; it needs far fewer epochs to pass
LEARNING_EPOCH_CAP = 30


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[n] = line
    print(line, flush=True)
    return ok


# ---------------------------------------------------------------- shared state


@functools.lru_cache(maxsize=None)
def traces():
    return generate(testbed.train_spec()), generate(testbed.heldout_spec())


@functools.lru_cache(maxsize=None)
def trained(variant: str):
    """(models keyed by id, reports keyed by id, seconds spent training)."""
    t0 = time.perf_counter()
    cfg = TrainConfig(variant=variant, seed=0, **testbed.TRAIN)
    out = train_trace(traces()[0], cfg)
    models = {mid: m for mid, (m, _) in out.items()}
    reports = {mid: r for mid, (_, r) in out.items()}
    for mid in models:
        calibrate_model(models[mid], reports[mid], "p99_9")
    return models, reports, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def scenarios():
    specs = [AttackSpec.from_dict(a) for a in testbed.attacks()]
    return build_scenarios(traces()[1], specs)


@functools.lru_cache(maxsize=None)
def scenario_metrics(variant: str):
    models, _, _ = trained(variant)
    out = {}
    for name, trace in scenarios().items():
        t0 = time.perf_counter()
        det = detect_trace(models, trace, testbed.TRAIN["k"])
        out[name] = (score(det, name), time.perf_counter() - t0)
    return out


def baseline(m) -> float:
    c = m.counts
    return max(c.tp + c.fn, c.fp + c.tn) / c.total


# ---------------------------------------------------------------- criteria


def fd_worst_error(model, x, eps=1e-5):
    """Worst relative error of the float64 BPTT gradient against central
    differences of an independent long double forward pass."""
    _, cache = forward(model, x)
    grads = backward(model, x, cache)
    numeric = extended_ref.central_differences(model.variant, dict(model.parameters()), x, eps)
    worst = 0.0
    for name, ana in grads.items():
        num = numeric[name]
        rel = np.abs(num - ana) / np.maximum(np.maximum(np.abs(num), np.abs(ana)), 1e-8)
        worst = max(worst, float(rel.max()))
    return worst


def criterion_1() -> bool:
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    variants = (INDRA, LED, LD)
    for i in range(20):
        f, h, k, b = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
        model = init_model(variants[i % 3], f, h, seed=int(rng.integers(1 << 30)))
        x = rng.random((b, k, f))
        worst = max(worst, fd_worst_error(model, x))
    secs = time.perf_counter() - t0
    return record(1, worst < 1e-4 and secs < 60, f"20 models, worst relative error {worst:.2e} (< 1e-4), {secs:.1f} s (< 60 s)")


def criterion_2() -> bool:
    rnd = random.Random(7)
    t0 = time.perf_counter()
    cases = mismatches = round_trip_failures = 0
    while cases < 10_000:
        order = rnd.choice(["little_endian", "big_endian"])
        vtype = rnd.choice(["signed", "unsigned"])
        try:
            sig = SignalDef("s", rnd.randrange(64), rnd.randint(1, 64), order, vtype)
        except MalformedDefinitionError:
            continue
        cases += 1
        msg = MessageDef(1, (sig,))
        payload = bytes(rnd.getrandbits(8) for _ in range(8))
        got = extract_signals(payload, msg)[0]
        if got != oracle_extract(payload, sig.start_bit, sig.length_bits, order, vtype):
            mismatches += 1
        lo, hi = sig.value_range()
        value = rnd.randint(lo, hi)
        # both directions: extract(pack(v)) == v, and re-packing the extracted
        # value reproduces the payload on the signal's own bits
        mask = pack_signals([-1 if vtype == "signed" else hi], msg)
        masked = bytes(a & m for a, m in zip(payload, mask))
        if extract_signals(pack_signals([value], msg), msg) != [value] or pack_signals([got], msg) != masked:
            round_trip_failures += 1
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and round_trip_failures == 0 and secs < 10
    return record(2, ok, f"{cases} cases, {mismatches} oracle mismatches, {round_trip_failures} round-trip failures, "
                         f"{secs:.1f} s (< 10 s)")


def criterion_3() -> bool:
    rng = np.random.default_rng(3)
    mismatches = order_violations = 0
    for i in range(1000):
        n = int(rng.integers(1, 5000))
        kind = i % 4
        if kind == 0:
            pop = rng.exponential(size=n)
        elif kind == 1:
            pop = rng.integers(0, 20, size=n).astype(float)  # heavy ties
        elif kind == 2:
            pop = rng.lognormal(-8, 2, size=n)
        else:
            pop = rng.random(n) * 10.0 ** rng.integers(-6, 3)
        for m in THRESHOLD_METHODS:
            if calibrate_threshold(pop, m).value != sort_oracle(pop, m):
                mismatches += 1
        c = calibrate_all(pop)
        chain = [c[m].value for m in ("p90", "p99", "p99_9", "p99_99", "max")]
        if chain != sorted(chain):
            order_violations += 1
    return record(3, mismatches == 0 and order_violations == 0,
                  f"1000 populations x 7 methods, {mismatches} mismatches, {order_violations} ordering violations")


def criterion_4() -> bool:
    train = traces()[0]
    cfg = TrainConfig(epochs=LEARNING_EPOCH_CAP, k=20, batch_size=128, lr=1e-4, patience=10, seed=0)
    t0 = time.perf_counter()
    out = train_trace(train, cfg)
    secs = time.perf_counter() - t0
    ratios = {mid: min(r.val_losses) / r.val_losses[0] for mid, (_, r) in out.items()}
    n_records = {mid: len(train.for_id(mid)) for mid in out}
    ok = all(v < 0.1 for v in ratios.values()) and secs < 15 * 60
    detail = ", ".join(f"id{mid} {n_records[mid]} records ratio {v:.4f}" for mid, v in ratios.items())
    return record(4, ok, f"{detail} (< 0.1), h={cfg.hidden_dim}, {secs:.0f} s (< 900 s)")


def criterion_5() -> bool:
    m = scenario_metrics(INDRA)
    plateau, normal = m["plateau"][0], m["normal"][0]
    cont, pb = m["continuous"][0], m["playback"][0]
    slowest = max(t for _, t in m.values())
    checks = {
        "plateau": plateau.detection_accuracy >= 0.95,
        "fpr": normal.false_positive_rate <= 0.025,
        "continuous": cont.detection_accuracy > baseline(cont),
        "playback": pb.detection_accuracy > baseline(pb),
        "time": slowest < 120,
    }
    detail = (f"plateau acc {plateau.detection_accuracy:.4f} (>= 0.95); clean FPR {normal.false_positive_rate:.4f} "
              f"(<= 0.025); continuous acc {cont.detection_accuracy:.4f} vs baseline {baseline(cont):.4f}; "
              f"playback acc {pb.detection_accuracy:.4f} vs baseline {baseline(pb):.4f} "
              f"(TP {pb.counts.tp}, FP {pb.counts.fp}); slowest scenario {slowest:.1f} s")
    failed = [k for k, v in checks.items() if not v]
    if failed:
        detail += f"; failing: {', '.join(failed)}"
    return record(5, not failed, detail)


def criterion_6() -> bool:
    models, reports, _ = trained(INDRA)
    normal = scenarios()["normal"]
    cands = {mid: calibrate_all(r.best_val_losses) for mid, r in reports.items()}
    fpr = {}
    for method in THRESHOLD_METHODS:
        det = detect_trace(models, normal, testbed.TRAIN["k"], thresholds={mid: c[method].value for mid, c in cands.items()})
        fpr[method] = score(det, "normal").false_positive_rate
    chain = ["median", "p90", "p99", "p99_9", "p99_99", "max"]
    values = [fpr[m] for m in chain]
    ok = all(b <= a for a, b in zip(values, values[1:]))
    detail = ", ".join(f"{m} {fpr[m]:.4f}" for m in chain) + f" (mean {fpr['mean']:.4f}, not a percentile)"
    return record(6, ok, detail)


def criterion_7() -> bool:
    t_ids = 80.35
    exact_t = Fraction("80.35")
    worst = 0.0
    for p in PERIOD_POOL_MS:
        worst = max(worst, abs(ids_utilization(t_ids, p) - float(exact_t / (Fraction(p) * 1000))))
    rep = scalability_report([SystemSize(p, q) for p, q in DEFAULT_SIZES], t_ids, seed=0)
    max_total = 0.0
    reconciled = True
    for row in rep.rows:
        reconciled &= sum(e.n_messages for e in row.ecus) == row.size.q
        for e in row.ecus:
            exact = sum((exact_t / (Fraction(per).limit_denominator() * 1000) for per in e.periods_ms), Fraction(0))
            worst = max(worst, abs(e.u_ids - float(exact)), abs(e.u_total - float(exact + Fraction(1, 2))))
            max_total = max(max_total, e.u_total)
    ok = worst < 1e-12 and max_total < 1.0 and reconciled
    sizes = " ".join(s["size"] for s in rep.summary())
    return record(7, ok, f"worst deviation from rational oracle {worst:.1e} (< 1e-12); sizes {sizes}; "
                         f"max U_RT+U_IDS {max_total:.4f} (< 1.0)")


DETERMINISM_CONFIG = {
    "synthetic": {"duration_s": 10.0, "seed": 5, "messages": [
        {"id": 1, "period_ms": 10.0, "signals": [
            {"components": [{"freq_hz": 0.7, "amplitude": 0.8}, {"freq_hz": 2.3, "amplitude": 0.3, "phase": 1.0}],
             "noise": 0.02},
            {"components": [{"freq_hz": 0.4, "amplitude": 0.5, "phase": 0.5}], "offset": 0.2,
             "coupling": {"0": 0.6}, "noise": 0.02}]},
        {"id": 2, "period_ms": 20.0, "time_offset_ms": 5.0, "signals": [
            {"components": [{"freq_hz": 0.5, "amplitude": 1.0, "phase": 0.3}], "noise": 0.02}]}]},
    "test": {"start_s": 10.0, "duration_s": 6.0, "seed": 6},
    "train": {"epochs": 3, "k": 10, "batch_size": 64, "lr": 0.001, "hidden_dim": 8},
    "attacks": [
        {"name": "flooding", "kind": "flooding", "message_id": 1, "start": 11.0, "duration": 0.5,
         "params": {"period": 0.005}, "seed": 1},
        {"name": "plateau", "kind": "plateau", "message_id": 1, "start": 12.0, "duration": 0.2, "signal": 0,
         "params": {"jump_range": 0.5}},
        {"name": "continuous", "kind": "continuous", "message_id": 1, "start": 12.0, "duration": 1.0, "signal": 1,
         "params": {"delta_range": 0.5}},
        {"name": "suppress", "kind": "suppress", "message_id": 2, "start": 13.0, "duration": 0.3},
        {"name": "playback", "kind": "playback", "message_id": 1, "start": 14.0, "duration": 1.0,
         "params": {"source_start": 11.5}},
    ],
    "scale": {"t_ids_us": 80.35, "sizes": [[2, 10], [4, 20]]},
}


def criterion_8() -> bool:
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = os.path.join(tmp, "config.json")
        with open(cfg_path, "w") as fh:
            json.dump(DETERMINISM_CONFIG, fh)
        blobs = []
        for run in ("a", "b"):
            out = os.path.join(tmp, run)
            code = cli_main(["run", "--config", cfg_path, "--out", out, "--seed", "17"])
            if code != 0:
                return record(8, False, f"pipeline run {run} exited with {code}")
            with open(os.path.join(out, "metrics.json"), "rb") as a, open(os.path.join(out, "metrics.csv"), "rb") as b:
                blobs.append((a.read(), b.read()))
    ok = blobs[0] == blobs[1]
    return record(8, ok, f"two gen..eval runs with seed 17: metrics.json and metrics.csv "
                         f"{'byte-identical' if ok else 'differ'} ({len(blobs[0][0])} bytes)")


def criterion_9() -> bool:
    means = {}
    rows = []
    for variant in (INDRA, LED, LD):
        m = scenario_metrics(variant)
        means[variant] = float(np.mean([sm.detection_accuracy for sm, _ in m.values()]))
        rows.append(f"{variant} mean {means[variant]:.4f} [" +
                    " ".join(f"{n}={sm.detection_accuracy:.3f}" for n, (sm, _) in m.items()) + "]")
    ok = means[INDRA] >= means[LD]
    return record(9, ok, "; ".join(rows) + " (INDRA >= LD required, LED reported only)")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("n", range(1, 10))
def test_criterion(n):
    assert CRITERIA[n - 1](), RESULTS[n]


if __name__ == "__main__":
    passed = [c() for c in CRITERIA]
    print()
    for n in sorted(RESULTS):
        print(RESULTS[n])
    sys.exit(0 if all(passed) else 1)
