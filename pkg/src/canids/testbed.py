"""The bundled synthetic testbed: generator, test-trace window, attacks and
training settings shared by the CLI defaults and the acceptance suite."""

from __future__ import annotations

import copy

from .synthetic import SyntheticSpec, default_spec

TRAIN_DURATION_S = 200.0
TRAIN_SEED = 7
TEST_START_S = 200.0
TEST_DURATION_S = 40.0
TEST_SEED = 99
NOISE = 0.02

# training used by the detection scenarios; the learning check uses the
# stock optimiser settings instead
TRAIN = {"epochs": 80, "k": 20, "batch_size": 128, "lr": 1e-3, "patience": 10, "hidden_dim": 32}


ATTACK_STARTS_S = (205.0, 213.0, 221.0, 229.0)


def attacks() -> list[dict]:
    """Five scenarios on id1, each with one attack interval per start time."""
    k = TRAIN["k"]
    period_s = 0.01
    out = []
    for i, t in enumerate(ATTACK_STARTS_S):
        out += [
            {"name": "flooding", "kind": "flooding", "message_id": 1, "start": t, "duration": 1.0,
             "params": {"period": 0.005, "mode": "random"}, "seed": 11 + i},
            {"name": "plateau", "kind": "plateau", "message_id": 1, "start": t, "duration": 2 * k * period_s,
             "signal": 0, "params": {"jump_range": 0.5}},
            {"name": "continuous", "kind": "continuous", "message_id": 1, "start": t, "duration": 2.0,
             "signal": 0, "params": {"delta_range": 0.5}},
            {"name": "suppress", "kind": "suppress", "message_id": 1, "start": t, "duration": 0.5},
            {"name": "playback", "kind": "playback", "message_id": 1, "start": t, "duration": 2.0,
             "params": {"source_start": round(t - 3.33, 2)}},
        ]
    return out


def train_spec() -> SyntheticSpec:
    return default_spec(duration_s=TRAIN_DURATION_S, seed=TRAIN_SEED, noise=NOISE)


def heldout_spec(base: SyntheticSpec | None = None) -> SyntheticSpec:
    """Same generator continued past the training interval with fresh noise."""
    spec = copy.deepcopy(base or train_spec())
    spec.start_s = TEST_START_S
    spec.duration_s = TEST_DURATION_S
    spec.seed = TEST_SEED
    return spec


def default_config() -> dict:
    return {
        "seed": 0,
        "synthetic": train_spec().to_dict(),
        "test": {"start_s": TEST_START_S, "duration_s": TEST_DURATION_S, "seed": TEST_SEED},
        "train": dict(TRAIN),
        "variant": "INDRA",
        "threshold_method": "p99_9",
        "attacks": attacks(),
        "bench": {"repetitions": 10, "n_windows": 100},
        "scale": {"t_ids_us": 80.35, "sizes": [[2, 10], [4, 20], [6, 30], [8, 40], [10, 50], [12, 60]],
                  "rt_utilization": 0.5},
    }
