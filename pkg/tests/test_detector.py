import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canids.autoencoder import INDRA, init_model
from canids.codec import SignalRecord
from canids.dataset import ScalingParams
from canids.detector import (
    SWEEP_ORDER,
    THRESHOLD_METHODS,
    StreamingDetector,
    calibrate_all,
    calibrate_threshold,
    detect_stream,
    intrusion_scores,
    message_score,
)
from rank_oracle import sort_oracle


def test_scores_basic():
    np.testing.assert_array_equal(intrusion_scores([0.1, 0.2], [0.1, 0.2]), [0.0, 0.0])
    assert intrusion_scores([0.5], [0.3])[0] == pytest.approx(0.04, abs=1e-15)
    rng = np.random.default_rng(0)
    a, b = rng.random(7), rng.random(7)
    s = intrusion_scores(a, b)
    for i in range(7):
        assert abs(s[i] - (a[i] - b[i]) * (a[i] - b[i])) < 1e-12
    with pytest.raises(ValueError):
        intrusion_scores([1.0], [1.0, 2.0])


def test_message_score():
    assert message_score([0.01, 0.04, 0.002]) == (0.04, 1)
    assert message_score([0.3]) == (0.3, 0)
    assert message_score([0.2, 0.2, 0.2]) == (0.2, 0)
    with pytest.raises(ValueError):
        message_score([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=12), st.randoms())
def test_message_score_permutation_invariant(scores, rnd):
    mis, arg = message_score(scores)
    assert mis == max(scores) and scores[arg] == mis
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert message_score(shuffled)[0] == mis


def test_calibrate_constant():
    for m in THRESHOLD_METHODS:
        assert calibrate_threshold([0.25] * 17, m).value == 0.25


def test_calibrate_p99_9_of_1_to_1000():
    t = calibrate_threshold(np.arange(1, 1001), "p99_9")
    assert t.value == 999 and t.sample_count == 1000 and t.method == "p99_9"


def test_calibrate_max():
    assert calibrate_threshold([0.1, 0.7, 0.3], "max").value == 0.7


def test_calibrate_errors():
    with pytest.raises(ValueError):
        calibrate_threshold([], "max")
    with pytest.raises(ValueError):
        calibrate_threshold([1.0], "p42")


def test_calibrate_against_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pop = rng.exponential(size=rng.integers(1, 3000))
        for m in THRESHOLD_METHODS:
            expected = sort_oracle(pop, m)
            got = calibrate_threshold(pop, m).value
            assert got == expected
        cands = calibrate_all(pop)
        vals = [cands[m].value for m in SWEEP_ORDER]
        assert vals == sorted(vals)


def constant_model(level=0.5, f=2):
    # zero weights: every reconstruction is tanh(output bias) = level
    m = init_model(INDRA, f, 3)
    for _, arr in m.parameters():
        arr[...] = 0.0
    m.layers["out"].b[...] = np.arctanh(level)
    m.scaler = ScalingParams((0.0,) * f, (1.0,) * f)
    return m


def records(values):
    return [SignalRecord(0.01 * i, 1, tuple(v)) for i, v in enumerate(values)]


def test_detect_warmup_and_scores():
    m = constant_model()
    vals = [[0.5, 0.5]] * 4 + [[0.9, 0.4]]
    res = detect_stream(m, 0.1, records(vals), k=3)
    assert len(res) == 5
    assert [r.warmup for r in res] == [True, True, False, False, False]
    assert not any(r.flag for r in res[:4])
    assert res[4].scores == pytest.approx((0.16, 0.01))
    assert res[4].message_score == pytest.approx(0.16)
    assert res[4].argmax == 0 and res[4].flag


def test_detect_infinite_threshold_never_flags():
    m = constant_model()
    rng = np.random.default_rng(0)
    res = detect_stream(m, math.inf, records(rng.random((50, 2))), k=5)
    assert not any(r.flag for r in res)


def test_detect_threshold_monotone():
    m = constant_model()
    recs = records(np.random.default_rng(2).random((200, 2)))
    counts = [sum(r.flag for r in detect_stream(m, t, recs, k=4)) for t in (0.0, 0.01, 0.05, 0.1, 0.2, 0.3)]
    assert counts == sorted(counts, reverse=True)


def test_detect_wrong_signal_count():
    m = constant_model()
    with pytest.raises(ValueError):
        detect_stream(m, 0.1, [SignalRecord(0.0, 1, (1.0, 2.0, 3.0))] * 5, k=3)


def test_streaming_matches_batch_and_is_causal():
    rng = np.random.default_rng(4)
    m = init_model(INDRA, 3, 5, seed=1)
    m.scaler = ScalingParams((0.0,) * 3, (1.0,) * 3)
    recs = records(rng.random((60, 3)))
    batch = detect_stream(m, 0.05, recs, k=6)
    stream = StreamingDetector(m, 0.05, k=6).run(recs)
    assert len(batch) == len(stream)
    for a, b in zip(batch, stream):
        assert a.flag == b.flag and a.warmup == b.warmup and a.argmax == b.argmax
        if a.scores is not None:
            np.testing.assert_allclose(a.scores, b.scores, atol=1e-15)
    # appending records leaves earlier results untouched
    longer = detect_stream(m, 0.05, recs + records(rng.random((10, 3))), k=6)
    assert longer[: len(batch)] == batch
