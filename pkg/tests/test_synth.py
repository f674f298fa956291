import json
import time

import numpy as np
import pytest

from waltzfig.core import SHORT_NAMES, label_from_short_name
from waltzfig.errors import ConfigError
from waltzfig.ingest import extract_samples
from waltzfig.synth import (
    config_from_dict,
    config_to_dict,
    default_config,
    default_config_text,
    gen_corpus,
    gen_dance,
    gen_sequence,
    load_config,
    with_identical_templates,
)
from waltzfig.transitions import trained_matrix, unbiased_matrix


def names(seq):
    return [l.short_name for l in seq]


def test_whisk_always_followed_by_chasse():
    cfg = default_config(length_range=(2000, 2000))
    seq = names(gen_sequence(cfg, np.random.default_rng(0)))
    follow = {seq[i + 1] for i in range(len(seq) - 1) if seq[i] == "W"}
    assert follow == {"PC"}


def test_fixed_length():
    cfg = default_config(length_range=(5, 5))
    rng = np.random.default_rng(1)
    assert all(len(gen_sequence(cfg, rng)) == 5 for _ in range(50))


def test_sequences_stay_in_support():
    cfg = default_config(length_range=(1000, 1000))
    support = unbiased_matrix().support
    idx = [l.index for l in gen_sequence(cfg, np.random.default_rng(2))]
    assert all(support[a, b] for a, b in zip(idx, idx[1:]))


def test_lcc_successor_frequencies():
    cfg = default_config(length_range=(10_000, 10_000))
    rng = np.random.default_rng(3)
    L = label_from_short_name("LCC").index
    succ = []
    while len(succ) < 100_000:
        idx = np.array([l.index for l in gen_sequence(cfg, rng)])
        succ.extend(idx[1:][idx[:-1] == L].tolist())
    counts = np.bincount(succ[:100_000], minlength=16) / 100_000
    for name in ("N1", "PC", "RCC"):
        assert abs(counts[label_from_short_name(name).index] - 1 / 3) < 0.01
    assert counts.sum() == pytest.approx(1.0)


def test_trained_matrix_converges_on_generated_data():
    # at 1e5 transitions the rarest rows see ~3000 visits, so 0.02 is about
    # 2.5 standard errors for the worst cell: pinned seed, plus a 1e6 check
    cfg = default_config(length_range=(10_000, 10_000))
    rng = np.random.default_rng(0)
    seqs = [gen_sequence(cfg, rng) for _ in range(100)]
    U = unbiased_matrix().probs
    assert np.max(np.abs(trained_matrix(seqs[:10]).probs - U)) < 0.02
    assert np.max(np.abs(trained_matrix(seqs).probs - U)) < 0.01


def test_first_label_uniform():
    cfg = default_config(length_range=(1, 1))
    rng = np.random.default_rng(5)
    first = np.bincount([gen_sequence(cfg, rng)[0].index for _ in range(16_000)], minlength=16)
    assert np.all(np.abs(first / 16_000 - 1 / 16) < 0.01)


def test_seeded_corpus_is_bitwise_identical():
    cfg = default_config(length_range=(3, 6))
    a = gen_corpus(cfg, 4)
    b = gen_corpus(cfg, 4)
    for (da, la), (db, lb) in zip(a, b):
        assert da.labels == db.labels
        np.testing.assert_array_equal(da.values(), db.values())
        for axis in la.streams:
            assert la.streams[axis].t.tobytes() == lb.streams[axis].t.tobytes()
            assert la.streams[axis].values.tobytes() == lb.streams[axis].values.tobytes()
    other = gen_corpus(default_config(length_range=(3, 6), seed=99), 1)
    assert other[0][0].labels != a[0][0].labels or not np.array_equal(other[0][0].values(), a[0][0].values())


def test_noiseless_round_trip():
    d = json.loads(default_config_text())
    for t in d["templates"].values():
        t["noise_sigma"] = [0.0, 0.0, 0.0, 0.0]
    d["sample_rate_hz"] = 2000.0
    cfg = config_from_dict(d)
    rng = np.random.default_rng(6)
    for k in range(3):
        cfg_k = cfg if k else config_from_dict({**d, "amplitude_sigma": 0.0, "warp_sigma": 0.0})
        dance, log = gen_dance(cfg_k, rng, f"d{k}")
        got = extract_samples(log, cfg_k.segmentation(len(dance)))
        assert len(got) == len(dance)
        for g, ideal in zip(got, dance.figures):
            assert g.values.shape == (4, 100)
            assert np.max(np.abs(g.values - ideal.values)) < 1e-6


def test_yaw_is_wrapped_in_log():
    _, log = gen_dance(default_config(length_range=(30, 30)), np.random.default_rng(7))
    y = log.streams["yaw"].values
    assert np.all((y >= -180) & (y < 180))


def test_missing_template_names_label(tmp_path):
    d = json.loads(default_config_text())
    del d["templates"]["NST"]
    with pytest.raises(ConfigError, match="NST"):
        config_from_dict(d)
    p = tmp_path / "bad.json"
    p.write_text('{"version": 1,\n  "seed": }\n')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_bad_template_shape_rejected():
    d = json.loads(default_config_text())
    d["templates"]["W"]["lin_acc_x"] = [[0.0, 0.0], [0.5, 1.0], [1.0, 0.0]]  # not flat near the ends
    with pytest.raises(ConfigError, match="W"):
        config_from_dict(d)
    d = json.loads(default_config_text())
    d["length_range"] = [0, 5]
    with pytest.raises(ConfigError, match="length_range"):
        config_from_dict(d)


def test_config_round_trip():
    cfg = default_config()
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


def test_identical_templates():
    cfg = with_identical_templates(default_config(), "LCC", "W")
    W, L = label_from_short_name("W"), label_from_short_name("LCC")
    assert cfg.templates[W] == cfg.templates[L]
    assert default_config().templates[W] != default_config().templates[L]


def test_default_corpus_generation_time():
    t0 = time.perf_counter()
    corpus = gen_corpus(default_config())
    assert time.perf_counter() - t0 < 30
    assert len(corpus) == 200
    assert all(40 <= len(d) <= 60 for d, _ in corpus)
    assert set(SHORT_NAMES) == {l.short_name for d, _ in corpus for l in d.labels}
