import itertools
import math

import numpy as np
import pytest

import mtm


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        nq, ng = 5, 3
        cost = rng.uniform(-1, 1, size=(nq, ng)).tolist()
        pairs = mtm.hungarian_match(cost)
        got = sum(cost[q][g] for q, g in pairs)
        best = min(sum(cost[p[g]][g] for g in range(ng)) for p in itertools.permutations(range(nq), ng))
        assert len(pairs) == ng
        assert got == pytest.approx(best, abs=1e-12)


def test_iou_hand_values():
    a = (0.2, 0.2, 0.2, 0.2)
    assert mtm.iou(a, a) == pytest.approx(1.0)
    assert mtm.iou(a, (0.8, 0.8, 0.2, 0.2)) == 0.0
    assert mtm.giou(a, (0.8, 0.8, 0.2, 0.2)) < 0.0
    with pytest.raises(ValueError):
        mtm.iou(a, (0.5, 0.5, 0.0, 0.1))


def test_average_precision_hand_cases():
    gt = [[(0.25, 0.25, 0.3, 0.3, 0, 1.0)]]
    assert mtm.average_precision([[(0.25, 0.25, 0.3, 0.3, 0, 0.9)]], gt, 1)["map"] == 1.0
    preds = [[(0.75, 0.75, 0.3, 0.3, 0, 0.9), (0.25, 0.25, 0.3, 0.3, 0, 0.8)]]
    r = mtm.average_precision(preds, gt, 1)
    assert r["map"] == 0.5
    assert r["false_positives"] == 1


def test_weight_ratio_and_schedule():
    assert mtm.weight_ratio([0.5, 0.5], [0.5, 0.5]) == 1.0
    assert mtm.weight_ratio([0.9, 0.1], [0.5, 0.5]) > 1.0
    assert mtm.oqkt_alpha(0, 10) == 1.0
    assert mtm.oqkt_alpha(10, 10) == 0.0
    assert mtm.complexity_term([0.5, 0.5], [0.5, 0.5], 800, 100, 0.05) > 0.0


def test_scene_shapes_and_fog():
    clear = mtm.scene(1, 4)
    foggy = mtm.scene(1, 4, foggy=True)
    assert clear["image"].shape == (32, 32, 3)
    assert 1 <= len(clear["boxes"]) <= 6
    assert foggy["boxes"] == clear["boxes"]
    assert foggy["image"].std() < clear["image"].std()
    assert np.array_equal(mtm.scene(1, 4)["image"], clear["image"])


def test_config_round_trip_and_errors():
    text = mtm.canonical_config("[run]\nseed = 4\n[model]\nembed_dim = 32\n")
    assert mtm.canonical_config(text) == text
    assert "seed = 4" in text
    with pytest.raises(ValueError, match="line 2"):
        mtm.canonical_config("[run]\nnope = 1\n")


def test_tiny_run(tmp_path):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(
        "[model]\nembed_dim = 16\nobject_queries = 4\nencoder_layers = 1\ndecoder_layers = 1\nheads = 2\nffn_dim = 16\n"
        "[data]\nmax_objects = 3\nn_source = 20\nn_target_train = 20\nn_target_val = 6\n"
        "[pretrain]\nepochs = 1\n[selftrain]\nepochs = 1\noqkt_heads = 2\noqkt_head_dim = 4\n"
    )
    out = tmp_path / "run"
    summary = mtm.run(str(cfg), "all", seed=2, out=str(out))
    assert summary["label_reads"] == 0
    assert 0.0 <= summary["pretrain_map"] <= 1.0
    assert (out / "metrics.csv").read_text().count("\n") == 3
    assert mtm.checkpoint_map(str(out / "pretrain.ckpt"), str(cfg)) == pytest.approx(summary["pretrain_map"])
    assert not math.isnan(summary["selftrain_best_map"])
