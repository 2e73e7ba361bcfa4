import math

import numpy as np
import pytest

import evf


def test_softmax_rows_sum_to_one():
    p = evf.softmax_rows(np.array([[0.0, 0.0], [1000.0, 0.0], [-3.0, 2.0]]))
    assert p.shape == (3, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)
    np.testing.assert_allclose(p[0], [0.5, 0.5])
    assert p[1, 0] == 1.0


def test_route_matches_numpy():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 2))
    x = rng.normal(size=(5, 4))
    d = evf.route(w, x)
    z = x @ w
    e = np.exp(z - z.max(axis=1, keepdims=True))
    np.testing.assert_allclose(d.probabilities, e / e.sum(axis=1, keepdims=True), rtol=1e-12)
    assert d.preferred == ["vision" if a[1] > a[0] else "language" for a in z]


def test_capacity():
    assert evf.compute_capacity(10) == 8
    assert evf.compute_capacity(1) == 1
    with pytest.raises(evf.EmptyBatchError):
        evf.compute_capacity(0)


def test_gbpr_keeps_highest_scores():
    # Six tokens all preferring vision; capacity 5 keeps all but the weakest.
    logits = np.array([[0.0, v] for v in (3.0, 1.0, 2.0, 0.5, 4.0, 2.5)])
    d = evf.decision_from_logits(logits)
    tags = evf.ModalityTags(["text"] * 6)
    plan = evf.dispatch(d, tags, evf.CapacityConfig(), evf.Strategy.gbpr)
    assert plan.capacity == 5
    assert plan.dropped == [3]
    assert plan.accepted_vision == [0, 1, 2, 4, 5]


def test_img_gbpr_prefers_modality_and_redistributes():
    logits = np.zeros((4, 2))
    d = evf.decision_from_logits(logits)
    tags = evf.ModalityTags(["image", "text", "text", "text"])
    plan = evf.dispatch(d, tags, evf.CapacityConfig(), evf.Strategy.img_gbpr)
    assert plan.accepted_vision[0] == 0
    assert plan.dropped == []
    stats = evf.allocation_stats(plan, tags)
    assert stats["success_rate"] == 1.0


def test_losses():
    d = evf.decision_from_logits(np.zeros((4, 2)))
    tags = evf.ModalityTags(["image", "image", "text", "text"])
    plan = evf.dispatch(d, tags, evf.CapacityConfig(), evf.Strategy.img_gbpr)
    assert evf.aux_loss([plan], [d]) == pytest.approx(0.5, abs=1e-15)
    b = evf.total_loss(2.0, 0.5, 0.001)
    assert b["L_total"] == pytest.approx(2.0005, abs=1e-15)
    with pytest.raises(evf.NumericError):
        evf.total_loss(math.nan, 0.5, 0.001)


def test_allocate_trace_fixture():
    trace = evf.allocate_trace("token image 0 1\ntoken text 1 0\ntoken text 1 0\n")
    assert set(trace["plans"]) == {"random", "gbpr", "img_gbpr"}
    assert trace["capacity"] == 3
    with pytest.raises(ValueError, match="line 1"):
        evf.allocate_trace("token picture 0 1\n")


def test_micro_model_language_only_unchanged_by_stage3():
    model = evf.MicroModel.build({"depth": 2, "width": 8, "heads": 2, "hidden": 16, "vocab": 11,
                                  "image_feature_width": 4, "max_positions": 16,
                                  "evf_layer_indices": [0]})
    text = [[1, 2, 3, 4], [5, 6, 7, 8]]
    before = model.forward_logits(text, language_only=True)
    model.enter_stage3()
    assert "layers.0.router.weight" in model.parameter_names()
    after = model.forward_logits(text, language_only=True)
    assert after.shape == (8, 11)
    assert np.array_equal(before, after)
    mixed = model.forward_logits(text, images=[np.ones((2, 4)), np.zeros((1, 4))])
    assert mixed.shape == (11, 11)


def test_train_smoke(tmp_path):
    code, log = evf.train({"steps": 3, "output_dir": str(tmp_path / "run")})
    assert code == 0, log
    assert (tmp_path / "run" / "metrics.jsonl").read_text().count("\n") == 3
    code, _ = evf.train(None, ["steps=2", "output_dir=" + str(tmp_path / "r2"), "stage=3"])
    assert code == 0
    with pytest.raises(evf.ConfigError):
        evf.train({"stage": 7})
