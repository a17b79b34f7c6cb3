import math

import pytest

import mmmie


def tiny_config():
    cfg = mmmie.RunConfig()
    for assignment in [
        "conversations=10",
        "max_epochs=2",
        "embed_dim=4",
        "lstm_hidden=4",
        "fusion_hidden=8",
        "statistic_hidden=8",
        "variational_hidden=4",
        "q_warmup_steps=5",
        "synth.min_length=3",
        "synth.max_length=5",
    ]:
        cfg.set(assignment)
    return cfg


def test_analytic_mi_closed_form():
    assert mmmie.analytic_mi(0.0) == 0.0
    assert mmmie.analytic_mi(0.5) == pytest.approx(-0.5 * math.log(0.75))
    assert mmmie.analytic_mi(0.9, dim=2) == pytest.approx(-math.log(0.19))
    with pytest.raises(ValueError):
        mmmie.analytic_mi(1.0)


def test_weighted_f1_hand_case():
    assert mmmie.weighted_f1([0, 0, 0, 0], [0, 0, 1, 1], 2) == pytest.approx(1 / 3, abs=1e-12)
    assert mmmie.accuracy([0, 1, 1], [0, 1, 0]) == pytest.approx(2 / 3)


def test_config_round_trip_and_errors():
    cfg = mmmie.RunConfig()
    assert cfg.alpha == 0.3 and cfg.beta == 0.0002
    cfg.set("seed=7")
    again = mmmie.RunConfig.from_text(cfg.to_text())
    assert again.seed == 7
    assert "alpha" in mmmie.config_keys()
    with pytest.raises(ValueError):
        cfg.set("no_such_key=1")


def test_gradcheck_and_negative_control():
    clean = mmmie.gradcheck()
    assert [b for b, _, _ in clean] == mmmie.gradcheck_blocks()
    assert all(ok for _, _, ok in clean)
    corrupted = {b: ok for b, _, ok in mmmie.gradcheck(corrupt="op/mul")}
    assert corrupted["op/mul"] is False


def test_tiny_training_run():
    seen = []
    result = mmmie.train(tiny_config(), progress=seen.append)
    assert len(result["metrics"]) == len(seen) == 4
    assert 0.0 <= result["best_eval_accuracy"] <= 1.0
    for step in result["steps"]:
        expected = step["task"] + step["alpha"] * step["mi"] + step["beta"] * step["msi"]
        assert abs(step["total"] - expected) <= 1e-12
    assert {kind for _, kind, _, _ in result["curves"]} == {
        "dv_optimized", "dv_frozen", "vclub_optimized", "vclub_frozen"}
    assert mmmie.train(tiny_config())["steps"] == result["steps"]
