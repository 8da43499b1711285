import json
import math

import pytest

import manismooth as ms


def test_smoothness_values():
    s = ms.smoothness([0, 0, 1, 0], 2)
    assert s["mu"] == 0.75
    assert s["dominant_label"] == 0
    s = ms.smoothness([0, 1], 2)
    assert s["mu"] == 0.5
    assert s["neg_entropy"] == pytest.approx(-math.log(2))
    assert ms.decision_distribution([0, 1, 2], 3) == pytest.approx([1 / 3] * 3)


def test_invalid_input_raises():
    with pytest.raises(ms.Error):
        ms.smoothness([], 2)
    with pytest.raises(ValueError):
        ms.smoothness([0, 3], 2)


def test_stats():
    assert ms.kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)
    assert ms.kendall_tau([1, 2, 3], [3, 2, 1], variant="a") == -1.0
    a, b = ms.ols_fit([0, 1], [1, 3])
    assert (a, b) == pytest.approx((2.0, 1.0))
    assert ms.r_squared([1, 0], [0, 1]) == pytest.approx(-3.0)
    assert ms.mean_absolute_error([0.5, 0.7], [0.6, 0.6]) == pytest.approx(0.1)


def test_baselines():
    assert ms.spectral_norm([[3, 0], [0, 1]]) == pytest.approx(3.0)
    assert ms.atc_threshold([0.9, 0.8, 0.6, 0.4], [True, True, True, False]) == 0.6
    assert ms.atc_predict([0.9, 0.8, 0.6, 0.4], [True, True, True, False], [0.7, 0.5, 0.9, 0.3]) == 0.5


def test_synth_and_evaluate(tmp_path):
    config = json.loads(ms.default_experiment(3))
    config["domains"] = config["domains"][:3]
    config["configs"] = config["configs"][:6]
    config["neighborhoods"] = config["neighborhoods"][:1]
    config["m_train"] = 200
    config["m_test"] = 100
    config["m_validation"] = 100
    del config["ablation"]
    stats = ms.synth(json.dumps(config), tmp_path / "pool")
    assert stats["trained"] == 18
    assert stats["converged"] >= 2

    pool = tmp_path / "pool"
    logs = sorted((pool / "predictions").glob("*.jsonl"))
    assert logs
    mu = ms.dataset_smoothness(logs[0])
    assert 0.5 <= mu <= 1.0

    manifest = (pool / "manifest.jsonl").read_text()
    scores = ["model_id,train_domain,test_domain,measure,value"]
    accs = ["model_id,test_domain,accuracy"]
    train = {json.loads(l)["model_id"]: json.loads(l).get("train_domain") for l in manifest.splitlines()[1:]}
    for path in logs:
        lines = path.read_text().splitlines()
        head = json.loads(lines[0])
        rows = [json.loads(l) for l in lines[1:]]
        acc = sum(r["base_prediction"] == r["true_label"] for r in rows) / len(rows)
        model, domain = head["model_id"], head["test_domain"]
        scores.append(f"{model},{train[model]},{domain},ms_manifold,{ms.dataset_smoothness(path)!r}")
        accs.append(f"{model},{domain},{acc!r}")
    report = json.loads(ms.evaluate("\n".join(scores) + "\n", "\n".join(accs) + "\n", manifest))
    assert report["tau_variant"] == "b"
    assert [m["measure"] for m in report["measures"]] == ["ms_manifold"]
