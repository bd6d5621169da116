import json
import math

import pytest

import varlab


def test_env_roster():
    names = varlab.env_names()
    assert "pendulum_swingup_sparse" in names
    info = varlab.env_info("reacher")
    assert info["action_dim"] == 2
    assert info["action_repeat"] == 2
    assert varlab.rollout_constant("pendulum_swingup_sparse", [0.0], 3) == 0.0
    with pytest.raises(ValueError):
        varlab.env_info("cartpole")


def test_pnorm():
    out = varlab.pnorm([2.0, 2.0])
    assert out == pytest.approx([math.sqrt(0.5), math.sqrt(0.5)], abs=1e-12)


def test_statistics():
    assert varlab.eval_gain_ratio(35231.7, 176211.9, 10, 100) == pytest.approx(1.195, abs=1e-3)
    assert varlab.eval_gain_ratio(1.0, 0.0) == 1.0
    d = varlab.variance_decomposition([[1.0, 1.0], [3.0, 3.0]])
    assert d["sample_var"] == 0.0
    assert d["alg_var"] == pytest.approx(2.0)
    assert varlab.pearson([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)
    assert varlab.pearson([1.0, 2.0], [5.0, 5.0]) is None
    prof = varlab.performance_profile({"m": [1.0, 2.0, 3.0]}, [2.0])
    assert prof["m"] == [pytest.approx(1 / 3)]
    s = varlab.summarize_scores([4.0, 4.0])
    assert s["std"] == 0.0 and s["rel"] == 0.0


def test_run_seed_is_deterministic():
    agent = json.dumps({"hidden_dim": 12, "feature_dim": 6, "ssl_hidden": 12, "batch": 16, "seed_frames": 64})
    kwargs = dict(seed=3, agent_json=agent, total_steps=200, eval_every=100, eval_episodes=2, diag_every=100)
    a = varlab.run_seed("pendulum_swingup", **kwargs)
    b = varlab.run_seed("pendulum_swingup", **kwargs)
    assert a["curve"] == b["curve"]
    assert len(a["curve"]) == 2
    assert len(a["diag"]) == 2
    assert a["final_score"] == pytest.approx(sum(a["eval_scores"][-1]) / 2)
    with pytest.raises(ValueError):
        varlab.run_seed("pendulum_swingup", agent_json='{"batch_size": 3}')


def test_commands(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "env": "pendulum_swingup",
        "total_steps": 200,
        "eval_every": 100,
        "eval_episodes": 2,
        "diag_every": 100,
        "agent": {"hidden_dim": 12, "feature_dim": 6, "ssl_hidden": 12, "batch": 16, "seed_frames": 64},
    }))
    out = tmp_path / "runs"
    for seed in (0, 1):
        code, _, err = varlab.train(str(config), seed=seed, out_dir=str(out))
        assert code == 0, err
    assert (out / "run_0.jsonl").exists()

    code, stdout, _ = varlab.analyze(str(out), "decomp")
    assert code == 0
    assert (out / "decomp.csv").read_text().startswith("#schema=varlab.decomp/1")

    code, stdout, _ = varlab.analyze(str(out), "gain-ratio", alg_var=35231.7, sample_var=176211.9)
    assert code == 0 and "gain ratio: 1.195" in stdout

    rows = varlab.probe_policy(str(out / "policy_0.bin"), "pendulum_swingup", [0.0, 1.0], 2, 5)
    other = varlab.probe_policy(str(out / "policy_1.bin"), "pendulum_swingup", [0.0, 1.0], 2, 5)
    assert rows[1] == other[1]

    code, _, err = varlab.bench(str(config), ["nonsense"])
    assert code == 1 and "baseline" in err
