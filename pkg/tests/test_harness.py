import json
import logging

import jsonschema
import numpy as np
import pytest

from hire import harness
from hire.harness import ExperimentConfig, PhaseSchedule, Run, bench_fps, read_metrics, run_experiment, \
    run_one, run_phased, sweep


def small_cfg(tmp_path, **kw):
    d = {"env": {"family": "MultiRoom", "n_rooms": 2, "room_size": 4},
         "ppo": {"num_envs": 4, "rollout_len": 8, "minibatch_size": 16, "epochs": 1, "hidden": [16, 16],
                 "total_steps": 128},
         "modules": {m: {"hidden": 16, "embed_dim": 8} for m in ("NGU", "RE3", "ICM", "E3B")},
         "seeds": [1], "out_dir": str(tmp_path)}
    d.update(kw)
    return ExperimentConfig.from_dict(d)


def test_schema_rejects_bad_configs():
    with pytest.raises(jsonschema.ValidationError):
        ExperimentConfig.from_dict({"beta0": -1})
    with pytest.raises(jsonschema.ValidationError):
        ExperimentConfig.from_dict({"nonsense": 1})
    with pytest.raises(jsonschema.ValidationError):
        ExperimentConfig.from_dict({"phases": {"pretrain_steps": 10}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"candidate": "Q(NGU, RE3)"})
    with pytest.raises(ValueError):
        PhaseSchedule(0, 0)


def test_defaults_and_roundtrip(monkeypatch, tmp_path):
    monkeypatch.setenv("HIRE_OUT_DIR", str(tmp_path))
    cfg = ExperimentConfig()
    assert cfg.beta0 == 0.25 and cfg.kappa == 0 and cfg.seeds == [1, 2, 3, 4, 5]
    assert cfg.task == "MultiRoom-N4-S5" and cfg.out_dir == str(tmp_path)
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path).candidate == "C(NGU, RE3)"


def test_run_experiment_outputs(tmp_path):
    cfg = small_cfg(tmp_path, seeds=[1, 2, 3])
    summary = run_experiment(cfg)
    out = tmp_path / cfg.task / "C_NGU-RE3"
    assert sorted(p.name for p in out.glob("metrics_*.csv")) == [f"metrics_seed{s}.csv" for s in (1, 2, 3)]
    assert (out / "summary.json").exists()
    assert [r["status"] for r in summary["runs"]] == ["ok"] * 3
    text = (out / "metrics_seed1.csv").read_text()
    assert text.startswith(f"# {harness.METRICS_VERSION}\n")
    rows = read_metrics(out / "metrics_seed1.csv")
    assert len(rows) == 4
    steps = [int(r["global_step"]) for r in rows]
    assert steps == sorted(steps) and steps[-1] == 128
    assert {"NGU_raw_mean", "RE3_norm_mean", "fused_intrinsic_mean"} <= set(rows[0])


def test_extrinsic_has_no_intrinsic_columns(tmp_path):
    cfg = small_cfg(tmp_path, candidate="extrinsic")
    run_experiment(cfg)
    rows = read_metrics(tmp_path / cfg.task / "extrinsic" / "metrics_seed1.csv")
    assert all(float(r["beta"]) == 0 for r in rows)
    assert not any(k.endswith("_raw_mean") or k == "fused_intrinsic_mean" for k in rows[0])


def test_summary_is_byte_stable(tmp_path):
    cfg = small_cfg(tmp_path)
    run_experiment(cfg)
    path = tmp_path / cfg.task / "C_NGU-RE3"
    first = [(path / n).read_bytes() for n in ("summary.json", "metrics_seed1.csv")]
    run_experiment(cfg)
    assert first == [(path / n).read_bytes() for n in ("summary.json", "metrics_seed1.csv")]


def test_failed_run_is_recorded(tmp_path, monkeypatch, caplog):
    cfg = small_cfg(tmp_path, candidates=["NGU", "RE3"])

    def boom(self, phase=harness.MIXED):
        if self.candidate.label == "NGU":
            raise FloatingPointError("synthetic failure")
        return real(self, phase)

    real = Run.iterate
    monkeypatch.setattr(Run, "iterate", boom)
    with caplog.at_level(logging.ERROR):
        out = sweep(cfg)
    bad, good = out["NGU"]["runs"][0], out["RE3"]["runs"][0]
    assert bad["status"] == "failed" and "synthetic failure" in bad["error"] and bad["traceback"]
    assert good["status"] == "ok"


def test_phase_purity_from_csv(tmp_path):
    cfg = small_cfg(tmp_path, candidate="S(NGU, RE3)", phases={"pretrain_steps": 64, "finetune_steps": 64})
    run_phased(cfg)
    rows = read_metrics(tmp_path / cfg.task / "S_NGU-RE3" / "metrics_seed1.csv")
    assert [r["phase"] for r in rows] == ["pretrain"] * 2 + ["finetune"] * 2
    for r in rows:
        if r["phase"] == "pretrain":
            assert r["reward_optimized_mean"] == r["reward_beta_intrinsic_mean"]
        else:
            assert r["reward_optimized_mean"] == r["reward_extrinsic_mean"]
            assert r["fused_intrinsic_mean"] == ""


def test_phased_with_empty_pretrain_matches_plain_run(tmp_path):
    # no pretraining leaves an extrinsic-only run: same trajectory as the plain extrinsic baseline
    a = small_cfg(tmp_path / "a", candidate="extrinsic")
    b = small_cfg(tmp_path / "b", phases={"pretrain_steps": 0, "finetune_steps": 128})
    run_experiment(a)
    run_phased(b)
    ra = read_metrics(tmp_path / "a" / a.task / "extrinsic" / "metrics_seed1.csv")
    rb = read_metrics(tmp_path / "b" / b.task / "C_NGU-RE3" / "metrics_seed1.csv")
    assert len(ra) == len(rb) == 4
    for x, y in zip(ra, rb):
        for k in set(x) - {"candidate", "phase"}:
            assert x[k] == y[k], k


def test_run_phased_needs_schedule(tmp_path):
    with pytest.raises(ValueError):
        run_phased(small_cfg(tmp_path))


def test_phase_checkpoint_roundtrip(tmp_path):
    cfg = small_cfg(tmp_path, candidate="C(NGU, E3B)", phases={"pretrain_steps": 64, "finetune_steps": 0})
    run = Run(cfg, 1)
    run.iterate(harness.PRETRAIN)
    run.checkpoint(tmp_path / "ck")
    fresh = Run(cfg, 2)
    fresh.restore(tmp_path / "ck")
    for k, net in run.nets().items():
        for p, q in zip(net.arrays(), fresh.nets()[k].arrays()):
            np.testing.assert_array_equal(p, q)
    assert fresh.modules["NGU"].dm2_mean == run.modules["NGU"].dm2_mean


def test_final_scores_window():
    rows = [{"episodic_return": float(i), "success_rate": 0.0, "episodes": 1} for i in range(20)]
    rows[-1]["success_rate"] = 1.0
    ret, succ = harness.final_scores(rows)
    assert ret == pytest.approx(18.5) and succ == pytest.approx(0.5)
    assert harness.final_scores([{"episodic_return": None, "success_rate": None, "episodes": 0}]) == (None, None)


def test_bench_fps_table(tmp_path):
    cfg = small_cfg(tmp_path)
    table = bench_fps(cfg, ["extrinsic", "NGU"], seconds=0.5, warmup_iters=1)
    assert [r["n_rewards"] for r in table] == [0, 1]
    for r in table:
        assert r["frames"] % cfg.ppo.batch_size == 0 and r["seconds"] >= 0.5
        assert r["fps"] == pytest.approx(r["frames"] / r["seconds"])
    assert harness.format_fps_table(table).splitlines()[0] == "candidate,type,n_rewards,frames,seconds,fps"


def test_parallel_workers_match_serial(tmp_path):
    cfg = small_cfg(tmp_path / "s", seeds=[1, 2])
    serial = run_experiment(cfg)
    par = run_experiment(cfg.with_(out_dir=str(tmp_path / "p")), workers=2)
    strip = lambda s: [{k: v for k, v in r.items()} for r in s["runs"]]
    assert strip(serial) == strip(par)


def test_render_ascii_flag(tmp_path, capsys):
    run_one(small_cfg(tmp_path, render_ascii=True), 1)
    assert "#" in capsys.readouterr().out
