import json

import pytest

from conftest import answer_spec
from selfselect.backends.toy import ToyBackend, format_toy_spec
from selfselect.config import ConfigError, RunConfig, load_config
from selfselect.records import MODE_POOL_SELECT, MODE_SELF_SELECT, MODE_STANDARD_KD
from selfselect.selection import StrategyKind


def toy_entry(tmp_path, name="teacher", p_right=0.4, seed=1):
    path = tmp_path / f"{name}.toy"
    path.write_text(format_toy_spec(answer_spec(p_right, seed=seed, name=name)),
                    encoding="utf-8")
    return {"kind": "toy", "spec_path": str(path)}


def full_config(tmp_path) -> dict:
    return {
        "teacher": toy_entry(tmp_path, "teacher", 0.4, 1),
        "student": toy_entry(tmp_path, "student", 0.7, 2),
        "generation": {"max_generation_tokens": 8, "chunk_size": 2},
        "schedule": {"head": [4, 2], "tail": 1},
        "strategy": {"kind": "low", "rng_seed": 3},
        "beam_width": 2,
        "workers": 2,
        "seed": 5,
        "problems_path": "problems.jsonl",
        "output_dir": "runs",
        "student_cold_started": True,
    }


def test_defaults_without_any_input():
    cfg = RunConfig()
    assert cfg.generation.chunk_size == 4096
    assert cfg.schedule.head == (16, 8) and cfg.schedule.tail == 4
    assert cfg.strategy.kind is StrategyKind.LOW
    assert cfg.beam_width == 2


def test_round_trip_through_snapshot(tmp_path):
    cfg = RunConfig.from_dict(full_config(tmp_path))
    snapshot = cfg.to_snapshot()
    again = RunConfig.from_dict(snapshot)
    assert again.to_snapshot() == snapshot
    json.dumps(snapshot)  # must be JSON-safe


def test_toy_spec_inlined_into_snapshot(tmp_path):
    cfg = RunConfig.from_dict(full_config(tmp_path))
    assert cfg.teacher["kind"] == "toy"
    assert "spec_text" in cfg.teacher
    assert "spec_path" not in cfg.teacher  # snapshot is self-contained
    backend = cfg.build_teacher()
    assert isinstance(backend, ToyBackend)
    assert backend.identity == "toy:teacher"


def test_unknown_top_level_key_rejected(tmp_path):
    data = full_config(tmp_path)
    data["chunk_sze"] = 4
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    assert "chunk_sze" in str(info.value)


def test_unknown_nested_key_rejected(tmp_path):
    data = full_config(tmp_path)
    data["generation"]["chunk"] = 4
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_chunk_larger_than_max_rejected(tmp_path):
    data = full_config(tmp_path)
    data["generation"] = {"max_generation_tokens": 8, "chunk_size": 16}
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_bad_strategy_kind_rejected(tmp_path):
    data = full_config(tmp_path)
    data["strategy"] = {"kind": "lowest"}
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    assert "lowest" in str(info.value)


def test_beam_width_and_workers_validated(tmp_path):
    for patch in ({"beam_width": 0}, {"workers": 0},
                  {"cold_start": {"attempts_per_problem": 0}},
                  {"baseline": {"samples_per_problem": 0}},
                  {"cold_start": {"target_count": 0}}):
        data = full_config(tmp_path) | patch
        with pytest.raises(ConfigError):
            RunConfig.from_dict(data)


def test_remote_backend_snapshot_keeps_env_var_name_only(tmp_path, monkeypatch):
    monkeypatch.setenv("MY_TOKEN", "super-secret")
    data = full_config(tmp_path)
    data["teacher"] = {
        "kind": "remote",
        "base_url": "http://127.0.0.1:1",
        "model_name": "m",
        "auth_token_env_var": "MY_TOKEN",
        "retry": {"max_attempts": 2},
    }
    cfg = RunConfig.from_dict(data)
    snapshot_text = json.dumps(cfg.to_snapshot())
    assert "MY_TOKEN" in snapshot_text
    assert "super-secret" not in snapshot_text


def test_remote_backend_requires_url_and_model(tmp_path):
    data = full_config(tmp_path)
    data["teacher"] = {"kind": "remote", "base_url": "http://x"}
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_unknown_backend_kind_rejected(tmp_path):
    data = full_config(tmp_path)
    data["teacher"] = {"kind": "quantum"}
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_toy_spec_parse_error_surfaces_at_load(tmp_path):
    bad = tmp_path / "bad.toy"
    bad.write_text("order: 1\n", encoding="utf-8")
    data = full_config(tmp_path)
    data["teacher"] = {"kind": "toy", "spec_path": str(bad)}
    with pytest.raises(Exception):
        RunConfig.from_dict(data)


def test_validate_for_distill_requires_both_backends(tmp_path):
    data = full_config(tmp_path)
    del data["student"]
    cfg = RunConfig.from_dict(data)
    with pytest.raises(ConfigError):
        cfg.validate_for(MODE_SELF_SELECT)


def test_validate_for_distill_requires_cold_start_flag(tmp_path):
    data = full_config(tmp_path)
    del data["student_cold_started"]
    cfg = RunConfig.from_dict(data)
    with pytest.raises(ConfigError) as info:
        cfg.validate_for(MODE_SELF_SELECT)
    assert "student_cold_started" in str(info.value)


def test_validate_warns_when_student_not_cold_started(tmp_path):
    data = full_config(tmp_path)
    data["student_cold_started"] = False
    cfg = RunConfig.from_dict(data)
    warnings = cfg.validate_for(MODE_SELF_SELECT)
    assert len(warnings) == 1
    assert "cold" in warnings[0]


def test_validate_pool_select_needs_pools_path(tmp_path):
    cfg = RunConfig.from_dict(full_config(tmp_path))
    with pytest.raises(ConfigError):
        cfg.validate_for(MODE_POOL_SELECT)


def test_validate_standard_kd_needs_teacher_only(tmp_path):
    data = full_config(tmp_path)
    del data["student"]
    cfg = RunConfig.from_dict(data)
    assert cfg.validate_for(MODE_STANDARD_KD) == []


def test_load_config_from_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(full_config(tmp_path)), encoding="utf-8")
    cfg = load_config(str(path))
    assert cfg.seed == 5
    assert load_config(None).seed == 0


def test_load_config_bad_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{nope", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(path))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
