from __future__ import annotations

import json
from pathlib import Path

import pytest

from scriptannot.config import DEFAULT_ANNOTATOR, DEFAULT_JUDGE, RunConfig, load_run_config
from scriptannot.corpus import save_jsonl
from scriptannot.errors import ConfigError
from scriptannot.filterpipe import FilterConfig

from conftest import judge_handle, make_corpus, make_seed_dataset


def write_config(tmp_path: Path, obj: dict, name: str = "config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def test_no_config_yields_mock_defaults():
    cfg = load_run_config(None)
    assert cfg.annotator == DEFAULT_ANNOTATOR
    assert cfg.judge == DEFAULT_JUDGE
    assert cfg.annotator.endpoint.startswith("mock:")
    assert cfg.filter == FilterConfig()
    assert cfg.seed == 0 and cfg.workers is None


def test_config_parses_models_filter_and_seed(tmp_path):
    path = write_config(
        tmp_path,
        {
            "annotator": {"identifier": "m-7", "endpoint": "https://api.example/v1/completions"},
            "judge": {"identifier": "j-1", "endpoint": "mock:judge?policy=marker"},
            "filter": {"temperatures": [0.4, 0.6], "alpha": 0.8, "select_temperature": 0.6},
            "seed": 11,
            "workers": 2,
            "max_output_tokens": 256,
        },
    )
    cfg = load_run_config(path)
    assert cfg.annotator.identifier == "m-7"
    assert cfg.annotator.role == "annotator"
    assert cfg.judge.role == "judge"
    assert cfg.filter.alpha == 0.8
    assert cfg.filter.temperatures == (0.4, 0.6)
    assert cfg.seed == 11 and cfg.workers == 2 and cfg.max_output_tokens == 256


def test_auth_token_must_be_an_env_reference(tmp_path):
    with pytest.raises(ConfigError, match="literal"):
        load_run_config(write_config(tmp_path, {"http": {"auth_token": "hunter2-actual-secret"}}))
    cfg = load_run_config(write_config(tmp_path, {"http": {"auth_token": "${PROVIDER_TOKEN}"}}, "ok.json"))
    assert cfg.http.auth_token_env == "PROVIDER_TOKEN"
    cfg2 = load_run_config(write_config(tmp_path, {"http": {"auth_token_env": "OTHER_TOKEN"}}, "ok2.json"))
    assert cfg2.http.auth_token_env == "OTHER_TOKEN"


def test_config_rejects_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(bad)
    array = tmp_path / "array.json"
    array.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="object"):
        load_run_config(array)


def test_config_validates_workers_and_handles(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, {"workers": 0}))
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, {"workers": "three"}, "w2.json"))
    with pytest.raises(ConfigError, match="identifier"):
        load_run_config(write_config(tmp_path, {"annotator": {"endpoint": "mock:annotator"}}, "h.json"))


def test_relative_paths_resolve_against_the_config_directory(tmp_path):
    nested = tmp_path / "conf"
    nested.mkdir()
    (nested / "prompts").mkdir()
    save_jsonl(make_seed_dataset(3), nested / "seed.jsonl")
    save_jsonl(make_corpus(3), nested / "unlabeled.jsonl")
    path = write_config(
        nested,
        {
            "prompts_dir": "prompts",
            "loop": {"k": 2, "workspace": "ws", "seed_dataset": "seed.jsonl", "unlabeled_corpus": "unlabeled.jsonl"},
        },
    )
    cfg = load_run_config(path)
    assert cfg.prompts_dir == (nested / "prompts").resolve()
    assert cfg.loop.seed_dataset == (nested / "seed.jsonl").resolve()
    assert cfg.loop.workspace == (nested / "ws").resolve()  # need not exist yet


def test_loop_section_requires_its_keys_and_existing_data(tmp_path):
    with pytest.raises(ConfigError, match="loop.seed_dataset"):
        load_run_config(
            write_config(tmp_path, {"loop": {"k": 1, "workspace": "ws", "unlabeled_corpus": "u.jsonl"}})
        )
    save_jsonl(make_seed_dataset(2), tmp_path / "seed.jsonl")
    with pytest.raises(ConfigError, match="does not resolve"):
        load_run_config(
            write_config(
                tmp_path,
                {"loop": {"k": 1, "workspace": "ws", "seed_dataset": "seed.jsonl", "unlabeled_corpus": "nope.jsonl"}},
                "l2.json",
            )
        )


def test_missing_prompts_dir_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="prompts_dir"):
        load_run_config(write_config(tmp_path, {"prompts_dir": "nowhere"}))


def test_filter_with_judge_attaches_the_run_judge():
    cfg = RunConfig()
    attached = cfg.filter_with_judge()
    assert attached.judge == cfg.judge
    assert attached.alpha == cfg.filter.alpha
    explicit = RunConfig(filter=FilterConfig(judge=judge_handle(policy="always_true")))
    assert explicit.filter_with_judge().judge.endpoint == "mock:judge?policy=always_true&fail=0&garble=0&seed=0"


def test_loop_config_requires_a_loop_section():
    with pytest.raises(ConfigError, match="loop"):
        RunConfig().loop_config()


def test_loop_config_carries_run_settings(tmp_path):
    save_jsonl(make_seed_dataset(2), tmp_path / "seed.jsonl")
    save_jsonl(make_corpus(2), tmp_path / "unlabeled.jsonl")
    cfg = load_run_config(
        write_config(
            tmp_path,
            {
                "seed": 9,
                "workers": 3,
                "loop": {
                    "k": 4,
                    "workspace": "ws",
                    "seed_dataset": "seed.jsonl",
                    "unlabeled_corpus": "unlabeled.jsonl",
                    "finetuner": {"kind": "mock", "params": {"flip": 0.1}},
                    "hyperparameters": {"epochs": 2},
                },
            },
        )
    )
    loop = cfg.loop_config()
    assert loop.k == 4
    assert loop.seed == 9
    assert loop.workers == 3
    assert loop.filter.judge == cfg.judge
    assert loop.finetuner.params == {"flip": 0.1}
    assert loop.hyperparameters == {"epochs": 2}
