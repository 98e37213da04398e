import json

import pytest

from mailform.config import (
    Config,
    RetryConfig,
    build_llm_backend,
    build_ocr_backend,
    load_config,
    resolve_config_path,
)
from mailform.doc_extract import RemoteOcrBackend, StubOcrBackend
from mailform.errors import ConfigError
from mailform.plan_engine import MockLlmBackend, RemoteLlmBackend


def write(tmp_path, data, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


MINIMAL = {"inbox_dir": "in", "outbox_dir": "out", "ledger_path": "state/l.jsonl"}


def test_relative_paths_resolve_against_config_dir(tmp_path, monkeypatch):
    sub = tmp_path / "etc"
    sub.mkdir()
    monkeypatch.chdir(tmp_path)
    cfg = load_config(write(sub, {**MINIMAL, "fixtures_dir": "fx"}))
    assert cfg.inbox_dir == sub.resolve() / "in"
    assert cfg.fixtures_dir == sub.resolve() / "fx"
    assert cfg.cursor_path == sub.resolve() / "state" / "cursor.json"


def test_defaults(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    assert cfg.retry == RetryConfig(3, 1.0, 2.0)
    assert [cfg.retry.delay(a) for a in (1, 2, 3)] == [1.0, 2.0, 4.0]
    assert cfg.min_confidence == 0.5
    assert cfg.llm.temperature == 0.0 and cfg.llm.backend == "mock"
    assert cfg.ocr.backend == "stub"


def test_explicit_path_beats_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MAILFORM_CONFIG", str(tmp_path / "env.json"))
    assert resolve_config_path(tmp_path / "cli.json") == tmp_path / "cli.json"
    assert resolve_config_path(None) == tmp_path / "env.json"
    monkeypatch.delenv("MAILFORM_CONFIG")
    assert resolve_config_path(None) is None


@pytest.mark.parametrize("data", [
    {"outbox_dir": "o", "ledger_path": "l"},
    {**MINIMAL, "min_confidence": 2},
    {**MINIMAL, "retry": {"max_attempts": 0}},
    {**MINIMAL, "poll_interval_s": 0},
    {**MINIMAL, "retry": {"base_delay_s": "soon"}},
    [1, 2],
])
def test_invalid_configs(tmp_path, data):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, data))


def test_unreadable_config(tmp_path, monkeypatch):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    monkeypatch.delenv("MAILFORM_CONFIG", raising=False)
    with pytest.raises(ConfigError):
        load_config(None)


def test_build_backends(tmp_path, monkeypatch):
    base = Config(tmp_path, tmp_path, tmp_path / "l.jsonl", fixtures_dir=tmp_path)
    assert isinstance(build_ocr_backend(base), StubOcrBackend)
    assert isinstance(build_llm_backend(base), MockLlmBackend)

    monkeypatch.setenv("MAILFORM_LLM_TOKEN", "tok")
    cfg = Config.from_dict({**MINIMAL,
                            "ocr": {"backend": "remote", "base_url": "http://ocr"},
                            "llm": {"backend": "remote", "base_url": "http://llm", "model": "m",
                                    "temperature": 0.3, "params": {"top_p": 1}}}, tmp_path)
    ocr, llm = build_ocr_backend(cfg), build_llm_backend(cfg)
    assert isinstance(ocr, RemoteOcrBackend) and ocr.base_url == "http://ocr"
    assert isinstance(llm, RemoteLlmBackend)
    assert (llm.model_name, llm.temperature, llm.extra, llm._token) == ("m", 0.3, {"top_p": 1}, "tok")


@pytest.mark.parametrize("section", [
    {"ocr": {"backend": "stub"}},
    {"ocr": {"backend": "remote"}},
    {"ocr": {"backend": "tesseract"}, "fixtures_dir": "f"},
    {"llm": {"backend": "remote"}, "fixtures_dir": "f"},
    {"llm": {"backend": "gpt"}, "fixtures_dir": "f"},
    {"llm": {"script_path": "missing.json"}, "fixtures_dir": "f"},
])
def test_backend_config_errors(tmp_path, section):
    cfg = Config.from_dict({**MINIMAL, **section}, tmp_path)
    with pytest.raises(ConfigError):
        build_ocr_backend(cfg)
        build_llm_backend(cfg)
