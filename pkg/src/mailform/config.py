"""JSON configuration and backend construction.

Relative paths in the file are resolved against the file's directory.
Tokens never live in the file: they come from ``MAILFORM_LLM_TOKEN`` and
``MAILFORM_OCR_TOKEN``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

CONFIG_ENV = "MAILFORM_CONFIG"
LLM_TOKEN_ENV = "MAILFORM_LLM_TOKEN"
OCR_TOKEN_ENV = "MAILFORM_OCR_TOKEN"


@dataclass
class OcrConfig:
    backend: str = "stub"
    base_url: str = ""
    timeout_s: float = 60.0


@dataclass
class LlmConfig:
    backend: str = "mock"
    base_url: str = ""
    model: str = "mock"
    temperature: float = 0.0
    timeout_s: float = 120.0
    # mock only: JSON file {schema_digest: response | [responses]}
    script_path: Path | None = None
    rule_based: bool = True
    # passed through to the remote request body untouched
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class RetryConfig:
    max_attempts: int = 3
    base_delay_s: float = 1.0
    factor: float = 2.0

    def delay(self, attempt: int) -> float:
        """Sleep after failed attempt number ``attempt`` (1-based)."""
        return self.base_delay_s * self.factor ** (attempt - 1)


@dataclass
class Config:
    inbox_dir: Path
    outbox_dir: Path
    ledger_path: Path
    fixtures_dir: Path | None = None
    cursor_path: Path | None = None
    ocr: OcrConfig = field(default_factory=OcrConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    retry: RetryConfig = field(default_factory=RetryConfig)
    min_confidence: float = 0.5
    poll_interval_s: float = 5.0
    reply_from: str = "forms@mailform.localhost"

    def __post_init__(self) -> None:
        if self.cursor_path is None:
            self.cursor_path = Path(self.ledger_path).with_name("cursor.json")
        if not 0 <= self.min_confidence <= 1:
            raise ConfigError("min_confidence must be within [0, 1]")
        if self.retry.max_attempts < 1:
            raise ConfigError("retry.max_attempts must be at least 1")
        if self.poll_interval_s <= 0:
            raise ConfigError("poll_interval_s must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path | None = None) -> Config:
        base = base_dir or Path.cwd()

        def path(key: str, src: dict[str, Any] = data, required: bool = True) -> Path | None:
            value = src.get(key)
            if value is None:
                if required:
                    raise ConfigError(f"config is missing {key!r}")
                return None
            p = Path(os.path.expanduser(str(value)))
            return p if p.is_absolute() else base / p

        ocr = dict(data.get("ocr") or {})
        llm = dict(data.get("llm") or {})
        retry = dict(data.get("retry") or {})
        try:
            return cls(
                inbox_dir=path("inbox_dir"),
                outbox_dir=path("outbox_dir"),
                ledger_path=path("ledger_path"),
                fixtures_dir=path("fixtures_dir", required=False),
                cursor_path=path("cursor_path", required=False),
                ocr=OcrConfig(
                    backend=ocr.get("backend", "stub"),
                    base_url=ocr.get("base_url", ""),
                    timeout_s=float(ocr.get("timeout_s", 60.0)),
                ),
                llm=LlmConfig(
                    backend=llm.get("backend", "mock"),
                    base_url=llm.get("base_url", ""),
                    model=llm.get("model", "mock"),
                    temperature=float(llm.get("temperature", 0.0)),
                    timeout_s=float(llm.get("timeout_s", 120.0)),
                    script_path=path("script_path", llm, required=False),
                    rule_based=bool(llm.get("rule_based", True)),
                    params=dict(llm.get("params") or {}),
                ),
                retry=RetryConfig(
                    max_attempts=int(retry.get("max_attempts", 3)),
                    base_delay_s=float(retry.get("base_delay_s", 1.0)),
                    factor=float(retry.get("factor", 2.0)),
                ),
                min_confidence=float(data.get("min_confidence", 0.5)),
                poll_interval_s=float(data.get("poll_interval_s", 5.0)),
                reply_from=data.get("reply_from", "forms@mailform.localhost"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc


def resolve_config_path(explicit: str | os.PathLike | None) -> Path | None:
    if explicit:
        return Path(explicit)
    env = os.environ.get(CONFIG_ENV)
    return Path(env) if env else None


def load_config(path: str | os.PathLike | None = None) -> Config:
    resolved = resolve_config_path(path)
    if resolved is None:
        raise ConfigError(f"no config given (use --config or set {CONFIG_ENV})")
    try:
        data = json.loads(resolved.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {resolved} not found") from exc
    except (OSError, ValueError) as exc:
        raise ConfigError(f"config file {resolved} unreadable: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return Config.from_dict(data, base_dir=resolved.resolve().parent)


def build_ocr_backend(config: Config):
    from .doc_extract import RemoteOcrBackend, StubOcrBackend

    if config.ocr.backend == "stub":
        if config.fixtures_dir is None:
            raise ConfigError("stub OCR needs fixtures_dir")
        return StubOcrBackend(config.fixtures_dir)
    if config.ocr.backend == "remote":
        if not config.ocr.base_url:
            raise ConfigError("remote OCR needs ocr.base_url")
        return RemoteOcrBackend(config.ocr.base_url, token=os.environ.get(OCR_TOKEN_ENV),
                                timeout=config.ocr.timeout_s)
    raise ConfigError(f"unknown OCR backend {config.ocr.backend!r}")


def build_llm_backend(config: Config):
    from .plan_engine import MockLlmBackend, RemoteLlmBackend

    llm = config.llm
    if llm.backend == "mock":
        script = {}
        if llm.script_path is not None:
            try:
                script = json.loads(Path(llm.script_path).read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"mock script {llm.script_path} unreadable: {exc}") from exc
        return MockLlmBackend(script, rule_based=llm.rule_based, model_name=llm.model)
    if llm.backend == "remote":
        if not llm.base_url:
            raise ConfigError("remote LLM needs llm.base_url")
        return RemoteLlmBackend(llm.base_url, llm.model, temperature=llm.temperature,
                                token=os.environ.get(LLM_TOKEN_ENV), timeout=llm.timeout_s,
                                extra=llm.params)
    raise ConfigError(f"unknown LLM backend {llm.backend!r}")
