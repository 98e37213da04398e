from __future__ import annotations

import hashlib
import json
from email.message import EmailMessage
from email.utils import format_datetime
from datetime import datetime, timezone
from pathlib import Path

import pytest

from mailform.config import Config
from mailform.form_model import generate_test_form, read_schema

# a PNG signature plus filler; the stub backend never decodes images
FAKE_PNG = b"\x89PNG\r\n\x1a\n" + b"synthetic-id-card-scan" * 8

GOLDEN_FIELDS = [("nombre", "text", ()), ("apellidos", "text", ()), ("dni", "text", ()),
                 ("autorizo", "checkbox", ())]
GOLDEN_SIDECAR = "NOMBRE: MARIA\nAPELLIDOS: GARCIA LOPEZ\nDNI 12345678Z\n"


def make_eml(body: str = "Fill the form with the attached ID", *, attachments=(),
             message_id: str | None = "<req-1@example.com>", subject: str = "Alta autónomo",
             sender: str = "Maria <maria@example.com>", html: str | None = None) -> bytes:
    msg = EmailMessage()
    msg["From"] = sender
    msg["To"] = "forms@example.org"
    msg["Subject"] = subject
    msg["Date"] = format_datetime(datetime(2025, 5, 1, 9, 30, tzinfo=timezone.utc))
    if message_id:
        msg["Message-ID"] = message_id
    if html is not None and body is None:
        msg.set_content(html, subtype="html")
    else:
        msg.set_content(body)
        if html is not None:
            msg.add_alternative(html, subtype="html")
    for filename, media, data in attachments:
        maintype, subtype = media.split("/")
        msg.add_attachment(data, maintype=maintype, subtype=subtype, filename=filename)
    return msg.as_bytes()


def write_sidecar(fixtures_dir: Path, data: bytes, text: str) -> Path:
    fixtures_dir.mkdir(parents=True, exist_ok=True)
    path = fixtures_dir / f"{hashlib.sha256(data).hexdigest()}.txt"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def golden_form() -> bytes:
    return generate_test_form(GOLDEN_FIELDS)


@pytest.fixture
def golden_schema(golden_form):
    return read_schema(golden_form)


def golden_script_for(schema) -> dict[str, str]:
    plan = {"nombre": "MARIA", "apellidos": "GARCIA LOPEZ", "dni": None, "autorizo": "sí"}
    return {schema.digest: "Here is the plan:\n```json\n" + json.dumps(plan, ensure_ascii=False) + "\n```"}


@pytest.fixture
def golden_script(golden_schema) -> dict[str, str]:
    return golden_script_for(golden_schema)


def make_workspace(root: Path, script: dict[str, str]) -> Path:
    """Inbox/outbox/fixtures dirs plus a config file wired to stub OCR and the scripted mock."""
    root.mkdir(parents=True, exist_ok=True)
    for d in ("inbox", "outbox", "fixtures"):
        (root / d).mkdir()
    write_sidecar(root / "fixtures", FAKE_PNG, GOLDEN_SIDECAR)
    (root / "script.json").write_text(json.dumps(script), encoding="utf-8")
    cfg = {
        "inbox_dir": "inbox",
        "outbox_dir": "outbox",
        "fixtures_dir": "fixtures",
        "ledger_path": "state/ledger.jsonl",
        "ocr": {"backend": "stub"},
        "llm": {"backend": "mock", "script_path": "script.json", "rule_based": True},
        "retry": {"max_attempts": 3, "base_delay_s": 0.0, "factor": 2.0},
        "poll_interval_s": 0.05,
    }
    (root / "config.json").write_text(json.dumps(cfg), encoding="utf-8")
    return root


@pytest.fixture
def workspace(tmp_path, golden_script):
    return make_workspace(tmp_path, golden_script)


@pytest.fixture
def config(workspace) -> Config:
    from mailform.config import load_config

    return load_config(workspace / "config.json")


@pytest.fixture
def golden_eml(golden_form) -> bytes:
    return make_eml(attachments=[("solicitud.pdf", "application/pdf", golden_form),
                                 ("dni.png", "image/png", FAKE_PNG)])


# --------------------------------------------------------------------------- #
# acceptance summary: one line per criterion

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        if report.outcome == "failed" or name not in _ACCEPTANCE:
            _ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        verdict = "PASS" if _ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
