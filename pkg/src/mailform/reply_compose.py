"""Outbound replies: the completed form, or a rejection explaining why not."""

from __future__ import annotations

import hashlib
import logging
import re
import smtplib
from collections.abc import Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from email import policy
from email.message import EmailMessage
from email.parser import BytesParser
from email.utils import format_datetime
from pathlib import Path
from typing import Protocol

from .errors import DeliveryError
from .form_model import FilledForm
from .fsutil import atomic_write
from .mail_ingest import InboundRequest
from .plan_engine import CompletionPlan

log = logging.getLogger(__name__)

DEFAULT_FROM = "forms@mailform.localhost"


@dataclass(frozen=True)
class OutboundReply:
    message_id: str
    in_reply_to: str
    to: str
    subject: str
    body_text: str
    from_addr: str = DEFAULT_FROM
    attachment: bytes | None = field(default=None, repr=False)
    attachment_filename: str | None = None


def reply_message_id(request_message_id: str) -> str:
    """Deterministic per request, so a re-composed reply lands on the same outbox file."""
    h = hashlib.sha256(request_message_id.encode("utf-8")).hexdigest()[:32]
    return f"<reply-{h}@mailform>"


def completed_filename(original: str) -> str:
    stem = original[:-4] if original.lower().endswith(".pdf") else original
    return f"completed_{stem}.pdf"


def _serialize(reply: OutboundReply, date: datetime | None) -> bytes:
    msg = EmailMessage()
    msg["From"] = reply.from_addr
    if reply.to:
        msg["To"] = reply.to
    msg["Subject"] = reply.subject
    msg["Date"] = format_datetime(date or datetime.now(timezone.utc))
    msg["Message-ID"] = reply.message_id
    msg["In-Reply-To"] = reply.in_reply_to
    msg["References"] = reply.in_reply_to
    msg.set_content(reply.body_text)
    if reply.attachment is not None:
        msg.add_attachment(reply.attachment, maintype="application", subtype="pdf",
                           filename=reply.attachment_filename)
        # a fixed boundary keeps re-composed replies byte-identical
        msg.set_boundary("=_mailform_" + hashlib.sha256(reply.message_id.encode("utf-8")).hexdigest()[:24])
    return msg.as_bytes(policy=policy.default)


def _reply_subject(subject: str) -> str:
    # str.split also breaks on unicode line separators, which headers cannot carry
    flat = " ".join(subject.split())
    return flat if flat.lower().startswith("re:") else f"Re: {flat}".rstrip()


def _bullets(title: str, items: Sequence[str]) -> list[str]:
    if not items:
        return []
    return ["", f"{title}:"] + [f"  - {i}" for i in items]


def compose_reply(request: InboundRequest, filled: FilledForm, plan: CompletionPlan, *,
                  form_filename: str | None = None, warnings: Sequence[str] = (),
                  from_addr: str = DEFAULT_FROM,
                  date: datetime | None = None) -> tuple[OutboundReply, bytes]:
    if form_filename is None:
        targets = request.target_forms
        form_filename = targets[0].filename if targets else "form.pdf"
    attachment_name = completed_filename(form_filename)
    blanks = plan.blanks
    lines = [
        "Hello,",
        "",
        f"Your request has been processed. The completed form is attached as {attachment_name}.",
        "",
        "Summary:",
        f"  Fields filled: {len(filled.applied)}",
        f"  Fields left blank (no information found): {len(blanks)}",
        f"  Fields skipped: {len(filled.skipped)}",
    ]
    lines += _bullets("Left blank", blanks)
    lines += _bullets("Skipped", [f"{k}: {v}" for k, v in filled.skipped.items()])
    lines += _bullets("Adjusted", [f"{k}: {v}" for k, v in filled.notes.items()])
    lines += _bullets("Warnings", list(warnings))
    lines += ["", "Please review the form before submitting it. The fields remain editable."]
    reply = OutboundReply(
        message_id=reply_message_id(request.message_id),
        in_reply_to=request.message_id,
        to=request.sender,
        subject=_reply_subject(request.subject),
        body_text="\n".join(lines) + "\n",
        from_addr=from_addr,
        attachment=filled.data,
        attachment_filename=attachment_name,
    )
    return reply, _serialize(reply, date)


def compose_rejection(request: InboundRequest, reason: str, *, from_addr: str = DEFAULT_FROM,
                      date: datetime | None = None) -> tuple[OutboundReply, bytes]:
    body = "\n".join([
        "Hello,",
        "",
        "Your request could not be completed.",
        "",
        f"Reason: {reason}",
        "",
        "Reply with the instruction in the message body, the fillable PDF form "
        "and any supporting documents attached.",
    ]) + "\n"
    reply = OutboundReply(
        message_id=reply_message_id(request.message_id),
        in_reply_to=request.message_id,
        to=request.sender,
        subject=_reply_subject(request.subject),
        body_text=body,
        from_addr=from_addr,
    )
    return reply, _serialize(reply, date)


# --------------------------------------------------------------------------- #
# delivery

@dataclass(frozen=True)
class DeliveryReceipt:
    message_id: str
    location: str
    duplicate: bool = False
    delivered_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))


class DeliverySink(Protocol):
    def deliver(self, data: bytes) -> DeliveryReceipt: ...


def _headers(data: bytes) -> EmailMessage:
    return BytesParser(policy=policy.default).parsebytes(data, headersonly=True)


def outbox_filename(message_id: str) -> str:
    core = message_id.strip().strip("<>")
    return re.sub(r"[^A-Za-z0-9._@+=-]", "_", core) + ".eml"


class OutboxSink:
    """Writes ``<message-id>.eml`` into a directory; an existing file means already sent."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    def deliver(self, data: bytes) -> DeliveryReceipt:
        message_id = str(_headers(data).get("Message-ID") or "").strip()
        if not message_id:
            raise DeliveryError("reply has no Message-ID", retryable=False)
        target = self.path / outbox_filename(message_id)
        if target.exists():
            log.info("reply %s already in outbox", message_id)
            return DeliveryReceipt(message_id, str(target), duplicate=True)
        try:
            atomic_write(target, data)
        except OSError as exc:
            raise DeliveryError(f"outbox {self.path} not writable: {exc}") from exc
        return DeliveryReceipt(message_id, str(target))

    def sent(self) -> list[Path]:
        if not self.path.is_dir():
            return []
        return sorted(self.path.glob("*.eml"))


class SmtpSink:
    """Submits replies to an SMTP server; acceptance by the server is success."""

    def __init__(self, host: str, port: int = 25, *, envelope_from: str = DEFAULT_FROM,
                 username: str | None = None, password: str | None = None,
                 starttls: bool = False, timeout: float = 30.0,
                 smtp_factory=smtplib.SMTP) -> None:
        self.host = host
        self.port = port
        self.envelope_from = envelope_from
        self.username = username
        self._password = password
        self.starttls = starttls
        self.timeout = timeout
        self._factory = smtp_factory

    def deliver(self, data: bytes) -> DeliveryReceipt:
        headers = _headers(data)
        to = str(headers.get("To") or "")
        if not to:
            raise DeliveryError("reply has no recipient", retryable=False)
        try:
            with self._factory(self.host, self.port, timeout=self.timeout) as smtp:
                if self.starttls:
                    smtp.starttls()
                if self.username:
                    smtp.login(self.username, self._password or "")
                refused = smtp.sendmail(self.envelope_from, [to], data)
        except (OSError, smtplib.SMTPException) as exc:
            raise DeliveryError(f"SMTP submission failed: {exc}") from exc
        if refused:
            raise DeliveryError(f"SMTP server refused {sorted(refused)}", retryable=False)
        return DeliveryReceipt(str(headers.get("Message-ID") or ""), f"smtp://{self.host}:{self.port}")


def send(reply_bytes: bytes, sink: DeliverySink) -> DeliveryReceipt:
    return sink.deliver(reply_bytes)
