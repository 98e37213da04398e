"""Inbox polling, MIME parsing and attachment classification.

The inbox is a directory of ``.eml`` files. Any other mailbox can stand in
for it by offering the same three verbs: ``enumerate`` new message names,
``fetch`` their bytes, and let the caller mark them seen in an
:class:`InboxCursor`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import mimetypes
import os
import re
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from email import errors as email_errors
from email import policy
from email.message import EmailMessage
from email.parser import BytesParser
from email.utils import parseaddr, parsedate_to_datetime
from enum import Enum
from html.parser import HTMLParser
from pathlib import Path
from typing import Protocol

from .errors import IngestionError, MimeParseError
from .form_model import has_form_fields
from .fsutil import atomic_write

log = logging.getLogger(__name__)

ACCEPTED_MEDIA_TYPES = frozenset({"application/pdf", "image/png", "image/jpeg", "image/tiff"})
_MEDIA_ALIASES = {"image/jpg": "image/jpeg", "image/pjpeg": "image/jpeg", "image/tif": "image/tiff",
                  "application/x-pdf": "application/pdf"}


class AttachmentKind(str, Enum):
    TARGET_FORM = "TargetForm"
    CONTEXT_DOCUMENT = "ContextDocument"
    IGNORED = "Ignored"


@dataclass(frozen=True)
class Attachment:
    filename: str
    media_type: str
    data: bytes = field(repr=False)
    kind: AttachmentKind = AttachmentKind.CONTEXT_DOCUMENT

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class InboundRequest:
    message_id: str
    sender: str
    subject: str
    instruction_text: str
    attachments: tuple[Attachment, ...] = ()
    received_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    message_id_synthesized: bool = False
    warnings: tuple[str, ...] = ()
    classified: bool = False
    no_target_form: bool = False

    def __post_init__(self) -> None:
        if not self.message_id:
            raise ValueError("message_id must be non-empty")

    @property
    def target_forms(self) -> list[Attachment]:
        return [a for a in self.attachments if a.kind is AttachmentKind.TARGET_FORM]

    @property
    def context_documents(self) -> list[Attachment]:
        return [a for a in self.attachments if a.kind is AttachmentKind.CONTEXT_DOCUMENT]


# --------------------------------------------------------------------------- #
# inbox + cursor

@dataclass(frozen=True)
class RawMessage:
    filename: str
    data: bytes = field(repr=False)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class InboxCursor:
    """Filenames already handed out, with the digest of what was handed out."""

    seen: Mapping[str, str] = field(default_factory=dict)

    def has_seen(self, filename: str, digest: str | None = None) -> bool:
        if filename not in self.seen:
            return False
        return digest is None or self.seen[filename] == digest

    def mark(self, filename: str, digest: str) -> InboxCursor:
        return InboxCursor({**self.seen, filename: digest})

    @classmethod
    def load(cls, path: str | os.PathLike) -> InboxCursor:
        p = Path(path)
        if not p.exists():
            return cls()
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise IngestionError(f"cursor file {p} unreadable: {exc}", retryable=False) from exc
        if not isinstance(data, dict):
            raise IngestionError(f"cursor file {p} is not a JSON object", retryable=False)
        return cls({str(k): str(v) for k, v in data.items()})

    def save(self, path: str | os.PathLike) -> None:
        atomic_write(Path(path), json.dumps(dict(self.seen), indent=1, sort_keys=True).encode("utf-8"))


class InboxSource(Protocol):
    def enumerate(self) -> list[str]: ...

    def fetch(self, name: str) -> bytes: ...


class MaildirInbox:
    """A flat directory of ``.eml`` files, enumerated in filename order."""

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)

    def enumerate(self) -> list[str]:
        try:
            return sorted(e.name for e in os.scandir(self.path)
                          if e.name.endswith(".eml") and e.is_file())
        except OSError as exc:
            raise IngestionError(f"inbox {self.path} unreachable: {exc}") from exc

    def fetch(self, name: str) -> bytes:
        return (self.path / name).read_bytes()


_FATAL_DEFECTS = (
    email_errors.CloseBoundaryNotFoundDefect,
    email_errors.StartBoundaryNotFoundDefect,
    email_errors.MissingHeaderBodySeparatorDefect,
)


def _incomplete(data: bytes) -> str | None:
    if not data.strip():
        return "empty file"
    if b"\n\n" not in data and b"\r\n\r\n" not in data:
        return "no header/body separator"
    msg = BytesParser(policy=policy.default).parsebytes(data)
    if not msg.keys():
        return "no headers"
    for part in msg.walk():
        for defect in part.defects:
            if isinstance(defect, _FATAL_DEFECTS):
                return type(defect).__name__
    return None


def poll_inbox(source: InboxSource | str | os.PathLike,
               cursor: InboxCursor) -> tuple[list[RawMessage], InboxCursor]:
    """Return messages the cursor has not seen, plus the cursor advanced past them.

    The input cursor is never mutated; persisting the returned cursor is the
    caller's commit point. Messages that cannot be read, or look truncated,
    are skipped with a warning and left unmarked so a completed write is
    picked up on a later poll.
    """
    if not hasattr(source, "enumerate"):
        source = MaildirInbox(source)
    names = source.enumerate()
    out: list[RawMessage] = []
    new_cursor = cursor
    for name in names:
        if cursor.has_seen(name):
            continue
        try:
            data = source.fetch(name)
        except OSError as exc:
            log.warning("skipping unreadable message %s: %s", name, exc)
            continue
        problem = _incomplete(data)
        if problem:
            log.warning("skipping malformed message %s: %s", name, problem)
            continue
        msg = RawMessage(name, data)
        out.append(msg)
        new_cursor = new_cursor.mark(name, msg.digest)
    return out, new_cursor


# --------------------------------------------------------------------------- #
# parsing

class _TextOnly(HTMLParser):
    _SKIP = {"script", "style", "head", "title"}

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.chunks: list[str] = []
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip += 1
        self.chunks.append(" ")

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip:
            self._skip -= 1
        self.chunks.append(" ")

    def handle_data(self, data):
        if not self._skip:
            self.chunks.append(data)


def html_to_text(html: str) -> str:
    p = _TextOnly()
    p.feed(html)
    p.close()
    return re.sub(r"\s+", " ", "".join(p.chunks)).strip()


def _normalize_media_type(declared: str, filename: str) -> str:
    media = _MEDIA_ALIASES.get(declared.lower(), declared.lower())
    if media in ACCEPTED_MEDIA_TYPES:
        return media
    guessed, _ = mimetypes.guess_type(filename)
    guessed = _MEDIA_ALIASES.get(guessed or "", guessed)
    if declared.lower() == "application/octet-stream" and guessed in ACCEPTED_MEDIA_TYPES:
        return guessed
    return media


def _received_at(msg: EmailMessage, warnings: list[str]) -> datetime:
    candidates = [msg.get("Date")]
    for received in msg.get_all("Received") or []:
        candidates.append(str(received).rpartition(";")[2])
    for value in candidates:
        if not value:
            continue
        try:
            dt = parsedate_to_datetime(str(value).strip())
        except (TypeError, ValueError, IndexError):
            continue
        if dt is None:
            continue
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.astimezone(timezone.utc)
    warnings.append("no usable Date header; using the current time")
    return datetime.now(timezone.utc)


def _decode_text(part: EmailMessage) -> str:
    payload = part.get_payload(decode=True) or b""
    charset = part.get_content_charset() or "utf-8"
    return payload.decode(charset)


def synthesize_message_id(raw: bytes) -> str:
    return f"<{hashlib.sha256(raw).hexdigest()[:32]}@synthesized.mailform>"


def parse_inbound(raw: bytes) -> InboundRequest:
    """Parse one RFC 5322 message. Attachments come back unclassified."""
    if not raw or not raw.strip():
        raise MimeParseError("empty message")
    msg = BytesParser(policy=policy.default).parsebytes(raw)
    if not msg.keys():
        raise MimeParseError("bytes do not start with RFC 5322 headers")

    warnings: list[str] = []
    message_id = str(msg.get("Message-ID") or "").strip()
    synthesized = False
    if not message_id:
        message_id = synthesize_message_id(raw)
        synthesized = True
        warnings.append("message had no Message-ID; one was synthesized from its digest")

    plain: list[str] = []
    html: list[str] = []
    attachments: list[Attachment] = []
    for index, part in enumerate(msg.walk()):
        if part.is_multipart():
            continue
        ctype = part.get_content_type()
        disposition = part.get_content_disposition()
        filename = part.get_filename()
        is_body = disposition != "attachment" and not filename and ctype in ("text/plain", "text/html")
        if is_body:
            try:
                text = _decode_text(part)
            except (LookupError, UnicodeDecodeError) as exc:
                warnings.append(f"dropped undecodable {ctype} body part: {exc}")
                log.warning("dropping undecodable body part in %s: %s", message_id, exc)
                continue
            (plain if ctype == "text/plain" else html).append(text)
            continue
        # base64 defects are only recorded while decoding
        data = part.get_payload(decode=True)
        if any(isinstance(d, (email_errors.InvalidBase64CharactersDefect,
                              email_errors.InvalidBase64PaddingDefect,
                              email_errors.InvalidBase64LengthDefect)) for d in part.defects):
            warnings.append(f"dropped attachment {filename or index} with corrupt base64 payload")
            log.warning("dropping corrupt attachment %s in %s", filename or index, message_id)
            continue
        if data is None:
            warnings.append(f"dropped attachment {filename or index}: no decodable payload")
            continue
        if not filename:
            ext = mimetypes.guess_extension(ctype) or ".bin"
            filename = f"attachment-{len(attachments) + 1}{ext}"
        attachments.append(Attachment(filename=filename,
                                      media_type=_normalize_media_type(ctype, filename),
                                      data=data))

    if plain:
        instruction = "\n".join(plain)
    else:
        instruction = "\n".join(html_to_text(h) for h in html)

    return InboundRequest(
        message_id=message_id,
        sender=parseaddr(str(msg.get("From") or ""))[1],
        subject=str(msg.get("Subject") or ""),
        instruction_text=instruction,
        attachments=tuple(attachments),
        received_at=_received_at(msg, warnings),
        message_id_synthesized=synthesized,
        warnings=tuple(warnings),
    )


def classify_attachment(media_type: str, data: bytes) -> AttachmentKind:
    if media_type not in ACCEPTED_MEDIA_TYPES:
        return AttachmentKind.IGNORED
    if media_type == "application/pdf" and has_form_fields(data):
        return AttachmentKind.TARGET_FORM
    return AttachmentKind.CONTEXT_DOCUMENT


def classify_attachments(request: InboundRequest) -> InboundRequest:
    attachments = tuple(replace(a, kind=classify_attachment(a.media_type, a.data))
                        for a in request.attachments)
    no_target = not any(a.kind is AttachmentKind.TARGET_FORM for a in attachments)
    return replace(request, attachments=attachments, classified=True, no_target_form=no_target)
