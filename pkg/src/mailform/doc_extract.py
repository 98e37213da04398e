"""Turn context attachments into text blocks and render them for the planner."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Protocol

import httpx
from pypdf import PdfReader

from .errors import ExtractionError
from .mail_ingest import Attachment, AttachmentKind

log = logging.getLogger(__name__)

DEFAULT_MIN_CONFIDENCE = 0.5
ROW_BAND = 0.02


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"bbox {name}={v!r} outside [0, 1]")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("bbox width and height must be positive")


@dataclass(frozen=True)
class TextBlock:
    text: str
    confidence: float
    bbox: BBox

    def __post_init__(self) -> None:
        c = self.confidence
        if not (isinstance(c, (int, float)) and math.isfinite(c) and 0.0 <= c <= 1.0):
            raise ValueError(f"confidence {c!r} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        b = self.bbox
        return {"text": self.text, "confidence": self.confidence,
                "bbox": {"x": b.x, "y": b.y, "w": b.w, "h": b.h}}


@dataclass(frozen=True)
class ExtractedDocument:
    source_filename: str
    blocks: tuple[TextBlock, ...] = ()
    backend_name: str = ""
    elapsed: float = 0.0

    def __post_init__(self) -> None:
        if self.elapsed < 0:
            raise ValueError("elapsed must be >= 0")

    @property
    def text(self) -> str:
        return "\n".join(b.text for b in self.blocks)

    def to_dict(self) -> dict[str, Any]:
        return {
            "source_filename": self.source_filename,
            "backend_name": self.backend_name,
            "elapsed": self.elapsed,
            "blocks": [b.to_dict() for b in self.blocks],
        }


def reading_order(blocks: Iterable[TextBlock], band: float = ROW_BAND) -> tuple[TextBlock, ...]:
    """Top-to-bottom by row band of the box origin, then left-to-right."""
    return tuple(sorted(blocks, key=lambda b: (math.floor(b.bbox.y / band), b.bbox.x)))


def rows_from_lines(lines: Sequence[str], confidence: float = 1.0) -> list[TextBlock]:
    """One full-width block per non-blank line, stacked evenly down the page."""
    kept = [ln.strip() for ln in lines if ln.strip()]
    n = len(kept)
    return [TextBlock(t, confidence, BBox(0.0, i / n, 1.0, 1.0 / n)) for i, t in enumerate(kept)]


class OcrBackend(Protocol):
    name: str

    def detect(self, data: bytes, media_type: str) -> list[TextBlock]: ...


class StubOcrBackend:
    """Looks up ``<fixtures_dir>/<sha256>.txt`` for the attachment bytes."""

    name = "stub"

    def __init__(self, fixtures_dir: str | Path) -> None:
        self.fixtures_dir = Path(fixtures_dir)

    def sidecar_path(self, data: bytes) -> Path:
        return self.fixtures_dir / f"{hashlib.sha256(data).hexdigest()}.txt"

    def detect(self, data: bytes, media_type: str) -> list[TextBlock]:
        path = self.sidecar_path(data)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            log.warning("stub OCR has no sidecar %s; returning no text", path.name)
            return []
        except OSError as exc:
            raise ExtractionError(f"stub fixtures unreadable: {exc}", retryable=True) from exc
        return rows_from_lines(text.splitlines())


class RemoteOcrBackend:
    """HTTP client for a detect-document-text style service.

    ``POST <base_url>/extract`` with the raw bytes; the reply is
    ``{"blocks": [{"text", "confidence", "bbox": {"x", "y", "w", "h"}}]}``.
    """

    name = "remote"

    def __init__(self, base_url: str, token: str | None = None, timeout: float = 60.0,
                 transport: httpx.BaseTransport | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self._token = token
        self.timeout = timeout
        self._transport = transport

    def __repr__(self) -> str:
        return f"RemoteOcrBackend(base_url={self.base_url!r})"

    def detect(self, data: bytes, media_type: str) -> list[TextBlock]:
        headers = {"Content-Type": media_type}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        try:
            with httpx.Client(timeout=self.timeout, transport=self._transport) as client:
                resp = client.post(f"{self.base_url}/extract", content=data, headers=headers)
        except httpx.HTTPError as exc:
            raise ExtractionError(f"OCR backend unreachable: {exc}", retryable=True) from exc
        if not resp.is_success:
            raise ExtractionError(f"OCR backend returned HTTP {resp.status_code}", retryable=True,
                                  raw_response=resp.text)
        return parse_ocr_response(resp.text)


def parse_ocr_response(raw: str) -> list[TextBlock]:
    try:
        payload = json.loads(raw)
        blocks = []
        for item in payload["blocks"]:
            b = item["bbox"]
            blocks.append(TextBlock(
                text=str(item["text"]),
                confidence=float(item["confidence"]),
                bbox=BBox(float(b["x"]), float(b["y"]), float(b["w"]), float(b["h"])),
            ))
    except (ValueError, KeyError, TypeError) as exc:
        raise ExtractionError(f"malformed OCR response: {exc}", retryable=False,
                              raw_response=raw) from exc
    return blocks


def pdf_text_layer(data: bytes) -> list[str]:
    reader = PdfReader(io.BytesIO(data))
    lines: list[str] = []
    for page in reader.pages:
        lines.extend((page.extract_text() or "").splitlines())
    return lines


def extract_text(attachment: Attachment, backend: OcrBackend) -> ExtractedDocument:
    """Text blocks for one context attachment.

    PDFs with a text layer are read directly at confidence 1.0; everything else
    (including image-only PDFs) goes through ``backend``.
    """
    if attachment.kind is not AttachmentKind.CONTEXT_DOCUMENT:
        raise ValueError(f"{attachment.filename} is {attachment.kind.value}, not a context document")
    start = time.perf_counter()
    blocks: list[TextBlock] = []
    backend_name = backend.name
    if attachment.media_type == "application/pdf":
        try:
            blocks = rows_from_lines(pdf_text_layer(attachment.data))
        except Exception as exc:
            raise ExtractionError(f"cannot read PDF {attachment.filename}: {exc}",
                                  retryable=False, filename=attachment.filename) from exc
        if blocks:
            backend_name = "pdf-text-layer"
    if not blocks and attachment.data:
        try:
            blocks = backend.detect(attachment.data, attachment.media_type)
        except ExtractionError as exc:
            exc.filename = attachment.filename
            raise
    return ExtractedDocument(
        source_filename=attachment.filename,
        blocks=reading_order(blocks),
        backend_name=backend_name,
        elapsed=time.perf_counter() - start,
    )


def filter_blocks(doc: ExtractedDocument, min_confidence: float) -> ExtractedDocument:
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError("min_confidence must be within [0, 1]")
    return replace(doc, blocks=tuple(b for b in doc.blocks if b.confidence >= min_confidence))


def _escape_block(text: str) -> str:
    # keeps one block per line and stops block text from posing as a header
    out = text.replace("\\", "\\\\").replace("\r", "\\r").replace("\n", "\\n")
    return "\\" + out if out.startswith("=") else out


def render_context(docs: Sequence[ExtractedDocument]) -> str:
    sections = []
    for doc in docs:
        name = " ".join(doc.source_filename.split())
        lines = [f"=== DOCUMENT: {name} ==="]
        lines.extend(_escape_block(b.text) for b in doc.blocks)
        sections.append("\n".join(lines))
    return "\n\n".join(sections)
