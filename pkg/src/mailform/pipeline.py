"""Per-request state machine and the polling daemon.

Every request ends as exactly one ledger line. A message_id that is already
in the ledger (or has a reply in the outbox) is never processed again, so
crashing anywhere and restarting cannot produce a second reply.
"""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from collections.abc import Callable
from email import policy
from email.parser import BytesParser
from typing import TypeVar

from .config import Config, build_llm_backend, build_ocr_backend
from .doc_extract import extract_text, filter_blocks, render_context
from .errors import (
    BackendError,
    DeliveryError,
    ExtractionError,
    FillError,
    FormatError,
    IngestionError,
    MailformError,
    MimeParseError,
    PlanError,
    PlanParseError,
    SchemaError,
)
from .form_model import fill_form, read_schema
from .ledger import CHAIN, Entry, Ledger, ProcessingRecord, State
from .mail_ingest import (
    InboundRequest,
    InboxCursor,
    MaildirInbox,
    classify_attachments,
    parse_inbound,
    poll_inbox,
    synthesize_message_id,
)
from .plan_engine import build_prompt, parse_plan, repair_request, request_plan
from .reply_compose import OutboxSink, compose_rejection, compose_reply, send

log = logging.getLogger(__name__)

T = TypeVar("T")

NO_TARGET_FORM = "no target form"


class _Rejected(MailformError):
    """Terminal failure with a reason code for the ledger and a text for the sender."""

    def __init__(self, code: str, user_text: str, *, notify: bool = True) -> None:
        super().__init__(code)
        self.code = code
        self.user_text = user_text
        self.notify = notify


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Pipeline:
    """Wires the stages together for one configured mailbox.

    ``stage_hook`` is called with the name of each stage boundary
    (``received``, ``extracted``, ``planned``, ``filled``, ``replied``, and
    ``committed`` between the ledger append and the cursor save) and exists
    for fault injection.
    """

    def __init__(self, config: Config, *, ocr=None, llm=None, sink=None,
                 ledger: Ledger | None = None, inbox=None,
                 sleep: Callable[[float], None] = time.sleep,
                 stage_hook: Callable[[str], None] | None = None) -> None:
        self.config = config
        self.ocr = ocr if ocr is not None else build_ocr_backend(config)
        self.llm = llm if llm is not None else build_llm_backend(config)
        self.sink = sink if sink is not None else OutboxSink(config.outbox_dir)
        self.ledger = ledger if ledger is not None else Ledger(config.ledger_path)
        self.inbox = inbox if inbox is not None else MaildirInbox(config.inbox_dir)
        self.sleep = sleep
        self.stage_hook = stage_hook
        self.processed: set[str] = self.ledger.processed_ids()
        self.cursor = InboxCursor.load(config.cursor_path)

    # ------------------------------------------------------------------ #

    def _hook(self, stage: str) -> None:
        if self.stage_hook is not None:
            self.stage_hook(stage)

    def _retry(self, stage: str, fn: Callable[[], T], record: ProcessingRecord) -> T:
        budget = self.config.retry
        for attempt in range(1, budget.max_attempts + 1):
            record.attempt_counts[stage] = record.attempt_counts.get(stage, 0) + 1
            try:
                return fn()
            except MailformError as exc:
                if not exc.retryable or attempt == budget.max_attempts:
                    raise
                delay = budget.delay(attempt)
                log.warning("%s attempt %d failed (%s); retrying in %.1fs", stage, attempt, exc, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")

    def _commit(self, record: ProcessingRecord) -> ProcessingRecord:
        self.ledger.append(record)
        if record.entry is not Entry.DUPLICATE:
            self.processed.add(record.message_id)
        return record

    # ------------------------------------------------------------------ #

    def recover(self) -> list[ProcessingRecord]:
        """Ledger replies found in the outbox but missing from the ledger.

        Covers a crash after delivery and before the ledger append.
        """
        if not isinstance(self.sink, OutboxSink):
            return []
        added = []
        for path in self.sink.sent():
            data = path.read_bytes()
            msg = BytesParser(policy=policy.default).parsebytes(data)
            request_id = str(msg.get("In-Reply-To") or "").strip()
            if not request_id or request_id in self.processed:
                continue
            has_form = any(True for _ in msg.iter_attachments())
            record = ProcessingRecord(request_id, entry=Entry.RECONCILED)
            if has_form:
                for state in CHAIN[1:]:
                    record.advance(state)
            else:
                record.fail("reconciled: rejection found in outbox")
            record.outputs["reply_sha256"] = _sha(data)
            log.warning("reconciled %s from outbox file %s", request_id, path.name)
            added.append(self._commit(record))
        return added

    def handle_raw(self, raw: bytes) -> ProcessingRecord:
        try:
            request = parse_inbound(raw)
        except MimeParseError as exc:
            message_id = synthesize_message_id(raw)
            record = ProcessingRecord(message_id)
            if message_id in self.processed:
                record.entry = Entry.DUPLICATE
                return self._commit(record)
            record.fail(f"parse: {exc}")
            return self._commit(record)
        return self.process_request(request)

    def process_request(self, request: InboundRequest) -> ProcessingRecord:
        started = time.perf_counter()
        record = ProcessingRecord(request.message_id)
        if request.message_id in self.processed:
            log.info("skipping already processed %s", request.message_id)
            record.entry = Entry.DUPLICATE
            record.timings["total_elapsed"] = time.perf_counter() - started
            return self._commit(record)
        record.warnings.extend(request.warnings)
        self._hook("received")
        try:
            self._run_stages(request, record)
        except _Rejected as rej:
            self._reject(request, record, rej.code, rej.user_text, notify=rej.notify)
        except MailformError as exc:
            code, text, notify = _classify_failure(exc)
            self._reject(request, record, code, text, notify=notify)
        except Exception as exc:
            log.exception("unexpected error processing %s", request.message_id)
            self._reject(request, record, f"internal: {type(exc).__name__}: {exc}",
                         "An internal error occurred while processing your request.", notify=True)
        record.timings["total_elapsed"] = time.perf_counter() - started
        return self._commit(record)

    def _run_stages(self, request: InboundRequest, record: ProcessingRecord) -> None:
        if not request.classified:
            request = classify_attachments(request)
        if request.no_target_form:
            raise _Rejected(NO_TARGET_FORM,
                            "No fillable PDF form was attached. Attach the PDF form with "
                            "interactive fields that should be completed.")
        target, *extra = request.target_forms
        for other in extra:
            record.warnings.append(f"only the first form was completed; {other.filename} was not processed")

        # extract
        t = time.perf_counter()
        docs = []
        for attachment in request.context_documents:
            doc = self._retry("ocr", lambda a=attachment: extract_text(a, self.ocr), record)
            record.attachment_timings[attachment.filename] = doc.elapsed
            docs.append(filter_blocks(doc, self.config.min_confidence))
        record.timings["ocr_elapsed"] = time.perf_counter() - t
        record.advance(State.EXTRACTED)
        self._hook("extracted")

        # plan
        t = time.perf_counter()
        schema = read_schema(target.data)
        bundle = build_prompt(request.instruction_text, schema, render_context(docs))
        raw, _ = self._retry("llm", lambda: request_plan(bundle, self.llm), record)
        try:
            plan = parse_plan(raw, schema)
        except PlanParseError as first:
            log.warning("%s: unparseable plan, sending one repair request", request.message_id)
            repaired = repair_request(bundle, raw, first)
            raw, _ = self._retry("llm_repair", lambda: request_plan(repaired, self.llm), record)
            plan = parse_plan(raw, schema)
        plan.model_name = getattr(self.llm, "model_name", "")
        plan.elapsed = time.perf_counter() - t
        record.timings["llm_elapsed"] = plan.elapsed
        record.warnings.extend(plan.warnings)
        record.advance(State.PLANNED)
        self._hook("planned")

        # fill
        t = time.perf_counter()
        filled = fill_form(target.data, plan)
        record.timings["fill_elapsed"] = time.perf_counter() - t
        record.outputs["filled_pdf_sha256"] = _sha(filled.data)
        record.advance(State.FILLED)
        self._hook("filled")

        # reply
        t = time.perf_counter()
        reply_warnings = [w for w in record.warnings if w.startswith("only the first form")]
        _, data = compose_reply(request, filled, plan, form_filename=target.filename,
                                warnings=reply_warnings, from_addr=self.config.reply_from)
        receipt = self._retry("send", lambda: send(data, self.sink), record)
        if receipt.duplicate:
            record.warnings.append("reply was already in the outbox; not sent again")
        record.timings["reply_elapsed"] = time.perf_counter() - t
        record.outputs["reply_sha256"] = _sha(data)
        record.advance(State.REPLIED)
        self._hook("replied")

    def _reject(self, request: InboundRequest, record: ProcessingRecord, code: str,
                user_text: str, *, notify: bool) -> None:
        log.warning("%s failed: %s", request.message_id, code)
        record.fail(code)
        if not notify or not request.sender:
            return
        _, data = compose_rejection(request, user_text, from_addr=self.config.reply_from)
        try:
            self._retry("send", lambda: send(data, self.sink), record)
            record.outputs["reply_sha256"] = _sha(data)
        except DeliveryError as exc:
            record.warnings.append(f"rejection not delivered: {exc}")

    # ------------------------------------------------------------------ #

    def run_once(self, stop: threading.Event | None = None) -> list[ProcessingRecord]:
        """One poll of the inbox; processes everything new unless ``stop`` is set."""
        try:
            messages, _ = poll_inbox(self.inbox, self.cursor)
        except IngestionError as exc:
            log.warning("poll failed, will retry next tick: %s", exc)
            return []
        records = []
        for msg in messages:
            if stop is not None and stop.is_set():
                break
            records.append(self.handle_raw(msg.data))
            self._hook("committed")
            self.cursor = self.cursor.mark(msg.filename, msg.digest)
            self.cursor.save(self.config.cursor_path)
        return records


def _classify_failure(exc: MailformError) -> tuple[str, str, bool]:
    """(ledger reason, text for the sender, whether to tell the sender)."""
    if isinstance(exc, ExtractionError):
        name = exc.filename or "an attachment"
        return (f"ocr: {name}: {exc}",
                f"The attachment {name} could not be read ({exc}).", True)
    if isinstance(exc, PlanParseError):
        return (f"plan parse: {exc}",
                "The assistant did not produce a usable completion plan for the form.", True)
    if isinstance(exc, BackendError):
        return (f"llm backend: {exc}",
                "The language model service is unavailable right now. Please resend later.", True)
    if isinstance(exc, (SchemaError, FormatError)):
        return (f"form schema: {exc}", f"The attached form could not be read: {exc}", True)
    if isinstance(exc, (FillError, PlanError)):
        return (f"fill: {exc}", "The form could not be filled in.", True)
    if isinstance(exc, DeliveryError):
        return (f"delivery: {exc}", "", False)
    return (f"{type(exc).__name__}: {exc}", f"Processing failed: {exc}", True)


def process_request(request: InboundRequest, config: Config, **kwargs) -> ProcessingRecord:
    return Pipeline(config, **kwargs).process_request(request)


def run_daemon(config: Config, stop: threading.Event | None = None, *,
               max_ticks: int | None = None, pipeline: Pipeline | None = None) -> None:
    """Poll every ``poll_interval_s`` until ``stop`` is set.

    A set ``stop`` lets the in-flight request finish. LedgerError propagates:
    without a ledger there is no idempotency, so the daemon must stop.
    """
    stop = stop or threading.Event()
    pipeline = pipeline or Pipeline(config)
    pipeline.recover()
    ticks = 0
    while not stop.is_set():
        pipeline.run_once(stop)
        ticks += 1
        if max_ticks is not None and ticks >= max_ticks:
            break
        stop.wait(config.poll_interval_s)
