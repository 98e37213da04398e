"""Email-driven completion of interactive PDF forms."""

from .doc_extract import ExtractedDocument, TextBlock, extract_text, filter_blocks, render_context
from .eval_harness import CostParams, CostReport, GoldKey, ScoreReport, cost_model, score_batch, score_plan
from .form_model import (
    FieldKind,
    FilledForm,
    FormField,
    FormSchema,
    fill_form,
    generate_test_form,
    read_back,
    read_schema,
)
from .ledger import Ledger, ProcessingRecord, State, record_ledger_entry
from .mail_ingest import (
    Attachment,
    AttachmentKind,
    InboundRequest,
    InboxCursor,
    classify_attachments,
    parse_inbound,
    poll_inbox,
)
from .pipeline import Pipeline, process_request, run_daemon
from .plan_engine import CompletionPlan, PromptBundle, build_prompt, parse_plan, repair_request, request_plan
from .reply_compose import OutboundReply, compose_rejection, compose_reply, send

__version__ = "0.1.0"
