"""Prompt construction, chat-completion backends and completion-plan parsing.

A plan maps every form field to either a string or ``None``. ``None`` is the
intentional blank: the model (or the rule-based mock) had no information for
that field and must leave it empty rather than guess.
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

import httpx

from .errors import BackendError, PlanParseError, PromptError
from .form_model import FieldKind, FormField, FormSchema
from .textnorm import normalize_answer, normalize_name

log = logging.getLogger(__name__)

SYSTEM_TEXT = (
    "You complete administrative PDF forms for office staff. You receive an "
    "instruction taken from an email, text recognized from the attached "
    "documents, and the list of form fields. Use only information present in "
    "the instruction or the documents. When a field's value is not supported "
    "by them, answer null for it so it stays blank. Never invent data."
)

INSTRUCTION_HEADER = "INSTRUCTION\n-----------"
CONTEXT_HEADER = "CONTEXT\n-------"
FIELDS_HEADER = "FORM FIELDS\n-----------"
FORMAT_HEADER = "OUTPUT FORMAT\n-------------"
CORRECTION_HEADER = "CORRECTION\n----------"

OUTPUT_DIRECTIVE = (
    "Respond with a single JSON object mapping every field name listed above "
    "(exactly as quoted) to a string value or null. null means the information "
    "is insufficient and the field must be left blank. Invent nothing. For "
    'checkboxes answer "true" to tick the box. For choices answer one of the '
    "listed options. Output the JSON object only."
)


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    schema_digest: str


@dataclass
class CompletionPlan:
    entries: dict[str, str | None] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    model_name: str = ""
    elapsed: float = 0.0

    @property
    def values(self) -> dict[str, str]:
        return {k: v for k, v in self.entries.items() if v is not None}

    @property
    def blanks(self) -> list[str]:
        return [k for k, v in self.entries.items() if v is None]

    def to_dict(self) -> dict[str, Any]:
        return {"entries": dict(self.entries), "warnings": list(self.warnings),
                "model_name": self.model_name, "elapsed": self.elapsed}


# --------------------------------------------------------------------------- #
# prompts

def _describe(f: FormField) -> str:
    name = json.dumps(f.name, ensure_ascii=False)
    if f.kind is FieldKind.CHECKBOX:
        return f'- {name} [checkbox: "true" to tick]'
    if f.kind is FieldKind.CHOICE:
        opts = " | ".join(json.dumps(o, ensure_ascii=False) for o in f.options)
        return f"- {name} [choice: {opts}]"
    if f.max_len:
        return f"- {name} [text, at most {f.max_len} characters]"
    return f"- {name} [text]"


def build_prompt(instruction: str, schema: FormSchema, context: str) -> PromptBundle:
    if not len(schema):
        raise PromptError("cannot build a prompt for a form without fields")
    field_lines = "\n".join(_describe(f) for f in schema.fields)
    user = "\n\n".join([
        f"{INSTRUCTION_HEADER}\n{instruction.strip()}",
        f"{CONTEXT_HEADER}\n{context if context else '(no documents)'}",
        f"{FIELDS_HEADER}\n{field_lines}",
        f"{FORMAT_HEADER}\n{OUTPUT_DIRECTIVE}",
    ])
    return PromptBundle(system_text=SYSTEM_TEXT, user_text=user, schema_digest=schema.digest)


def field_list_section(user_text: str) -> list[str]:
    """Lines of the field-list section of a built prompt."""
    start = user_text.rfind(f"\n\n{FIELDS_HEADER}\n")
    if start < 0:
        return []
    body = user_text[start + len(FIELDS_HEADER) + 3:]
    end = body.find(f"\n\n{FORMAT_HEADER}")
    return (body[:end] if end >= 0 else body).splitlines()


def repair_request(bundle: PromptBundle, raw: str, error: Exception | str) -> PromptBundle:
    excerpt = json.dumps(raw[:400], ensure_ascii=False)
    note = (
        f"{CORRECTION_HEADER}\nYour previous reply could not be used ({error}). "
        f"It began: {excerpt}. Reply again with only the JSON object described in "
        "OUTPUT FORMAT: every listed field name as a key, a string or null as each value."
    )
    return PromptBundle(bundle.system_text, f"{bundle.user_text}\n\n{note}", bundle.schema_digest)


# --------------------------------------------------------------------------- #
# backends

class LlmBackend(Protocol):
    model_name: str

    def complete(self, bundle: PromptBundle) -> str: ...


def request_plan(bundle: PromptBundle, backend: LlmBackend) -> tuple[str, float]:
    """Raw model text and the wall-clock seconds the call took."""
    start = time.perf_counter()
    raw = backend.complete(bundle)
    return raw, time.perf_counter() - start


def _field_names_from_prompt(user_text: str) -> list[str]:
    names = []
    decoder = json.JSONDecoder()
    for line in field_list_section(user_text):
        if line.startswith("- "):
            try:
                name, _ = decoder.raw_decode(line, 2)
            except ValueError:
                continue
            names.append(name)
    return names


def _context_lines(user_text: str) -> list[str]:
    start = user_text.find(f"{CONTEXT_HEADER}\n")
    end = user_text.rfind(f"\n\n{FIELDS_HEADER}\n")
    if start < 0 or end < start:
        return []
    return user_text[start + len(CONTEXT_HEADER) + 1:end].splitlines()


def rule_based_plan(user_text: str) -> dict[str, str | None]:
    """Copy ``KEY: value`` context lines into fields of the same name."""
    names = _field_names_from_prompt(user_text)
    by_key = {normalize_answer(n): n for n in names}
    out: dict[str, str | None] = {n: None for n in names}
    for line in _context_lines(user_text):
        key, sep, value = line.partition(":")
        if not sep:
            continue
        name = by_key.get(normalize_answer(key))
        if name is not None and out[name] is None and value.strip():
            out[name] = value.strip()
    return out


class MockLlmBackend:
    """Deterministic stand-in for a model.

    ``script`` maps a schema digest to a response, or to a list of responses
    handed out one per call (the last one repeats). Digests without a script
    fall back to :func:`rule_based_plan` when ``rule_based`` is set.
    ``failures`` makes the first N calls raise a retryable error.
    """

    def __init__(self, script: Mapping[str, str | Sequence[str]] | None = None, *,
                 rule_based: bool = True, failures: int = 0, model_name: str = "mock") -> None:
        self.script = dict(script or {})
        self.rule_based = rule_based
        self.failures = failures
        self.model_name = model_name
        self.calls: list[PromptBundle] = []
        self._served: dict[str, int] = {}

    def complete(self, bundle: PromptBundle) -> str:
        self.calls.append(bundle)
        if self.failures > 0:
            self.failures -= 1
            raise BackendError("mock backend: injected failure")
        scripted = self.script.get(bundle.schema_digest)
        if scripted is not None:
            if isinstance(scripted, str):
                return scripted
            i = self._served.get(bundle.schema_digest, 0)
            self._served[bundle.schema_digest] = i + 1
            return scripted[min(i, len(scripted) - 1)]
        if self.rule_based:
            return json.dumps(rule_based_plan(bundle.user_text), ensure_ascii=False)
        raise BackendError(f"mock backend has no script for schema {bundle.schema_digest[:12]}",
                           retryable=False)


class RemoteLlmBackend:
    """Client for an OpenAI-style ``/v1/chat/completions`` endpoint."""

    def __init__(self, base_url: str, model: str, *, temperature: float = 0.0,
                 token: str | None = None, timeout: float = 120.0,
                 extra: Mapping[str, Any] | None = None,
                 transport: httpx.BaseTransport | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self.model_name = model
        self.temperature = temperature
        self.timeout = timeout
        self.extra = dict(extra or {})
        self._token = token
        self._transport = transport

    def __repr__(self) -> str:
        return f"RemoteLlmBackend(base_url={self.base_url!r}, model={self.model_name!r})"

    def complete(self, bundle: PromptBundle) -> str:
        body = {
            **self.extra,
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            "temperature": self.temperature,
        }
        headers = {"Authorization": f"Bearer {self._token}"} if self._token else {}
        try:
            with httpx.Client(timeout=self.timeout, transport=self._transport) as client:
                resp = client.post(f"{self.base_url}/v1/chat/completions", json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise BackendError(f"LLM backend unreachable: {exc}") from exc
        if not resp.is_success:
            raise BackendError(f"LLM backend returned HTTP {resp.status_code}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"LLM response lacks choices[0].message.content: {exc}",
                               retryable=False) from exc
        if not isinstance(content, str):
            raise BackendError("LLM message content is not a string", retryable=False)
        return content


# --------------------------------------------------------------------------- #
# parsing

def extract_json_object(raw: str) -> dict[str, Any]:
    """First ``{...}`` in ``raw`` that decodes to a JSON object."""
    decoder = json.JSONDecoder()
    pos = raw.find("{")
    while pos >= 0:
        try:
            obj, _ = decoder.raw_decode(raw, pos)
        except ValueError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        pos = raw.find("{", pos + 1)
    raise PlanParseError("no JSON object found in model response")


def parse_plan(raw: str, schema: FormSchema, *, model_name: str = "",
               elapsed: float = 0.0) -> CompletionPlan:
    obj = extract_json_object(raw)
    warnings: list[str] = []
    found: dict[str, str | None] = {}
    for key, value in obj.items():
        name = normalize_name(str(key))
        if name not in schema:
            warnings.append(f"dropped unknown field {key!r}")
            continue
        if name in found:
            warnings.append(f"duplicate answer for {name!r} ignored")
            continue
        if value is None:
            found[name] = None
        elif isinstance(value, str):
            if value.strip():
                found[name] = value
            else:
                found[name] = None
                warnings.append(f"empty string for {name!r} treated as blank")
        elif isinstance(value, (bool, int, float)):
            found[name] = json.dumps(value)
            warnings.append(f"non-string value for {name!r} converted to text")
        else:
            found[name] = None
            warnings.append(f"structured value for {name!r} treated as blank")
    entries: dict[str, str | None] = {}
    for name in schema.names:
        if name not in found:
            warnings.append(f"no answer for {name!r}; left blank")
        entries[name] = found.get(name)
    return CompletionPlan(entries=entries, warnings=warnings, model_name=model_name, elapsed=elapsed)
