"""Interactive PDF form handling: schema discovery, filling, read-back, test forms.

Field names are normalized (see :func:`mailform.textnorm.normalize_name`) and
every public function keys fields by that normalized name. The raw name from
the PDF is kept on :class:`FormField` so writes can address the original
field.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from pypdf import PdfReader, PdfWriter
from pypdf.generic import (
    ArrayObject,
    DictionaryObject,
    IndirectObject,
    NameObject,
    TextStringObject,
)
from reportlab.lib.pagesizes import A4
from reportlab.pdfgen import canvas

from .errors import FillError, FormatError, FormSpecError, PlanError, SchemaError
from .textnorm import normalize_answer, normalize_name

log = logging.getLogger(__name__)

# field flag bits (PDF 1.7, table 226 / 228)
_FF_RADIO = 1 << 15
_FF_PUSHBUTTON = 1 << 16

TRUTHY = frozenset({"1", "true", "yes", "x", "sí"})


class FieldKind(str, Enum):
    TEXT = "text"
    CHECKBOX = "checkbox"
    CHOICE = "choice"


@dataclass(frozen=True)
class FormField:
    name: str
    raw_name: str
    kind: FieldKind
    page: int = 1
    options: tuple[str, ...] = ()
    max_len: int | None = None

    def __post_init__(self) -> None:
        if self.kind is FieldKind.CHOICE and not self.options:
            raise SchemaError(f"choice field {self.name!r} has no options")
        if self.kind is not FieldKind.CHOICE and self.options:
            raise SchemaError(f"{self.kind.value} field {self.name!r} cannot carry options")
        if self.max_len is not None and (self.kind is not FieldKind.TEXT or self.max_len <= 0):
            raise SchemaError(f"max_len is only valid as a positive bound on text fields ({self.name!r})")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "raw_name": self.raw_name,
            "kind": self.kind.value,
            "page": self.page,
            "options": list(self.options),
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FormField:
        return cls(
            name=data["name"],
            raw_name=data.get("raw_name", data["name"]),
            kind=FieldKind(data["kind"]),
            page=int(data.get("page", 1)),
            options=tuple(data.get("options") or ()),
            max_len=data.get("max_len"),
        )


@dataclass(frozen=True)
class FormSchema:
    form_digest: str
    fields: tuple[FormField, ...] = ()

    def __post_init__(self) -> None:
        seen: dict[str, str] = {}
        for f in self.fields:
            if f.name in seen:
                raise SchemaError(
                    f"fields {seen[f.name]!r} and {f.raw_name!r} both normalize to {f.name!r}"
                )
            seen[f.name] = f.raw_name

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    def __len__(self) -> int:
        return len(self.fields)

    def __contains__(self, name: object) -> bool:
        return any(f.name == name for f in self.fields)

    def get(self, name: str) -> FormField | None:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    @property
    def digest(self) -> str:
        """Digest of the field structure alone; filling a form does not change it."""
        payload = [
            {k: v for k, v in f.to_dict().items() if k != "raw_name"} for f in self.fields
        ]
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {"form_digest": self.form_digest, "fields": [f.to_dict() for f in self.fields]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FormSchema:
        return cls(
            form_digest=data.get("form_digest", ""),
            fields=tuple(FormField.from_dict(f) for f in data.get("fields", [])),
        )


@dataclass
class FilledForm:
    data: bytes
    applied: dict[str, str] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    # applied fields whose value was altered on the way in (truncation)
    notes: dict[str, str] = field(default_factory=dict)


# --------------------------------------------------------------------------- #
# low-level traversal

@dataclass
class _RawField:
    qualified_name: str
    obj: DictionaryObject
    widgets: list[DictionaryObject]


def _open(pdf: bytes) -> PdfReader:
    if not isinstance(pdf, (bytes, bytearray)) or not bytes(pdf[:1024]).lstrip().startswith(b"%PDF"):
        raise FormatError("payload is not a PDF")
    try:
        reader = PdfReader(io.BytesIO(pdf))
        _ = len(reader.pages)
    except Exception as exc:  # pypdf raises a wide range of types on damaged files
        raise FormatError(f"unreadable PDF: {exc}") from exc
    return reader


def _inherited(obj: DictionaryObject, key: str) -> Any:
    node: Any = obj
    depth = 0
    while node is not None and depth < 64:
        if key in node:
            return node[key].get_object() if isinstance(node[key], IndirectObject) else node[key]
        parent = node.get("/Parent")
        node = parent.get_object() if parent is not None else None
        depth += 1
    return None


def _acroform_fields(root: DictionaryObject) -> list[Any]:
    acro = root.get("/AcroForm")
    if acro is None:
        return []
    acro = acro.get_object()
    fields = acro.get("/Fields")
    return list(fields.get_object()) if fields is not None else []


def _walk(refs: Iterable[Any], parent: str | None = None, depth: int = 0) -> Iterator[_RawField]:
    if depth > 32:
        return
    for ref in refs:
        obj = ref.get_object()
        partial = obj.get("/T")
        if partial is not None:
            partial = str(partial)
            name = f"{parent}.{partial}" if parent else partial
        else:
            name = parent or ""
        kids = [k.get_object() for k in obj.get("/Kids", [])]
        if kids and any("/T" in k for k in kids):
            yield from _walk(obj["/Kids"], name, depth + 1)
        elif kids:
            yield _RawField(name, obj, kids)
        else:
            yield _RawField(name, obj, [obj])


def _on_states(widgets: Sequence[DictionaryObject]) -> list[str]:
    states: list[str] = []
    for w in widgets:
        ap = w.get("/AP")
        normal = ap.get_object().get("/N") if ap is not None else None
        if normal is None:
            continue
        normal = normal.get_object()
        if not isinstance(normal, DictionaryObject):
            continue
        for key in normal.keys():
            if key != "/Off" and key not in states:
                states.append(key)
    return states


def _kind_of(raw: _RawField) -> tuple[FieldKind | None, tuple[str, ...]]:
    ft = _inherited(raw.obj, "/FT")
    flags = int(_inherited(raw.obj, "/Ff") or 0)
    if ft == "/Tx":
        return FieldKind.TEXT, ()
    if ft == "/Btn":
        if flags & _FF_PUSHBUTTON:
            return None, ()
        if flags & _FF_RADIO:
            return FieldKind.CHOICE, tuple(s[1:] for s in _on_states(raw.widgets))
        return FieldKind.CHECKBOX, ()
    if ft == "/Ch":
        opts = _inherited(raw.obj, "/Opt") or []
        out = []
        for o in opts:
            o = o.get_object() if isinstance(o, IndirectObject) else o
            # [export, display] pairs store the export value in /V
            out.append(str(o[0]) if isinstance(o, ArrayObject) else str(o))
        return FieldKind.CHOICE, tuple(out)
    return None, ()


def _widget_pages(reader: PdfReader) -> dict[tuple[int, int], int]:
    where: dict[tuple[int, int], int] = {}
    for index, page in enumerate(reader.pages, start=1):
        annots = page.get("/Annots")
        if annots is None:
            continue
        for a in annots.get_object():
            if isinstance(a, IndirectObject):
                where.setdefault((a.idnum, a.generation), index)
    return where


def _page_of(raw: _RawField, where: Mapping[tuple[int, int], int]) -> int:
    for w in raw.widgets:
        ref = w.indirect_reference
        if ref is not None and (ref.idnum, ref.generation) in where:
            return where[(ref.idnum, ref.generation)]
    return 1


def _interactive(reader: PdfReader) -> list[tuple[_RawField, FieldKind, tuple[str, ...]]]:
    out = []
    for raw in _walk(_acroform_fields(reader.trailer["/Root"])):
        kind, options = _kind_of(raw)
        if kind is None:
            continue
        if kind is FieldKind.CHOICE and not options:
            log.warning("choice field %r has no options; ignored", raw.qualified_name)
            continue
        out.append((raw, kind, options))
    return out


def _current_value(raw: _RawField, kind: FieldKind) -> str:
    v = _inherited(raw.obj, "/V")
    if kind is FieldKind.TEXT:
        return "" if v is None else str(v)
    if kind is FieldKind.CHECKBOX:
        state = v
        if state is None:
            state = next((w.get("/AS") for w in raw.widgets if w.get("/AS") not in (None, "/Off")), None)
        return "true" if state not in (None, "", "/Off") else ""
    # choice: combo/list box stores a string, radio group stores a name
    if v is None:
        return ""
    if isinstance(v, ArrayObject):
        v = v[0] if len(v) else ""
    if isinstance(v, NameObject):
        return "" if v == "/Off" else str(v)[1:]
    return str(v)


# --------------------------------------------------------------------------- #
# public API

def pdf_digest(pdf: bytes) -> str:
    return hashlib.sha256(pdf).hexdigest()


def has_form_fields(pdf: bytes) -> bool:
    """True when the payload is a PDF with at least one fillable field."""
    try:
        return bool(_interactive(_open(pdf)))
    except FormatError:
        return False


def read_schema(pdf: bytes) -> FormSchema:
    reader = _open(pdf)
    where = _widget_pages(reader)
    fields = []
    for raw, kind, options in _interactive(reader):
        max_len = None
        if kind is FieldKind.TEXT:
            ml = _inherited(raw.obj, "/MaxLen")
            max_len = int(ml) if ml is not None and int(ml) > 0 else None
        fields.append(
            FormField(
                name=normalize_name(raw.qualified_name),
                raw_name=raw.qualified_name,
                kind=kind,
                page=_page_of(raw, where),
                options=options,
                max_len=max_len,
            )
        )
    return FormSchema(form_digest=pdf_digest(bytes(pdf)), fields=tuple(fields))


def read_back(pdf: bytes) -> dict[str, str]:
    """Current value of every field. Checkboxes read as ``"true"`` or ``""``."""
    reader = _open(pdf)
    values: dict[str, str] = {}
    for raw, kind, _ in _interactive(reader):
        values[normalize_name(raw.qualified_name)] = _current_value(raw, kind)
    return values


def is_truthy(value: str) -> bool:
    return normalize_answer(value) in TRUTHY


def _plan_entries(plan: Any) -> dict[str, str | None]:
    entries = getattr(plan, "entries", plan)
    return {normalize_name(k): v for k, v in dict(entries or {}).items()}


def fill_form(pdf: bytes, plan: Any) -> FilledForm:
    """Write plan values into a copy of ``pdf``.

    ``plan`` is a :class:`~mailform.plan_engine.CompletionPlan` or any mapping of
    field name to value, where ``None`` marks an intentional blank that leaves
    the field untouched. Keys outside the form's schema raise :class:`PlanError`.
    """
    reader = _open(pdf)
    schema = read_schema(pdf)
    entries = _plan_entries(plan)
    unknown = [k for k in entries if k not in schema]
    if unknown:
        raise PlanError(f"plan names fields not on the form: {', '.join(sorted(unknown))}",
                        unknown=unknown)

    applied: dict[str, str] = {}
    skipped: dict[str, str] = {}
    notes: dict[str, str] = {}
    updates: dict[str, str] = {}
    states = {normalize_name(raw.qualified_name): _on_states(raw.widgets)
              for raw, _, _ in _interactive(reader)}

    for f in schema.fields:
        if f.name not in entries or entries[f.name] is None:
            continue
        value = str(entries[f.name])
        if f.kind is FieldKind.TEXT:
            if f.max_len is not None and len(value) > f.max_len:
                notes[f.name] = f"value truncated from {len(value)} to {f.max_len} characters"
                value = value[: f.max_len]
            updates[f.raw_name] = value
            applied[f.name] = value
        elif f.kind is FieldKind.CHECKBOX:
            on = (states.get(f.name) or ["/Yes"])[0]
            checked = is_truthy(value)
            updates[f.raw_name] = on if checked else "/Off"
            applied[f.name] = "true" if checked else ""
        else:
            wanted = normalize_answer(value)
            match = next((o for o in f.options if normalize_answer(o) == wanted), None)
            if match is None:
                skipped[f.name] = f"{value!r} matches none of the options ({' | '.join(f.options)})"
                continue
            radio = bool(int(_inherited(_raw_by_name(reader, f.raw_name).obj, "/Ff") or 0) & _FF_RADIO)
            updates[f.raw_name] = "/" + match if radio else match
            applied[f.name] = match

    try:
        writer = PdfWriter(clone_from=reader)
        if updates:
            _write_values(writer, updates)
        out = io.BytesIO()
        writer.write(out)
    except Exception as exc:
        raise FillError(f"could not write filled PDF: {exc}") from exc
    return FilledForm(data=out.getvalue(), applied=applied, skipped=skipped, notes=notes)


def _raw_by_name(reader: PdfReader, raw_name: str) -> _RawField:
    for raw in _walk(_acroform_fields(reader.trailer["/Root"])):
        if raw.qualified_name == raw_name:
            return raw
    raise SchemaError(f"field {raw_name!r} vanished")


def _write_values(writer: PdfWriter, updates: Mapping[str, str]) -> None:
    for raw in _walk(_acroform_fields(writer._root_object)):
        if raw.qualified_name not in updates:
            continue
        value = updates[raw.qualified_name]
        ft = _inherited(raw.obj, "/FT")
        if ft == "/Btn":
            state = NameObject(value)
            raw.obj[NameObject("/V")] = state
            for w in raw.widgets:
                ap = w.get("/AP")
                normal = ap.get_object().get("/N") if ap is not None else None
                has_state = normal is not None and state in normal.get_object()
                w[NameObject("/AS")] = state if has_state else NameObject("/Off")
        else:
            raw.obj[NameObject("/V")] = TextStringObject(value)
            if ft == "/Ch":
                for key in ("/I",):
                    if key in raw.obj:
                        del raw.obj[key]
    # text and choice appearances: let pypdf regenerate streams per page,
    # and flag NeedAppearances so viewers redraw anything it cannot
    text_updates = {}
    for raw in _walk(_acroform_fields(writer._root_object)):
        if raw.qualified_name in updates and _inherited(raw.obj, "/FT") in ("/Tx", "/Ch"):
            text_updates[raw.qualified_name] = updates[raw.qualified_name]
    if text_updates:
        for page in writer.pages:
            try:
                writer.update_page_form_field_values(page, text_updates, auto_regenerate=True)
            except Exception as exc:  # appearance generation is best effort
                log.debug("appearance regeneration failed on a page: %s", exc)
    writer.set_need_appearances_writer(True)


# --------------------------------------------------------------------------- #
# synthetic forms

FieldSpec = tuple  # (name, kind, options) or (name, kind, options, max_len)

_ROW_HEIGHT = 28
_TOP = 800
_BOTTOM = 60


def _coerce_spec(spec: Sequence[Any]) -> list[tuple[str, FieldKind, tuple[str, ...], int | None]]:
    if not spec:
        raise FormSpecError("form spec is empty")
    out = []
    seen = set()
    for item in spec:
        if isinstance(item, FormField):
            name, kind, options, max_len = item.name, item.kind, item.options, item.max_len
        else:
            name, kind, options, *rest = item
            max_len = rest[0] if rest else None
        try:
            kind = FieldKind(kind)
        except ValueError as exc:
            raise FormSpecError(f"unknown field kind {kind!r}") from exc
        name = normalize_name(str(name))
        options = tuple(str(o) for o in (options or ()))
        if not name:
            raise FormSpecError("field names must be non-empty")
        if "." in name:
            raise FormSpecError(f"field name {name!r} contains '.', which PDF reserves for hierarchy")
        if name in seen:
            raise FormSpecError(f"duplicate field name {name!r}")
        if kind is FieldKind.CHOICE and (not options or len(set(options)) != len(options)):
            raise FormSpecError(f"choice field {name!r} needs distinct, non-empty options")
        if kind is not FieldKind.CHOICE and options:
            raise FormSpecError(f"{kind.value} field {name!r} cannot have options")
        if max_len is not None and (kind is not FieldKind.TEXT or int(max_len) <= 0):
            raise FormSpecError(f"max_len must be a positive bound on a text field ({name!r})")
        seen.add(name)
        out.append((name, kind, options, None if max_len is None else int(max_len)))
    return out


def _label(text: str) -> str:
    return text.encode("latin-1", "replace").decode("latin-1")


def generate_test_form(spec: Sequence[Any], title: str = "Synthetic test form") -> bytes:
    """Build a PDF whose interactive fields are exactly ``spec``, in order.

    Fields start empty (choices have no selection, checkboxes are off).
    """
    items = _coerce_spec(spec)
    buf = io.BytesIO()
    c = canvas.Canvas(buf, pagesize=A4, invariant=1)
    c.setTitle(title)
    y = _TOP
    c.setFont("Helvetica-Bold", 13)
    c.drawString(50, y, _label(title))
    y -= 2 * _ROW_HEIGHT
    # reportlab is given ASCII placeholders; real names/options are set below
    for i, (name, kind, options, max_len) in enumerate(items):
        if y < _BOTTOM:
            c.showPage()
            y = _TOP
        c.setFont("Helvetica", 9)
        c.drawString(50, y + 6, _label(name)[:48])
        placeholder = f"__f{i:04d}"
        if kind is FieldKind.TEXT:
            kwargs = {"maxlen": max_len} if max_len else {}
            c.acroForm.textfield(name=placeholder, x=260, y=y, width=280, height=20,
                                 fontSize=10, borderWidth=1, **kwargs)
        elif kind is FieldKind.CHECKBOX:
            c.acroForm.checkbox(name=placeholder, x=260, y=y + 2, size=16, buttonStyle="check")
        else:
            opts = [f"o{j}" for j in range(len(options))]
            c.acroForm.choice(name=placeholder, value=opts[0], options=opts, x=260, y=y,
                              width=280, height=20, fontSize=10)
        y -= _ROW_HEIGHT
    c.showPage()
    c.save()

    reader = PdfReader(io.BytesIO(buf.getvalue()))
    writer = PdfWriter(clone_from=reader)
    by_placeholder = {f"__f{i:04d}": item for i, item in enumerate(items)}
    for raw in _walk(_acroform_fields(writer._root_object)):
        name, kind, options, max_len = by_placeholder[raw.qualified_name]
        raw.obj[NameObject("/T")] = TextStringObject(name)
        # reportlab always writes /MaxLen (default 100)
        if kind is FieldKind.TEXT and max_len is None and "/MaxLen" in raw.obj:
            del raw.obj["/MaxLen"]
        if kind is FieldKind.CHOICE:
            raw.obj[NameObject("/Opt")] = ArrayObject(TextStringObject(o) for o in options)
            for key in ("/V", "/DV", "/I"):
                if key in raw.obj:
                    del raw.obj[key]
    out = io.BytesIO()
    writer.write(out)
    return out.getvalue()


def generate_flat_pdf(text: str) -> bytes:
    """A PDF with a plain text layer (one line per input line) and no fields."""
    buf = io.BytesIO()
    c = canvas.Canvas(buf, pagesize=A4, invariant=1)
    c.setFont("Helvetica", 11)
    y = _TOP
    for line in text.splitlines():
        if y < _BOTTOM:
            c.showPage()
            c.setFont("Helvetica", 11)
            y = _TOP
        c.drawString(50, y, _label(line))
        y -= 16
    c.showPage()
    c.save()
    return buf.getvalue()
