import base64
import logging
from email.message import EmailMessage

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FAKE_PNG, make_eml
from mailform.errors import IngestionError, MimeParseError
from mailform.form_model import generate_flat_pdf, generate_test_form
from mailform.mail_ingest import (
    Attachment,
    AttachmentKind,
    InboundRequest,
    InboxCursor,
    MaildirInbox,
    classify_attachment,
    classify_attachments,
    html_to_text,
    parse_inbound,
    poll_inbox,
)


def test_empty_directory(tmp_path):
    cursor = InboxCursor()
    msgs, new = poll_inbox(tmp_path, cursor)
    assert msgs == [] and new == cursor


def test_two_messages_exactly_once(tmp_path):
    (tmp_path / "b.eml").write_bytes(make_eml(message_id="<b@x>"))
    (tmp_path / "a.eml").write_bytes(make_eml(message_id="<a@x>"))
    (tmp_path / "notes.txt").write_text("not mail")
    msgs, cursor = poll_inbox(tmp_path, InboxCursor())
    assert [m.filename for m in msgs] == ["a.eml", "b.eml"]
    again, cursor2 = poll_inbox(tmp_path, cursor)
    assert again == [] and cursor2 == cursor


def test_cursor_persists_across_restart(tmp_path):
    inbox = tmp_path / "inbox"
    inbox.mkdir()
    (inbox / "a.eml").write_bytes(make_eml())
    _, cursor = poll_inbox(inbox, InboxCursor())
    cursor.save(tmp_path / "cursor.json")
    msgs, _ = poll_inbox(inbox, InboxCursor.load(tmp_path / "cursor.json"))
    assert msgs == []


def test_input_cursor_not_mutated(tmp_path):
    (tmp_path / "a.eml").write_bytes(make_eml())
    cursor = InboxCursor()
    poll_inbox(tmp_path, cursor)
    assert dict(cursor.seen) == {}


def test_truncated_file_skipped_with_warning(tmp_path, caplog):
    good = make_eml(attachments=[("dni.png", "image/png", FAKE_PNG)])
    (tmp_path / "1.eml").write_bytes(good)
    (tmp_path / "2.eml").write_bytes(good[: len(good) // 2])
    with caplog.at_level(logging.WARNING, logger="mailform"):
        msgs, cursor = poll_inbox(tmp_path, InboxCursor())
    assert [m.filename for m in msgs] == ["1.eml"]
    assert len([r for r in caplog.records if "2.eml" in r.getMessage()]) == 1
    # once the writer finishes, the message is delivered
    (tmp_path / "2.eml").write_bytes(good)
    later, _ = poll_inbox(tmp_path, cursor)
    assert [m.filename for m in later] == ["2.eml"]


def test_unreachable_inbox_is_retryable(tmp_path):
    with pytest.raises(IngestionError) as err:
        poll_inbox(tmp_path / "missing", InboxCursor())
    assert err.value.retryable


def test_unreadable_message_does_not_abort_batch(tmp_path):
    class Flaky(MaildirInbox):
        def fetch(self, name):
            if name == "a.eml":
                raise PermissionError("denied")
            return super().fetch(name)

    (tmp_path / "a.eml").write_bytes(make_eml(message_id="<a@x>"))
    (tmp_path / "b.eml").write_bytes(make_eml(message_id="<b@x>"))
    msgs, cursor = poll_inbox(Flaky(tmp_path), InboxCursor())
    assert [m.filename for m in msgs] == ["b.eml"]
    assert not cursor.has_seen("a.eml")


def test_corrupt_cursor_file(tmp_path):
    (tmp_path / "c.json").write_text("[1, 2]")
    with pytest.raises(IngestionError):
        InboxCursor.load(tmp_path / "c.json")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=12))
def test_exactly_once_over_poll_sequences(tmp_path_factory, arrivals):
    inbox = tmp_path_factory.mktemp("inbox")
    cursor = InboxCursor()
    delivered = []
    for i, name in enumerate(arrivals):
        (inbox / f"{name}.eml").write_bytes(make_eml(message_id=f"<{name}@x>"))
        msgs, cursor = poll_inbox(inbox, cursor)
        delivered.extend(m.filename for m in msgs)
    assert sorted(delivered) == sorted(set(f"{n}.eml" for n in arrivals))


# --------------------------------------------------------------------------- #

def test_plain_message_no_attachments():
    req = parse_inbound(make_eml("Just text"))
    assert req.instruction_text.strip() == "Just text"
    assert req.attachments == ()
    assert req.message_id == "<req-1@example.com>"
    assert req.sender == "maria@example.com"
    assert req.subject == "Alta autónomo"
    assert req.received_at.year == 2025 and req.received_at.utcoffset().total_seconds() == 0


def test_body_and_two_attachments_in_order(golden_form):
    raw = make_eml("Fill the form with the attached ID",
                   attachments=[("solicitud.pdf", "application/pdf", golden_form),
                                ("dni.png", "image/png", FAKE_PNG)])
    req = parse_inbound(raw)
    assert req.instruction_text.strip() == "Fill the form with the attached ID"
    assert [a.filename for a in req.attachments] == ["solicitud.pdf", "dni.png"]
    assert req.attachments[0].data == golden_form
    assert req.attachments[1].data == FAKE_PNG
    assert all(a.kind is AttachmentKind.CONTEXT_DOCUMENT for a in req.attachments)
    assert not req.classified


def test_base64_text_body_decodes():
    text = "Rellene el formulario, por favor: Ñandú, 12345678Z"
    msg = EmailMessage()
    msg["From"] = "a@b.c"
    msg["Message-ID"] = "<b64@x>"
    msg.set_content(text, charset="utf-8", cte="base64")
    raw = msg.as_bytes()
    assert base64.b64encode(text.encode()).decode()[:20].encode() in raw
    assert parse_inbound(raw).instruction_text.rstrip("\n") == text


def test_latin1_quoted_printable_body():
    raw = (b"From: a@b.c\r\nMessage-ID: <qp@x>\r\nMIME-Version: 1.0\r\n"
           b"Content-Type: text/plain; charset=iso-8859-1\r\n"
           b"Content-Transfer-Encoding: quoted-printable\r\n\r\nSolicitud de C=F3digo\r\n")
    assert parse_inbound(raw).instruction_text.strip() == "Solicitud de Código"


def test_html_only_body():
    raw = make_eml(None, html="<html><head><style>p{}</style></head><body><p>Fill   the</p>"
                              "<p>form&nbsp;please</p><script>x()</script></body></html>")
    assert parse_inbound(raw).instruction_text == "Fill the form please"


def test_plain_preferred_over_html():
    raw = make_eml("plain version", html="<p>html version</p>")
    assert parse_inbound(raw).instruction_text.strip() == "plain version"


def test_html_to_text():
    assert html_to_text("<b>a</b><br>b") == "a b"
    assert html_to_text("") == ""


def test_missing_message_id_is_synthesized_deterministically():
    raw = make_eml(message_id=None)
    a, b = parse_inbound(raw), parse_inbound(raw)
    assert a.message_id and a.message_id == b.message_id
    assert a.message_id_synthesized
    assert any("Message-ID" in w for w in a.warnings)
    assert parse_inbound(make_eml("other", message_id=None)).message_id != a.message_id


def test_non_mime_bytes():
    with pytest.raises(MimeParseError):
        parse_inbound(b"")
    with pytest.raises(MimeParseError):
        parse_inbound(b"\x00\x01\x02 not mail at all")


def test_corrupt_base64_attachment_dropped_with_warning():
    good = make_eml(attachments=[("dni.png", "image/png", FAKE_PNG), ("b.png", "image/png", b"\x89PNG ok")])
    payload = base64.encodebytes(FAKE_PNG).split(b"\n")[0]
    broken = good.replace(payload, b"!!!!" + payload[4:-3], 1)
    req = parse_inbound(broken)
    assert [a.filename for a in req.attachments] == ["b.png"]
    assert any("dni.png" in w for w in req.warnings)


def test_undecodable_body_part_dropped():
    raw = (b"From: a@b.c\r\nMessage-ID: <u@x>\r\nMIME-Version: 1.0\r\n"
           b"Content-Type: text/plain; charset=x-no-such-charset\r\n\r\nhello\r\n")
    req = parse_inbound(raw)
    assert req.instruction_text == ""
    assert req.warnings


def test_empty_message_id_rejected():
    with pytest.raises(ValueError):
        InboundRequest("", "a@b", "s", "t")


# --------------------------------------------------------------------------- #

def _req(*attachments):
    return InboundRequest("<m@x>", "a@b", "s", "t",
                          tuple(Attachment(n, m, d) for n, m, d in attachments))


def test_classify_form_and_scan():
    form = generate_test_form([("a", "text", ()), ("b", "text", ()), ("c", "text", ())])
    req = classify_attachments(_req(("f.pdf", "application/pdf", form), ("s.png", "image/png", FAKE_PNG)))
    assert [a.kind for a in req.attachments] == [AttachmentKind.TARGET_FORM, AttachmentKind.CONTEXT_DOCUMENT]
    assert not req.no_target_form and req.classified


def test_classify_flat_pdf():
    req = classify_attachments(_req(("letter.pdf", "application/pdf", generate_flat_pdf("hi"))))
    assert [a.kind for a in req.attachments] == [AttachmentKind.CONTEXT_DOCUMENT]
    assert req.no_target_form


def test_classify_nothing():
    req = classify_attachments(_req())
    assert req.attachments == () and req.no_target_form


@pytest.mark.parametrize("media,kind", [
    ("image/png", AttachmentKind.CONTEXT_DOCUMENT),
    ("image/jpeg", AttachmentKind.CONTEXT_DOCUMENT),
    ("image/tiff", AttachmentKind.CONTEXT_DOCUMENT),
    ("application/zip", AttachmentKind.IGNORED),
    ("text/plain", AttachmentKind.IGNORED),
])
def test_classify_media_types(media, kind):
    assert classify_attachment(media, b"data") is kind


def test_jpg_alias_and_octet_stream_by_extension():
    raw = make_eml(attachments=[("photo.jpg", "image/jpg", b"\xff\xd8jpeg"),
                                ("scan.tiff", "application/octet-stream", b"II*\x00tiff")])
    req = classify_attachments(parse_inbound(raw))
    assert [a.media_type for a in req.attachments] == ["image/jpeg", "image/tiff"]
    assert all(a.kind is AttachmentKind.CONTEXT_DOCUMENT for a in req.attachments)


def test_garbage_pdf_is_context_not_form():
    assert classify_attachment("application/pdf", b"%PDF-broken") is AttachmentKind.CONTEXT_DOCUMENT


@settings(max_examples=25, deadline=None)
@given(st.binary(max_size=64), st.sampled_from(["application/pdf", "image/png", "text/csv"]))
def test_classification_is_pure(data, media):
    assert classify_attachment(media, data) is classify_attachment(media, bytes(data))
