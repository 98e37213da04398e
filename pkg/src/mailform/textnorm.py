"""String normalization conventions used for field names and answer matching."""

from __future__ import annotations

import re
import unicodedata

_WS = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Trim, collapse internal whitespace to one space, NFC. Case is kept."""
    return _WS.sub(" ", unicodedata.normalize("NFC", name)).strip()


def normalize_answer(value: str) -> str:
    """Comparison key for scored values: trimmed, NFC, case-insensitive."""
    # casefold can emit decomposed sequences, so re-compose afterwards
    folded = unicodedata.normalize("NFC", value).strip().casefold()
    return unicodedata.normalize("NFC", folded)
