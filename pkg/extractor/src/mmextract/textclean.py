"""Caption cleaning, applied in a fixed order: URL tokens removed,
non-ASCII stripped, lowercased, punctuation deleted, whitespace collapsed.
"""

import re
import string

_URL_TOKEN = re.compile(r"^(https?://|www\.)", re.IGNORECASE)
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def clean_text(text: str) -> str:
    """Idempotent; an empty result is permitted."""
    tokens = [t for t in text.split() if not _URL_TOKEN.match(t)]
    ascii_only = " ".join(tokens).encode("ascii", "ignore").decode("ascii")
    lowered = ascii_only.lower()
    no_punct = lowered.translate(_PUNCT_TABLE)
    return " ".join(no_punct.split())
