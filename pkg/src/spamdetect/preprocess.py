"""Short-word removal applied to raw text before tokenization."""


def clean(text: str, max_drop_len: int = 3) -> str:
    """Drop every whitespace-delimited token of at most `max_drop_len` characters.

    Length counts Unicode characters, punctuation included; case is left
    untouched (lowercasing belongs to the tokenizer). Surviving tokens are
    rejoined with single spaces, so the result has no leading, trailing, or
    doubled whitespace. An empty result is legal.
    """
    return " ".join(tok for tok in text.split() if len(tok) > max_drop_len)
