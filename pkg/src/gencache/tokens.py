"""Token estimation used when a backend does not report real usage."""

import math


def estimate_tokens(text: str) -> int:
    """Heuristic token count: one token per four UTF-8 bytes, rounded up."""
    return math.ceil(len(text.encode("utf-8")) / 4)
