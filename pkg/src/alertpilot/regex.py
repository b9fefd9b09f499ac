"""Non-backtracking, full-string regex matching (RE2) used by matchers and queries."""

from __future__ import annotations

from functools import lru_cache

try:
    import re2 as _engine

    _OPTIONS = _engine.Options()
    _OPTIONS.log_errors = False
    HAVE_RE2 = True
except ImportError:  # pragma: no cover - exercised only without google-re2
    import re as _engine

    _OPTIONS = None
    HAVE_RE2 = False


class RegexError(ValueError):
    pass


@lru_cache(maxsize=1024)
def compile_regex(pattern: str):
    try:
        if _OPTIONS is not None:
            return _engine.compile(pattern, _OPTIONS)
        return _engine.compile(pattern)
    except Exception as exc:  # re2.error / re.error
        raise RegexError(f"invalid regex {pattern!r}: {exc}") from None


def full_match(pattern: str, value: str) -> bool:
    return compile_regex(pattern).fullmatch(value) is not None
