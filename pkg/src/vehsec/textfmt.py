"""Line-oriented declarative text format shared by model, signature, feed,
catalog and ground-truth files.

Every non-blank line is ``directive key=value key=value ...``. Values may be
quoted with shell rules. ``#`` starts a comment outside quotes.
"""
from __future__ import annotations

import re
import shlex
from dataclasses import dataclass, field

from .errors import ParseError

_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
_SAFE_VALUE_RE = re.compile(r"^[A-Za-z0-9_.,:/+\-]+$")


@dataclass(frozen=True)
class Decl:
    directive: str
    attrs: dict = field(default_factory=dict)
    line: int = 0
    source: str = "<string>"

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.source, self.line)


def parse_decls(text: str, source: str = "<string>") -> list[Decl]:
    decls = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        lexer = shlex.shlex(raw, posix=True)
        lexer.whitespace_split = True
        lexer.commenters = "#"
        try:
            tokens = list(lexer)
        except ValueError as exc:
            raise ParseError(str(exc), source, lineno, len(raw) + 1) from None
        if not tokens:
            continue
        directive, rest = tokens[0], tokens[1:]
        if not _KEY_RE.match(directive):
            raise ParseError(f"bad directive {directive!r}", source, lineno, _column(raw, directive))
        attrs: dict[str, str] = {}
        for tok in rest:
            key, sep, value = tok.partition("=")
            if not sep or not _KEY_RE.match(key):
                raise ParseError(f"expected key=value, got {tok!r}", source, lineno, _column(raw, tok))
            if key in attrs:
                raise ParseError(f"duplicate key {key!r}", source, lineno, _column(raw, tok))
            attrs[key] = value
        decls.append(Decl(directive, attrs, lineno, source))
    return decls


def _column(raw: str, token: str) -> int:
    idx = raw.find(token.split("=")[0])
    return idx + 1 if idx >= 0 else 1


def quote(value: str) -> str:
    if _SAFE_VALUE_RE.match(value):
        return value
    return shlex.quote(value)


def format_decl(directive: str, attrs: list[tuple[str, str]]) -> str:
    parts = [directive] + [f"{k}={quote(v)}" for k, v in attrs]
    return " ".join(parts)
