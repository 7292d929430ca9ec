"""Hand-rolled lexer for the mini language."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MiniLangSyntaxError

# Two-character operators must be matched before their one-character prefixes.
TWO_CHAR = ("=>", "==", "!=", "<=", ">=", "<<", ">>", "&&", "||")
ONE_CHAR = "(){},;.?:=+-*/%<>"

KEYWORDS = {"return", "true", "false"}


@dataclass(frozen=True)
class Token:
    type: str  # "ident", "number", "string", "keyword", or the operator text
    text: str
    pos: int
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    line = 1
    col = 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start, start_line, start_col = i, line, col
        if ch.isdigit():
            j = i + 1
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            tokens.append(Token("number", source[i:j], start, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch == '"':
            j = i + 1
            while j < n and source[j] not in '"\n':
                j += 1
            if j >= n or source[j] != '"':
                raise MiniLangSyntaxError("unterminated string", start_line, start_col, ('"',))
            j += 1
            tokens.append(Token("string", source[i:j], start, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i + 1
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            ttype = "keyword" if text in KEYWORDS else "ident"
            tokens.append(Token(ttype, text, start, start_line, start_col))
            col += j - i
            i = j
            continue
        two = source[i : i + 2]
        if two in TWO_CHAR:
            tokens.append(Token(two, two, start, start_line, start_col))
            i += 2
            col += 2
            continue
        if ch in ONE_CHAR:
            tokens.append(Token(ch, ch, start, start_line, start_col))
            i += 1
            col += 1
            continue
        raise MiniLangSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(Token("eof", "", n, line, col))
    return tokens


def token_words(source: str) -> list[str]:
    """Token texts without the trailing eof; used for 3-gram deduplication."""
    return [t.text for t in tokenize(source)[:-1]]
