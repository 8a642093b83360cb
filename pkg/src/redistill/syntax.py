"""Text syntax for meshes and distributed types.

Grammar (whitespace-insensitive, names bare or double-quoted):

    mesh  := "mesh"? "{" [ axis ("," axis)* ] "}"
    axis  := name ":" INT
    type  := "[" [ dim ("," dim)* ] "]"
    dim   := INT [ "{" [ name ("," name)* ] "}" INT ]

A bare integer dimension is unpartitioned (tile = global, no axes).
Printing via ``str()`` on Mesh / DistType round-trips through parsing.
"""

from __future__ import annotations

from .core import DistDim, DistType, Mesh
from .errors import ParseError

_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | set("0123456789.")


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.line, self.col)

    def _advance(self, n: int) -> None:
        for ch in self.text[self.pos : self.pos + n]:
            if ch == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.pos += n

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self._advance(1)

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            found = self.peek() or "end of input"
            raise self.error(f"expected {ch!r}, found {found!r}")
        self._advance(1)

    def try_take(self, ch: str) -> bool:
        if self.peek() == ch:
            self._advance(1)
            return True
        return False

    def take_int(self) -> int:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self._advance(1)
        if self.pos == start:
            raise self.error("expected an integer")
        return int(self.text[start : self.pos])

    def take_name(self) -> str:
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] == '"':
            self._advance(1)
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos] != '"':
                self._advance(1)
            if self.pos >= len(self.text):
                raise self.error("unterminated quoted name")
            name = self.text[start : self.pos]
            self._advance(1)
            if not name:
                raise self.error("empty quoted name")
            return name
        if self.pos >= len(self.text) or self.text[self.pos] not in _IDENT_START:
            found = self.peek() or "end of input"
            raise self.error(f"expected an axis name, found {found!r}")
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in _IDENT_CONT:
            self._advance(1)
        return self.text[start : self.pos]

    def take_keyword(self, word: str) -> bool:
        self.skip_ws()
        end = self.pos + len(word)
        if self.text[self.pos : end] == word and (
            end >= len(self.text) or self.text[end] not in _IDENT_CONT
        ):
            self._advance(len(word))
            return True
        return False

    def expect_end(self) -> None:
        self.skip_ws()
        if self.pos < len(self.text):
            raise self.error(f"unexpected trailing input {self.text[self.pos:][:20]!r}")


def parse_mesh(text: str) -> Mesh:
    tok = _Tokenizer(text)
    tok.take_keyword("mesh")
    tok.expect("{")
    axes: list[tuple[str, int]] = []
    if not tok.try_take("}"):
        while True:
            name = tok.take_name()
            tok.expect(":")
            size = tok.take_int()
            axes.append((name, size))
            if tok.try_take("}"):
                break
            tok.expect(",")
    tok.expect_end()
    return Mesh(tuple(axes))


def _parse_dim(tok: _Tokenizer) -> DistDim:
    first = tok.take_int()
    if tok.peek() != "{":
        return DistDim.replicated(first)
    tok.expect("{")
    axes: list[str] = []
    if not tok.try_take("}"):
        while True:
            axes.append(tok.take_name())
            if tok.try_take("}"):
                break
            tok.expect(",")
    size = tok.take_int()
    return DistDim(first, tuple(axes), size)


def parse_type(text: str) -> DistType:
    tok = _Tokenizer(text)
    tok.expect("[")
    dims: list[DistDim] = []
    if not tok.try_take("]"):
        while True:
            dims.append(_parse_dim(tok))
            if tok.try_take("]"):
                break
            tok.expect(",")
    tok.expect_end()
    return DistType(tuple(dims))
