"""Minimal Newick reader and number formatting shared by the tree classes.

The reader returns a flat preorder node table; the typed tree classes in
:mod:`dlcoal_astral.trees` and :mod:`dlcoal_astral.gdl_sim` validate it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class NewickError(ValueError):
    """Malformed Newick input. ``offset`` is the 0-based character position."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at character {offset})"
        super().__init__(message)


@dataclass
class RawNode:
    parent: int
    children: list = field(default_factory=list)
    label: str = ""
    length: float | None = None
    comment: str | None = None
    offset: int = 0


_DELIMS = set("(),:;[]")


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.nodes: list[RawNode] = []

    def error(self, msg, pos=None):
        raise NewickError(msg, self.pos if pos is None else pos)

    def skip_ws(self):
        t = self.text
        while self.pos < len(t) and t[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def read_label(self):
        self.skip_ws()
        t = self.text
        if self.pos < len(t) and t[self.pos] == "'":
            end = t.find("'", self.pos + 1)
            if end < 0:
                self.error("unterminated quoted label")
            label = t[self.pos + 1 : end]
            self.pos = end + 1
            return label
        start = self.pos
        while self.pos < len(t) and t[self.pos] not in _DELIMS and not t[self.pos].isspace():
            self.pos += 1
        return t[start : self.pos]

    def read_comment(self):
        if self.peek() != "[":
            return None
        start = self.pos
        end = self.text.find("]", start)
        if end < 0:
            self.error("unterminated comment")
        self.pos = end + 1
        return self.text[start + 1 : end]

    def read_length(self):
        if self.peek() != ":":
            return None
        self.pos += 1
        self.skip_ws()
        start = self.pos
        t = self.text
        while self.pos < len(t) and t[self.pos] not in _DELIMS and not t[self.pos].isspace():
            self.pos += 1
        token = t[start : self.pos]
        try:
            value = float(token)
        except ValueError:
            self.error(f"non-numeric branch length {token!r}", start)
        if not math.isfinite(value):
            self.error(f"non-finite branch length {token!r}", start)
        return value

    def subtree(self, parent):
        idx = len(self.nodes)
        node = RawNode(parent=parent, offset=self.pos)
        self.nodes.append(node)
        if self.peek() == "(":
            self.pos += 1
            while True:
                node.children.append(self.subtree(idx))
                c = self.peek()
                if c == ",":
                    self.pos += 1
                elif c == ")":
                    self.pos += 1
                    break
                else:
                    self.error("expected ',' or ')'")
        node.label = self.read_label()
        comment = self.read_comment()
        node.length = self.read_length()
        if comment is None:
            comment = self.read_comment()
        node.comment = comment
        if not node.children and not node.label:
            self.error("empty leaf label", node.offset)
        return idx


def read_newick(text: str) -> list[RawNode]:
    """Parse one ``;``-terminated Newick statement into a preorder node list."""
    reader = _Reader(text)
    if reader.peek() == "":
        raise NewickError("empty input", 0)
    reader.subtree(-1)
    if reader.peek() != ";":
        reader.error("expected ';' at end of tree")
    reader.pos += 1
    if reader.peek() != "":
        reader.error("trailing characters after ';'")
    return reader.nodes


def fmt_length(x: float) -> str:
    """Shortest decimal that round-trips the double exactly."""
    return repr(float(x))
