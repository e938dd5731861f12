"""Small dense-ARFF reader.

Only what OpenML serves for tabular datasets, split files and prediction
files: numeric/real/integer, nominal and string attributes, ``?`` for
missing, single or double quoted values and ``%`` comments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


class ArffParseError(ValueError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


@dataclass(frozen=True)
class ArffAttribute:
    name: str
    type: str  # "numeric", "nominal" or "string"
    values: tuple[str, ...] = ()


@dataclass
class ArffData:
    relation: str
    attributes: list[ArffAttribute]
    rows: list[list]  # numeric -> float, nominal/string -> str, missing -> None

    def column(self, name: str) -> list:
        j = self.index(name)
        return [r[j] for r in self.rows]

    def index(self, name: str) -> int:
        for j, a in enumerate(self.attributes):
            if a.name == name:
                return j
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]


def _split_values(text: str, offset: int) -> list[tuple[str, bool]]:
    """Split a comma separated ARFF line into (token, was_quoted) pairs."""
    if "'" not in text and '"' not in text:
        return [(t.strip(), False) for t in text.split(",")]
    out = []
    i, n = 0, len(text)
    while i <= n:
        while i < n and text[i] in " \t":
            i += 1
        if i < n and text[i] in "'\"":
            quote = text[i]
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise ArffParseError("unterminated quoted value", offset)
                ch = text[i]
                if ch == "\\" and i + 1 < n:
                    buf.append(text[i + 1])
                    i += 2
                    continue
                if ch == quote:
                    i += 1
                    break
                buf.append(ch)
                i += 1
            out.append(("".join(buf), True))
            while i < n and text[i] in " \t":
                i += 1
            if i < n and text[i] != ",":
                raise ArffParseError("garbage after quoted value", offset)
        else:
            j = text.find(",", i)
            j = n if j == -1 else j
            out.append((text[i:j].strip(), False))
            i = j
        i += 1
    return out


def _parse_attribute(rest: str, offset: int) -> ArffAttribute:
    rest = rest.strip()
    if rest[:1] in "'\"":
        quote = rest[0]
        end = rest.find(quote, 1)
        while end != -1 and rest[end - 1] == "\\":
            end = rest.find(quote, end + 1)
        if end == -1:
            raise ArffParseError("unterminated attribute name", offset)
        name, kind = rest[1:end].replace("\\" + quote, quote), rest[end + 1:].strip()
    else:
        parts = rest.split(None, 1)
        if len(parts) != 2:
            raise ArffParseError(f"malformed @attribute line: {rest!r}", offset)
        name, kind = parts
    if kind.startswith("{"):
        if not kind.endswith("}"):
            raise ArffParseError(f"unterminated nominal list for {name!r}", offset)
        values = tuple(t for t, _ in _split_values(kind[1:-1], offset))
        return ArffAttribute(name, "nominal", values)
    lowered = kind.lower()
    if lowered in ("numeric", "real", "integer"):
        return ArffAttribute(name, "numeric")
    if lowered == "string":
        return ArffAttribute(name, "string")
    raise ArffParseError(f"unsupported attribute type {kind!r} for {name!r}", offset)


def parse_arff(data) -> ArffData:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ArffParseError("not valid UTF-8", e.start) from None
    else:
        text = data
    relation = ""
    attributes: list[ArffAttribute] = []
    rows: list[list] = []
    in_data = False
    offset = 0
    for raw in text.splitlines(keepends=True):
        line_offset = offset
        offset += len(raw.encode("utf-8")) if not raw.isascii() else len(raw)
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        if not in_data:
            head = line.split(None, 1)
            key = head[0].lower()
            if key == "@relation":
                relation = head[1].strip().strip("'\"") if len(head) > 1 else ""
            elif key == "@attribute":
                if len(head) < 2:
                    raise ArffParseError("empty @attribute line", line_offset)
                attributes.append(_parse_attribute(head[1], line_offset))
            elif key == "@data":
                if not attributes:
                    raise ArffParseError("@data before any @attribute", line_offset)
                in_data = True
            else:
                raise ArffParseError(f"unexpected header line {line[:40]!r}", line_offset)
            continue
        if line.startswith("{"):
            raise ArffParseError("sparse ARFF rows are not supported", line_offset)
        tokens = _split_values(line, line_offset)
        if len(tokens) != len(attributes):
            raise ArffParseError(
                f"row has {len(tokens)} values, header declares {len(attributes)} attributes",
                line_offset)
        row = []
        for (tok, quoted), attr in zip(tokens, attributes):
            if tok == "?" and not quoted:
                row.append(None)
            elif attr.type == "numeric":
                try:
                    row.append(float(tok))
                except ValueError:
                    raise ArffParseError(
                        f"non-numeric value {tok!r} for attribute {attr.name!r}", line_offset) from None
            elif attr.type == "nominal" and tok not in attr.values:
                raise ArffParseError(
                    f"value {tok!r} not declared for nominal attribute {attr.name!r}", line_offset)
            else:
                row.append(tok)
        rows.append(row)
    if not in_data:
        raise ArffParseError("no @data section", offset)
    return ArffData(relation, attributes, rows)
