"""Token vocabularies for table markup and cell text.

Structure tokens are literal HTML fragments: plain cells collapse to a single
``<td></td>`` token, while cells carrying a span attribute split into the
opening fragment, one token per attribute, ``>``, and ``</td>``.  Cell text is
tokenized per character over a small fixed alphabet.
"""

from __future__ import annotations

from dataclasses import dataclass
from html.parser import HTMLParser

PAD = "<pad>"
SOS = "<sos>"
EOS = "<eos>"
SEP = "<sep>"
UNK = "<unk>"

MAX_SPAN = 10
ALPHABET = " abcdefghijklmnopqrstuvwxyz0123456789.,-%"
UNK_CHAR = "?"

TD_OPEN = "<td"
TD_MERGED = "<td></td>"
TD_CLOSE = "</td>"
TR_OPEN = "<tr>"
TR_CLOSE = "</tr>"
GT = ">"


@dataclass(frozen=True)
class Vocab:
    """Immutable token table; ids are dense and reserved tokens come first."""

    kind: str
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self._index()[token]

    def _index(self) -> dict[str, int]:
        # frozen dataclass: cache on the instance via object.__setattr__
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {t: i for i, t in enumerate(self.tokens)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def get(self, token: str, default: int | None = None) -> int | None:
        return self._index().get(token, default)

    def decode(self, token_id: int) -> str:
        return self.tokens[token_id]

    @property
    def pad(self) -> int:
        return self._index()[PAD]

    @property
    def sos(self) -> int:
        return self._index()[SOS]

    @property
    def eos(self) -> int:
        return self._index()[EOS]

    def to_file(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                if "\n" in tok:
                    raise ValueError(f"token contains newline: {tok!r}")
                fh.write(tok + "\n")

    @classmethod
    def from_file(cls, path: str, kind: str) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = tuple(line[:-1] if line.endswith("\n") else line for line in fh)
        tokens = tuple(t for t in tokens if t != "")
        return cls(kind=kind, tokens=tokens)


def _structure_tokens() -> tuple[str, ...]:
    spans = [f' colspan="{k}"' for k in range(2, MAX_SPAN + 1)]
    spans += [f' rowspan="{k}"' for k in range(2, MAX_SPAN + 1)]
    return tuple(
        [PAD, SOS, EOS, TR_OPEN, TR_CLOSE, TD_MERGED, TD_OPEN] + spans + [GT, TD_CLOSE]
    )


def _content_tokens() -> tuple[str, ...]:
    return tuple([PAD, SOS, EOS, SEP, UNK] + list(ALPHABET))


STRUCTURE = Vocab(kind="structure", tokens=_structure_tokens())
CONTENT = Vocab(kind="content", tokens=_content_tokens())

SEP_ID = CONTENT[SEP]
UNK_ID = CONTENT[UNK]


@dataclass(frozen=True)
class TokenSeq:
    """A token id sequence tagged with its vocabulary and reading direction."""

    kind: str  # "structure" | "content"
    ids: tuple[int, ...]
    direction: str = "ltor"  # "ltor" | "rtol"

    def __post_init__(self) -> None:
        if self.kind not in ("structure", "content"):
            raise ValueError(f"unknown vocabulary kind: {self.kind!r}")
        if self.direction not in ("ltor", "rtol"):
            raise ValueError(f"unknown direction: {self.direction!r}")
        vocab = STRUCTURE if self.kind == "structure" else CONTENT
        n = len(vocab)
        for i in self.ids:
            if not 0 <= i < n:
                raise ValueError(f"token id {i} out of range for {self.kind} vocab")

    def __len__(self) -> int:
        return len(self.ids)

    def reversed(self) -> "TokenSeq":
        other = "rtol" if self.direction == "ltor" else "ltor"
        return TokenSeq(self.kind, tuple(reversed(self.ids)), other)

    def validate(self) -> None:
        """At most one EOS; nothing but PAD may follow it."""
        vocab = STRUCTURE if self.kind == "structure" else CONTENT
        seen_eos = False
        for i in self.ids:
            if seen_eos and i != vocab.pad:
                raise ValueError("token after EOS that is not PAD")
            if i == vocab.eos:
                if seen_eos:
                    raise ValueError("multiple EOS tokens")
                seen_eos = True


class _TableParser(HTMLParser):
    """Strict parser for the supported table subset; anything else is an error."""

    ALLOWED_ATTRS = ("colspan", "rowspan")

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.ids: list[int] = []
        self.stack: list[str] = []  # open tags: table / tr / td
        self.cell_texts: list[str] = []
        self._text: list[str] | None = None
        self._pending: list[int] = []
        self.saw_table = False

    def _fail(self, msg: str) -> None:
        line, col = self.getpos()
        raise ValueError(f"line {line}, column {col}: {msg}")

    def handle_starttag(self, tag: str, attrs: list[tuple[str, str | None]]) -> None:
        if tag == "table":
            if self.stack or self.saw_table:
                self._fail("unexpected <table>")
            self.stack.append("table")
            self.saw_table = True
        elif tag == "tr":
            if self.stack != ["table"]:
                self._fail("<tr> outside <table>")
            self.stack.append("tr")
            self.ids.append(STRUCTURE[TR_OPEN])
        elif tag == "td":
            if self.stack != ["table", "tr"]:
                self._fail("<td> outside <tr>")
            self.stack.append("td")
            self._text = []
            self._emit_td(attrs)
        else:
            self._fail(f"unsupported tag <{tag}>")

    def _emit_td(self, attrs: list[tuple[str, str | None]]) -> None:
        spans: dict[str, int] = {}
        for name, value in attrs:
            if name not in self.ALLOWED_ATTRS:
                self._fail(f"unsupported attribute {name!r} on <td>")
            if name in spans:
                self._fail(f"duplicate attribute {name!r}")
            try:
                k = int(value) if value is not None else 1
            except ValueError:
                self._fail(f"non-integer {name}={value!r}")
                return
            if not 1 <= k <= MAX_SPAN:
                self._fail(f"{name}={k} outside 1..{MAX_SPAN}")
            spans[name] = k
        spans = {n: k for n, k in spans.items() if k > 1}
        if not spans:
            self._pending = [STRUCTURE[TD_MERGED]]
            return
        ids = [STRUCTURE[TD_OPEN]]
        for name in self.ALLOWED_ATTRS:  # canonical order: colspan then rowspan
            if name in spans:
                ids.append(STRUCTURE[f' {name}="{spans[name]}"'])
        ids.append(STRUCTURE[GT])
        self._pending = ids

    def handle_endtag(self, tag: str) -> None:
        if not self.stack or self.stack[-1] != tag:
            self._fail(f"mismatched </{tag}>")
        self.stack.pop()
        if tag == "td":
            self.ids.extend(self._pending)
            if self._pending != [STRUCTURE[TD_MERGED]]:
                self.ids.append(STRUCTURE[TD_CLOSE])
            self._pending = []
            self.cell_texts.append("".join(self._text or []))
            self._text = None
        elif tag == "tr":
            self.ids.append(STRUCTURE[TR_CLOSE])

    def handle_startendtag(self, tag: str, attrs) -> None:
        self.handle_starttag(tag, attrs)
        self.handle_endtag(tag)

    def handle_data(self, data: str) -> None:
        if self._text is not None:
            self._text.append(data)
        elif data.strip():
            self._fail(f"text outside <td>: {data.strip()[:20]!r}")


def parse_table(html: str) -> tuple[list[int], list[str]]:
    """Parse a table into (structure token ids, per-cell text).

    Raises ValueError with line/column on any construct outside the
    supported subset (nested tables, unknown tags, stray text, bad spans).
    """
    parser = _TableParser()
    parser.feed(html)
    parser.close()
    if parser.stack:
        raise ValueError(f"unclosed tag <{parser.stack[-1]}>")
    if not parser.saw_table:
        raise ValueError("no <table> element found")
    return parser.ids, parser.cell_texts


def tokenize_structure(html: str) -> TokenSeq:
    """Structure tokens of a table; cell text is ignored here."""
    ids, _ = parse_table(html)
    return TokenSeq("structure", tuple(ids))


_SPAN_IDS = frozenset(
    STRUCTURE[f' {name}="{k}"'] for name in ("colspan", "rowspan") for k in range(2, MAX_SPAN + 1)
)


def iter_cells(ids) -> list[int]:
    """Positions of cell-final tokens (<td></td> or </td>), one per cell, in order."""
    merged, close = STRUCTURE[TD_MERGED], STRUCTURE[TD_CLOSE]
    return [i for i, t in enumerate(ids) if t in (merged, close)]


def detokenize_structure(seq: TokenSeq | list[int] | tuple[int, ...]) -> str:
    """Rebuild the HTML string; rejects sequences no parse could produce."""
    ids = seq.ids if isinstance(seq, TokenSeq) else tuple(seq)
    _validate_structure(ids)
    return "<table>" + "".join(STRUCTURE.decode(i) for i in ids) + "</table>"


def _validate_structure(ids: tuple[int, ...]) -> None:
    tr_open, tr_close = STRUCTURE[TR_OPEN], STRUCTURE[TR_CLOSE]
    merged, td_open, gt, td_close = (
        STRUCTURE[TD_MERGED],
        STRUCTURE[TD_OPEN],
        STRUCTURE[GT],
        STRUCTURE[TD_CLOSE],
    )
    colspan_ids = frozenset(STRUCTURE[f' colspan="{k}"'] for k in range(2, MAX_SPAN + 1))
    rowspan_ids = frozenset(STRUCTURE[f' rowspan="{k}"'] for k in range(2, MAX_SPAN + 1))
    i, n = 0, len(ids)
    while i < n:
        if ids[i] != tr_open:
            raise ValueError(f"position {i}: expected {TR_OPEN}, got {STRUCTURE.decode(ids[i])!r}")
        i += 1
        while i < n and ids[i] != tr_close:
            if ids[i] == merged:
                i += 1
            elif ids[i] == td_open:
                i += 1
                saw_span = False
                if i < n and ids[i] in colspan_ids:
                    saw_span = True
                    i += 1
                if i < n and ids[i] in rowspan_ids:
                    saw_span = True
                    i += 1
                if not saw_span:
                    raise ValueError(f"position {i}: {TD_OPEN} without span attribute")
                if i >= n or ids[i] != gt:
                    raise ValueError(f"position {i}: expected {GT!r} after span attributes")
                i += 1
                if i >= n or ids[i] != td_close:
                    raise ValueError(f"position {i}: expected {TD_CLOSE} after {GT!r}")
                i += 1
            else:
                raise ValueError(
                    f"position {i}: unexpected {STRUCTURE.decode(ids[i])!r} inside row"
                )
        if i >= n:
            raise ValueError("unterminated row")
        i += 1  # consume tr_close


def render_html(structure_ids, cell_texts) -> str:
    """Lenient rendering of (possibly malformed) predicted tokens with cell text.

    Cell text is inserted at each cell-final token in order; left-over texts
    are dropped and missing ones render empty.  No validation: garbage tokens
    are concatenated as-is so downstream metrics can penalize them.
    """
    merged, close = STRUCTURE[TD_MERGED], STRUCTURE[TD_CLOSE]
    out: list[str] = ["<table>"]
    cell = 0
    for t in structure_ids:
        frag = STRUCTURE.decode(t)
        text = ""
        if t in (merged, close):
            text = cell_texts[cell] if cell < len(cell_texts) else ""
            cell += 1
        if t == merged and text:
            out.append(f"<td>{_escape(text)}</td>")
        elif t == close:
            out.append(_escape(text) + frag)
        else:
            out.append(frag)
    out.append("</table>")
    return "".join(out)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def tokenize_content(text: str) -> TokenSeq:
    """One id per character; characters outside the alphabet map to <unk>."""
    idx = CONTENT._index()
    ids = tuple(idx.get(ch, UNK_ID) for ch in text)
    return TokenSeq("content", ids)


def detokenize_content(ids) -> str:
    """Characters back from ids; <unk> renders as '?', other specials as ''."""
    out = []
    for i in ids:
        tok = CONTENT.decode(i)
        if len(tok) == 1:
            out.append(tok)
        elif i == UNK_ID:
            out.append(UNK_CHAR)
    return "".join(out)


def concat_cells(cells: list[TokenSeq]) -> TokenSeq:
    """Join per-cell content sequences into one stream, one <sep> after each cell.

    Rejects input cells that already contain <sep>; the joined stream is the
    cell decoder's target layout and must allow unambiguous splitting.
    """
    ids: list[int] = []
    for k, cell in enumerate(cells):
        if cell.kind != "content":
            raise ValueError("concat_cells expects content sequences")
        if SEP_ID in cell.ids:
            raise ValueError(f"cell {k} already contains {SEP}")
        ids.extend(cell.ids)
        ids.append(SEP_ID)
    return TokenSeq("content", tuple(ids))


def split_cells(seq: TokenSeq | tuple[int, ...] | list[int]) -> list[list[int]]:
    """Inverse of concat_cells: split at each <sep>; trailing partial is dropped."""
    ids = seq.ids if isinstance(seq, TokenSeq) else tuple(seq)
    cells: list[list[int]] = []
    cur: list[int] = []
    for i in ids:
        if i == SEP_ID:
            cells.append(cur)
            cur = []
        else:
            cur.append(i)
    return cells
