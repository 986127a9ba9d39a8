"""
Output parsers: turn free LLM text into item lists.

Every parsed item is a slice of the raw text (after trimming), so parsing
never invents content.
"""

import re
from typing import List, Optional

_NUMBERING = re.compile(r'^\s*(?:[-*•]+|\(?\d+[.):])\s+')
_STRIP = " \t`'\".;"
_SENTINEL = re.compile(
    r'^\s*(?:none(?:\s+of\s+(?:these|them|the\s+above))?|no\s+answer|continue|n/a)\b',
    re.IGNORECASE,
)
_ANSWER_LEAD = re.compile(r'\banswers?\s*:\s*', re.IGNORECASE)
_FENCE = re.compile(r'```[ \t]*(?:sparql)?[ \t]*\n?(.*?)```', re.IGNORECASE | re.DOTALL)
_QUERY_START = re.compile(r'\b(?:PREFIX|BASE|SELECT|ASK|CONSTRUCT|DESCRIBE)\b')
_QUERY_LINE_START = re.compile(
    r'^[ \t]*(?:prefix|base|select|ask|construct|describe)\b', re.IGNORECASE | re.MULTILINE)
_MODIFIERS = re.compile(
    r'(?:\s*(?:GROUP\s+BY|ORDER\s+BY|HAVING|LIMIT|OFFSET)\b[^\n{}]*)+', re.IGNORECASE)
_IRI = re.compile(r'<[^\s<>"{}|^`\\]*>')


def _clean(item: str) -> str:
    item = _NUMBERING.sub("", item, count=1)
    return item.strip(_STRIP)


def parse_lines(raw: str, split_commas: bool = False) -> List[str]:
    """Newline, numbered-list and bulleted-list split; optional comma split"""
    items = []
    for line in raw.splitlines():
        pieces = line.split(",") if split_commas else [line]
        for piece in pieces:
            cleaned = _clean(piece)
            if cleaned:
                items.append(cleaned)
    return items


def parse_list(raw: str) -> List[str]:
    return parse_lines(raw, split_commas=True)


def parse_answer(raw: str) -> Optional[List[str]]:
    """
    Entity-filter output: "answer: a; b" (or one item per line).
    None means the model chose to continue exploring.
    """
    text = raw.strip()
    if not text or _SENTINEL.match(text):
        return None
    match = _ANSWER_LEAD.search(text)
    body = text[match.end():] if match else text
    items = []
    for line in body.splitlines():
        for piece in line.split(";"):
            cleaned = _clean(piece)
            if cleaned:
                items.append(cleaned)
    if not items or all(_SENTINEL.match(item) for item in items):
        return None
    return items


def _balanced_end(text: str, start: int) -> Optional[int]:
    """Index just past the brace that closes the first group opened at/after start"""
    depth, opened, i = 0, False, start
    while i < len(text):
        ch = text[i]
        if ch in "\"'":
            end = text.find(ch, i + 1)
            while end != -1 and text[end - 1] == "\\":
                end = text.find(ch, end + 1)
            if end == -1:
                return None
            i = end + 1
            continue
        if ch == "<":
            iri = _IRI.match(text, i)
            if iri:
                i = iri.end()
                continue
        if ch == "#":
            newline = text.find("\n", i)
            i = len(text) if newline == -1 else newline
            continue
        if ch == "{":
            depth += 1
            opened = True
        elif ch == "}":
            depth -= 1
            if opened and depth == 0:
                return i + 1
        i += 1
    return None


def extract_sparql(raw: str) -> Optional[str]:
    """First fenced block, else the first PREFIX/SELECT/ASK-led block"""
    fenced = _FENCE.search(raw)
    if fenced and fenced.group(1).strip():
        return fenced.group(1).strip()
    start = _QUERY_START.search(raw) or _QUERY_LINE_START.search(raw)
    if not start:
        return None
    end = _balanced_end(raw, start.start())
    if end is None:
        return raw[start.start():].strip()
    trailing = _MODIFIERS.match(raw, end)
    if trailing:
        end = trailing.end()
    return raw[start.start():end].strip()


def parse_sparql(raw: str) -> List[str]:
    query = extract_sparql(raw)
    return [query] if query else []


PARSERS = {
    "lines": parse_lines,
    "list": parse_list,
    "sparql": parse_sparql,
}


def parse_items(parser: str, raw: str) -> List[str]:
    """Dispatch by template parser name; the answer parser flattens None to []"""
    if parser == "answer":
        return parse_answer(raw) or []
    return PARSERS[parser](raw)
