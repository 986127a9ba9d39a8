"""
HopLink SPARQL Support
Dialect profiles, structural validation, term extraction, result parsing and
endpoint clients (HTTP and fixture-driven).

Validation is structural only: balanced delimiters, one query form, a group
pattern and resolvable prefixes. The endpoint remains the final arbiter.
"""

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Set, Tuple, Union

import requests

from shared.errors import BackendError, ConfigurationError, SparqlExecutionError, SparqlParseError

logger = logging.getLogger(__name__)

COMMON_PREFIXES = {
    "rdf": "http://www.w3.org/1999/02/22-rdf-syntax-ns#",
    "rdfs": "http://www.w3.org/2000/01/rdf-schema#",
    "xsd": "http://www.w3.org/2001/XMLSchema#",
    "owl": "http://www.w3.org/2002/07/owl#",
    "foaf": "http://xmlns.com/foaf/0.1/",
    "skos": "http://www.w3.org/2004/02/skos/core#",
    "schema": "http://schema.org/",
}

_NUMERIC_TYPES = {
    COMMON_PREFIXES["xsd"] + name
    for name in ("integer", "decimal", "double", "float", "int", "long", "short",
                 "nonNegativeInteger", "positiveInteger", "negativeInteger", "nonPositiveInteger",
                 "unsignedInt", "unsignedLong", "byte", "gYear")
}


@dataclass(frozen=True)
class Dialect:
    name: str
    prefixes: Dict[str, str]
    entity_namespaces: Tuple[str, ...] = ()
    property_namespaces: Tuple[str, ...] = ()
    local_names: bool = False
    literal_entities: bool = False
    ignored_predicates: Tuple[str, ...] = ()

    def display(self, iri: str) -> str:
        """How a term is reported: Q-ids/P-ids for Wikidata, full IRIs otherwise"""
        if self.local_names:
            return re.split(r"[/#]", iri)[-1]
        return iri

    def is_entity(self, iri: str) -> bool:
        return any(iri.startswith(ns) for ns in self.entity_namespaces)

    def is_property(self, iri: str) -> bool:
        if any(iri.startswith(ns) for ns in self.ignored_predicates):
            return False
        if not self.property_namespaces:
            return True
        return any(iri.startswith(ns) for ns in self.property_namespaces)


_WD = "http://www.wikidata.org/"
_DBPEDIA = "http://dbpedia.org/"

DIALECTS: Dict[str, Dialect] = {
    "wikidata": Dialect(
        name="wikidata",
        prefixes={**COMMON_PREFIXES,
                  "wd": _WD + "entity/",
                  "wdt": _WD + "prop/direct/",
                  "p": _WD + "prop/",
                  "ps": _WD + "prop/statement/",
                  "pq": _WD + "prop/qualifier/",
                  "pr": _WD + "prop/reference/",
                  "psv": _WD + "prop/statement/value/",
                  "pqv": _WD + "prop/qualifier/value/",
                  "wikibase": "http://wikiba.se/ontology#",
                  "bd": "http://www.bigdata.com/rdf#",
                  "prov": "http://www.w3.org/ns/prov#"},
        entity_namespaces=(_WD + "entity/Q",),
        property_namespaces=(_WD + "prop/",),
        local_names=True,
    ),
    "dbpedia-2016": Dialect(
        name="dbpedia-2016",
        prefixes={**COMMON_PREFIXES,
                  "dbr": _DBPEDIA + "resource/",
                  "res": _DBPEDIA + "resource/",
                  "dbc": _DBPEDIA + "resource/Category:",
                  "dbo": _DBPEDIA + "ontology/",
                  "onto": _DBPEDIA + "ontology/",
                  "dbp": _DBPEDIA + "property/",
                  "prop": _DBPEDIA + "property/"},
        entity_namespaces=(_DBPEDIA + "resource/",),
        property_namespaces=(_DBPEDIA + "ontology/", _DBPEDIA + "property/"),
    ),
    "kqapro-literal": Dialect(
        name="kqapro-literal",
        prefixes=dict(COMMON_PREFIXES),
        literal_entities=True,
        ignored_predicates=("pred:", COMMON_PREFIXES["rdf"], COMMON_PREFIXES["rdfs"]),
    ),
}


def get_dialect(name: Union[str, Dialect]) -> Dialect:
    if isinstance(name, Dialect):
        return name
    dialect = DIALECTS.get(name)
    if dialect is None:
        raise ConfigurationError(f"unknown SPARQL dialect '{name}' (known: {', '.join(DIALECTS)})")
    return dialect


# ----- tokenizer --------------------------------------------------------------

class Token(NamedTuple):
    kind: str
    text: str
    pos: int


_TOKEN_SPEC = [
    ("WS", r"\s+"),
    ("COMMENT", r"#[^\n]*"),
    ("IRI", r"<[^<>\"{}|^`\\\s]*>"),
    ("STRING", r'"""(?:[^"\\]|\\.|"(?!""))*"""|\'\'\'(?:[^\'\\]|\\.|\'(?!\'\'))*\'\'\''
               r'|"(?:[^"\\\n]|\\.)*"|\'(?:[^\'\\\n]|\\.)*\''),
    ("LANG", r"@[A-Za-z]+(?:-[A-Za-z0-9]+)*"),
    ("DTYPE", r"\^\^"),
    ("VAR", r"[?$]\w+"),
    ("PNAME", r"(?:[A-Za-z][\w.-]*[\w-]|[A-Za-z])?:(?:[\w%\\-](?:[\w.%:\\-]*[\w%:\\-])?)?"),
    ("NUMBER", r"[+-]?(?:\d+\.\d+|\.\d+|\d+)(?:[eE][+-]?\d+)?"),
    ("WORD", r"[A-Za-z_][A-Za-z_0-9]*"),
    ("PUNCT", r"\|\||&&|!=|<=|>=|[{}()\[\].;,=<>!|/^*+?-]"),
    ("ERROR", r"."),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC), re.DOTALL)

FORMS = {"SELECT", "ASK", "CONSTRUCT", "DESCRIBE"}
_OPEN = {"{": "}", "(": ")", "[": "]"}
_CLOSE = {v: k for k, v in _OPEN.items()}


def tokenize(text: str) -> List[Token]:
    tokens = []
    for match in _TOKEN_RE.finditer(text):
        kind = match.lastgroup
        if kind in ("WS", "COMMENT"):
            continue
        tokens.append(Token(kind, match.group(), match.start()))
    return tokens


def _declared_prefixes(tokens: List[Token]) -> Dict[str, str]:
    declared = {}
    for i, tok in enumerate(tokens[:-2]):
        if tok.kind == "WORD" and tok.text.upper() == "PREFIX" and tokens[i + 1].kind == "PNAME" \
                and tokens[i + 2].kind == "IRI":
            declared[tokens[i + 1].text.split(":", 1)[0]] = tokens[i + 2].text[1:-1]
    return declared


def _literal_value(text: str) -> str:
    body = text[3:-3] if text[:3] in ('"""', "'''") else text[1:-1]
    return re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t", "r": "\r"}.get(m.group(1), m.group(1)), body)


def validate_sparql(text: str, dialect: Union[str, Dialect] = "wikidata") -> List[str]:
    """Structural problems found in a query; an empty list means valid"""
    dialect = get_dialect(dialect)
    if not text or not text.strip():
        return ["empty query"]
    tokens = tokenize(text)
    problems = []

    errors = [t for t in tokens if t.kind == "ERROR"]
    for tok in errors[:3]:
        what = "unterminated string" if tok.text in "\"'" else f"unexpected character {tok.text!r}"
        problems.append(f"{what} at offset {tok.pos}")

    stack: List[Token] = []
    for tok in tokens:
        if tok.kind != "PUNCT":
            continue
        if tok.text in _OPEN:
            stack.append(tok)
        elif tok.text in _CLOSE:
            if not stack or stack[-1].text != _CLOSE[tok.text]:
                problems.append(f"unbalanced '{tok.text}' at offset {tok.pos}")
                break
            stack.pop()
    else:
        if stack:
            problems.append(f"unclosed '{stack[-1].text}' at offset {stack[-1].pos}")

    depth = 0
    forms = []
    group_after_form = False
    for tok in tokens:
        if tok.kind == "PUNCT" and tok.text == "{":
            if forms:
                group_after_form = True
            depth += 1
        elif tok.kind == "PUNCT" and tok.text == "}":
            depth -= 1
        elif tok.kind == "WORD" and depth == 0 and tok.text.upper() in FORMS:
            forms.append(tok.text.upper())
    if len(forms) != 1:
        problems.append(f"expected exactly one query form keyword, found {len(forms)}")
    elif not group_after_form:
        problems.append("missing group pattern")

    known = set(dialect.prefixes) | set(_declared_prefixes(tokens))
    for tok in tokens:
        if tok.kind == "PNAME":
            prefix = tok.text.split(":", 1)[0]
            if prefix not in known:
                problems.append(f"undeclared prefix '{prefix}:'")
                known.add(prefix)
    return problems


def query_form(text: str) -> str:
    tokens = tokenize(text)
    depth = 0
    for i, tok in enumerate(tokens):
        if tok.kind == "PUNCT" and tok.text in "{}":
            depth += 1 if tok.text == "{" else -1
        elif tok.kind == "WORD" and depth == 0 and tok.text.upper() in FORMS:
            form = tok.text.upper()
            if form == "ASK":
                return "ask"
            if form != "SELECT":
                return "other"
            for later in tokens[i + 1:]:
                if later.kind == "PUNCT" and later.text == "{":
                    break
                if later.kind == "WORD" and later.text.upper() == "COUNT":
                    return "count"
            return "select"
    return "other"


# ----- term extraction ----------------------------------------------------------

_SKIP_WORDS = {"OPTIONAL", "UNION", "MINUS", "NOT", "EXISTS", "WHERE", "SILENT", "DISTINCT",
               "REDUCED", "ORDER", "GROUP", "BY", "HAVING", "LIMIT", "OFFSET", "ASC", "DESC"}
_CALL_WORDS = {"FILTER", "BIND"}
_TERM_KINDS = {"IRI", "PNAME", "VAR", "STRING", "NUMBER"}


class _TermWalker:
    """Walks triple patterns, tracking subject/predicate/object position"""

    def __init__(self, tokens: List[Token], dialect: Dialect):
        self.tokens = tokens
        self.dialect = dialect
        self.prefixes = {**dialect.prefixes, **_declared_prefixes(tokens)}
        self.entities: List[str] = []
        self.predicates: List[str] = []

    def _expand(self, tok: Token) -> Optional[str]:
        if tok.kind == "IRI":
            return tok.text[1:-1]
        if tok.kind == "PNAME":
            prefix, local = tok.text.split(":", 1)
            base = self.prefixes.get(prefix)
            return None if base is None else base + local.replace("\\", "")
        return None

    @staticmethod
    def _add(bucket: List[str], value: str) -> None:
        if value not in bucket:
            bucket.append(value)

    def _classify(self, tok: Token, pos: str, typed: bool) -> None:
        if tok.kind == "STRING":
            if pos != "P" and self.dialect.literal_entities and not typed:
                self._add(self.entities, _literal_value(tok.text))
            return
        iri = self._expand(tok)
        if iri is None:
            return
        if pos == "P":
            if self.dialect.is_property(iri):
                self._add(self.predicates, self.dialect.display(iri))
        elif self.dialect.is_entity(iri):
            self._add(self.entities, self.dialect.display(iri))

    def _skip_parens(self, i: int) -> int:
        """Index just past the balanced parenthesis group starting at i"""
        depth = 0
        while i < len(self.tokens):
            text = self.tokens[i].text if self.tokens[i].kind == "PUNCT" else ""
            if text == "(":
                depth += 1
            elif text == ")":
                depth -= 1
                if depth == 0:
                    return i + 1
            i += 1
        return i

    def _values_block(self, i: int) -> int:
        while i < len(self.tokens) and self.tokens[i].text != "{":
            i += 1
        depth = 0
        while i < len(self.tokens):
            tok = self.tokens[i]
            if tok.kind == "PUNCT" and tok.text == "{":
                depth += 1
            elif tok.kind == "PUNCT" and tok.text == "}":
                depth -= 1
                if depth == 0:
                    return i + 1
            elif tok.kind in ("IRI", "PNAME", "STRING"):
                self._classify(tok, "O", self._typed(i))
            i += 1
        return i

    def _typed(self, i: int) -> bool:
        return i + 1 < len(self.tokens) and self.tokens[i + 1].kind == "DTYPE"

    def walk(self) -> Tuple[List[str], List[str]]:
        tokens = self.tokens
        depth, pos, i = 0, "S", 0
        bnodes: List[str] = []
        while i < len(tokens):
            tok = tokens[i]
            word = tok.text.upper() if tok.kind == "WORD" else ""
            if tok.kind == "PUNCT" and tok.text == "{":
                depth += 1
                pos = "S"
            elif tok.kind == "PUNCT" and tok.text == "}":
                depth -= 1
                pos = "S"
            elif depth == 0:
                pass
            elif word in _CALL_WORDS:
                j = i + 1
                while j < len(tokens) and tokens[j].kind == "WORD" and tokens[j].text.upper() in ("NOT", "EXISTS"):
                    j += 1
                if j < len(tokens) and tokens[j].text == "{":
                    i = j
                    continue
                if j < len(tokens) and tokens[j].kind in ("WORD", "PNAME", "IRI"):
                    j += 1
                i = self._skip_parens(j)
                continue
            elif word == "VALUES":
                i = self._values_block(i + 1)
                continue
            elif word == "SELECT":
                while i < len(tokens) and tokens[i].text != "{":
                    i += 1
                continue
            elif word in ("GRAPH", "SERVICE"):
                i += 2 if i + 1 < len(tokens) and tokens[i + 1].kind != "PUNCT" else 1
                if i < len(tokens) and tokens[i].kind == "WORD" and tokens[i].text.upper() == "SILENT":
                    i += 1
                continue
            elif word in _SKIP_WORDS:
                pass
            elif tok.kind == "WORD" and tok.text == "a" and pos == "P":
                pos = "O"
            elif tok.kind in _TERM_KINDS or word in ("TRUE", "FALSE"):
                typed = False
                if tok.kind == "STRING":
                    if i + 1 < len(tokens) and tokens[i + 1].kind == "DTYPE":
                        typed = True
                        i += 2
                    elif i + 1 < len(tokens) and tokens[i + 1].kind == "LANG":
                        i += 1
                self._classify(tok, pos, typed)
                pos = {"S": "P", "P": "O"}.get(pos, "O")
            elif tok.kind == "PUNCT":
                if tok.text == ".":
                    pos = "S"
                elif tok.text == ";":
                    pos = "P"
                elif tok.text == ",":
                    pos = "O"
                elif tok.text in ("/", "|"):
                    pos = "P"
                elif tok.text == "[":
                    bnodes.append(pos)
                    pos = "P"
                elif tok.text == "]":
                    outer = bnodes.pop() if bnodes else "S"
                    pos = {"S": "P", "P": "O"}.get(outer, "O")
            i += 1
        return self.entities, self.predicates


def extract_terms_from_sparql(text: str, dialect: Union[str, Dialect] = "wikidata") -> Tuple[List[str], List[str]]:
    """(entities, predicates) in first-appearance order"""
    dialect = get_dialect(dialect)
    problems = validate_sparql(text, dialect)
    if problems:
        raise SparqlParseError(f"invalid SPARQL: {problems[0]}", problems)
    return _TermWalker(tokenize(text), dialect).walk()


@dataclass
class SparqlQuery:
    text: str
    form: str
    entities: List[str] = field(default_factory=list)
    predicates: List[str] = field(default_factory=list)
    dialect: str = "wikidata"

    @classmethod
    def parse(cls, text: str, dialect: Union[str, Dialect] = "wikidata") -> "SparqlQuery":
        dialect = get_dialect(dialect)
        entities, predicates = extract_terms_from_sparql(text, dialect)
        return cls(text.strip(), query_form(text), entities, predicates, dialect.name)


def build_term_corpus(queries: Iterable[str], dialect: Union[str, Dialect] = "kqapro-literal") -> Tuple[List[str], List[str]]:
    """Sorted entity and predicate terms over a query set; invalid queries are skipped"""
    dialect = get_dialect(dialect)
    entities: Set[str] = set()
    predicates: Set[str] = set()
    skipped = 0
    for text in queries:
        try:
            found_entities, found_predicates = extract_terms_from_sparql(text, dialect)
        except SparqlParseError:
            skipped += 1
            continue
        entities.update(found_entities)
        predicates.update(found_predicates)
    if skipped:
        logger.warning(f"Skipped {skipped} invalid queries while building the term corpus")
    return sorted(entities), sorted(predicates)


# ----- results ---------------------------------------------------------------

class Binding(NamedTuple):
    value: str
    kind: str  # iri | literal | boolean | number


def canonical_number(value: str) -> str:
    """'1999.0' -> '1999'; other strings unchanged"""
    try:
        number = float(value)
    except (TypeError, ValueError):
        return value
    if number != number or number in (float("inf"), float("-inf")):
        return value
    if number.is_integer() and re.fullmatch(r"[+-]?\d+(?:\.0*)?(?:[eE][+-]?\d+)?", value.strip()):
        return str(int(number))
    return value


@dataclass
class BindingSet:
    variables: List[str]
    rows: List[Dict[str, Binding]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def is_boolean(self) -> bool:
        return len(self.rows) == 1 and any(b.kind == "boolean" for b in self.rows[0].values())

    def values(self, dialect: Union[str, Dialect] = "wikidata") -> List[str]:
        """Answer strings: the first projected variable bound in each row"""
        dialect = get_dialect(dialect)
        answers: List[str] = []
        for row in self.rows:
            binding = next((row[v] for v in self.variables if v in row), None)
            if binding is None:
                continue
            if binding.kind == "iri":
                value = dialect.display(binding.value) if dialect.is_entity(binding.value) else binding.value
            elif binding.kind == "number":
                value = canonical_number(binding.value)
            else:
                value = binding.value
            if value not in answers:
                answers.append(value)
        return answers


def parse_results(payload: Dict[str, Any]) -> BindingSet:
    """Standard SPARQL 1.1 JSON results (head.vars + results.bindings, or boolean)"""
    if not isinstance(payload, dict):
        raise ValueError("results JSON must be an object")
    if "boolean" in payload:
        flag = "true" if payload["boolean"] in (True, "true") else "false"
        return BindingSet(["ask"], [{"ask": Binding(flag, "boolean")}])
    variables = list(payload.get("head", {}).get("vars", []))
    rows = []
    for raw in payload.get("results", {}).get("bindings", []):
        row = {}
        for name, cell in raw.items():
            if name not in variables:
                raise ValueError(f"binding for undeclared variable '{name}'")
            kind = cell.get("type")
            value = str(cell.get("value", ""))
            if kind == "uri":
                row[name] = Binding(value, "iri")
            elif kind in ("literal", "typed-literal") and cell.get("datatype") in _NUMERIC_TYPES:
                row[name] = Binding(value, "number")
            elif kind == "literal" and cell.get("datatype") == COMMON_PREFIXES["xsd"] + "boolean":
                row[name] = Binding(value, "boolean")
            else:
                row[name] = Binding(value, "literal")
        rows.append(row)
    return BindingSet(variables, rows)


def normalize_query_text(text: str) -> str:
    return " ".join(text.split())


# ----- endpoints -------------------------------------------------------------

class BaseSparqlEndpoint:
    def __init__(self):
        self.executions = 0
        self._lock = threading.Lock()
        self.logger = logging.getLogger(__name__)

    def _count(self) -> None:
        with self._lock:
            self.executions += 1

    def query(self, text: str) -> BindingSet:
        raise NotImplementedError

    def execute(self, query: SparqlQuery) -> BindingSet:
        return self.query(query.text)


class SparqlEndpoint(BaseSparqlEndpoint):
    """SPARQL protocol over HTTP with JSON results"""

    def __init__(self, url: str, timeout: float = 60.0, retries: int = 2, backoff_base: float = 1.0,
                 user_agent_env: str = "HOPLINK_USER_AGENT", session: Optional[requests.Session] = None):
        super().__init__()
        if not url:
            raise ConfigurationError("SPARQL endpoint URL is required")
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff_base = backoff_base
        self.session = session or requests.Session()
        self.session.headers.update({"Accept": "application/sparql-results+json"})
        if user_agent_env in os.environ:
            self.session.headers.update({"User-Agent": os.environ[user_agent_env]})

    def _request(self, text: str) -> requests.Response:
        if len(text) > 2000:
            return self.session.post(self.url, data={"query": text}, timeout=self.timeout)
        return self.session.get(self.url, params={"query": text}, timeout=self.timeout)

    def query(self, text: str) -> BindingSet:
        for attempt in range(self.retries + 1):
            self._count()
            try:
                response = self._request(text)
                if response.status_code in (429, 502, 503, 504):
                    raise SparqlExecutionError(response.text, response.status_code, retryable=True)
                if response.status_code >= 400:
                    raise SparqlExecutionError(response.text, response.status_code)
                try:
                    return parse_results(response.json())
                except ValueError as e:
                    raise BackendError(f"unreadable SPARQL results: {e}", retryable=False) from e
            except requests.Timeout as e:
                error = BackendError(f"SPARQL request timed out: {e}", retryable=True)
            except requests.RequestException as e:
                error = BackendError(f"SPARQL request failed: {e}", retryable=True)
            except BackendError as e:
                error = e
            if not error.retryable or attempt == self.retries:
                raise error
            self.logger.warning(f"SPARQL error (attempt {attempt + 1}): {error}")
            time.sleep(self.backoff_base * (2 ** attempt))
        raise BackendError("unreachable", retryable=False)


class MockSparqlEndpoint(BaseSparqlEndpoint):
    """
    Fixture table keyed by whitespace-normalised query text. An entry is a
    results JSON object, or {"status": 4xx, "error": "..."} for an endpoint
    error, or {"timeout": true}.
    """

    def __init__(self, table: Optional[Dict[str, Dict[str, Any]]] = None):
        super().__init__()
        self.table = {normalize_query_text(q): entry for q, entry in (table or {}).items()}
        self.executed: List[str] = []

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "MockSparqlEndpoint":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read SPARQL fixture {path}: {e}") from e
        if isinstance(data, list):
            data = {item["query"]: item["response"] for item in data}
        return cls(data)

    def add(self, query: str, entry: Dict[str, Any]) -> None:
        self.table[normalize_query_text(query)] = entry

    def lookup(self, text: str) -> Dict[str, Any]:
        entry = self.table.get(normalize_query_text(text))
        if entry is None:
            return {"status": 400, "error": "Query not found in the fixture table"}
        return entry

    def query(self, text: str) -> BindingSet:
        self._count()
        with self._lock:
            self.executed.append(text)
        entry = self.lookup(text)
        if entry.get("timeout"):
            raise BackendError("SPARQL request timed out", retryable=True)
        status = entry.get("status")
        if status is not None and int(status) >= 400:
            raise SparqlExecutionError(str(entry.get("error", "")), int(status))
        try:
            return parse_results(entry)
        except ValueError as e:
            raise BackendError(f"unreadable SPARQL results: {e}", retryable=False) from e
