"""
Term catalogs and description fetching.

Descriptions are cached in an append-only TSV (id, kind, description); a
re-run only fetches ids missing from the cache. Ids whose fetch failed are
flagged unfetched and are not written to the cache.
"""

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union
from urllib.parse import urlparse

import requests

from shared.errors import BackendError, ConfigurationError

logger = logging.getLogger(__name__)

KINDS = ("entity", "predicate")
DEFAULT_URL_TEMPLATE = "https://www.wikidata.org/wiki/Special:EntityData/{id}.json"


def _clean(text: str) -> str:
    return " ".join(text.replace("\t", " ").split())


class TermCatalog:
    """term id -> description for one kind"""

    def __init__(self, kind: str = "entity"):
        if kind not in KINDS:
            raise ConfigurationError(f"term kind must be one of {KINDS}, got '{kind}'")
        self.kind = kind
        self.descriptions: Dict[str, str] = {}
        self.unfetched: Set[str] = set()

    def __len__(self) -> int:
        return len(self.descriptions)

    def __contains__(self, term_id: str) -> bool:
        return term_id in self.descriptions

    def add(self, term_id: str, description: str) -> None:
        if not description:
            raise ValueError(f"empty description for {term_id}; flag it unfetched instead")
        self.descriptions[term_id] = description
        self.unfetched.discard(term_id)

    def mark_unfetched(self, term_id: str) -> None:
        if term_id not in self.descriptions:
            self.unfetched.add(term_id)

    def get(self, term_id: str) -> Optional[str]:
        return self.descriptions.get(term_id)

    def ids(self) -> List[str]:
        return list(self.descriptions)

    def documents(self) -> List[Tuple[str, str]]:
        return list(self.descriptions.items())

    @classmethod
    def from_terms(cls, terms: Iterable[str], kind: str = "entity") -> "TermCatalog":
        """Catalog whose descriptions are the terms themselves (surface-form corpora)"""
        catalog = cls(kind)
        for term in terms:
            if term:
                catalog.add(term, term)
        return catalog

    @classmethod
    def load_cache(cls, path: Union[str, Path], kind: str = "entity") -> "TermCatalog":
        catalog = cls(kind)
        path = Path(path)
        if not path.exists():
            return catalog
        with open(path, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    logger.warning(f"{path}:{number}: skipping malformed cache line")
                    continue
                term_id, term_kind, description = parts
                if term_kind == kind and description:
                    catalog.descriptions[term_id] = description
        return catalog

    def append_cache(self, path: Union[str, Path], term_ids: Iterable[str]) -> None:
        lines = [f"{t}\t{self.kind}\t{_clean(self.descriptions[t])}\n"
                 for t in term_ids if t in self.descriptions]
        if lines:
            with open(path, "a", encoding="utf-8") as f:
                f.write("".join(lines))


class HttpDescriptionSource:
    """
    Description endpoint addressed by a URL template with an {id} placeholder.
    Understands Wikidata entity JSON and plain {"description": ...} bodies.
    """

    def __init__(self, url_template: str = DEFAULT_URL_TEMPLATE, timeout: float = 30.0,
                 per_host: int = 4, language: str = "en",
                 user_agent_env: str = "HOPLINK_USER_AGENT",
                 session: Optional[requests.Session] = None):
        if "{id}" not in url_template:
            raise ConfigurationError("description URL template needs an {id} placeholder")
        self.url_template = url_template
        self.timeout = timeout
        self.language = language
        self.session = session or requests.Session()
        if user_agent_env in os.environ and hasattr(self.session, "headers"):
            self.session.headers.update({"User-Agent": os.environ[user_agent_env]})
        self.per_host = max(1, per_host)
        self._host_slots: Dict[str, threading.BoundedSemaphore] = {}
        self._slots_lock = threading.Lock()

    def _slot(self, url: str) -> threading.BoundedSemaphore:
        host = urlparse(url).netloc
        with self._slots_lock:
            if host not in self._host_slots:
                self._host_slots[host] = threading.BoundedSemaphore(self.per_host)
            return self._host_slots[host]

    def _describe(self, term_id: str, payload) -> str:
        if isinstance(payload, dict) and "entities" in payload:
            entities = payload["entities"]
            entity = entities.get(term_id) or next(iter(entities.values()), {})
            label = entity.get("labels", {}).get(self.language, {}).get("value", "")
            description = entity.get("descriptions", {}).get(self.language, {}).get("value", "")
            return f"{label}: {description}" if label and description else (label or description)
        if isinstance(payload, dict):
            return str(payload.get("description", ""))
        return ""

    def fetch(self, term_id: str) -> str:
        url = self.url_template.format(id=term_id)
        with self._slot(url):
            try:
                response = self.session.get(url, timeout=self.timeout)
            except requests.RequestException as e:
                raise BackendError(f"description request for {term_id} failed: {e}") from e
        if response.status_code >= 400:
            raise BackendError(f"description endpoint returned {response.status_code} for {term_id}",
                               retryable=response.status_code >= 500)
        try:
            text = self._describe(term_id, response.json())
        except ValueError:
            text = response.text
        text = _clean(text)
        if not text:
            raise BackendError(f"no description for {term_id}", retryable=False)
        return text


def fetch_descriptions(ids: Iterable[str], source, kind: str = "entity",
                       cache_path: Optional[Union[str, Path]] = None,
                       workers: int = 4) -> TermCatalog:
    """Fetch missing descriptions in parallel; failures end up flagged, never fatal"""
    wanted = list(dict.fromkeys(i for i in ids if i))
    if not wanted:
        raise ConfigurationError("no term ids to fetch")
    catalog = TermCatalog.load_cache(cache_path, kind) if cache_path else TermCatalog(kind)
    missing = [term_id for term_id in wanted if term_id not in catalog]
    logger.info(f"{len(wanted) - len(missing)} descriptions cached, {len(missing)} to fetch")
    if not missing:
        return catalog

    def fetch_one(term_id: str) -> Tuple[str, Optional[str]]:
        try:
            return term_id, source.fetch(term_id)
        except BackendError as e:
            logger.warning(f"Description fetch failed for {term_id}: {e}")
            return term_id, None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        results = list(executor.map(fetch_one, missing))

    fetched = []
    for term_id, text in results:
        if text:
            catalog.add(term_id, text)
            fetched.append(term_id)
        else:
            catalog.mark_unfetched(term_id)
    if cache_path and fetched:
        catalog.append_cache(cache_path, fetched)
    if catalog.unfetched:
        logger.warning(f"{len(catalog.unfetched)} ids left unfetched")
    return catalog
