"""
Configuration Management for HopLink

Run settings, the flat key=value config file, and precedence handling
(command-line flags > config file > defaults).
"""

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from shared.errors import ConfigurationError

STRATEGIES = ("ir", "sp", "metaqa-path")
BACKENDS = ("scripted", "remote")
EMBEDDERS = ("hash", "remote")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    """HopLink run settings"""

    # Strategy
    strategy: str = "ir"
    dataset: str = ""
    metaqa_mode: str = "few-shot"

    # Graph
    graph: str = ""
    graph_format: str = "tsv"
    snapshot: str = ""
    entity_catalog: str = ""
    relation_catalog: str = ""
    cvt_list: str = ""
    unlabeled_is_cvt: bool = False
    path_catalog: str = "config/metaqa_path_types.txt"

    # LLM backend (secrets only ever come from the named environment variable)
    backend: str = "scripted"
    scripted_fixture: str = ""
    llm_endpoint: str = ""
    llm_model: str = "gpt-3.5-turbo"
    llm_api_key_env: str = "HOPLINK_LLM_API_KEY"
    window: int = 4096
    max_concurrency: int = 4
    timeout: float = 60.0
    transport_retries: int = 2
    backoff_base: float = 1.0

    # Embeddings
    embedder: str = "hash"
    embed_dimension: int = 256
    embed_endpoint: str = ""
    embed_model: str = "text-embedding-ada-002"
    embed_api_key_env: str = "HOPLINK_EMBED_API_KEY"

    # Budgets
    k: int = 1
    max_hops: int = 4
    retries: int = 2
    few_shot_n: int = 5
    always_few_shot: bool = False
    expand_cvt: bool = True
    rag_top_k: int = 32
    k_entities: int = 10
    k_predicates: int = 10

    # Corpora and indexes
    few_shot_data: str = ""
    few_shot_index: str = ""
    entity_descriptions: str = ""
    predicate_descriptions: str = ""

    # SPARQL
    dialect: str = ""
    sparql_endpoint: str = ""
    sparql_fixture: str = ""
    description_url: str = "https://www.wikidata.org/wiki/Special:EntityData/{id}.json"
    gold_cache: str = ""

    # Run
    seed: int = 0
    workers: int = 1
    debug: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Create from dictionary; unknown keys are dropped with a warning"""
        valid_fields = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - valid_fields)
        if unknown:
            logging.getLogger(__name__).warning(f"Ignoring unknown config keys: {', '.join(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in valid_fields})

    def merged(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with every non-None override applied"""
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None and k in data})
        return RunConfig(**data)

    def validate(self) -> bool:
        """Validate configuration values"""
        try:
            assert self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}"
            assert self.backend in BACKENDS, f"backend must be one of {BACKENDS}"
            assert self.embedder in EMBEDDERS, f"embedder must be one of {EMBEDDERS}"
            assert self.k >= 1, "k must be >= 1"
            assert self.max_hops >= 1, "max_hops must be >= 1"
            assert self.retries >= 0, "retries must be >= 0"
            assert self.few_shot_n >= 0, "few_shot_n must be >= 0"
            assert self.rag_top_k >= 1, "rag_top_k must be >= 1"
            assert self.k_entities >= 1 and self.k_predicates >= 1, "k_entities and k_predicates must be >= 1"
            assert self.window >= 1, "window must be >= 1"
            assert self.workers >= 1, "workers must be >= 1"
            assert self.embed_dimension >= 1, "embed_dimension must be >= 1"
            return True
        except AssertionError as e:
            logging.error(f"Configuration validation failed: {e}")
            return False

    def missing_requirements(self, needs_llm: bool = True) -> List[str]:
        """Settings the chosen strategy and backend cannot run without"""
        missing = []
        if self.strategy in ("ir", "metaqa-path") and not (self.graph or self.snapshot):
            missing.append("graph (or snapshot)")
        if self.strategy == "sp" and not (self.sparql_endpoint or self.sparql_fixture):
            missing.append("sparql_endpoint (or sparql_fixture)")
        if needs_llm and self.backend == "scripted" and not self.scripted_fixture:
            missing.append("scripted_fixture")
        if needs_llm and self.backend == "remote" and not self.llm_endpoint:
            missing.append("llm_endpoint")
        if self.embedder == "remote" and not self.embed_endpoint:
            missing.append("embed_endpoint")
        return missing

    def require(self, needs_llm: bool = True) -> None:
        if not self.validate():
            raise ConfigurationError("invalid configuration (see log)")
        missing = self.missing_requirements(needs_llm)
        if missing:
            raise ConfigurationError(f"strategy '{self.strategy}' needs: {', '.join(missing)}")


def _coerce(name: str, kind: type, text: str) -> Any:
    if kind is bool:
        lowered = text.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigurationError(f"config key '{name}' expects a boolean, got '{text}'")
    try:
        return kind(text)
    except ValueError as e:
        raise ConfigurationError(f"config key '{name}' expects {kind.__name__}, got '{text}'") from e


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """key=value lines; lines starting with '#' are comments; values coerced to the field types"""
    types = {f.name: f.type for f in fields(RunConfig)}
    data: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{number}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            logging.getLogger(__name__).warning(f"{source}:{number}: unknown config key '{key}'")
            continue
        data[key] = _coerce(key, types[key], value)
    return data


class ConfigManager:
    """Loads and saves the flat key=value config file"""

    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        self.logger = logging.getLogger(__name__)
        self.config_file = Path(config_file) if config_file else None

    def load_config(self) -> RunConfig:
        """File values over defaults; no file means defaults"""
        if self.config_file is None:
            return RunConfig()
        if not self.config_file.exists():
            raise ConfigurationError(f"config file not found: {self.config_file}")
        try:
            text = self.config_file.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"cannot read config file {self.config_file}: {e}") from e
        config = RunConfig.from_dict(parse_config_text(text, str(self.config_file)))
        self.logger.info(f"Configuration loaded from {self.config_file}")
        return config

    def resolve(self, overrides: Dict[str, Any]) -> RunConfig:
        """flags > config file > defaults"""
        return self.load_config().merged(overrides)

    def save_config(self, config: RunConfig, path: Optional[Union[str, Path]] = None) -> bool:
        target = Path(path) if path else self.config_file
        if target is None:
            self.logger.error("No config file to save to")
            return False
        if not config.validate():
            self.logger.error("Cannot save invalid configuration")
            return False
        lines = [f"{key} = {_render(value)}" for key, value in config.to_dict().items()]
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.logger.info(f"Configuration saved to {target}")
        return True


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)
