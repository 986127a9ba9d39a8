"""
HopLink Errors
Exception hierarchy shared by the store, the pipelines and the CLI.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class HopLinkError(Exception):
    """Base class for all engine errors"""
    exit_code = 1


class ConfigurationError(HopLinkError):
    """Bad flag, missing required path or missing prompt template"""
    exit_code = 1


class IngestionError(HopLinkError):
    """Graph source could not be read or parsed"""
    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class DatasetError(HopLinkError):
    """Dataset file does not match its native layout"""
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{message} (field '{field}')" if field else message)
        self.field = field


class EntityLookupError(HopLinkError, KeyError):
    """Unknown entity id"""
    exit_code = 2

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


class SparqlParseError(HopLinkError):
    """Query failed structural validation"""
    exit_code = 2

    def __init__(self, message: str, problems: Optional[list] = None):
        super().__init__(message)
        self.problems = problems or []


class BackendError(HopLinkError):
    """LLM, embedding, description or SPARQL transport failure"""
    exit_code = 3

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class BudgetExceededError(BackendError):
    """Rendered prompt does not fit the context window"""

    def __init__(self, prompt_tokens: int, window: int):
        super().__init__(
            f"prompt needs {prompt_tokens} tokens, window is {window}",
            retryable=False,
        )
        self.prompt_tokens = prompt_tokens
        self.window = window
        self.overflow = prompt_tokens - window


class SparqlExecutionError(BackendError):
    """Endpoint rejected a query; message is the endpoint text verbatim"""

    def __init__(self, message: str, status: Optional[int] = None, retryable: bool = False):
        super().__init__(message, retryable=retryable)
        self.status = status
        self.endpoint_message = message


class SkillFailure(HopLinkError):
    """A skill exhausted its retries and fallbacks"""
    exit_code = 3

    def __init__(self, skill: str, message: str, last_raw: str = ""):
        super().__init__(f"{skill}: {message}")
        self.skill = skill
        self.last_raw = last_raw
