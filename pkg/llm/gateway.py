"""
HopLink LLM Gateway
Renders skill prompts, enforces the context-window budget and calls a backend.
"""

import logging
import math
import threading
import time
from typing import Callable, Dict, Optional

from llm.backends import LLMBackend
from llm.parsers import parse_items
from llm.skills import SkillKind, SkillRequest, SkillResponse
from llm.templates import SKILL_TEMPLATES, SYSTEM_PROMPT, SkillTemplate
from shared.errors import BackendError, BudgetExceededError, ConfigurationError

DEFAULT_WINDOW = 4096

TokenEstimator = Callable[[str], int]


def estimate_tokens(text: str) -> int:
    """ceil(utf-8 bytes / 4)"""
    return math.ceil(len(text.encode("utf-8")) / 4)


class LLMGateway:
    """
    Stateless per call: a request is rendered, measured, sent and parsed.

    The concurrency cap bounds in-flight backend calls across threads; the
    call counter counts backend invocations including transport retries.
    """

    def __init__(self, backend: LLMBackend, window: int = DEFAULT_WINDOW,
                 max_concurrency: int = 4, timeout: float = 60.0,
                 transport_retries: int = 2, backoff_base: float = 1.0,
                 temperature: float = 0.0, max_tokens: int = 256,
                 estimator: TokenEstimator = estimate_tokens,
                 templates: Optional[Dict[SkillKind, SkillTemplate]] = None):
        if window < 1:
            raise ConfigurationError("context window must be positive")
        self.backend = backend
        self.window = window
        self.timeout = timeout
        self.transport_retries = transport_retries
        self.backoff_base = backoff_base
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.estimator = estimator
        self.templates = templates if templates is not None else SKILL_TEMPLATES
        self._slots = threading.BoundedSemaphore(max(1, max_concurrency))
        self._calls = 0
        self._calls_lock = threading.Lock()
        self.logger = logging.getLogger(__name__)

    @property
    def calls(self) -> int:
        return self._calls

    def template_for(self, skill: SkillKind) -> SkillTemplate:
        template = self.templates.get(skill)
        if template is None:
            raise ConfigurationError(f"no prompt template for skill '{skill.value}'")
        return template

    def render_prompt(self, request: SkillRequest, template: Optional[SkillTemplate] = None) -> str:
        """
        Sections in fixed order: instruction, context items, few-shot examples,
        feedback, question. Empty example and feedback sections are omitted.
        """
        template = template or self.template_for(request.skill)
        sections = [template.instruction.format(k=request.k)]

        if request.context_items:
            if template.show_ids:
                lines = [f"- {item_id}: {text}" for item_id, text in request.context_items]
            else:
                lines = [f"- {text}" for _, text in request.context_items]
            sections.append(f"{template.context_title}:\n" + "\n".join(lines))

        if request.few_shot:
            examples = [f"Question: {ex.question}\n{template.solution_label}: {ex.solution}"
                        for ex in request.few_shot]
            sections.append("Examples:\n" + "\n\n".join(examples))

        if request.feedback:
            sections.append("Feedback:\n" + "\n".join(f"- {msg}" for msg in request.feedback))

        sections.append(f"Question: {request.question}")
        return "\n\n".join(sections)

    def prompt_tokens(self, request: SkillRequest) -> int:
        return self.estimator(self.render_prompt(request))

    def fits(self, request: SkillRequest) -> bool:
        return self.prompt_tokens(request) <= self.window

    def complete(self, request: SkillRequest) -> SkillResponse:
        template = self.template_for(request.skill)
        prompt = self.render_prompt(request, template)
        prompt_tokens = self.estimator(prompt)
        if prompt_tokens > self.window:
            raise BudgetExceededError(prompt_tokens, self.window)

        self.logger.debug(f"{request.skill.value} prompt ({prompt_tokens} tokens):\n{prompt}")
        raw = self._generate(request, prompt)
        items = parse_items(template.parser, raw)
        self.logger.debug(f"{request.skill.value} reply: {raw!r} -> {items}")
        return SkillResponse(raw_text=raw, parsed_items=items,
                             usage=(prompt_tokens, self.estimator(raw)))

    def _generate(self, request: SkillRequest, prompt: str) -> str:
        attempt = 0
        while True:
            with self._calls_lock:
                self._calls += 1
            try:
                with self._slots:
                    return self.backend.generate(
                        request, SYSTEM_PROMPT, prompt,
                        temperature=self.temperature,
                        max_tokens=self.max_tokens,
                        timeout=self.timeout,
                    )
            except BackendError as e:
                if not e.retryable or attempt >= self.transport_retries:
                    raise
                delay = self.backoff_base * (2 ** attempt)
                self.logger.warning(f"Backend error (attempt {attempt + 1}): {e}; retrying in {delay:.1f}s")
                attempt += 1
                if delay > 0:
                    time.sleep(delay)

