"""Prompt templates, completion providers, and per-run call accounting.

Templates render as a fixed sequence of labelled lines (instruction, optional
demonstrations, then the template's slots in layout order).  Completion
providers are either a remote chat endpoint or a deterministic scripted
oracle; both sit behind :class:`LlmClient`, which owns the per-run call
counter and retry policy.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

from .errors import (
    OracleMissError,
    ProviderConfigError,
    ProviderError,
    TransportError,
)

LLM_BASE_URL_VAR = "REVTREE_LLM_BASE_URL"
LLM_API_KEY_VAR = "REVTREE_LLM_API_KEY"
LLM_MODEL_VAR = "REVTREE_LLM_MODEL"

TEMPLATE_NAMES = (
    "review_cot",
    "review_direct",
    "mpc",
    "fusion_analysis",
    "fusion_paragraph",
    "fusion_evidence",
    "cor",
)

# (instruction label, ((slot name, slot label), ...)) per template; label
# strings are emitted literally, including their colon/space quirks
_LAYOUTS: dict[str, tuple[str, tuple[tuple[str, str], ...]]] = {
    "review_cot": ("Instruction:", (("Question", "Question:"), ("Documents", "Documents: "))),
    "review_direct": ("Instruction:", (("Question", "Question:"), ("Documents", "Documents: "))),
    "cor": ("Instruction:", (("Question", "Question:"), ("Documents", "Documents: "))),
    "mpc": ("Instruction:", (("Question", "Question:"), ("References", "References: "))),
    "fusion_paragraph": ("Instruct:", (("Documents", "Documents:"), ("Question", "Question:"))),
    "fusion_analysis": ("Instruct:", (("Assertions", "Assertions:"), ("Question", "Question:"))),
    "fusion_evidence": ("Instruct:", (("Evidence", "Evidence:"), ("Question", "Question:"))),
}

_DEMO_LABEL = "Demonstration:"


@dataclass(frozen=True)
class PromptTemplate:
    """A named prompt: instruction text, few-shot demos, and slot layout."""

    name: str
    instruction: str
    demos: tuple[str, ...] = ()
    instruction_label: str = "Instruction:"
    slots: tuple[tuple[str, str], ...] = ()

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.slots)


@lru_cache(maxsize=None)
def _instruction_text(name: str) -> str:
    if name not in _LAYOUTS:
        raise ValueError(f"unknown template '{name}'; expected one of {TEMPLATE_NAMES}")
    return (
        resources.files("revtree")
        .joinpath(f"templates/{name}.txt")
        .read_text(encoding="utf-8")
        .rstrip("\n")
    )


def load_template(name: str, demos: Sequence[str] = ()) -> PromptTemplate:
    """Load a shipped template by name, attaching the given demonstrations."""
    if name not in _LAYOUTS:
        raise ValueError(f"unknown template '{name}'; expected one of {TEMPLATE_NAMES}")
    instruction_label, slots = _LAYOUTS[name]
    return PromptTemplate(
        name=name,
        instruction=_instruction_text(name),
        demos=tuple(demos),
        instruction_label=instruction_label,
        slots=slots,
    )


def load_demos(demos_dir: str | Path, name: str) -> tuple[str, ...]:
    """Read demonstrations for a template from ``<demos_dir>/<name>.txt``.

    Demos are separated by lines containing only ``---``.  Missing file means
    zero-shot.
    """
    path = Path(demos_dir) / f"{name}.txt"
    if not path.exists():
        return ()
    raw = path.read_text(encoding="utf-8")
    parts = [part.strip("\n") for part in raw.split("\n---\n")]
    return tuple(part for part in parts if part.strip())


def render_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Render a template: instruction, demos, then slots in layout order.

    Byte-stable for identical inputs.  Raises if a slot has no binding.
    """
    parts = [template.instruction_label + template.instruction]
    if template.demos:
        parts.append(_DEMO_LABEL + "\n\n".join(template.demos))
    for slot_name, slot_label in template.slots:
        if slot_name not in bindings:
            raise ValueError(
                f"missing slot '{slot_name}' for template '{template.name}'"
            )
        parts.append(slot_label + bindings[slot_name])
    return "\n".join(parts)


@dataclass(frozen=True)
class CompletionRequest:
    """One completion call: the rendered prompt plus decoding settings.

    ``tags`` carries structured routing metadata (question, path paragraph
    ids, template name) that scripted oracles match on; remote providers
    ignore it.
    """

    prompt: str
    temperature: float = 0.0
    max_context_tokens: int = 4096
    tags: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_context_tokens <= 0:
            raise ValueError(
                f"max_context_tokens must be positive, got {self.max_context_tokens}"
            )


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    provider_latency_ms: int
    call_index: int


@dataclass(frozen=True)
class ScriptedRule:
    """One oracle rule: optional matchers plus the canned response.

    A ``None`` matcher field matches anything; ``path_ids`` compares as an
    exact sequence.  The response text may contain the placeholders
    ``{call_index}`` and ``{question}``.
    """

    response: str
    question: Optional[str] = None
    path_ids: Optional[tuple[str, ...]] = None
    template: Optional[str] = None

    def matches(self, question: Optional[str], path_ids: tuple[str, ...],
                template: Optional[str]) -> bool:
        if self.question is not None and self.question != question:
            return False
        if self.path_ids is not None and self.path_ids != path_ids:
            return False
        if self.template is not None and self.template != template:
            return False
        return True


class ScriptedOracle:
    """Deterministic completion provider driven by an ordered rule list.

    The first rule whose matchers all hold wins; with no match the default
    response is used, and with no default the call is an error.
    """

    def __init__(self, rules: Sequence[ScriptedRule],
                 default_response: Optional[str] = None):
        self.rules = tuple(rules)
        self.default_response = default_response

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedOracle":
        """Load rules from a line-delimited JSON file.

        Each line is an object with a required ``response`` field and optional
        ``question``, ``path_ids`` and ``template`` matchers.  A line with
        ``{"default": "..."}`` sets the default response.
        """
        rules: list[ScriptedRule] = []
        default: Optional[str] = None
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ProviderConfigError(
                        f"{path}: line {lineno}: invalid rule: {exc}"
                    ) from exc
                if "default" in record:
                    default = record["default"]
                    continue
                if "response" not in record:
                    raise ProviderConfigError(
                        f"{path}: line {lineno}: rule needs a 'response' field"
                    )
                path_ids = record.get("path_ids")
                rules.append(
                    ScriptedRule(
                        response=record["response"],
                        question=record.get("question"),
                        path_ids=tuple(path_ids) if path_ids is not None else None,
                        template=record.get("template"),
                    )
                )
        return cls(rules, default_response=default)

    def generate(self, request: CompletionRequest, call_index: int) -> str:
        question = request.tags.get("question")
        path_ids = tuple(request.tags.get("path_ids") or ())
        template = request.tags.get("template")
        for rule in self.rules:
            if rule.matches(question, path_ids, template):
                return self._substitute(rule.response, call_index, question)
        if self.default_response is not None:
            return self._substitute(self.default_response, call_index, question)
        raise OracleMissError(
            f"no scripted rule matches (template={template!r}, "
            f"question={question!r}, path_ids={path_ids!r}) and no default is set"
        )

    @staticmethod
    def _substitute(text: str, call_index: int, question: Optional[str]) -> str:
        out = text.replace("{call_index}", str(call_index))
        if question is not None:
            out = out.replace("{question}", question)
        return out


class RemoteChatProvider:
    """Client for a chat-completion endpoint over HTTPS.

    Base URL, API key and model name come from ``REVTREE_LLM_BASE_URL``,
    ``REVTREE_LLM_API_KEY`` and ``REVTREE_LLM_MODEL``.  Construction fails
    before any network activity if they are unset.
    """

    def __init__(self, session=None, timeout: float = 120.0):
        base_url = os.environ.get(LLM_BASE_URL_VAR)
        api_key = os.environ.get(LLM_API_KEY_VAR)
        model = os.environ.get(LLM_MODEL_VAR)
        missing = [
            name
            for name, value in (
                (LLM_BASE_URL_VAR, base_url),
                (LLM_API_KEY_VAR, api_key),
                (LLM_MODEL_VAR, model),
            )
            if not value
        ]
        if missing:
            raise ProviderConfigError(
                "remote completion provider not configured; missing environment "
                f"variables: {', '.join(missing)}"
            )
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self._api_key = api_key
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def generate(self, request: CompletionRequest, call_index: int) -> str:
        import requests

        try:
            resp = self._session.post(
                f"{self.base_url}/chat/completions",
                json={
                    "model": self.model,
                    "messages": [{"role": "user", "content": request.prompt}],
                    "temperature": request.temperature,
                    "max_tokens": request.max_context_tokens,
                },
                headers={"Authorization": f"Bearer {self._api_key}"},
                timeout=self.timeout,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"completion request failed: {exc}") from exc
        if resp.status_code >= 500 or resp.status_code in (408, 429):
            raise TransportError(f"completion service returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(
                f"completion service rejected the request: {resp.status_code} "
                f"{resp.text[:200]}"
            )
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed completion payload: {exc}") from exc


class LlmClient:
    """Per-run wrapper around a provider: call counting plus bounded retries.

    The counter is atomic; ``call_index`` values are strictly increasing
    within the run and count successful completions only.  Transport errors
    are retried with exponential backoff; anything else surfaces immediately.
    """

    def __init__(self, provider, max_attempts: int = 3, backoff_s: float = 0.2,
                 sleep: Callable[[float], None] = time.sleep):
        if max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {max_attempts}")
        self.provider = provider
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._lock = threading.Lock()
        self._calls = 0

    @property
    def calls(self) -> int:
        return self._calls

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            call_index = self._calls + 1
            started = time.monotonic()
            last_error: Exception | None = None
            for attempt in range(self.max_attempts):
                try:
                    text = self.provider.generate(request, call_index)
                    break
                except TransportError as exc:
                    last_error = exc
                    if attempt + 1 < self.max_attempts:
                        self._sleep(self.backoff_s * (2 ** attempt))
            else:
                raise ProviderError(
                    f"completion failed after {self.max_attempts} attempts: "
                    f"{last_error}"
                ) from last_error
            self._calls = call_index
        latency_ms = int((time.monotonic() - started) * 1000)
        return CompletionResponse(text=text, provider_latency_ms=latency_ms,
                                  call_index=call_index)


def estimate_tokens(text: str) -> int:
    """Whitespace-token count; the default budget estimator."""
    return len(text.split())


def estimate_tokens_chars(text: str) -> int:
    """Character-count estimator: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


_ESTIMATORS: dict[str, Callable[[str], int]] = {
    "whitespace": estimate_tokens,
    "chars": estimate_tokens_chars,
}


def make_token_estimator(kind: str) -> Callable[[str], int]:
    try:
        return _ESTIMATORS[kind]
    except KeyError:
        raise ValueError(
            f"unknown token estimator '{kind}'; expected one of "
            f"{sorted(_ESTIMATORS)}"
        ) from None
