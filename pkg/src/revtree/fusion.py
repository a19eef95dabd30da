"""Evidence fusion: pack the pool under a token budget, generate the final
response, extract the short answer, and pick the paragraphs submitted for
retrieval scoring.

Three context renderings exist: assertions only, supporting paragraphs only,
or both grouped per evidence item (the default).  Packing is greedy-prefix in
acceptance order: the first evidence item that would overflow the budget stops
inclusion, keeping the earliest-accepted items.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

from .corpus import cosine_similarity
from .embedding import EmbeddingProvider
from .llm import CompletionRequest, LlmClient, estimate_tokens, load_template, \
    render_prompt
from .search import Evidence, EvidencePool

ANSWER_MARKER = "the answer is"


class FusionStrategy(str, Enum):
    ANALYSIS = "analysis"
    PARAGRAPH = "paragraph"
    EVIDENCE = "evidence"


_TEMPLATE_FOR = {
    FusionStrategy.ANALYSIS: "fusion_analysis",
    FusionStrategy.PARAGRAPH: "fusion_paragraph",
    FusionStrategy.EVIDENCE: "fusion_evidence",
}

_SLOT_FOR = {
    FusionStrategy.ANALYSIS: "Assertions",
    FusionStrategy.PARAGRAPH: "Documents",
    FusionStrategy.EVIDENCE: "Evidence",
}


@dataclass(frozen=True)
class AnswerResult:
    """Final response for one question plus the extraction outcome."""

    full_response: str
    extracted_answer: str
    evidence_included: tuple[int, ...]
    fusion_calls: int = 1
    pattern_found: bool = True


def _render_paragraph(p) -> str:
    return f"{p.title}\n{p.text}" if p.title.strip() else p.text


def _render_documents(paragraphs) -> str:
    return "\n\n".join(_render_paragraph(p) for p in paragraphs)


def render_context(evidences: Sequence[Evidence],
                   strategy: FusionStrategy) -> str:
    """Render an evidence list as the context block for its strategy."""
    if not evidences:
        return ""
    if strategy is FusionStrategy.ANALYSIS:
        return "\n".join(e.brief_analysis for e in evidences)
    if strategy is FusionStrategy.PARAGRAPH:
        seen: set[str] = set()
        docs = []
        for e in evidences:
            for p in e.path:
                if p.id not in seen:
                    seen.add(p.id)
                    docs.append(p)
        return _render_documents(docs)
    blocks = [
        f"Assertions:{e.brief_analysis}\nDocuments:{_render_documents(e.path)}"
        for e in evidences
    ]
    return "\n\n".join(blocks)


def pack_evidence(pool: EvidencePool, strategy: FusionStrategy,
                  budget_tokens: int,
                  estimator: Callable[[str], int] = estimate_tokens,
                  reserved_tokens: int = 0) -> tuple[str, list[int]]:
    """Greedy-prefix packing of the pool under the token budget.

    Evidence is considered in acceptance order; inclusion stops at the first
    item whose addition would push the rendered context past
    ``budget_tokens - reserved_tokens``.  The returned context always
    estimates within that limit.
    """
    if budget_tokens <= reserved_tokens:
        raise ValueError(
            f"budget of {budget_tokens} tokens cannot cover the fixed prompt "
            f"parts ({reserved_tokens} tokens)"
        )
    limit = budget_tokens - reserved_tokens
    included = 0
    for i in range(len(pool.evidences)):
        candidate = render_context(pool.evidences[: i + 1], strategy)
        if estimator(candidate) > limit:
            break
        included = i + 1
    context = render_context(pool.evidences[:included], strategy)
    return context, list(range(included))


def extract_answer(text: str) -> tuple[str, bool]:
    """Short answer after the last (case-insensitive) answer marker.

    The trailing period is stripped and whitespace trimmed; the payload keeps
    its original casing.  Without the marker the whole trimmed response comes
    back flagged.
    """
    position = text.lower().rfind(ANSWER_MARKER)
    if position < 0:
        return text.strip(), False
    payload = text[position + len(ANSWER_MARKER):].strip()
    if payload.endswith("."):
        payload = payload[:-1].rstrip()
    return payload, True


def generate_answer(question: str, pool: EvidencePool, strategy: FusionStrategy,
                    llm, budget_tokens: int = 4096,
                    estimator: Callable[[str], int] = estimate_tokens,
                    demos: Sequence[str] = ()) -> AnswerResult:
    """One completion with the strategy's template over the packed pool.

    An empty pool is fine: the context block is empty and the model answers
    from its own knowledge.
    """
    client = llm if isinstance(llm, LlmClient) else LlmClient(llm)
    template = load_template(_TEMPLATE_FOR[strategy], demos)
    slot = _SLOT_FOR[strategy]
    reserved = estimator(render_prompt(template, {slot: "", "Question": question}))
    context, included = pack_evidence(pool, strategy, budget_tokens,
                                      estimator, reserved_tokens=reserved)
    prompt = render_prompt(template, {slot: context, "Question": question})
    request = CompletionRequest(
        prompt=prompt,
        max_context_tokens=budget_tokens,
        tags={"question": question, "template": template.name},
    )
    response = client.complete(request)
    extracted, found = extract_answer(response.text)
    return AnswerResult(
        full_response=response.text,
        extracted_answer=extracted,
        evidence_included=tuple(included),
        fusion_calls=1,
        pattern_found=found,
    )


def _evidence_text(evidence: Evidence) -> str:
    text = _render_documents(evidence.path)
    if evidence.brief_analysis:
        text = f"{text}\n{evidence.brief_analysis}"
    return text


def select_scored_paragraphs(pool: EvidencePool, final_response: str,
                             provider: EmbeddingProvider,
                             limit: int = 15) -> list[str]:
    """Paragraph ids submitted for retrieval scoring, at most ``limit``.

    When the pool holds no more distinct paragraphs than the limit they are
    all returned in acceptance-then-path order without any embedding work.
    Otherwise evidence items are re-ranked by cosine similarity between their
    rendered text and the final response, and paragraphs are emitted in
    evidence-rank then path order, deduplicated and truncated.
    """
    if not final_response.strip():
        raise ValueError("final_response must be non-empty")
    distinct = pool.distinct_paragraphs()
    if len(distinct) <= limit:
        return [p.id for p in distinct]

    response_vec = provider.embed_text(final_response)
    scored = []
    for order, evidence in enumerate(pool.evidences):
        score = cosine_similarity(provider.embed_text(_evidence_text(evidence)),
                                  response_vec)
        scored.append((score, order, evidence))
    scored.sort(key=lambda item: (-item[0], item[1]))

    out: list[str] = []
    seen: set[str] = set()
    for _score, _order, evidence in scored:
        for p in evidence.path:
            if p.id not in seen:
                seen.add(p.id)
                out.append(p.id)
                if len(out) == limit:
                    return out
    return out
