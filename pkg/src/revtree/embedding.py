"""Embedding providers.

Three interchangeable implementations back the corpus index and query
embedding:

* :class:`HashedEmbedder` -- fully offline and deterministic; every token maps
  to a seeded pseudo-random direction and a text embeds to the count-weighted
  sum over its token multiset.  Its only contract is determinism and a fixed
  dimension, not semantic quality.
* :class:`RemoteEmbedder` -- thin client for an HTTPS embedding endpoint,
  configured through environment variables.
* :class:`PrecomputedEmbeddings` -- serves vectors loaded from a file keyed by
  paragraph id, optionally delegating free-text (query) embedding to a
  fallback provider.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import CorpusError, ProviderConfigError, TransportError

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import Paragraph

EMBED_BASE_URL_VAR = "REVTREE_EMBED_BASE_URL"
EMBED_API_KEY_VAR = "REVTREE_EMBED_API_KEY"
EMBED_MODEL_VAR = "REVTREE_EMBED_MODEL"


class EmbeddingProvider:
    """Base contract: deterministic text -> 1-D float vector of fixed dim."""

    provider_id: str = "abstract"
    dim: Optional[int] = None

    def embed_text(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_paragraph(self, paragraph: "Paragraph", text: str) -> np.ndarray:
        """Embed one corpus paragraph.

        ``text`` is the already-composed string to embed (title and body may
        have been joined by the caller).  The default simply delegates to
        :meth:`embed_text`; id-keyed providers override this.
        """
        return self.embed_text(text)


class HashedEmbedder(EmbeddingProvider):
    """Deterministic test embedder: seeded token-hash projection.

    Each distinct token deterministically maps (via a keyed blake2b digest
    seeding a PRNG) to a dense Gaussian direction in ``dim`` dimensions; a
    text embeds to the sum of its tokens' directions, weighted by token
    count.  Identical input always yields an identical vector, across
    processes and platforms.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.seed = seed
        self.provider_id = f"hashed:dim={dim},seed={seed}"
        self._key = str(seed).encode("utf-8")
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(
                token.encode("utf-8"), digest_size=8, key=self._key
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            vec = rng.standard_normal(self.dim)
            self._token_cache[token] = vec
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        tokens = text.lower().split()
        if not tokens:
            raise ValueError("cannot embed empty or whitespace-only text")
        acc = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            acc += self._token_vector(token)
        return acc


class RemoteEmbedder(EmbeddingProvider):
    """Client for a remote embedding service speaking the common
    ``POST {base}/embeddings`` JSON protocol.

    Base URL, API key and model name come from the ``REVTREE_EMBED_BASE_URL``,
    ``REVTREE_EMBED_API_KEY`` and ``REVTREE_EMBED_MODEL`` environment
    variables.  Construction fails before any network activity if they are
    not set.
    """

    def __init__(self, session=None, timeout: float = 60.0, max_attempts: int = 3,
                 backoff_s: float = 0.5):
        base_url = os.environ.get(EMBED_BASE_URL_VAR)
        api_key = os.environ.get(EMBED_API_KEY_VAR)
        model = os.environ.get(EMBED_MODEL_VAR)
        missing = [
            name
            for name, value in (
                (EMBED_BASE_URL_VAR, base_url),
                (EMBED_API_KEY_VAR, api_key),
                (EMBED_MODEL_VAR, model),
            )
            if not value
        ]
        if missing:
            raise ProviderConfigError(
                "remote embedder not configured; missing environment "
                f"variables: {', '.join(missing)}"
            )
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.provider_id = f"remote:{model}"
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._api_key = api_key
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty or whitespace-only text")
        import requests

        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._session.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model, "input": [text]},
                    headers={"Authorization": f"Bearer {self._api_key}"},
                    timeout=self.timeout,
                )
                if resp.status_code >= 500 or resp.status_code in (408, 429):
                    raise TransportError(
                        f"embedding service returned {resp.status_code}"
                    )
                resp.raise_for_status()
                values = resp.json()["data"][0]["embedding"]
                vec = np.asarray(values, dtype=np.float64)
                if self.dim is None:
                    self.dim = vec.shape[0]
                elif vec.shape[0] != self.dim:
                    raise ProviderConfigError(
                        f"embedding dim changed mid-run: {vec.shape[0]} != {self.dim}"
                    )
                return vec
            except (TransportError, requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff_s * (2 ** attempt))
        raise TransportError(f"embedding request failed after {self.max_attempts} "
                             f"attempts: {last_error}")


class PrecomputedEmbeddings(EmbeddingProvider):
    """Serves paragraph vectors loaded from a line-delimited file.

    Each line is a JSON record ``{"id": ..., "values": [...]}``.  Free-text
    embedding (needed at query time) is delegated to ``fallback`` when given,
    otherwise it is an error.
    """

    def __init__(self, path: str | Path, fallback: Optional[EmbeddingProvider] = None):
        self.path = Path(path)
        self.fallback = fallback
        self._vectors: dict[str, np.ndarray] = {}
        dim: Optional[int] = None
        with open(self.path, "r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    pid = record["id"]
                    values = record["values"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CorpusError(
                        f"{self.path}: line {lineno}: invalid embedding record: {exc}"
                    ) from exc
                vec = np.asarray(values, dtype=np.float64)
                if vec.ndim != 1 or vec.size == 0:
                    raise CorpusError(
                        f"{self.path}: line {lineno}: embedding values must be a "
                        "non-empty flat list"
                    )
                if dim is None:
                    dim = vec.shape[0]
                elif vec.shape[0] != dim:
                    raise CorpusError(
                        f"{self.path}: line {lineno}: inconsistent embedding dim "
                        f"{vec.shape[0]} != {dim}"
                    )
                if pid in self._vectors:
                    raise CorpusError(
                        f"{self.path}: line {lineno}: duplicate embedding id '{pid}'"
                    )
                self._vectors[pid] = vec
        self.dim = dim
        self.provider_id = f"precomputed:{self.path.name}"

    def embed_paragraph(self, paragraph: "Paragraph", text: str) -> np.ndarray:
        try:
            return self._vectors[paragraph.id]
        except KeyError:
            raise CorpusError(
                f"no precomputed embedding for paragraph id '{paragraph.id}'"
            ) from None

    def embed_text(self, text: str) -> np.ndarray:
        if self.fallback is None:
            raise ProviderConfigError(
                "precomputed embeddings cannot embed free text; configure a "
                "fallback provider for queries"
            )
        return self.fallback.embed_text(text)


def write_embeddings_file(path: str | Path, embeddings: dict[str, np.ndarray]) -> None:
    """Write an id -> vector map as line-delimited JSON, sorted by id."""
    with open(path, "w", encoding="utf-8") as handle:
        for pid in sorted(embeddings):
            record = {"id": pid, "values": [float(x) for x in embeddings[pid]]}
            handle.write(json.dumps(record, sort_keys=True) + "\n")
