"""Exception types shared across the package."""


class RevtreeError(Exception):
    """Base class for all package-specific errors."""


class CorpusError(RevtreeError):
    """Corpus ingestion or index consistency problem."""


class ProviderConfigError(RevtreeError):
    """A provider is missing configuration (env vars, rule files, ...)."""


class TransportError(RevtreeError):
    """A retryable failure talking to a remote service."""


class ProviderError(RevtreeError):
    """A non-retryable provider failure (bad request, exhausted retries)."""


class OracleMissError(RevtreeError):
    """A scripted oracle had no matching rule and no default response."""
