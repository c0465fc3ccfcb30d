"""Exception hierarchy shared across the engine."""


class TtpmapError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(TtpmapError):
    """Invalid parameter combination (window/stride, cutoffs, identities)."""


class CorpusFormatError(TtpmapError):
    """Malformed corpus document; message names the offending record."""


class DuplicateTechniqueError(CorpusFormatError):
    """Same technique id appears twice; message carries both locations."""


class DuplicateItemError(TtpmapError):
    """Two text items share an item id."""


class UnknownTechniqueError(TtpmapError):
    """Technique id not present in the catalog."""


class DimensionMismatchError(TtpmapError):
    """Vectors of different dimension fed to a similarity function."""


class ZeroVectorError(TtpmapError):
    """All-zero vector has no direction; cosine is undefined."""


class MissingEmbeddingError(TtpmapError):
    """Lookup backend has no vector for the requested text hash."""


class BackendError(TtpmapError):
    """Base for scoring-backend failures."""


class RemoteBackendError(BackendError):
    """Remote embedding/relevance service failure."""


class RemoteTimeoutError(RemoteBackendError):
    pass


class MalformedResponseError(RemoteBackendError):
    pass


class DimensionDriftError(RemoteBackendError):
    """Remote service changed its vector dimension mid-run."""


class RelevanceRangeError(BackendError):
    """Mono-encoder backend produced a score outside [0, 1]."""


class StalenessError(TtpmapError):
    """Artifact was built against a different catalog digest."""


class DatasetFormatError(TtpmapError):
    """Malformed evaluation dataset row; message names the line."""


class IndexFormatError(TtpmapError):
    """Serialized artifact file is corrupt or has the wrong version."""
