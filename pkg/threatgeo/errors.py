from typing import Iterable, List


class ThreatGeoError(Exception):
    """Base class for every failure the pipeline reports on purpose."""


class IngestError(ThreatGeoError):
    pass


class ConfigError(ThreatGeoError):
    def __init__(self, message: str, problems: Iterable[str] = ()):
        super().__init__(message)
        self.problems: List[str] = list(problems)


class SchemaError(ThreatGeoError):
    pass


class BackendError(ThreatGeoError):
    """Transport or quota failure of the generative backend."""


class CheckpointError(ThreatGeoError):
    pass


class EvaluationError(ThreatGeoError):
    pass


class ScanError(ThreatGeoError):
    def __init__(self, hash_value: str, detail: str):
        super().__init__(f"{hash_value}: {detail}")
        self.hash = hash_value
        self.detail = detail


class InvalidHashError(ThreatGeoError):
    pass
