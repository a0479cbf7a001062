from __future__ import annotations

from typing import Any, Dict


class SelfTrainError(Exception):
    """Base error; `code` is stable and shows up in CLI/HTTP error payloads."""

    code = "selftrain_error"
    status_code = 400

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, **self.details}


class DimensionError(SelfTrainError):
    code = "dimension_error"


class NumericError(SelfTrainError):
    code = "numeric_error"


class DomainError(SelfTrainError):
    code = "domain_error"


class SimilarityError(DomainError):
    code = "similarity_error"


class SelectionError(SelfTrainError):
    code = "selection_error"


class ConfigurationError(SelfTrainError):
    code = "configuration_error"


class DataError(SelfTrainError):
    code = "data_error"


class ParseError(DataError):
    code = "parse_error"

    def __init__(self, message: str, line: int, **details: Any) -> None:
        super().__init__(message, line=line, **details)
        self.line = line


class ProcedureError(SelfTrainError):
    code = "procedure_error"
    status_code = 500


class CheckpointError(SelfTrainError):
    code = "checkpoint_error"


class CorruptCheckpointError(CheckpointError):
    code = "corrupt_checkpoint"


class CheckpointVersionError(CheckpointError):
    code = "checkpoint_version_mismatch"
