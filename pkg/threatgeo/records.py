"""Structured extraction output (one ThreatRecord per RawRecord)."""

import datetime as dt
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from .ingest import RawRecord, RecordRef, parse_date


class Status(str, Enum):
    OK = "ok"
    PARSE_ERROR = "parse_error"
    BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class Provenance:
    model_id: str
    temperature: float
    timestamp: str


@dataclass
class ThreatRecord:
    """`energy_related` holds the schema's boolean domain flag, whatever its keyword."""

    source_id: str
    record_id: str
    country_of_origin: List[str]
    country_of_target: List[str]
    energy_related: Optional[bool]
    status: Status
    provenance: Provenance
    error_message: Optional[str] = None
    date: Optional[dt.date] = None
    # values of schema fields beyond origin/target/flag
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.status = Status(self.status)
        if self.status is Status.OK:
            if self.energy_related is None:
                raise ValueError("ok record without domain flag")
        elif not self.error_message:
            raise ValueError(f"{self.status.value} record without error_message")

    @property
    def ref(self) -> RecordRef:
        return (self.source_id, self.record_id)

    @property
    def ok(self) -> bool:
        return self.status is Status.OK

    @classmethod
    def failed(
        cls, record: RawRecord, status: Status, message: str, provenance: Provenance
    ) -> "ThreatRecord":
        return cls(
            source_id=record.source_id,
            record_id=record.record_id,
            country_of_origin=[],
            country_of_target=[],
            energy_related=None,
            status=status,
            error_message=message,
            provenance=provenance,
            date=record.date,
        )

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "source_id": self.source_id,
            "record_id": self.record_id,
            "country_of_origin": list(self.country_of_origin),
            "country_of_target": list(self.country_of_target),
            "energy_related": self.energy_related,
            "status": self.status.value,
            "error_message": self.error_message,
            "provenance": {
                "model_id": self.provenance.model_id,
                "temperature": self.provenance.temperature,
                "timestamp": self.provenance.timestamp,
            },
            "date": self.date.isoformat() if self.date else None,
        }
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ThreatRecord":
        prov = data.get("provenance") or {}
        return cls(
            source_id=str(data["source_id"]),
            record_id=str(data["record_id"]),
            country_of_origin=list(data.get("country_of_origin") or []),
            country_of_target=list(data.get("country_of_target") or []),
            energy_related=data.get("energy_related"),
            status=Status(data["status"]),
            error_message=data.get("error_message"),
            provenance=Provenance(
                model_id=str(prov.get("model_id", "")),
                temperature=float(prov.get("temperature", 0.0)),
                timestamp=str(prov.get("timestamp", "")),
            ),
            date=parse_date(data.get("date")),
            extra=dict(data.get("extra") or {}),
        )
