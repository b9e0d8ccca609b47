"""
Extraction schema: the ordered field list injected into the prompt and
enforced on every response.

The default schema is country_of_origin (string-list), country_of_target
(string-list), energy_related (boolean). Swapping the domain keyword (e.g.
"automotive") renames the flag to `<keyword>_related` and changes nothing
else.
"""

import json
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, create_model

from .errors import SchemaError

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_SCHEMA_PATH = os.path.join(DATA_DIR, "schema_default.json")
PROMPT_TEMPLATE_PATH = os.path.join(DATA_DIR, "prompt_template.txt")

# The description is fenced so backends (and the mock) can find it again.
DESCRIPTION_OPEN = "<<<"
DESCRIPTION_CLOSE = ">>>"

_FIELD_NAME = re.compile(r"^[a-z][a-z0-9_]*$")
_KIND_HINT = {"string-list": "JSON array of strings", "boolean": "JSON true or false"}


class FieldKind(str, Enum):
    STRING_LIST = "string-list"
    BOOLEAN = "boolean"


@dataclass(frozen=True)
class FieldDescriptor:
    name: str
    kind: FieldKind
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", FieldKind(self.kind))
        if not _FIELD_NAME.match(self.name or ""):
            raise SchemaError(f"invalid field name: {self.name!r}")


@dataclass(frozen=True)
class ExtractionSchema:
    fields: Tuple[FieldDescriptor, ...]
    domain_keyword: str = "energy"
    # (description, expected JSON object text) pairs shown to the model
    extra_examples: Tuple[Tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "extra_examples", tuple(tuple(e) for e in self.extra_examples))
        names = [f.name for f in self.fields]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate field names: {dupes}")
        if not self.domain_keyword or not self.domain_keyword.strip():
            raise SchemaError("domain_keyword must be non-empty")

    @property
    def field_names(self) -> List[str]:
        return [f.name for f in self.fields]

    @property
    def domain_flag(self) -> Optional[str]:
        for f in self.fields:
            if f.kind is FieldKind.BOOLEAN:
                return f.name
        return None

    def require_extractable(self) -> None:
        if not self.fields:
            raise SchemaError("schema has no fields")
        if self.domain_flag is None:
            raise SchemaError("schema needs a boolean domain flag")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "domain_keyword": self.domain_keyword,
            "fields": [
                {"name": f.name, "kind": f.kind.value, "description": f.description} for f in self.fields
            ],
            "extra_examples": [{"description": d, "response": r} for d, r in self.extra_examples],
        }


def _keyword_slug(keyword: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", keyword.strip().lower()).strip("_")


def default_schema(domain_keyword: str = "energy") -> ExtractionSchema:
    slug = _keyword_slug(domain_keyword)
    if not slug:
        raise SchemaError(f"unusable domain keyword: {domain_keyword!r}")
    return ExtractionSchema(
        fields=(
            FieldDescriptor(
                "country_of_origin",
                FieldKind.STRING_LIST,
                "Countries (or regions) the attack or threat actor originates from.",
            ),
            FieldDescriptor(
                "country_of_target",
                FieldKind.STRING_LIST,
                "Countries (or regions) whose people, organizations or infrastructure are targeted.",
            ),
            FieldDescriptor(
                f"{slug}_related",
                FieldKind.BOOLEAN,
                f"true if the incident concerns {domain_keyword} infrastructure, {domain_keyword} "
                f"companies or the {domain_keyword} sector; otherwise false.",
            ),
        ),
        domain_keyword=domain_keyword,
    )


def schema_from_dict(data: Dict[str, Any]) -> ExtractionSchema:
    try:
        fields = tuple(
            FieldDescriptor(str(f["name"]), FieldKind(f["kind"]), str(f.get("description", "")))
            for f in data["fields"]
        )
        examples = []
        for ex in data.get("extra_examples") or []:
            response = ex["response"]
            if not isinstance(response, str):
                response = json.dumps(response, ensure_ascii=False)
            examples.append((str(ex["description"]), response))
        return ExtractionSchema(
            fields=fields,
            domain_keyword=str(data.get("domain_keyword", "energy")),
            extra_examples=tuple(examples),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"invalid schema document: {e}") from e


def load_schema(path: Optional[str] = None) -> ExtractionSchema:
    path = path or DEFAULT_SCHEMA_PATH
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot load schema {path}: {e}") from e
    schema = schema_from_dict(data)
    schema.require_extractable()
    return schema


@lru_cache(maxsize=1)
def _prompt_template() -> str:
    with open(PROMPT_TEMPLATE_PATH, "r", encoding="utf-8") as f:
        return f.read()


def build_prompt(schema: ExtractionSchema, description: str) -> str:
    """Pure function of (schema, description)."""
    if not schema.fields:
        raise SchemaError("schema has no fields; refusing to build a prompt")
    if not description or not description.strip():
        raise ValueError("description must be non-empty")
    lines = []
    for i, f in enumerate(schema.fields, 1):
        lines.append(f'{i}. "{f.name}" ({f.kind.value}, {_KIND_HINT[f.kind.value]}): {f.description}')
    examples = ""
    if schema.extra_examples:
        parts = ["", "Examples:"]
        for ex_description, ex_response in schema.extra_examples:
            parts.append(f"Description: {ex_description}")
            parts.append(f"JSON: {ex_response}")
        examples = "\n".join(parts) + "\n"
    return _prompt_template().format(
        fields="\n".join(lines),
        domain_keyword=schema.domain_keyword,
        examples=examples,
        open_marker=DESCRIPTION_OPEN,
        close_marker=DESCRIPTION_CLOSE,
        description=description,
    )


@lru_cache(maxsize=1)
def _description_fence() -> Tuple[str, str]:
    """Template text right before and right after the description."""
    head, _, tail = _prompt_template().partition("{description}")
    opening = head.rpartition("{examples}")[2].replace("{open_marker}", DESCRIPTION_OPEN)
    return opening, tail.replace("{close_marker}", DESCRIPTION_CLOSE)


def description_from_prompt(prompt: str) -> str:
    """Inverse of the description fencing in build_prompt.

    The description is the last template slot, so it runs from the first
    opening fence to the fixed template tail whatever text it contains.
    """
    opening, closing = _description_fence()
    start = prompt.find(opening)
    if start == -1:
        return prompt
    body = prompt[start + len(opening):]
    return body[: len(body) - len(closing)] if body.endswith(closing) else body


@dataclass(frozen=True)
class ParseOutcome:
    values: Optional[Dict[str, Any]] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@lru_cache(maxsize=32)
def _response_model(schema: ExtractionSchema) -> Type[BaseModel]:
    # Internal attribute names avoid clashes with BaseModel members; the
    # schema names are aliases so errors still report them.
    definitions: Dict[str, Any] = {}
    for i, f in enumerate(schema.fields):
        annotation = List[str] if f.kind is FieldKind.STRING_LIST else bool
        definitions[f"f{i}"] = (annotation, Field(..., alias=f.name))
    return create_model(
        "ThreatParser",
        __config__=ConfigDict(extra="forbid", strict=True),
        **definitions,
    )


def _strip_fence(body: str) -> str:
    text = body.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def _describe(error: ValidationError) -> str:
    reasons: List[str] = []
    for item in error.errors():
        name = str(item["loc"][0]) if item.get("loc") else "<root>"
        if item["type"] == "missing":
            reason = f"missing field: {name}"
        elif item["type"] == "extra_forbidden":
            reason = f"unexpected field: {name}"
        else:
            reason = f"type mismatch: {name}"
        if reason not in reasons:
            reasons.append(reason)
    return "; ".join(reasons)


def parse_response(schema: ExtractionSchema, body: Optional[str]) -> ParseOutcome:
    """Validate a response body against the schema; never raises."""
    if body is None or not body.strip():
        return ParseOutcome(error="empty response")
    try:
        data = json.loads(_strip_fence(body))
    except json.JSONDecodeError as e:
        return ParseOutcome(error=f"malformed JSON: {e.msg}")
    if not isinstance(data, dict):
        return ParseOutcome(error="response is not a JSON object")
    try:
        parsed = _response_model(schema).model_validate(data, strict=True)
    except ValidationError as e:
        return ParseOutcome(error=_describe(e))
    values = {f.name: getattr(parsed, f"f{i}") for i, f in enumerate(schema.fields)}
    return ParseOutcome(values=values)


def serialize_values(schema: ExtractionSchema, values: Dict[str, Any]) -> str:
    return json.dumps({f.name: values[f.name] for f in schema.fields}, ensure_ascii=False)
