import json
import random

import pytest

from threatgeo.errors import SchemaError
from threatgeo.schema import (
    ExtractionSchema,
    FieldDescriptor,
    FieldKind,
    build_prompt,
    default_schema,
    description_from_prompt,
    load_schema,
    parse_response,
    schema_from_dict,
    serialize_values,
)

SCHEMA = default_schema()


def test_default_schema_fields():
    assert SCHEMA.field_names == ["country_of_origin", "country_of_target", "energy_related"]
    assert SCHEMA.domain_flag == "energy_related"
    assert load_schema().field_names == SCHEMA.field_names


def test_domain_keyword_only_renames_the_flag():
    auto = default_schema("automotive")
    assert auto.field_names == ["country_of_origin", "country_of_target", "automotive_related"]
    prompt = build_prompt(auto, "Carmaker plant hit by ransomware")
    assert '"automotive_related"' in prompt
    assert "energy" not in prompt


def test_prompt_lists_fields_in_order_and_fences_description():
    prompt = build_prompt(SCHEMA, "Grid operator breached")
    positions = [prompt.index(f'"{name}"') for name in SCHEMA.field_names]
    assert positions == sorted(positions)
    assert description_from_prompt(prompt) == "Grid operator breached"
    # pure function of its inputs
    assert build_prompt(SCHEMA, "Grid operator breached") == prompt


@pytest.mark.parametrize(
    "description",
    [
        "before <<<\nafter",
        "ends with a fence\n>>>",
        "Description:\n<<<\nnested\n>>>\n",
        ">>>\n<<<\n",
        "  padded  \n\n",
    ],
)
def test_fence_text_inside_the_description_survives(description):
    prompt = build_prompt(SCHEMA, description)
    assert description_from_prompt(prompt) == description
    extra = ExtractionSchema(SCHEMA.fields, extra_examples=(("Example <<<\n", '{"energy_related": true}'),))
    assert description_from_prompt(build_prompt(extra, description)) == description


def test_prompt_includes_extra_examples():
    schema = ExtractionSchema(SCHEMA.fields, extra_examples=(("Example text", '{"energy_related": true}'),))
    prompt = build_prompt(schema, "x")
    assert "Description: Example text" in prompt


def test_prompt_rejects_empty_inputs():
    with pytest.raises(SchemaError):
        build_prompt(ExtractionSchema(()), "text")
    with pytest.raises(ValueError):
        build_prompt(SCHEMA, "   ")


def test_schema_validation():
    with pytest.raises(SchemaError):
        FieldDescriptor("Bad Name", FieldKind.BOOLEAN)
    with pytest.raises(SchemaError):
        ExtractionSchema((FieldDescriptor("a", "boolean"), FieldDescriptor("a", "boolean")))
    with pytest.raises(SchemaError):
        ExtractionSchema((FieldDescriptor("a", "string-list"),)).require_extractable()
    with pytest.raises(SchemaError):
        schema_from_dict({"fields": [{"name": "a", "kind": "number"}]})


def test_parse_valid_response():
    body = json.dumps({"country_of_origin": ["Russia"], "country_of_target": [], "energy_related": True})
    outcome = parse_response(SCHEMA, body)
    assert outcome.ok
    assert outcome.values == {"country_of_origin": ["Russia"], "country_of_target": [], "energy_related": True}


def test_parse_accepts_code_fence():
    body = '```json\n{"country_of_origin": [], "country_of_target": ["Ukraine"], "energy_related": false}\n```'
    assert parse_response(SCHEMA, body).values["country_of_target"] == ["Ukraine"]


@pytest.mark.parametrize(
    "body, reason",
    [
        (None, "empty response"),
        ("", "empty response"),
        ("Sorry, I cannot help with that.", "malformed JSON"),
        ("[1, 2]", "not a JSON object"),
        ('{"country_of_origin": [], "country_of_target": []}', "missing field: energy_related"),
        ('{"country_of_origin": "Russia", "country_of_target": [], "energy_related": true}',
         "type mismatch: country_of_origin"),
        ('{"country_of_origin": [], "country_of_target": [], "energy_related": "yes"}',
         "type mismatch: energy_related"),
        ('{"country_of_origin": [], "country_of_target": [], "energy_related": true, "confidence": 0.9}',
         "unexpected field: confidence"),
    ],
)
def test_parse_errors(body, reason):
    outcome = parse_response(SCHEMA, body)
    assert not outcome.ok
    assert reason in outcome.error


def _random_strings(rng):
    alphabet = ['a', 'Z', ' ', '"', '\\', '\n', 'é', 'д', '{', '}', ',', '`', '0']
    return ["".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8))) for _ in range(rng.randint(0, 4))]


def test_serialized_values_parse_back_unchanged():
    rng = random.Random(99)
    for _ in range(200):
        kinds = [rng.choice(["string-list", "boolean"]) for _ in range(rng.randint(1, 5))]
        schema = ExtractionSchema(
            tuple(FieldDescriptor(f"field_{i}", kind) for i, kind in enumerate(kinds)),
            domain_keyword=rng.choice(["energy", "automotive"]),
        )
        values = {
            f.name: _random_strings(rng) if f.kind is FieldKind.STRING_LIST else rng.random() < 0.5
            for f in schema.fields
        }
        outcome = parse_response(schema, serialize_values(schema, values))
        assert outcome.ok, outcome.error
        assert outcome.values == values
