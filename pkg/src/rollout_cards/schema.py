"""JSON Schema (draft 2020-12) export for the five row types and the manifest."""

from __future__ import annotations

from .model import RELEASE_KINDS, ROW_TYPES, STREAM_NAMES, Column

DRAFT = "https://json-schema.org/draft/2020-12/schema"
TIMESTAMP_PATTERN = (
    r"^\d{4}-\d{2}-\d{2}[Tt]\d{2}:\d{2}:\d{2}(\.\d+)?([Zz]|[+-]\d{2}:\d{2})$"
)


def _column_schema(col: Column) -> dict:
    if col.kind == "str":
        body: dict = {"type": "string"}
    elif col.kind == "int":
        body = {"type": "integer", "minimum": 0}
    elif col.kind == "object":
        body = {"type": "object"}
    elif col.kind == "timestamp":
        body = {"type": "string", "format": "date-time", "pattern": TIMESTAMP_PATTERN}
    elif col.kind == "enum":
        body = {"type": "string", "enum": list(col.choices)}
    else:
        body = {}
    if col.nullable:
        if "enum" in body:
            body["enum"] = body["enum"] + [None]
        body["type"] = [body["type"], "null"]
    return body


def _row_schema(stream: str) -> dict:
    cls = ROW_TYPES[stream]
    return {
        "$schema": DRAFT,
        "$id": f"rollout-card/{stream}.schema.json",
        "title": f"{stream}.jsonl row",
        "type": "object",
        "properties": {col.name: _column_schema(col) for col in cls.COLUMNS},
        "required": [col.name for col in cls.COLUMNS if col.required],
        # columns a consumer does not recognise are allowed and ignored
        "additionalProperties": True,
    }


def _manifest_schema() -> dict:
    return {
        "$schema": DRAFT,
        "$id": "rollout-card/manifest.schema.json",
        "title": "manifest.json",
        "type": "object",
        "properties": {
            "format_version": {"type": "string", "pattern": r"^\d+\.\d+$"},
            "run_id": {"type": "string"},
            "created_at": {"type": "string", "format": "date-time", "pattern": TIMESTAMP_PATTERN},
            "stream_hashes": {
                "type": "object",
                "propertyNames": {"enum": list(STREAM_NAMES)},
                "additionalProperties": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
            },
            "blob_index": {
                "type": "array",
                "items": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
            },
            "release_scope": {
                "type": "object",
                "properties": {
                    "kind": {"enum": list(RELEASE_KINDS)},
                    "omitted": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {"selector": {"type": "string"}, "reason": {"type": "string"}},
                            "required": ["selector", "reason"],
                        },
                    },
                    "license_note": {"type": "string"},
                    "redistribution_limit": {"type": "string"},
                },
                "required": ["kind"],
            },
            "rule_registry": {"type": "array", "items": {"type": "object"}},
            "extra": {"type": "object"},
        },
        "required": ["format_version", "run_id", "created_at", "stream_hashes"],
        "additionalProperties": True,
    }


def export_row_schemas() -> dict:
    """Return one schema per stream plus the manifest schema, keyed by name."""
    schemas = {stream: _row_schema(stream) for stream in STREAM_NAMES}
    schemas["manifest"] = _manifest_schema()
    return {"$schema": DRAFT, "title": "rollout-card bundle schemas", "schemas": schemas}
