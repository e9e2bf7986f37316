"""Versioned JSON documents for design and comparator specifications.

Document shape (exactly one of "design" / "comparator" per document):

    {"schema_version": 1, "design": {...DesignSpec fields...}}
    {"schema_version": 1, "comparator": {"comparator": "simon2", ...}}

Round-trip guarantee: parse -> serialize -> parse is the identity on every
document this module emits.
"""

from __future__ import annotations

import json

from .comparators import comparator_from_dict
from .design import DesignSpec
from .errors import SchemaError

SCHEMA_VERSION = 1


def design_document(spec: DesignSpec) -> dict:
    return {"schema_version": SCHEMA_VERSION, "design": spec.to_dict()}


def comparator_document(comp) -> dict:
    return {"schema_version": SCHEMA_VERSION, "comparator": comp.to_dict()}


def document_for(obj) -> dict:
    if isinstance(obj, DesignSpec):
        return design_document(obj)
    if hasattr(obj, "to_dict"):
        return comparator_document(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _check_version(doc: dict) -> None:
    v = doc.get("schema_version")
    if v is None:
        raise SchemaError("missing schema_version", field="schema_version")
    if v != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {v!r} (supported: {SCHEMA_VERSION})",
                          field="schema_version")


def parse_document(doc: dict):
    """Parse a versioned document into a DesignSpec or a comparator."""
    if not isinstance(doc, dict):
        raise SchemaError(f"document must be a JSON object, got {type(doc).__name__}")
    _check_version(doc)
    has_design, has_comp = "design" in doc, "comparator" in doc
    if has_design == has_comp:
        raise SchemaError("document needs exactly one of 'design' or 'comparator'")
    body = doc["design"] if has_design else doc["comparator"]
    if not isinstance(body, dict):
        raise SchemaError("spec body must be a JSON object",
                          field="design" if has_design else "comparator")
    try:
        return DesignSpec.from_dict(body) if has_design else comparator_from_dict(body)
    except KeyError as e:
        raise SchemaError(f"missing required field {e.args[0]!r}", field=str(e.args[0])) from e
    except (TypeError, ValueError) as e:
        raise SchemaError(str(e)) from e


def parse_design(doc: dict) -> DesignSpec:
    obj = parse_document(doc)
    if not isinstance(obj, DesignSpec):
        raise SchemaError("expected a 'design' document")
    return obj


def loads(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}") from e
    return parse_document(doc)


def dumps(obj, indent: int | None = 2) -> str:
    return json.dumps(document_for(obj), indent=indent)


def load_file(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return loads(text)
