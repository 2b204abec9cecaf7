"""Trace schema, datasets and the line-delimited trace file format.

A trace file holds one executable. Line 1 is the schema object, every further
line is a JSON array with one value per element::

    {"id": "fa", "name": "fa(int n)", "owner": null,
     "elements": [{"name": "n", "role": "param_in", "dtype": "int"},
                  {"name": "fa", "role": "result_out", "dtype": "int"}]}
    [4, 24]
    [2, 2]
"""
from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyTrace, MalformedHeader, RowArityMismatch, TypeMismatch

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class DataType(enum.Enum):
    INTEGER = "int"
    FLOAT = "float"
    TEXT = "text"


class ElementRole(enum.Enum):
    PARAMETER_IN = "param_in"
    PROPERTY_READ = "prop_read"
    INVOCATION_RESULT_IN = "result_in"
    RESULT_OUT = "result_out"
    PROPERTY_WRITE = "prop_write"
    PARAMETER_OUT = "param_out"

    @property
    def is_input(self) -> bool:
        return self in _INPUT_ROLES

    @property
    def is_output(self) -> bool:
        return not self.is_input


_INPUT_ROLES = frozenset(
    {ElementRole.PARAMETER_IN, ElementRole.PROPERTY_READ, ElementRole.INVOCATION_RESULT_IN}
)


@dataclass(frozen=True)
class AtomicElement:
    name: str
    role: ElementRole
    dtype: DataType


@dataclass(frozen=True)
class ExecutableSchema:
    id: str
    display_name: str
    elements: tuple[AtomicElement, ...]
    owner_type: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        seen = set()
        for el in self.elements:
            key = (el.name, el.role)
            if key in seen:
                raise MalformedHeader(
                    f"{self.id}: element {el.name!r} declared twice with role {el.role.value}"
                )
            seen.add(key)

    def __len__(self) -> int:
        return len(self.elements)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.display_name,
            "owner": self.owner_type,
            "elements": [
                {"name": el.name, "role": el.role.value, "dtype": el.dtype.value}
                for el in self.elements
            ],
        }

    @classmethod
    def from_json(cls, obj) -> "ExecutableSchema":
        if not isinstance(obj, dict):
            raise MalformedHeader("schema record must be a JSON object")
        try:
            sid, name, elements = obj["id"], obj["name"], obj["elements"]
        except KeyError as exc:
            raise MalformedHeader(f"schema record lacks key {exc.args[0]!r}") from None
        owner = obj.get("owner")
        if not isinstance(sid, str) or not sid:
            raise MalformedHeader("schema id must be a non-empty string")
        if not isinstance(name, str) or not (owner is None or isinstance(owner, str)):
            raise MalformedHeader(f"{sid}: name/owner must be strings")
        if not isinstance(elements, list):
            raise MalformedHeader(f"{sid}: elements must be a list")
        parsed = []
        for el in elements:
            try:
                parsed.append(
                    AtomicElement(
                        name=str(el["name"]),
                        role=ElementRole(el["role"]),
                        dtype=DataType(el["dtype"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedHeader(f"{sid}: bad element {el!r}") from exc
        return cls(id=sid, display_name=name, elements=tuple(parsed), owner_type=owner)


@dataclass(frozen=True)
class IOPair:
    input_index: int
    output_index: int


@dataclass(frozen=True)
class TraceDataset:
    schema: ExecutableSchema
    rows: tuple[tuple, ...]

    def __post_init__(self):
        rows = tuple(
            check_row(self.schema, row, lineno=i + 2) for i, row in enumerate(self.rows)
        )
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, j: int) -> list:
        return [row[j] for row in self.rows]


def coerce_value(value, dtype: DataType):
    """Validate one raw value against ``dtype``; return its canonical form.

    Integers are accepted in float columns (``2`` reads as ``2.0``). Nothing
    else converts across kinds.
    """
    if dtype is DataType.INTEGER:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatch(f"expected int, got {value!r}")
        if not INT64_MIN <= value <= INT64_MAX:
            raise TypeMismatch(f"integer {value} outside the 64-bit range")
        return value
    if dtype is DataType.FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatch(f"expected float, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise TypeMismatch(f"non-finite float {value!r}")
        return value
    if not isinstance(value, str):
        raise TypeMismatch(f"expected text, got {value!r}")
    return value


def check_row(schema: ExecutableSchema, row: Sequence, lineno: int | None = None) -> tuple:
    where = f"{schema.id}" + (f" line {lineno}" if lineno is not None else "")
    if not isinstance(row, (list, tuple)):
        raise RowArityMismatch(f"{where}: row must be an array, got {row!r}")
    if len(row) != len(schema.elements):
        raise RowArityMismatch(
            f"{where}: {len(row)} values for {len(schema.elements)} elements"
        )
    out = []
    for value, el in zip(row, schema.elements):
        try:
            out.append(coerce_value(value, el.dtype))
        except TypeMismatch as exc:
            raise TypeMismatch(f"{where}, element {el.name!r}: {exc}") from None
    return tuple(out)


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def parse_trace_lines(lines: Iterable[str], source: str = "<trace>") -> TraceDataset:
    records = [line for line in lines if line.strip()]
    if not records:
        raise MalformedHeader(f"{source}: empty file, no schema record")
    try:
        header = json.loads(records[0])
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{source}: schema line is not JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeader(f"{source}: first record is not a schema object")
    schema = ExecutableSchema.from_json(header)
    if len(records) == 1:
        raise EmptyTrace(f"{source}: schema {schema.id!r} has no rows")
    rows = []
    for lineno, line in enumerate(records[1:], start=2):
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RowArityMismatch(f"{source} line {lineno}: not a JSON array: {exc}") from None
        rows.append(check_row(schema, row, lineno))
    return TraceDataset(schema=schema, rows=tuple(rows))


def parse_trace_file(path) -> TraceDataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        return parse_trace_lines(fh, source=str(path))


def dumps_trace(dataset: TraceDataset) -> str:
    buf = io.StringIO()
    buf.write(_dumps(dataset.schema.to_json()) + "\n")
    for row in dataset.rows:
        buf.write(_dumps(list(row)) + "\n")
    return buf.getvalue()


def write_trace_file(dataset: TraceDataset, path) -> None:
    Path(path).write_text(dumps_trace(dataset), encoding="utf-8")


def io_elements(schema: ExecutableSchema) -> tuple[list[int], list[int]]:
    """Indices of input-role and output-role elements, in schema order."""
    inputs = [j for j, el in enumerate(schema.elements) if el.role.is_input]
    outputs = [j for j, el in enumerate(schema.elements) if el.role.is_output]
    return inputs, outputs


def io_pairs(schema: ExecutableSchema) -> list[IOPair]:
    inputs, outputs = io_elements(schema)
    return [IOPair(i, o) for i in inputs for o in outputs]
