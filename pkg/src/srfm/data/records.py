"""Interaction records and their line-delimited JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

DOMAIN_KINDS = ("S", "R", "SR")
BEHAVIOR_TYPES = ("S", "R")

FIELDS = ("domain_id", "domain_kind", "user_id", "query_text", "item_id", "item_title",
          "history", "query_sparse", "item_sparse", "y_ctr", "y_sim")
MANDATORY = ("domain_id", "domain_kind", "user_id", "item_id", "item_title")


class ParseError(ValueError):
    def __init__(self, message, field=None, line_no=None):
        where = f"line {line_no}: " if line_no is not None else ""
        what = f"field {field!r}: " if field else ""
        super().__init__(f"{where}{what}{message}")
        self.message = message
        self.field = field
        self.line_no = line_no


@dataclass(frozen=True)
class BehaviorEvent:
    item_id: int
    behavior_type: str
    attr_ids: tuple = ()

    def __post_init__(self):
        if self.behavior_type not in BEHAVIOR_TYPES:
            raise ValueError(f"behavior_type must be S or R, got {self.behavior_type!r}")


@dataclass(frozen=True)
class InteractionRecord:
    domain_id: int
    domain_kind: str
    user_id: int
    item_id: int
    item_title: str
    query_text: str | None = None
    history: tuple = ()
    query_sparse: tuple = ()
    item_sparse: tuple = ()
    y_ctr: int | None = None
    y_sim: int | None = None

    @property
    def has_query(self):
        return self.domain_kind != "R"

    def validate(self):
        _check_record(self)
        return self

    def to_dict(self):
        return {
            "domain_id": self.domain_id,
            "domain_kind": self.domain_kind,
            "user_id": self.user_id,
            "query_text": self.query_text,
            "item_id": self.item_id,
            "item_title": self.item_title,
            "history": [{"item_id": e.item_id, "behavior_type": e.behavior_type,
                         "attr_ids": list(e.attr_ids)} for e in self.history],
            "query_sparse": list(self.query_sparse),
            "item_sparse": list(self.item_sparse),
            "y_ctr": self.y_ctr,
            "y_sim": self.y_sim,
        }


def _check_record(r: InteractionRecord):
    if not isinstance(r.domain_id, int) or r.domain_id < 1:
        raise ParseError("must be an integer >= 1", "domain_id")
    if r.domain_kind not in DOMAIN_KINDS:
        raise ParseError(f"must be one of {DOMAIN_KINDS}", "domain_kind")
    for name in ("user_id", "item_id"):
        v = getattr(r, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ParseError("must be a non-negative integer", name)
    if not isinstance(r.item_title, str):
        raise ParseError("must be a string", "item_title")
    if r.domain_kind == "R":
        if r.query_text is not None:
            raise ParseError("recommendation records carry no query", "query_text")
        if r.y_sim is not None:
            raise ParseError("recommendation records carry no relevance label", "y_sim")
    elif not isinstance(r.query_text, str):
        raise ParseError(f"{r.domain_kind} records need a query string", "query_text")
    for name in ("y_ctr", "y_sim"):
        v = getattr(r, name)
        if v is not None and (isinstance(v, bool) or v not in (0, 1)):
            raise ParseError("label must be 0 or 1", name)
    if r.y_ctr is None and r.y_sim is None:
        raise ParseError("at least one label is required", "y_ctr")
    for name in ("query_sparse", "item_sparse"):
        for v in getattr(r, name):
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ParseError("ids must be non-negative integers", name)


def _int_list(obj, name):
    if obj is None:
        return ()
    if not isinstance(obj, list):
        raise ParseError("must be a list", name)
    return tuple(obj)


def record_from_dict(obj) -> InteractionRecord:
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object")
    unknown = set(obj) - set(FIELDS)
    if unknown:
        raise ParseError("unknown field", sorted(unknown)[0])
    for name in MANDATORY:
        if name not in obj or obj[name] is None:
            raise ParseError("missing mandatory field", name)
    history = []
    for ev in _int_list(obj.get("history"), "history"):
        try:
            history.append(BehaviorEvent(int(ev["item_id"]), ev["behavior_type"],
                                         tuple(ev.get("attr_ids", ()))))
        except (KeyError, TypeError, ValueError) as err:
            raise ParseError(f"bad behavior event ({err})", "history") from None
    rec = InteractionRecord(
        domain_id=obj["domain_id"],
        domain_kind=obj["domain_kind"],
        user_id=obj["user_id"],
        item_id=obj["item_id"],
        item_title=obj["item_title"],
        query_text=obj.get("query_text"),
        history=tuple(history),
        query_sparse=_int_list(obj.get("query_sparse"), "query_sparse"),
        item_sparse=_int_list(obj.get("item_sparse"), "item_sparse"),
        y_ctr=obj.get("y_ctr"),
        y_sim=obj.get("y_sim"),
    )
    return rec.validate()


def parse_record(line, line_no=None) -> InteractionRecord:
    """Parse one JSON line; errors name the field and line."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as err:
        raise ParseError(f"invalid JSON ({err.msg})", line_no=line_no) from None
    try:
        return record_from_dict(obj)
    except ParseError as err:
        raise ParseError(err.message, err.field, line_no) from None


def serialize_record(record: InteractionRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, separators=(",", ":"))


def read_records(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if line.strip():
                records.append(parse_record(line, no))
    return records


def write_records(path, records):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(serialize_record(rec.validate()))
            fh.write("\n")


@dataclass
class Dataset:
    """Records pooled over domains; positions double as record ids."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def domains(self):
        return sorted({r.domain_id for r in self.records})

    def by_domain(self, domain_id):
        return Dataset([r for r in self.records if r.domain_id == domain_id])

    @classmethod
    def from_files(cls, paths):
        records = []
        for p in paths:
            records.extend(read_records(p))
        return cls(records)
