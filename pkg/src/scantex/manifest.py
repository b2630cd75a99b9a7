"""Dataset manifests: labelled sample records stored as CSV."""

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConsistencyError, IoError, ParseError

HEADER = ("path", "subject_id", "label", "morph_tool", "source")
LABELS = ("bonafide", "morph")
KNOWN_TOOLS = ("none", "facefusion", "facemorpher", "opencv", "ubo")
SOURCES = ("digital", "ps_handcrafted", "ps_synthetic", "ps_texture")

# a morph belongs to both parents: subject ids of morphs are "a+b"
PARENT_SEP = "+"

_OTHER_RE = re.compile(r"^other\((.+)\)$")


def normalize_tool(tool):
    """Map a morph-tool string to its canonical form (unknown names become ``other(name)``)."""
    tool = tool.strip()
    low = tool.lower()
    if low in KNOWN_TOOLS:
        return low
    m = _OTHER_RE.match(tool)
    if m:
        return f"other({m.group(1)})"
    if not tool:
        raise ValueError("empty morph tool")
    return f"other({tool})"


@dataclass(frozen=True)
class SampleRecord:
    path: str
    subject_id: str
    label: str
    morph_tool: str = "none"
    source: str = "digital"

    def __post_init__(self):
        if not self.subject_id:
            raise ConsistencyError(f"{self.path}: empty subject_id")
        if self.label not in LABELS:
            raise ConsistencyError(f"{self.path}: unknown label {self.label!r}")
        if self.source not in SOURCES:
            raise ConsistencyError(f"{self.path}: unknown source {self.source!r}")
        object.__setattr__(self, "morph_tool", normalize_tool(self.morph_tool))
        if (self.label == "bonafide") != (self.morph_tool == "none"):
            raise ConsistencyError(
                f"{self.path}: label {self.label!r} is inconsistent with morph_tool {self.morph_tool!r}")

    @property
    def is_morph(self):
        return self.label == "morph"

    @property
    def subjects(self):
        """All identities this sample carries (two parents for a morph)."""
        return frozenset(self.subject_id.split(PARENT_SEP))


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple = ()
    origin: str = ""

    def __post_init__(self):
        records = tuple(self.records)
        seen = set()
        for rec in records:
            if rec.path in seen:
                raise ConsistencyError(f"duplicate manifest path {rec.path!r}")
            seen.add(rec.path)
        object.__setattr__(self, "records", records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def filter(self, pred):
        return DatasetManifest(tuple(r for r in self.records if pred(r)), self.origin)

    def subjects(self):
        out = set()
        for rec in self.records:
            out |= rec.subjects
        return out

    def morph_tools(self):
        return sorted({r.morph_tool for r in self.records if r.is_morph})

    def sources(self):
        return sorted({r.source for r in self.records})

    def __add__(self, other):
        return DatasetManifest(self.records + other.records, self.origin)


def parse_manifest(text, origin=""):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty manifest", line=1) from None
    if tuple(h.strip() for h in header) != HEADER:
        raise ParseError(f"expected header {','.join(HEADER)}", line=1)
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(HEADER):
            raise ParseError(f"expected {len(HEADER)} fields, got {len(row)}", line=lineno)
        path, subject, label, tool, source = (cell.strip() for cell in row)
        if label not in LABELS:
            raise ParseError(f"unknown label {label!r}", line=lineno)
        if source not in SOURCES:
            raise ParseError(f"unknown source {source!r}", line=lineno)
        if not tool:
            raise ParseError("empty morph_tool", line=lineno)
        try:
            records.append(SampleRecord(path, subject, label, tool, source))
        except ConsistencyError as exc:
            raise ConsistencyError(f"line {lineno}: {exc}") from None
    return DatasetManifest(tuple(records), origin)


def format_manifest(manifest):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in manifest.records:
        writer.writerow((r.path, r.subject_id, r.label, r.morph_tool, r.source))
    return buf.getvalue()


def read_manifest(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, origin=str(path))


def write_manifest(manifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_manifest(manifest))
