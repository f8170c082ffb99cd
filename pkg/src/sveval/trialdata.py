"""Trial keys, score files, and embedding tables.

All on-disk formats are UTF-8, tab-separated, with a mandatory exact header
line.  Every type in this module is immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

KEY_HEADER = (
    "modelid\tsegmentid\ttargettype\tgender\tsource_match"
    "\tlanguage_match\tphone_match\tnum_enroll\ttrack"
)
SCORE_HEADER = "modelid\tsegmentid\tLLR"

TRACKS = ("audio", "visual", "audio-visual")
LABELS = ("target", "nontarget")
GENDERS = ("male", "female")
YN = ("Y", "N")
YN_NA = ("Y", "N", "NA")
NUM_ENROLL = (1, 3)

NOT_APPLICABLE = "NA"

_SAMPLE_LIMIT = 10  # findings listed in a ValidationReport are capped


class ParseError(ValueError):
    """A file failed structural validation; carries the offending line."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class TrialId(NamedTuple):
    model_id: str
    segment_id: str


@dataclass(frozen=True)
class TrialRecord:
    """One trial of the answer key with its partition metadata."""

    id: TrialId
    label: str            # target | nontarget
    gender: str           # male | female
    source_match: str     # Y | N
    language_match: str   # Y | N
    phone_match: str      # Y | N | NA
    num_enroll: int       # 1 | 3
    track: str            # audio | visual | audio-visual

    def is_target(self) -> bool:
        return self.label == "target"


@dataclass(frozen=True)
class TrialKey:
    """Answer key for one track.  Records are stored sorted by trial id."""

    track: str
    records: tuple[TrialRecord, ...]

    def __post_init__(self):
        ordered = tuple(sorted(self.records, key=lambda r: r.id))
        object.__setattr__(self, "records", ordered)
        seen = set()
        for rec in ordered:
            if rec.id in seen:
                raise ValueError(f"duplicate trial id {rec.id}")
            seen.add(rec.id)

    def ids(self) -> set[TrialId]:
        return {r.id for r in self.records}

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class ScoreSet:
    """One system's LLR per trial (natural log).  All values are finite."""

    entries: dict[TrialId, float]

    def __post_init__(self):
        for tid, llr in self.entries.items():
            if not math.isfinite(llr):
                raise ValueError(f"non-finite LLR for trial {tid}")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, tid: TrialId) -> float:
        return self.entries[tid]


@dataclass(frozen=True)
class EmbeddingTable:
    """Fixed-dimension vectors keyed by segment id, with optional speaker labels."""

    segment_ids: tuple[str, ...]
    speakers: tuple[Optional[str], ...]
    vectors: np.ndarray  # (n, d)

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=float)
        if vecs.ndim != 2 or vecs.shape[1] < 1:
            raise ValueError("vectors must be a non-empty 2-D array")
        if len(self.segment_ids) != vecs.shape[0] or len(self.speakers) != vecs.shape[0]:
            raise ValueError("segment_ids, speakers, and vectors must have matching length")
        if len(set(self.segment_ids)) != len(self.segment_ids):
            raise ValueError("duplicate segment ids in embedding table")
        vecs = vecs.copy()
        vecs.flags.writeable = False
        object.__setattr__(self, "vectors", vecs)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.segment_ids)

    def vector(self, segment_id: str) -> np.ndarray:
        return self.vectors[self._index()[segment_id]]

    def _index(self) -> dict[str, int]:
        idx = getattr(self, "_idx", None)
        if idx is None:
            idx = {sid: i for i, sid in enumerate(self.segment_ids)}
            object.__setattr__(self, "_idx", idx)
        return idx


@dataclass(frozen=True)
class ValidationReport:
    """Findings from checking a score set against a key."""

    missing_count: int
    missing_sample: tuple[TrialId, ...]
    extra_count: int
    extra_sample: tuple[TrialId, ...]
    malformed_count: int = 0
    malformed_lines: tuple[int, ...] = ()
    nonfinite_count: int = 0

    @property
    def verdict(self) -> str:
        ok = (self.missing_count == 0 and self.extra_count == 0
              and self.malformed_count == 0 and self.nonfinite_count == 0)
        return "accept" if ok else "reject"

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "missing_trials": {
                "count": self.missing_count,
                "sample": [list(t) for t in self.missing_sample],
            },
            "extra_trials": {
                "count": self.extra_count,
                "sample": [list(t) for t in self.extra_sample],
            },
            "malformed_lines": {
                "count": self.malformed_count,
                "line_numbers": list(self.malformed_lines),
            },
            "nonfinite_scores": {"count": self.nonfinite_count},
        }


def _check_token(token: str, name: str, path: str, line: int) -> str:
    if not token:
        raise ParseError(f"empty {name}", path, line)
    if "\t" in token or "\n" in token or "\r" in token:
        raise ParseError(f"{name} contains tab or newline", path, line)
    return token


def _check_enum(value: str, allowed: Sequence[str], name: str, path: str, line: int) -> str:
    if value not in allowed:
        raise ParseError(
            f"field '{name}' has unknown value {value!r} (allowed: {', '.join(map(str, allowed))})",
            path, line,
        )
    return value


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def parse_key(path: str) -> TrialKey:
    """Parse a trial-key TSV file.

    The first line must equal ``KEY_HEADER`` exactly.  Every data line is
    validated against the field enumerations; errors report the line number.
    """
    lines = _read_lines(path)
    if not lines:
        raise ParseError("empty file", path, 1)
    if lines[0] != KEY_HEADER:
        raise ParseError(f"malformed header: expected {KEY_HEADER!r}", path, 1)
    records = []
    seen: set[TrialId] = set()
    track = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            raise ParseError("blank line", path, lineno)
        fields = line.split("\t")
        if len(fields) != 9:
            raise ParseError(f"expected 9 tab-separated fields, got {len(fields)}", path, lineno)
        model, segment, label, gender, src, lang, phone, n_enroll, row_track = fields
        tid = TrialId(_check_token(model, "modelid", path, lineno),
                      _check_token(segment, "segmentid", path, lineno))
        if tid in seen:
            raise ParseError(f"duplicate trial id {tid}", path, lineno)
        seen.add(tid)
        label = _check_enum(label, LABELS, "targettype", path, lineno)
        gender = _check_enum(gender, GENDERS, "gender", path, lineno)
        src = _check_enum(src, YN, "source_match", path, lineno)
        lang = _check_enum(lang, YN, "language_match", path, lineno)
        phone = _check_enum(phone, YN_NA, "phone_match", path, lineno)
        if phone == "Y" and label != "target":
            raise ParseError("phone_match=Y is only valid for target trials", path, lineno)
        try:
            n = int(n_enroll)
        except ValueError:
            raise ParseError(f"num_enroll is not an integer: {n_enroll!r}", path, lineno) from None
        if n not in NUM_ENROLL:
            raise ParseError(f"field 'num_enroll' has unknown value {n} (allowed: 1, 3)", path, lineno)
        row_track = _check_enum(row_track, TRACKS, "track", path, lineno)
        if n == 3 and row_track != "audio":
            raise ParseError("num_enroll=3 is only valid for audio trials", path, lineno)
        if track is None:
            track = row_track
        elif row_track != track:
            raise ParseError(f"mixed tracks in one key ({track!r} vs {row_track!r})", path, lineno)
        records.append(TrialRecord(tid, label, gender, src, lang, phone, n, row_track))
    if not records:
        raise ParseError("key has a header but no trials", path, 1)
    try:
        return TrialKey(track=track, records=tuple(records))
    except ValueError as exc:
        raise ParseError(str(exc), path) from None


def write_key(key: TrialKey, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(KEY_HEADER + "\n")
        for r in key.records:
            fh.write("\t".join([
                r.id.model_id, r.id.segment_id, r.label, r.gender,
                r.source_match, r.language_match, r.phone_match,
                str(r.num_enroll), r.track,
            ]) + "\n")


def _parse_llr(text: str, path: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"LLR is not a decimal number: {text!r}", path, lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite LLR: {text!r}", path, lineno)
    return value


def parse_scores(path: str) -> ScoreSet:
    """Parse a score TSV file (header ``modelid\\tsegmentid\\tLLR``)."""
    lines = _read_lines(path)
    if not lines:
        raise ParseError("empty file", path, 1)
    if lines[0] != SCORE_HEADER:
        raise ParseError(f"malformed header: expected {SCORE_HEADER!r}", path, 1)
    entries: dict[TrialId, float] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", path, lineno)
        tid = TrialId(_check_token(fields[0], "modelid", path, lineno),
                      _check_token(fields[1], "segmentid", path, lineno))
        if tid in entries:
            raise ParseError(f"duplicate trial id {tid}", path, lineno)
        entries[tid] = _parse_llr(fields[2], path, lineno)
    return ScoreSet(entries=entries)


def parse_scores_lenient(path: str) -> tuple[ScoreSet, tuple[int, ...], int]:
    """Parse a score file collecting data-line problems instead of raising.

    Returns (scores from the well-formed lines, offending line numbers,
    count of non-finite LLRs).  A missing or malformed header still raises:
    without it the file cannot be interpreted at all.
    """
    lines = _read_lines(path)
    if not lines:
        raise ParseError("empty file", path, 1)
    if lines[0] != SCORE_HEADER:
        raise ParseError(f"malformed header: expected {SCORE_HEADER!r}", path, 1)
    entries: dict[TrialId, float] = {}
    bad_lines: list[int] = []
    nonfinite = 0
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 3 or not fields[0] or not fields[1]:
            bad_lines.append(lineno)
            continue
        tid = TrialId(fields[0], fields[1])
        if tid in entries:
            bad_lines.append(lineno)
            continue
        try:
            value = float(fields[2])
        except ValueError:
            bad_lines.append(lineno)
            continue
        if not math.isfinite(value):
            nonfinite += 1
            bad_lines.append(lineno)
            continue
        entries[tid] = value
    return ScoreSet(entries=entries), tuple(bad_lines), nonfinite


def write_scores(scores: ScoreSet, path: str) -> None:
    # repr() of a float round-trips exactly, so parse(write(s)) == s.
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SCORE_HEADER + "\n")
        for tid in sorted(scores.entries):
            fh.write(f"{tid.model_id}\t{tid.segment_id}\t{scores.entries[tid]!r}\n")


def validate_submission(
    scores: ScoreSet,
    key: TrialKey,
    *,
    malformed_lines: Iterable[int] = (),
    nonfinite_count: int = 0,
) -> ValidationReport:
    """Check that a score set covers the key exactly.

    ``malformed_lines`` and ``nonfinite_count`` let a caller that parsed the
    score file leniently merge its findings into the report; with the default
    (strictly parsed) inputs those counts are zero.
    """
    key_ids = key.ids()
    score_ids = set(scores.entries)
    missing = sorted(key_ids - score_ids)
    extra = sorted(score_ids - key_ids)
    bad = tuple(sorted(malformed_lines))
    return ValidationReport(
        missing_count=len(missing),
        missing_sample=tuple(missing[:_SAMPLE_LIMIT]),
        extra_count=len(extra),
        extra_sample=tuple(extra[:_SAMPLE_LIMIT]),
        malformed_count=len(bad),
        malformed_lines=bad[:_SAMPLE_LIMIT],
        nonfinite_count=nonfinite_count,
    )


def load_embeddings(path: str) -> EmbeddingTable:
    """Load an embedding TSV (header ``segmentid\\tspeaker\\tdim=<d>``)."""
    lines = _read_lines(path)
    if not lines:
        raise ParseError("empty file", path, 1)
    header = lines[0].split("\t")
    if len(header) != 3 or header[0] != "segmentid" or header[1] != "speaker" \
            or not header[2].startswith("dim="):
        raise ParseError("malformed header: expected 'segmentid\\tspeaker\\tdim=<d>'", path, 1)
    try:
        dim = int(header[2][4:])
    except ValueError:
        raise ParseError(f"malformed dimension declaration {header[2]!r}", path, 1) from None
    if dim < 1:
        raise ParseError("declared dimension must be >= 1", path, 1)
    segment_ids: list[str] = []
    speakers: list[Optional[str]] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 2 + dim:
            raise ParseError(
                f"ragged row: expected {2 + dim} fields ({dim} coordinates), got {len(fields)}",
                path, lineno,
            )
        sid = _check_token(fields[0], "segmentid", path, lineno)
        if sid in seen:
            raise ParseError(f"duplicate segment id {sid!r}", path, lineno)
        seen.add(sid)
        speaker = fields[1] if fields[1] != "-" else None
        try:
            vec = [float(v) for v in fields[2:]]
        except ValueError:
            raise ParseError("non-numeric coordinate", path, lineno) from None
        if not all(math.isfinite(v) for v in vec):
            raise ParseError("non-finite coordinate", path, lineno)
        segment_ids.append(sid)
        speakers.append(speaker)
        rows.append(vec)
    if not rows:
        raise ParseError("embedding table has a header but no rows", path, 1)
    return EmbeddingTable(tuple(segment_ids), tuple(speakers), np.array(rows, dtype=float))


def write_embeddings(table: EmbeddingTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"segmentid\tspeaker\tdim={table.dim}\n")
        for sid, speaker, vec in zip(table.segment_ids, table.speakers, table.vectors):
            coords = "\t".join(repr(float(v)) for v in vec)
            fh.write(f"{sid}\t{speaker if speaker is not None else '-'}\t{coords}\n")
