"""Annotated prosodic corpora.

A corpus is a set of utterances segmented into rhythmic units.  Each unit
carries an observed prosody frame (three pitch samples over the vocalic
nucleus, in semitones, plus a log duration coefficient) and each utterance
carries the communicative-function instances that are anchored on its units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

CORPUS_FORMAT = "wsfc-corpus"
CORPUS_VERSION = 1

# Function tags known out of the box.  Corpora may register further tags;
# the registry in the corpus header is authoritative.
BUILTIN_FUNCTIONS = (
    "DC", "QS", "EX", "DI", "SC", "EV", "DD", "DG", "XX", "EM",
    "ID", "IT", "WB", "C1", "C2", "C3", "C4",
)

# Hard range for pitch samples, semitones relative to the reference.
PITCH_LIMIT = 48.0


class CorpusError(Exception):
    """Base class for corpus loading and validation failures."""


class CorpusFormatError(CorpusError):
    """Malformed corpus file; message carries the offending line number."""


class CorpusValidationError(CorpusError):
    """Structurally parseable corpus that violates invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__(
            "corpus failed validation:\n" + "\n".join(f"  - {v}" for v in violations)
        )


@dataclass(frozen=True)
class ProsodyFrame:
    """Prosody of one rhythmic unit: pitch samples (semitones) and duration.

    The duration coefficient is ln(duration / corpus mean duration), so 0
    means a unit of average length.
    """

    pitch: tuple[float, float, float]
    duration_coeff: float

    def as_array(self) -> np.ndarray:
        return np.array([*self.pitch, self.duration_coeff], dtype=float)


@dataclass(frozen=True)
class RhythmicUnit:
    index: int
    observed: ProsodyFrame
    has_vocalic_nucleus: bool = True


@dataclass(frozen=True)
class FunctionInstance:
    """One occurrence of a communicative function over a span of units.

    The scope runs from ``landmark - left_span + 1`` through
    ``landmark + right_span`` inclusive; left_span >= 1 so the landmark
    itself is always covered.
    """

    function: str
    landmark: int
    left_span: int
    right_span: int = 0

    @property
    def scope_start(self) -> int:
        return self.landmark - self.left_span + 1

    @property
    def scope_end(self) -> int:
        return self.landmark + self.right_span

    def covers(self, index: int) -> bool:
        return self.scope_start <= index <= self.scope_end


@dataclass
class Utterance:
    id: str
    attitude: str
    units: list[RhythmicUnit]
    instances: list[FunctionInstance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.units)

    def observed_matrix(self) -> np.ndarray:
        """Observed frames stacked into an (n_units, 4) array."""
        return np.array([u.observed.as_array() for u in self.units])

    def nucleus_mask(self) -> np.ndarray:
        return np.array([u.has_vocalic_nucleus for u in self.units], dtype=bool)


@dataclass
class Corpus:
    registry: list[str]
    attitude_set: list[str]
    utterances: list[Utterance]
    reference_hz: float = 200.0
    mean_ru_duration_ms: float = 180.0

    def __len__(self) -> int:
        return len(self.utterances)

    def utterance(self, utt_id: str) -> Utterance:
        for utt in self.utterances:
            if utt.id == utt_id:
                return utt
        raise KeyError(f"no utterance with id {utt_id!r}")

    def subset(self, utterances: list[Utterance]) -> "Corpus":
        return Corpus(
            registry=list(self.registry),
            attitude_set=list(self.attitude_set),
            utterances=list(utterances),
            reference_hz=self.reference_hz,
            mean_ru_duration_ms=self.mean_ru_duration_ms,
        )


def hz_to_semitones(f0: float | np.ndarray, reference_hz: float) -> float | np.ndarray:
    """Map a frequency to semitones relative to the reference (12 per octave)."""
    if reference_hz <= 0:
        raise ValueError("reference frequency must be positive")
    f0 = np.asarray(f0, dtype=float)
    if np.any(f0 <= 0):
        raise ValueError("frequencies must be positive")
    out = 12.0 * np.log2(f0 / reference_hz)
    return float(out) if out.ndim == 0 else out


def validate_corpus(corpus: Corpus) -> list[str]:
    """Collect every invariant violation; empty list means the corpus is valid."""
    bad: list[str] = []
    if len(corpus.registry) != len(set(corpus.registry)):
        bad.append("registry contains duplicate function tags")
    missing = [a for a in corpus.attitude_set if a not in corpus.registry]
    if missing:
        bad.append(f"attitudes not in registry: {missing}")
    seen_ids: set[str] = set()
    for utt in corpus.utterances:
        where = f"utterance {utt.id!r}"
        if utt.id in seen_ids:
            bad.append(f"{where}: duplicate id")
        seen_ids.add(utt.id)
        n = len(utt.units)
        if n == 0:
            bad.append(f"{where}: has no rhythmic units")
            continue
        if utt.attitude not in corpus.attitude_set:
            bad.append(f"{where}: attitude {utt.attitude!r} not in attitude set")
        for k, unit in enumerate(utt.units):
            if unit.index != k:
                bad.append(f"{where}: unit {k} carries index {unit.index}")
            frame = unit.observed.as_array()
            if not np.all(np.isfinite(frame)):
                bad.append(f"{where}: unit {k} has non-finite frame values")
            elif np.any(np.abs(frame[:3]) > PITCH_LIMIT):
                bad.append(f"{where}: unit {k} pitch outside +/-{PITCH_LIMIT} st")
        full_cover = 0
        for inst in utt.instances:
            tag = f"{where}, instance {inst.function}@{inst.landmark}"
            if inst.function not in corpus.registry:
                bad.append(f"{tag}: function not in registry")
            if inst.left_span < 1:
                bad.append(f"{tag}: left_span must be >= 1")
            if inst.right_span < 0:
                bad.append(f"{tag}: right_span must be >= 0")
            if not (0 <= inst.landmark < n):
                bad.append(f"{tag}: landmark outside utterance")
            if inst.scope_start < 0 or inst.scope_end >= n:
                bad.append(f"{tag}: scope [{inst.scope_start}, {inst.scope_end}] "
                           f"outside utterance of {n} units")
            if (inst.function == utt.attitude
                    and inst.scope_start == 0 and inst.scope_end == n - 1):
                full_cover += 1
        if full_cover != 1:
            bad.append(f"{where}: needs exactly one {utt.attitude} instance "
                       f"covering all units, found {full_cover}")
    return bad


def _require_keys(record: dict, keys: list[str], lineno: int) -> None:
    for key in keys:
        if key not in record:
            raise CorpusFormatError(f"line {lineno}: missing field {key!r}")


def load_corpus(path: str) -> Corpus:
    """Read a corpus file and validate it.

    The file is line-delimited JSON: a header record first, then one record
    per utterance.  Any parse problem raises CorpusFormatError with the line
    number; a parsed corpus violating invariants raises CorpusValidationError
    listing every violation.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    records: list[tuple[int, dict]] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"line {lineno}: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise CorpusFormatError(f"line {lineno}: record is not an object")
        records.append((lineno, obj))
    if not records:
        raise CorpusFormatError("line 1: empty corpus file, header record expected")

    lineno, header = records[0]
    if header.get("format") != CORPUS_FORMAT:
        raise CorpusFormatError(f"line {lineno}: not a {CORPUS_FORMAT} file")
    if header.get("version") != CORPUS_VERSION:
        raise CorpusFormatError(
            f"line {lineno}: unsupported version {header.get('version')!r}")
    _require_keys(header, ["registry", "attitude_set",
                           "reference_hz", "mean_ru_duration_ms"], lineno)

    utterances = []
    for lineno, rec in records[1:]:
        _require_keys(rec, ["id", "attitude", "units", "instances"], lineno)
        try:
            units = [
                RhythmicUnit(
                    index=k,
                    observed=ProsodyFrame(
                        pitch=(float(u[0]), float(u[1]), float(u[2])),
                        duration_coeff=float(u[3]),
                    ),
                    has_vocalic_nucleus=bool(u[4]),
                )
                for k, u in enumerate(rec["units"])
            ]
            instances = [
                FunctionInstance(function=str(f), landmark=int(lm),
                                 left_span=int(ls), right_span=int(rs))
                for f, lm, ls, rs in rec["instances"]
            ]
        except (TypeError, ValueError, IndexError) as exc:
            raise CorpusFormatError(f"line {lineno}: bad utterance record ({exc})") from exc
        utterances.append(Utterance(id=str(rec["id"]), attitude=str(rec["attitude"]),
                                    units=units, instances=instances))

    corpus = Corpus(
        registry=[str(f) for f in header["registry"]],
        attitude_set=[str(a) for a in header["attitude_set"]],
        utterances=utterances,
        reference_hz=float(header["reference_hz"]),
        mean_ru_duration_ms=float(header["mean_ru_duration_ms"]),
    )
    violations = validate_corpus(corpus)
    if violations:
        raise CorpusValidationError(violations)
    return corpus


def save_corpus(corpus: Corpus, path: str) -> None:
    """Write a corpus; loading the result reproduces the corpus exactly."""
    violations = validate_corpus(corpus)
    if violations:
        raise CorpusValidationError(violations)
    header = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "registry": corpus.registry,
        "attitude_set": corpus.attitude_set,
        "reference_hz": corpus.reference_hz,
        "mean_ru_duration_ms": corpus.mean_ru_duration_ms,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for utt in corpus.utterances:
            rec = {
                "id": utt.id,
                "attitude": utt.attitude,
                "units": [[*u.observed.pitch, u.observed.duration_coeff,
                           int(u.has_vocalic_nucleus)] for u in utt.units],
                "instances": [[i.function, i.landmark, i.left_span, i.right_span]
                              for i in utt.instances],
            }
            fh.write(json.dumps(rec) + "\n")


def split_corpus(corpus: Corpus, ratios: tuple[float, float, float],
                 seed: int) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministically partition into train/validation/test subsets.

    Validation and test sizes are floored; the remainder goes to train,
    so the three parts always cover the corpus exactly once.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError("all split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(corpus.utterances)
    if n < 3:
        raise ValueError(f"cannot split {n} utterances into 3 parts")
    n_val = math.floor(n * ratios[1])
    n_test = math.floor(n * ratios[2])
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    pick = lambda idx: [corpus.utterances[i] for i in idx]
    return (corpus.subset(pick(order[:n_train])),
            corpus.subset(pick(order[n_train:n_train + n_val])),
            corpus.subset(pick(order[n_train + n_val:])))
