"""Synthetic corpora with a known decomposition.

Real prosody corpora give no access to the true per-function contours or
their prominence, so recovery can only be tested on data where both are
planted.  Prototype shapes here are sums of tanh atoms evaluated at the
same ramp positions the model sees; each prototype therefore compiles
exactly into a contour net, and each planted weight table into a weight
net, giving a closed-form model that reproduces a noise-free corpus to
machine precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .corpus import (Corpus, FunctionInstance, ProsodyFrame, RhythmicUnit,
                     Utterance, validate_corpus)
from .netcore import DenseNet
from .wcg import (EMPHASIS_CATEGORIES, ModelSet, WeightedContourGenerator,
                  context_dim, emphasis_category, ramp_matrix)

TRUTH_FORMAT = "wsfc-truth"
TRUTH_VERSION = 1
GENSPEC_FORMAT = "wsfc-genspec"
GENSPEC_VERSION = 1

# Relative-position offsets of the three pitch samples inside one unit.
SAMPLE_SHIFTS = (-0.05, 0.0, 0.05)

FAMILIES = ("constant", "rise", "fall", "bump", "dip", "level")


class GenerationError(Exception):
    """Raised for an inconsistent or infeasible generator spec."""


@dataclass(frozen=True)
class PrototypeSpec:
    """Planted contour shape of one function over its scope.

    amplitude is in semitones, center and width in relative-position
    units; duration_amplitude sets a constant duration coefficient.
    """

    function: str
    family: str
    amplitude: float
    center: float = 0.5
    width: float = 0.25
    duration_amplitude: float = 0.0
    scope_extension_right: int = 0


def _atoms(spec: PrototypeSpec) -> tuple[list[tuple[float, float, float]], float]:
    """Decompose a family into (amplitude, slope, origin) tanh atoms + offset."""
    a, c, w = spec.amplitude, spec.center, spec.width
    if w <= 0:
        raise GenerationError(f"{spec.function}: width must be positive")
    if spec.family == "constant":
        return [], a
    if spec.family == "rise":
        return [(a, 1.0 / w, c)], 0.0
    if spec.family == "fall":
        return [(-a, 1.0 / w, c)], 0.0
    if spec.family == "bump":
        return [(a / 2, 2.0 / w, c - w), (-a / 2, 2.0 / w, c + w)], 0.0
    if spec.family == "dip":
        return [(-a / 2, 2.0 / w, c - w), (a / 2, 2.0 / w, c + w)], 0.0
    if spec.family == "level":
        # sustained high target with a late decline through the center
        return [(-0.25 * a, 1.0 / w, c)], 0.9 * a
    raise GenerationError(f"unknown prototype family {spec.family!r}")


def compile_prototype(spec: PrototypeSpec) -> DenseNet:
    """Exact contour net for a prototype.

    Hidden unit (atom j, sample m) fires tanh(slope_j * (rel_pos +
    shift_m - origin_j)) off the rel_pos ramp feature alone, wired to
    pitch output m; constants live in the output biases.
    """
    atoms, offset = _atoms(spec)
    hidden = max(1, 3 * len(atoms))
    net = DenseNet([4, hidden, 4], output="linear", init_scale=0.0)
    for j, (amp, slope, origin) in enumerate(atoms):
        for m, shift in enumerate(SAMPLE_SHIFTS):
            u = 3 * j + m
            net.weights[0][u, 3] = slope
            net.biases[0][u] = slope * (shift - origin)
            net.weights[1][m, u] = amp
    net.biases[1][:3] = offset
    net.biases[1][3] = spec.duration_amplitude
    return net


@dataclass
class PlantSpec:
    """Context-conditional gate values to plant, per function and cell.

    Cells are attitude tags (key_by="attitude") or emphasis categories
    (key_by="emphasis"); unlisted cells fall back to the default.
    """

    key_by: str = "attitude"
    cells: dict[str, dict[str, float]] = field(default_factory=dict)
    default: float = 1.0

    def weight_of(self, function: str, cell: str) -> float:
        return float(self.cells.get(function, {}).get(cell, self.default))

    def validate(self) -> None:
        if self.key_by not in ("attitude", "emphasis"):
            raise GenerationError(f"unknown plant keying {self.key_by!r}")
        if not 0.0 < self.default < 2.0:
            raise GenerationError("default planted weight must be in (0, 2)")
        for f, cells in self.cells.items():
            vals = list(cells.values())
            if any(not 0.0 < v < 2.0 for v in vals):
                raise GenerationError(f"{f}: planted weights must be in (0, 2)")
            mean = sum(vals) / len(vals)
            if not 0.8 <= mean <= 1.2:
                raise GenerationError(
                    f"{f}: planted cell mean {mean:.3f} outside [0.8, 1.2]")


def compile_plant_wm(function: str, plant: PlantSpec, context_mode: str,
                     registry: list[str], attitude_set: list[str]) -> DenseNet:
    """Exact weight net realizing the planted table for one function.

    One hidden unit per cell reads the cell's indicator position in the
    context vector; the output layer maps the active cell to the logit of
    half its planted weight, so the doubled sigmoid lands on the weight.
    """
    if plant.key_by == "attitude":
        labels = list(attitude_set)
        positions = list(range(len(attitude_set)))
    else:
        if context_mode != "emphasis":
            raise GenerationError(
                "emphasis-keyed plants need the emphasis context mode")
        labels = list(EMPHASIS_CATEGORIES)
        positions = [len(attitude_set) + 1 + k for k in range(len(labels))]
    dim = context_dim(context_mode, registry, attitude_set)
    net = DenseNet([dim, len(labels), 1], output="sigmoid", init_scale=0.0)
    for j, (label, pos) in enumerate(zip(labels, positions)):
        w = plant.weight_of(function, label)
        net.weights[0][j, pos] = 1.0
        net.weights[1][0, j] = math.log(w / (2.0 - w)) / math.tanh(1.0)
    return net


@dataclass
class PlantedInstance:
    function: str
    weight: float
    cell: str
    start: int
    frames: np.ndarray


@dataclass
class UtteranceTruth:
    id: str
    n_units: int
    instances: list[PlantedInstance]


@dataclass
class GroundTruth:
    noise_sigma: float
    utterances: dict[str, UtteranceTruth]


@dataclass
class SyntheticSpec:
    """Full recipe for a synthetic corpus: structure, shapes, and plants."""

    registry: list[str]
    attitude_set: list[str]
    prototypes: list[PrototypeSpec]
    plant: PlantSpec = field(default_factory=PlantSpec)
    n_utterances: int = 100
    length_range: tuple[int, int] = (6, 12)
    noise_sigma: float = 0.0
    seed: int = 0
    context_mode: str = "attitude"
    local_functions: list[str] = field(default_factory=list)
    local_count_range: tuple[int, int] = (1, 3)
    local_scope_range: tuple[int, int] = (2, 4)
    per_unit_functions: list[str] = field(default_factory=list)
    word_span_range: tuple[int, int] | None = None
    emphasis_probability: float = 0.0
    emphasis_scope_range: tuple[int, int] = (2, 3)
    nucleus_probability: float = 1.0
    reference_hz: float = 200.0
    mean_ru_duration_ms: float = 180.0

    def prototype_of(self, function: str) -> PrototypeSpec:
        for p in self.prototypes:
            if p.function == function:
                return p
        raise GenerationError(f"no prototype for function {function!r}")

    def validate(self) -> None:
        self.plant.validate()
        seen = set()
        for p in self.prototypes:
            if p.function in seen:
                raise GenerationError(f"duplicate prototype for {p.function!r}")
            seen.add(p.function)
            if p.function not in self.registry:
                raise GenerationError(f"prototype {p.function!r} not registered")
            _atoms(p)
        spawnable = set(self.attitude_set) | set(self.local_functions) \
            | set(self.per_unit_functions)
        if self.word_span_range is not None:
            spawnable.add("WB")
        if self.emphasis_probability > 0:
            spawnable.add("EM")
        missing = sorted(spawnable - seen)
        if missing:
            raise GenerationError(f"functions without prototypes: {missing}")
        if self.length_range[0] < 1 or self.length_range[0] > self.length_range[1]:
            raise GenerationError(f"bad length range {self.length_range}")
        if self.local_functions and \
                self.local_scope_range[0] > self.length_range[0]:
            raise GenerationError(
                f"local scopes of {self.local_scope_range[0]}+ RUs cannot "
                f"be placed in utterances of {self.length_range[0]} RUs")
        if self.emphasis_probability > 0 and \
                self.emphasis_scope_range[0] > self.length_range[0]:
            raise GenerationError(
                f"emphasis scopes of {self.emphasis_scope_range[0]}+ RUs "
                f"cannot be placed in utterances of {self.length_range[0]} RUs")
        if self.noise_sigma < 0:
            raise GenerationError("noise sigma must be >= 0")
        if self.plant.key_by == "emphasis" and self.context_mode != "emphasis":
            raise GenerationError(
                "emphasis-keyed plants need the emphasis context mode")


def _skeleton(spec: SyntheticSpec, rng: np.random.Generator
              ) -> tuple[int, str, list[FunctionInstance]]:
    n = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
    attitude = spec.attitude_set[int(rng.integers(len(spec.attitude_set)))]
    instances = [FunctionInstance(attitude, n - 1, n, 0)]
    if spec.local_functions:
        count = int(rng.integers(spec.local_count_range[0],
                                 spec.local_count_range[1] + 1))
        for _ in range(count):
            f = spec.local_functions[int(rng.integers(len(spec.local_functions)))]
            span = int(rng.integers(spec.local_scope_range[0],
                                    min(spec.local_scope_range[1], n) + 1))
            start = int(rng.integers(0, n - span + 1))
            landmark = int(rng.integers(start, start + span))
            instances.append(FunctionInstance(
                f, landmark, landmark - start + 1, start + span - 1 - landmark))
    for i in range(n):
        if spec.per_unit_functions:
            f = spec.per_unit_functions[int(rng.integers(
                len(spec.per_unit_functions)))]
            instances.append(FunctionInstance(f, i, 1, 0))
    if spec.word_span_range is not None:
        pos = -1
        while True:
            pos += int(rng.integers(spec.word_span_range[0],
                                    spec.word_span_range[1] + 1))
            if pos >= n - 1:
                break
            instances.append(FunctionInstance("WB", pos, 1, 0))
    if spec.emphasis_probability > 0 and rng.random() < spec.emphasis_probability:
        span = int(rng.integers(spec.emphasis_scope_range[0],
                                min(spec.emphasis_scope_range[1], n) + 1))
        start = int(rng.integers(0, n - span + 1))
        # landmark on the last emphasized unit
        instances.append(FunctionInstance("EM", start + span - 1, span, 0))
    return n, attitude, instances


def _cell_of(spec: SyntheticSpec, attitude: str,
             instances: list[FunctionInstance],
             instance: FunctionInstance) -> str:
    if spec.plant.key_by == "attitude":
        return attitude
    shim = Utterance(id="", attitude=attitude, units=[], instances=instances)
    return emphasis_category(shim, instance)


def generate_corpus(spec: SyntheticSpec) -> tuple[Corpus, GroundTruth]:
    """Deterministically sample a corpus and its planted decomposition.

    The same spec always produces the same corpus, byte for byte once
    saved; every utterance draws from its own seed stream.
    """
    spec.validate()
    nets = {p.function: compile_prototype(p) for p in spec.prototypes}
    utterances = []
    truth: dict[str, UtteranceTruth] = {}
    for u in range(spec.n_utterances):
        rng = np.random.default_rng((spec.seed, u))
        n, attitude, instances = _skeleton(spec, rng)
        observed = np.zeros((n, 4))
        planted = []
        for inst in instances:
            proto = spec.prototype_of(inst.function)
            ramps = ramp_matrix(inst, proto.scope_extension_right, n)
            cell = _cell_of(spec, attitude, instances, inst)
            w = spec.plant.weight_of(inst.function, cell)
            frames = w * nets[inst.function].forward(ramps)
            observed[inst.scope_start:inst.scope_start + frames.shape[0]] += frames
            planted.append(PlantedInstance(inst.function, w, cell,
                                           inst.scope_start, frames))
        if spec.noise_sigma > 0:
            observed = observed + rng.normal(0.0, spec.noise_sigma, size=(n, 4))
        nucleus = rng.random(n) < spec.nucleus_probability
        units = [RhythmicUnit(i, ProsodyFrame(
            (observed[i, 0], observed[i, 1], observed[i, 2]), observed[i, 3]),
            bool(nucleus[i])) for i in range(n)]
        uid = f"u{u:05d}"
        utterances.append(Utterance(uid, attitude, units, instances))
        truth[uid] = UtteranceTruth(uid, n, planted)
    corpus = Corpus(list(spec.registry), list(spec.attitude_set), utterances,
                    spec.reference_hz, spec.mean_ru_duration_ms)
    violations = validate_corpus(corpus)
    if violations:
        raise GenerationError("generated corpus failed validation: "
                              + "; ".join(violations))
    return corpus, GroundTruth(spec.noise_sigma, truth)


def analytic_model_set(spec: SyntheticSpec) -> ModelSet:
    """Closed-form model reproducing a noise-free corpus from this spec."""
    spec.validate()
    wcgs = {}
    for f in spec.registry:
        try:
            proto = spec.prototype_of(f)
            cg = compile_prototype(proto)
            ext = proto.scope_extension_right
        except GenerationError:
            cg = DenseNet([4, 1, 4], output="linear", init_scale=0.0)
            ext = 0
        wm = compile_plant_wm(f, spec.plant, spec.context_mode,
                              spec.registry, spec.attitude_set)
        wcgs[f] = WeightedContourGenerator(f, cg, wm, ext)
    return ModelSet(wcgs, spec.context_mode, list(spec.registry),
                    list(spec.attitude_set))


def oracle_reconstruction(gt: GroundTruth, utt_id: str) -> np.ndarray:
    """Noise-free superposition of the planted contributions."""
    ut = gt.utterances[utt_id]
    out = np.zeros((ut.n_units, 4))
    for inst in ut.instances:
        out[inst.start:inst.start + inst.frames.shape[0]] += inst.frames
    return out


@dataclass
class CellScore:
    function: str
    cell: str
    count: int
    planted: float
    recovered: float

    @property
    def abs_error(self) -> float:
        return abs(self.recovered - self.planted)


def score_recovery(model: ModelSet, gt: GroundTruth, corpus: Corpus
                   ) -> list[CellScore]:
    """Planted versus recovered mean gate per (function, cell)."""
    planted: dict[tuple[str, str], list[float]] = {}
    recovered: dict[tuple[str, str], list[float]] = {}
    for utt in corpus.utterances:
        ut = gt.utterances[utt.id]
        for inst, tinst in zip(utt.instances, ut.instances):
            if inst.function != tinst.function:
                raise GenerationError(
                    f"{utt.id}: corpus and ground truth disagree on instances")
            key = (inst.function, tinst.cell)
            planted.setdefault(key, []).append(tinst.weight)
            recovered.setdefault(key, []).append(model.weight_of(utt, inst))
    return [CellScore(f, cell, len(planted[(f, cell)]),
                      float(np.mean(planted[(f, cell)])),
                      float(np.mean(recovered[(f, cell)])))
            for f, cell in sorted(planted)]


# ---------------------------------------------------------------------------
# Generator spec files.

def save_genspec(spec: SyntheticSpec, path: str) -> None:
    data = asdict(spec)
    data["prototypes"] = [asdict(p) for p in spec.prototypes]
    data["plant"] = asdict(spec.plant)
    data = {"format": GENSPEC_FORMAT, "version": GENSPEC_VERSION, **data}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _strict(data: dict, cls, what: str):
    names = {f for f in cls.__dataclass_fields__}
    unknown = sorted(set(data) - names)
    if unknown:
        raise GenerationError(f"{what}: unknown keys {unknown}")


def load_genspec(path: str) -> SyntheticSpec:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.pop("format", None) != GENSPEC_FORMAT:
        raise GenerationError(f"{path}: not a {GENSPEC_FORMAT} file")
    if data.pop("version", None) != GENSPEC_VERSION:
        raise GenerationError(f"{path}: unsupported version")
    protos = [dict(p) for p in data.pop("prototypes", [])]
    for p in protos:
        _strict(p, PrototypeSpec, f"{path}: prototype")
    plant = dict(data.pop("plant", {}))
    _strict(plant, PlantSpec, f"{path}: plant")
    _strict(data, SyntheticSpec, path)
    tuple_fields = ("length_range", "local_count_range", "local_scope_range",
                    "word_span_range", "emphasis_scope_range")
    for name in tuple_fields:
        if data.get(name) is not None:
            data[name] = tuple(data[name])
    spec = SyntheticSpec(prototypes=[PrototypeSpec(**p) for p in protos],
                         plant=PlantSpec(**plant), **data)
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# Ground truth files.

def save_ground_truth(gt: GroundTruth, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": TRUTH_FORMAT, "version": TRUTH_VERSION,
                             "noise_sigma": gt.noise_sigma}) + "\n")
        for ut in gt.utterances.values():
            fh.write(json.dumps({
                "id": ut.id,
                "n_units": ut.n_units,
                "instances": [{
                    "function": i.function, "weight": i.weight, "cell": i.cell,
                    "start": i.start, "frames": i.frames.tolist(),
                } for i in ut.instances],
            }) + "\n")


def load_ground_truth(path: str) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise GenerationError(f"{path}: empty ground truth file")
    header = json.loads(lines[0])
    if header.get("format") != TRUTH_FORMAT:
        raise GenerationError(f"{path}: not a {TRUTH_FORMAT} file")
    utterances = {}
    for ln in lines[1:]:
        rec = json.loads(ln)
        utterances[rec["id"]] = UtteranceTruth(
            rec["id"], int(rec["n_units"]),
            [PlantedInstance(i["function"], float(i["weight"]), i["cell"],
                             int(i["start"]), np.array(i["frames"]))
             for i in rec["instances"]])
    return GroundTruth(float(header["noise_sigma"]), utterances)
