"""Weighted contour generators.

One generator per communicative function: a contour net maps the position
of a rhythmic unit inside an instance scope to a four-component prosody
frame, and a weight net maps a binary context vector to a scalar gate in
(0, 2) that scales the whole contribution of that instance.  With the gate
bypassed (identity weights) the model reduces to the plain superposition
baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, FunctionInstance, Utterance
from .netcore import DenseNet

MODEL_FORMAT = "wsfc-model"
MODEL_VERSION = 1

CONTEXT_MODES = ("attitude", "overlap", "emphasis")
EMPHASIS_CATEGORIES = ("None", "EMp", "EM", "EMc")

# Ramp counts are divided by ten so typical spans land near unit scale.
COUNT_SCALE = 0.1
RAMP_DIM = 4

DEFAULT_CG_HIDDEN = 17
DEFAULT_WM_HIDDEN = 8


class ModelError(Exception):
    """Model construction, lookup, or checkpoint failure."""


@dataclass(frozen=True)
class RampVector:
    """Position of one rhythmic unit within an instance scope.

    offset, dist_start and dist_end are unit counts scaled by COUNT_SCALE;
    rel_pos runs 0 to 1 across the (possibly extended) scope and is 0 for a
    single-unit scope.
    """

    offset: float
    dist_start: float
    dist_end: float
    rel_pos: float

    def as_array(self) -> np.ndarray:
        return np.array([self.offset, self.dist_start, self.dist_end,
                         self.rel_pos])


def effective_scope(instance: FunctionInstance, scope_extension_right: int,
                    n_units: int) -> tuple[int, int]:
    """Scope with the right extension applied, clipped to the utterance."""
    if scope_extension_right < 0:
        raise ValueError("scope extension must be >= 0")
    start = instance.scope_start
    end = min(instance.scope_end + scope_extension_right, n_units - 1)
    return start, end


def ramp_matrix(instance: FunctionInstance, scope_extension_right: int,
                n_units: int) -> np.ndarray:
    """Ramp features for every unit of the effective scope, one row each."""
    start, end = effective_scope(instance, scope_extension_right, n_units)
    idx = np.arange(start, end + 1, dtype=float)
    span = end - start
    rel = (idx - start) / span if span > 0 else np.zeros_like(idx)
    return np.column_stack([
        (idx - instance.landmark) * COUNT_SCALE,
        (idx - start) * COUNT_SCALE,
        (end - idx) * COUNT_SCALE,
        rel,
    ])


def build_ramps(instance: FunctionInstance, scope_extension_right: int,
                n_units: int) -> list[RampVector]:
    return [RampVector(*row) for row in ramp_matrix(
        instance, scope_extension_right, n_units)]


def context_dim(mode: str, registry: list[str], attitude_set: list[str]) -> int:
    if mode == "attitude":
        return len(attitude_set)
    if mode == "overlap":
        return len(attitude_set) + sum(1 for f in registry
                                       if f not in attitude_set)
    if mode == "emphasis":
        return len(attitude_set) + 1 + len(EMPHASIS_CATEGORIES)
    raise ValueError(f"unknown context mode {mode!r}")


def _scopes_overlap(a: FunctionInstance, b: FunctionInstance) -> bool:
    return a.scope_start <= b.scope_end and b.scope_start <= a.scope_end


def emphasis_category(utterance: Utterance, instance: FunctionInstance) -> str:
    """Position of the instance landmark relative to the last emphasized unit.

    Categories: no EM instance in the utterance at all, before the final
    unit of the nearest EM scope, on it, or after it.
    """
    ends = [i.scope_end for i in utterance.instances if i.function == "EM"]
    if not ends:
        return "None"
    # nearest EM scope by its final unit, ties to the earlier one
    final = min(sorted(ends), key=lambda e: abs(instance.landmark - e))
    if instance.landmark < final:
        return "EMp"
    if instance.landmark == final:
        return "EM"
    return "EMc"


def encode_context(mode: str, utterance: Utterance, instance: FunctionInstance,
                   registry: list[str], attitude_set: list[str]) -> np.ndarray:
    """Binary context vector for one instance under the given mode."""
    if utterance.attitude not in attitude_set:
        raise ValueError(f"attitude {utterance.attitude!r} not in attitude set")
    one_hot = np.zeros(len(attitude_set))
    one_hot[attitude_set.index(utterance.attitude)] = 1.0
    if mode == "attitude":
        return one_hot
    if mode == "overlap":
        flags = []
        for f in registry:
            if f in attitude_set:
                continue
            flags.append(float(any(
                other is not instance and other.function == f
                and _scopes_overlap(other, instance)
                for other in utterance.instances)))
        return np.concatenate([one_hot, np.array(flags)])
    if mode == "emphasis":
        wb = float(any(
            other is not instance and other.function == "WB"
            and _scopes_overlap(other, instance)
            for other in utterance.instances))
        cat = np.zeros(len(EMPHASIS_CATEGORIES))
        cat[EMPHASIS_CATEGORIES.index(emphasis_category(utterance, instance))] = 1.0
        return np.concatenate([one_hot, [wb], cat])
    raise ValueError(f"unknown context mode {mode!r}")


class WeightedContourGenerator:
    """Contour net plus weight net for a single communicative function."""

    def __init__(self, function: str, cg: DenseNet, wm: DenseNet,
                 scope_extension_right: int = 0):
        if cg.in_dim != RAMP_DIM or cg.out_dim != 4:
            raise ModelError(f"contour net must map {RAMP_DIM} -> 4")
        if wm.out_dim != 1 or wm.output != "sigmoid":
            raise ModelError("weight net must have one sigmoid output")
        if scope_extension_right < 0:
            raise ModelError("scope extension must be >= 0")
        self.function = function
        self.cg = cg
        self.wm = wm
        self.scope_extension_right = int(scope_extension_right)

    def contour(self, ramps) -> np.ndarray:
        """Unweighted frames, one row per ramp (RampVector or matrix row)."""
        if isinstance(ramps, (list, tuple)) and ramps and \
                isinstance(ramps[0], RampVector):
            ramps = np.stack([r.as_array() for r in ramps])
        return self.cg.forward(np.asarray(ramps, dtype=float))

    def weight(self, context: np.ndarray) -> float:
        """Gate value in the open interval (0, 2)."""
        return float(2.0 * self.wm.forward(np.asarray(context, dtype=float))[0])

    def copy(self) -> "WeightedContourGenerator":
        return WeightedContourGenerator(self.function, self.cg.copy(),
                                        self.wm.copy(),
                                        self.scope_extension_right)


class ModelSet:
    """One weighted contour generator per registered function."""

    def __init__(self, wcgs: dict[str, WeightedContourGenerator],
                 context_mode: str, registry: list[str],
                 attitude_set: list[str], identity_weights: bool = False,
                 pitch_only_weighting: bool = False):
        if context_mode not in CONTEXT_MODES:
            raise ModelError(f"unknown context mode {context_mode!r}")
        self.wcgs = dict(wcgs)
        self.context_mode = context_mode
        self.registry = list(registry)
        self.attitude_set = list(attitude_set)
        self.identity_weights = bool(identity_weights)
        self.pitch_only_weighting = bool(pitch_only_weighting)

    def wcg(self, function: str) -> WeightedContourGenerator:
        try:
            return self.wcgs[function]
        except KeyError:
            raise ModelError(f"no generator for function {function!r}") from None

    def context_of(self, utterance: Utterance,
                   instance: FunctionInstance) -> np.ndarray:
        return encode_context(self.context_mode, utterance, instance,
                              self.registry, self.attitude_set)

    def weight_of(self, utterance: Utterance,
                  instance: FunctionInstance) -> float:
        if self.identity_weights:
            return 1.0
        return self.wcg(instance.function).weight(
            self.context_of(utterance, instance))

    def contribution(self, utterance: Utterance, instance: FunctionInstance
                     ) -> tuple[float, np.ndarray]:
        """Gate value and weighted frames over the effective scope.

        The same scalar multiplies every unit and every frame component;
        with pitch_only_weighting the duration component stays unweighted.
        """
        gen = self.wcg(instance.function)
        ramps = ramp_matrix(instance, gen.scope_extension_right, len(utterance))
        frames = gen.contour(ramps)
        w = self.weight_of(utterance, instance)
        if self.pitch_only_weighting:
            out = frames.copy()
            out[:, :3] *= w
        else:
            out = w * frames
        return w, out

    def copy(self) -> "ModelSet":
        return ModelSet({f: g.copy() for f, g in self.wcgs.items()},
                        self.context_mode, self.registry, self.attitude_set,
                        self.identity_weights, self.pitch_only_weighting)


def set_identity_weights(model: ModelSet, enabled: bool = True) -> ModelSet:
    """Bypass every weight net so all gates read exactly 1."""
    model.identity_weights = bool(enabled)
    return model


def init_model_set(registry: list[str], attitude_set: list[str],
                   context_mode: str = "attitude", *,
                   cg_hidden: int = DEFAULT_CG_HIDDEN,
                   wm_hidden: int = DEFAULT_WM_HIDDEN,
                   scope_extension_right: int | dict[str, int] = 0,
                   seed: int = 0) -> ModelSet:
    """Fresh model with one generator per registry entry, seeded per function."""
    dim = context_dim(context_mode, registry, attitude_set)
    wcgs = {}
    for k, function in enumerate(registry):
        if isinstance(scope_extension_right, dict):
            ext = int(scope_extension_right.get(function, 0))
        else:
            ext = int(scope_extension_right)
        cg = DenseNet([RAMP_DIM, cg_hidden, 4], output="linear",
                      seed=np.random.default_rng((seed, k, 0)))
        wm = DenseNet([dim, wm_hidden, 1], output="sigmoid",
                      seed=np.random.default_rng((seed, k, 1)))
        wcgs[function] = WeightedContourGenerator(function, cg, wm, ext)
    return ModelSet(wcgs, context_mode, registry, attitude_set)


def model_for_corpus(corpus: Corpus, context_mode: str = "attitude",
                     **kwargs) -> ModelSet:
    return init_model_set(corpus.registry, corpus.attitude_set, context_mode,
                          **kwargs)


def save_model(model: ModelSet, path: str) -> None:
    """Checkpoint to versioned JSON; float64 parameters round-trip bit-exact."""
    data = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "context_mode": model.context_mode,
        "registry": model.registry,
        "attitude_set": model.attitude_set,
        "identity_weights": model.identity_weights,
        "pitch_only_weighting": model.pitch_only_weighting,
        "functions": {
            f: {
                "scope_extension_right": g.scope_extension_right,
                "cg": g.cg.to_dict(),
                "wm": g.wm.to_dict(),
            }
            for f, g in model.wcgs.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
        fh.write("\n")


def load_model(path: str) -> ModelSet:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("format") != MODEL_FORMAT:
        raise ModelError(f"{path}: not a {MODEL_FORMAT} file")
    if data.get("version") != MODEL_VERSION:
        raise ModelError(f"{path}: unsupported version {data.get('version')!r}")
    wcgs = {
        f: WeightedContourGenerator(
            f, DenseNet.from_dict(spec["cg"]), DenseNet.from_dict(spec["wm"]),
            spec["scope_extension_right"])
        for f, spec in data["functions"].items()
    }
    return ModelSet(wcgs, data["context_mode"], data["registry"],
                    data["attitude_set"], data["identity_weights"],
                    data.get("pitch_only_weighting", False))
