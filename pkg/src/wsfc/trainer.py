"""Analysis-by-synthesis training.

The decomposition target is latent: only the superposed prosody of each
utterance is observed.  Each outer iteration therefore splits the current
reconstruction error equally among the instances covering every unit,
hands each function its implied per-instance targets, and lets that
function's generator fit them for a fixed number of inner epochs.  Weight
nets are kept identifiable by pulling the per-batch mean gate toward 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Corpus, Utterance
from .netcore import SgdMomentum, apply_update
from .wcg import ModelSet, WeightedContourGenerator, ramp_matrix, set_identity_weights

_PHASE_SALT = {"train": 0, "pretrain": 1, "weights": 2}


class TrainingDivergenceError(RuntimeError):
    """Validation or training error became non-finite."""


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 256
    reg_coeff: float = 10.0
    learning_rate: float = 0.01
    momentum: float = 0.9
    max_outer_iterations: int = 20
    inner_epochs: int = 50
    patience: int = 5
    outer_tolerance: float = 0.01
    seed: int = 0
    frozen_cg: frozenset[str] = frozenset()
    pitch_loss_weight: float = 1.0
    duration_loss_weight: float = 1.0
    context_mode: str = "attitude"
    cg_hidden: int = 17
    wm_hidden: int = 8
    scope_extension_right: int | dict = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.inner_epochs < 1 or self.max_outer_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.reg_coeff < 0:
            raise ValueError("reg_coeff must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        object.__setattr__(self, "frozen_cg", frozenset(self.frozen_cg))


@dataclass
class FunctionStats:
    function: str
    loss: float
    weight_mean: float
    weight_std: float


@dataclass
class IterationRecord:
    phase: str
    iteration: int
    train_rmse: float
    val_rmse: float
    functions: list[FunctionStats] = field(default_factory=list)


@dataclass
class TrainHistory:
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_val_rmse: float = math.nan

    def extend(self, other: "TrainHistory") -> None:
        self.records.extend(other.records)
        self.stop_reason = other.stop_reason
        self.best_val_rmse = other.best_val_rmse

    @property
    def final_train_rmse(self) -> float:
        return self.records[-1].train_rmse if self.records else math.nan

    @property
    def final_val_rmse(self) -> float:
        return self.records[-1].val_rmse if self.records else math.nan

    def to_csv(self, path: str) -> None:
        """Long format: one row per (iteration, function)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("phase,iteration,function,loss,weight_mean,weight_std,"
                     "train_rmse,val_rmse\n")
            for rec in self.records:
                for fs in rec.functions:
                    fh.write(f"{rec.phase},{rec.iteration},{fs.function},"
                             f"{fs.loss!r},{fs.weight_mean!r},{fs.weight_std!r},"
                             f"{rec.train_rmse!r},{rec.val_rmse!r}\n")


def synthesize(model: ModelSet, utterance: Utterance) -> np.ndarray:
    """Sum of all instance contributions; units no instance reaches stay 0."""
    out = np.zeros((len(utterance), 4))
    for inst in utterance.instances:
        _, frames = model.contribution(utterance, inst)
        start = inst.scope_start
        out[start:start + frames.shape[0]] += frames
    return out


def coverage_counts(model: ModelSet, utterance: Utterance) -> np.ndarray:
    """How many instance scopes (extension included) cover each unit."""
    counts = np.zeros(len(utterance))
    for inst in utterance.instances:
        gen = model.wcg(inst.function)
        start = inst.scope_start
        end = min(inst.scope_end + gen.scope_extension_right, len(utterance) - 1)
        counts[start:end + 1] += 1
    return counts


def distribute_residuals(model: ModelSet, utterance: Utterance
                         ) -> list[np.ndarray]:
    """Per-instance targets: own contribution plus an equal share of the error.

    The reconstruction residual at each unit is divided by the number of
    covering instances, so per covered unit the targets sum back to the
    observation exactly.  Pitch residuals of units without a vocalic
    nucleus are withheld (their pitch is not trustworthy); duration is
    always distributed.
    """
    n = len(utterance)
    contribs = [model.contribution(utterance, inst)[1]
                for inst in utterance.instances]
    synth = np.zeros((n, 4))
    for inst, frames in zip(utterance.instances, contribs):
        synth[inst.scope_start:inst.scope_start + frames.shape[0]] += frames
    residual = utterance.observed_matrix() - synth
    residual[~utterance.nucleus_mask(), :3] = 0.0
    counts = np.maximum(coverage_counts(model, utterance), 1.0)
    share = residual / counts[:, None]
    targets = []
    for inst, frames in zip(utterance.instances, contribs):
        start = inst.scope_start
        targets.append(frames + share[start:start + frames.shape[0]])
    return targets


# ---------------------------------------------------------------------------
# Packed per-function views of a corpus, built once per training run.

@dataclass
class _FunctionData:
    function: str
    ramps: np.ndarray          # (M, 4) all instance rows stacked
    ctx: np.ndarray            # (B, context_dim)
    row_start: np.ndarray      # (B,) offset of each instance in ramps
    lengths: np.ndarray        # (B,)
    utt_pos: np.ndarray        # (B,) index into the corpus
    starts: np.ndarray         # (B,) effective scope start per instance


@dataclass
class _Prep:
    functions: list[str]
    data: dict[str, _FunctionData]
    obs: list[np.ndarray]
    nucleus: list[np.ndarray]
    counts: list[np.ndarray]


def _prepare(model: ModelSet, corpus: Corpus) -> _Prep:
    if not corpus.utterances:
        raise ValueError("cannot train on an empty corpus")
    buckets: dict[str, list] = {}
    for pos, utt in enumerate(corpus.utterances):
        n = len(utt)
        for inst in utt.instances:
            gen = model.wcg(inst.function)
            ramps = ramp_matrix(inst, gen.scope_extension_right, n)
            ctx = model.context_of(utt, inst)
            buckets.setdefault(inst.function, []).append(
                (pos, inst.scope_start, ramps, ctx))
    data = {}
    for f, rows in buckets.items():
        ramps = np.vstack([r for _, _, r, _ in rows])
        lengths = np.array([r.shape[0] for _, _, r, _ in rows])
        data[f] = _FunctionData(
            function=f,
            ramps=ramps,
            ctx=np.array([c for _, _, _, c in rows]),
            row_start=np.concatenate([[0], np.cumsum(lengths)[:-1]]),
            lengths=lengths,
            utt_pos=np.array([p for p, _, _, _ in rows]),
            starts=np.array([s for _, s, _, _ in rows]),
        )
    ordered = [f for f in model.registry if f in data]
    return _Prep(
        functions=ordered,
        data=data,
        obs=[utt.observed_matrix() for utt in corpus.utterances],
        nucleus=[utt.nucleus_mask() for utt in corpus.utterances],
        counts=[coverage_counts(model, utt) for utt in corpus.utterances],
    )


def _function_contributions(model: ModelSet, fd: _FunctionData
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Current gates and weighted contribution rows for all instances of f."""
    gen = model.wcg(fd.function)
    frames = gen.cg.forward(fd.ramps)
    if model.identity_weights:
        w = np.ones(len(fd.lengths))
    else:
        w = 2.0 * gen.wm.forward(fd.ctx)[:, 0]
    wmat = np.repeat(w, fd.lengths)[:, None] * np.ones(4)
    if model.pitch_only_weighting:
        wmat[:, 3] = 1.0
    return w, wmat * frames


def _corpus_synthesis(model: ModelSet, prep: _Prep) -> list[np.ndarray]:
    synth = [np.zeros_like(o) for o in prep.obs]
    for f in prep.functions:
        fd = prep.data[f]
        _, rows = _function_contributions(model, fd)
        for b in range(len(fd.lengths)):
            r0, ln = fd.row_start[b], fd.lengths[b]
            s = fd.starts[b]
            synth[fd.utt_pos[b]][s:s + ln] += rows[r0:r0 + ln]
    return synth


def _build_targets(model: ModelSet, prep: _Prep) -> dict[str, np.ndarray]:
    """Fresh per-function target rows from the current reconstruction."""
    synth = [np.zeros_like(o) for o in prep.obs]
    contrib = {}
    for f in prep.functions:
        fd = prep.data[f]
        _, rows = _function_contributions(model, fd)
        contrib[f] = rows
        for b in range(len(fd.lengths)):
            r0, ln = fd.row_start[b], fd.lengths[b]
            s = fd.starts[b]
            synth[fd.utt_pos[b]][s:s + ln] += rows[r0:r0 + ln]
    shares = []
    for obs, syn, nuc, cnt in zip(prep.obs, synth, prep.nucleus, prep.counts):
        residual = obs - syn
        residual[~nuc, :3] = 0.0
        shares.append(residual / np.maximum(cnt, 1.0)[:, None])
    targets = {}
    for f in prep.functions:
        fd = prep.data[f]
        t = contrib[f].copy()
        for b in range(len(fd.lengths)):
            r0, ln = fd.row_start[b], fd.lengths[b]
            s = fd.starts[b]
            t[r0:r0 + ln] += shares[fd.utt_pos[b]][s:s + ln]
        targets[f] = t
    return targets


def _pitch_rmse_values(model: ModelSet, prep: _Prep) -> np.ndarray:
    synth = _corpus_synthesis(model, prep)
    values = []
    for obs, syn, nuc in zip(prep.obs, synth, prep.nucleus):
        if not nuc.any():
            continue
        err = (obs - syn)[nuc, :3]
        values.append(float(np.sqrt(np.mean(err ** 2))))
    return np.array(values)


def _row_ranges(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Concatenate [s, s+l) ranges without a Python loop."""
    total = int(lengths.sum())
    local = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    return np.repeat(starts - local, lengths) + np.arange(total)


def _run_epoch(gen: WeightedContourGenerator, ramps: np.ndarray,
               ctx: np.ndarray, targets: np.ndarray, row_start: np.ndarray,
               lengths: np.ndarray, order: np.ndarray, config: TrainingConfig,
               cg_opt: SgdMomentum, wm_opt: SgdMomentum, *,
               identity_weights: bool, frozen: bool,
               pitch_only: bool) -> float:
    comp_w = np.array([config.pitch_loss_weight] * 3
                      + [config.duration_loss_weight])
    losses = []
    for lo in range(0, order.size, config.batch_size):
        batch = order[lo:lo + config.batch_size]
        b_len = lengths[batch]
        rows = _row_ranges(row_start[batch], b_len)
        r = ramps[rows]
        t = targets[rows]
        n_batch = batch.size

        cg_acts = gen.cg._forward_cached(r)
        contour = cg_acts[-1]
        if identity_weights:
            w = np.ones(n_batch)
            wm_acts = None
        else:
            wm_acts = gen.wm._forward_cached(ctx[batch])
            w = 2.0 * wm_acts[-1][:, 0]
        wmat = np.repeat(w, b_len)[:, None] * np.ones(4)
        if pitch_only:
            wmat[:, 3] = 1.0
        err = wmat * contour - t

        # each sample contributes the mean of its weighted squared errors
        alpha = np.repeat(1.0 / (4.0 * n_batch * b_len), b_len)
        data_loss = float(np.sum(alpha[:, None] * comp_w * err ** 2))
        d_pred = 2.0 * alpha[:, None] * comp_w * err

        reg_loss = 0.0
        if not identity_weights:
            gate_grad = d_pred * contour
            if pitch_only:
                gate_grad = gate_grad[:, :3]
            local = np.concatenate([[0], np.cumsum(b_len)[:-1]])
            d_w = np.add.reduceat(gate_grad.sum(axis=1), local)
            mean_w = w.mean()
            reg_loss = config.reg_coeff * (mean_w - 1.0) ** 2
            d_w = d_w + 2.0 * config.reg_coeff * (mean_w - 1.0) / n_batch
            wm_grads, _ = gen.wm._backward_from_cache(wm_acts,
                                                      2.0 * d_w[:, None])
            apply_update(gen.wm, wm_grads, wm_opt)
        if not frozen:
            cg_grads, _ = gen.cg._backward_from_cache(cg_acts, wmat * d_pred)
            apply_update(gen.cg, cg_grads, cg_opt)
        losses.append(data_loss + reg_loss)
    return float(np.mean(losses))


def train_function_epoch(gen: WeightedContourGenerator, samples,
                         config: TrainingConfig, *,
                         cg_opt: SgdMomentum | None = None,
                         wm_opt: SgdMomentum | None = None,
                         identity_weights: bool = False,
                         pitch_only: bool = False) -> float:
    """One pass over (ramps, context, target) samples in batch order given.

    Returns the mean batch loss (data term plus gate regularization).
    Functions listed in config.frozen_cg keep their contour net untouched.
    """
    if not samples:
        raise ValueError("no samples to train on")
    ramps = np.vstack([np.atleast_2d(s[0]) for s in samples])
    ctx = np.array([np.asarray(s[1], dtype=float) for s in samples])
    targets = np.vstack([np.atleast_2d(s[2]) for s in samples])
    lengths = np.array([np.atleast_2d(s[0]).shape[0] for s in samples])
    row_start = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    return _run_epoch(
        gen, ramps, ctx, targets, row_start, lengths,
        np.arange(len(samples)), config,
        cg_opt or SgdMomentum(gen.cg, config.learning_rate, config.momentum),
        wm_opt or SgdMomentum(gen.wm, config.learning_rate, config.momentum),
        identity_weights=identity_weights,
        frozen=gen.function in config.frozen_cg,
        pitch_only=pitch_only,
    )


def _restore(model: ModelSet, snapshot: ModelSet) -> None:
    for f, gen in model.wcgs.items():
        src = snapshot.wcgs[f]
        for dst_net, src_net in ((gen.cg, src.cg), (gen.wm, src.wm)):
            for k in range(len(dst_net.weights)):
                dst_net.weights[k][...] = src_net.weights[k]
                dst_net.biases[k][...] = src_net.biases[k]


def analysis_by_synthesis(model: ModelSet, train: Corpus, val: Corpus | None,
                          config: TrainingConfig, *, phase: str = "train"
                          ) -> tuple[ModelSet, TrainHistory]:
    """Iterate residual redistribution and per-function refits.

    Stops on the outer iteration cap, on the train RMSE improvement falling
    under the outer tolerance, or (with a validation corpus) on patience
    exhaustion; in every case the parameters giving the best validation
    pitch RMSE seen so far are the ones returned.
    """
    salt = _PHASE_SALT[phase]
    prep = _prepare(model, train)
    val_prep = _prepare(model, val) if val is not None else None
    history = TrainHistory()
    best_val = math.inf
    snapshot = None
    bad = 0
    prev_rmse = None
    history.stop_reason = "max_iterations"
    for it in range(config.max_outer_iterations):
        targets = _build_targets(model, prep)
        stats = []
        for fi, f in enumerate(prep.functions):
            gen = model.wcg(f)
            fd = prep.data[f]
            cg_opt = SgdMomentum(gen.cg, config.learning_rate, config.momentum)
            wm_opt = SgdMomentum(gen.wm, config.learning_rate, config.momentum)
            rng = np.random.default_rng((config.seed, salt, it, fi))
            frozen = f in config.frozen_cg
            loss = math.nan
            for _ in range(config.inner_epochs):
                order = rng.permutation(len(fd.lengths))
                loss = _run_epoch(
                    gen, fd.ramps, fd.ctx, targets[f], fd.row_start,
                    fd.lengths, order, config, cg_opt, wm_opt,
                    identity_weights=model.identity_weights, frozen=frozen,
                    pitch_only=model.pitch_only_weighting)
            if model.identity_weights:
                w_mean, w_std = 1.0, 0.0
            else:
                w = 2.0 * gen.wm.forward(fd.ctx)[:, 0]
                w_mean, w_std = float(w.mean()), float(w.std())
            stats.append(FunctionStats(f, loss, w_mean, w_std))

        train_vals = _pitch_rmse_values(model, prep)
        train_rmse = float(train_vals.mean()) if train_vals.size else math.nan
        if not math.isfinite(train_rmse):
            raise TrainingDivergenceError(
                f"train RMSE became non-finite at iteration {it}")
        val_rmse = math.nan
        if val_prep is not None:
            val_vals = _pitch_rmse_values(model, val_prep)
            val_rmse = float(val_vals.mean()) if val_vals.size else math.nan
            if not math.isfinite(val_rmse):
                raise TrainingDivergenceError(
                    f"validation RMSE became non-finite at iteration {it}")
        history.records.append(
            IterationRecord(phase, it, train_rmse, val_rmse, stats))

        if val_prep is not None:
            if val_rmse < best_val:
                best_val = val_rmse
                snapshot = model.copy()
                bad = 0
            else:
                bad += 1
                if bad >= config.patience:
                    history.stop_reason = "early_stopping"
                    break
        if prev_rmse is not None and abs(prev_rmse - train_rmse) < config.outer_tolerance:
            history.stop_reason = "converged"
            break
        prev_rmse = train_rmse

    if snapshot is not None:
        _restore(model, snapshot)
        history.best_val_rmse = best_val
    return model, history


def pretrain_freeze(pretrain_subset: Corpus, full: Corpus, val: Corpus | None,
                    config: TrainingConfig) -> tuple[ModelSet, TrainHistory]:
    """Fit contour shapes on a homogeneous subset first, then only the gates.

    Phase one runs with identity weights on the subset; phase two freezes
    every contour net and trains the weight nets on the full corpus.
    """
    model = init_fresh_model(full, config)
    set_identity_weights(model, True)
    model, history = analysis_by_synthesis(model, pretrain_subset, val,
                                           config, phase="pretrain")
    set_identity_weights(model, False)
    cfg2 = replace(config, frozen_cg=frozenset(full.registry))
    model, hist2 = analysis_by_synthesis(model, full, val, cfg2,
                                         phase="weights")
    history.extend(hist2)
    return model, history


def retrain_weights_only(model: ModelSet, corpus: Corpus, val: Corpus | None,
                         config: TrainingConfig
                         ) -> tuple[ModelSet, TrainHistory]:
    """Adapt only the gates of an already fitted model to a corpus."""
    set_identity_weights(model, False)
    cfg = replace(config, frozen_cg=frozenset(model.registry))
    return analysis_by_synthesis(model, corpus, val, cfg, phase="weights")


def init_fresh_model(corpus: Corpus, config: TrainingConfig) -> ModelSet:
    from .wcg import init_model_set
    return init_model_set(corpus.registry, corpus.attitude_set,
                          config.context_mode, cg_hidden=config.cg_hidden,
                          wm_hidden=config.wm_hidden,
                          scope_extension_right=config.scope_extension_right,
                          seed=config.seed)
