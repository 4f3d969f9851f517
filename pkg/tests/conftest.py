"""Shared fixtures.

The expensive trainings (recovery corpus, tone corpus, convergence
corpora) are session-scoped so the acceptance suite and the unit suites
share one run each.  Every fixture is fully seeded; reruns produce
identical corpora and models.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from wsfc import synthgen, trainer, wcg
from wsfc.corpus import split_corpus
from wsfc.synthgen import PlantSpec, PrototypeSpec, SyntheticSpec
from wsfc.trainer import TrainingConfig

TONES = ("T1", "T2", "T3", "T4")


def recovery_spec() -> SyntheticSpec:
    """Planted-weight corpus: clitic-analog XX at 1.75 vs 0.35."""
    return SyntheticSpec(
        registry=("DC", "DI", "XX", "DG"),
        attitude_set=("DC", "DI"),
        prototypes=(
            PrototypeSpec("DC", "fall", 4.0),
            PrototypeSpec("DI", "rise", 6.0, duration_amplitude=0.1),
            PrototypeSpec("XX", "bump", 3.0, width=0.3),
            PrototypeSpec("DG", "dip", 2.5, width=0.3,
                          duration_amplitude=0.05),
        ),
        plant=PlantSpec(cells={"XX": {"DC": 1.75, "DI": 0.35},
                               "DG": {"DC": 1.3, "DI": 0.7}}),
        n_utterances=600,
        length_range=(6, 12),
        noise_sigma=0.5,
        seed=11,
        local_functions=("XX", "DG"),
        local_count_range=(1, 3),
        local_scope_range=(2, 4),
    )


def recovery_config(**overrides) -> TrainingConfig:
    base = dict(batch_size=256, reg_coeff=10.0, max_outer_iterations=20,
                inner_epochs=50, seed=5, outer_tolerance=0.001)
    base.update(overrides)
    return TrainingConfig(**base)


@pytest.fixture(scope="session")
def recovery_bundle():
    spec = recovery_spec()
    t0 = time.perf_counter()
    corpus, gt = synthgen.generate_corpus(spec)
    gen_seconds = time.perf_counter() - t0
    train, val, test = split_corpus(corpus, (0.7, 0.15, 0.15), 3)
    return {"spec": spec, "corpus": corpus, "gt": gt, "train": train,
            "val": val, "test": test, "gen_seconds": gen_seconds}


def _timed_training(bundle, config, identity=False):
    model = trainer.init_fresh_model(bundle["train"], config)
    if identity:
        wcg.set_identity_weights(model)
    t0 = time.perf_counter()
    model, history = trainer.analysis_by_synthesis(
        model, bundle["train"], bundle["val"], config)
    return {"model": model, "history": history,
            "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def recovery_wsfc(recovery_bundle):
    return _timed_training(recovery_bundle, recovery_config())


@pytest.fixture(scope="session")
def recovery_sfc(recovery_bundle):
    return _timed_training(recovery_bundle, recovery_config(), identity=True)


@pytest.fixture(scope="session")
def recovery_lambda0(recovery_bundle):
    return _timed_training(recovery_bundle, recovery_config(reg_coeff=0.0))


@pytest.fixture(scope="session")
def recovery_pretrained(recovery_bundle):
    """pretrain_freeze on a seeded random half of the training set."""
    train = recovery_bundle["train"]
    rng = np.random.default_rng(77)
    subset = train.subset([u for u in train.utterances if rng.random() < 0.5])
    t0 = time.perf_counter()
    model, history = trainer.pretrain_freeze(
        subset, train, recovery_bundle["val"], recovery_config())
    return {"model": model, "history": history, "subset": subset,
            "seconds": time.perf_counter() - t0}


def smooth_spec(sigma: float) -> SyntheticSpec:
    """Two attitude contours, no locals; capacity-matched to the nets."""
    return SyntheticSpec(
        registry=("DC", "DI"),
        attitude_set=("DC", "DI"),
        prototypes=(
            PrototypeSpec("DC", "fall", 4.0),
            PrototypeSpec("DI", "rise", 6.0, duration_amplitude=0.1),
        ),
        plant=PlantSpec(cells={}),
        n_utterances=150,
        length_range=(6, 10),
        noise_sigma=sigma,
        seed=21,
    )


def smooth_config(**overrides) -> TrainingConfig:
    base = dict(batch_size=64, learning_rate=0.02, max_outer_iterations=80,
                inner_epochs=80, seed=5, outer_tolerance=1e-5)
    base.update(overrides)
    return TrainingConfig(**base)


@pytest.fixture(scope="session")
def converged_clean():
    corpus, gt = synthgen.generate_corpus(smooth_spec(0.0))
    train, val, _ = split_corpus(corpus, (0.8, 0.1, 0.1), 3)
    bundle = {"corpus": corpus, "gt": gt, "train": train, "val": val}
    bundle.update(_timed_training(bundle, smooth_config()))
    return bundle


@pytest.fixture(scope="session")
def converged_noisy():
    corpus, gt = synthgen.generate_corpus(smooth_spec(0.5))
    train, val, _ = split_corpus(corpus, (0.8, 0.1, 0.1), 3)
    bundle = {"corpus": corpus, "gt": gt, "train": train, "val": val}
    bundle.update(_timed_training(bundle, smooth_config()))
    return bundle


def tone_spec(emphasis_probability: float, seed: int) -> SyntheticSpec:
    """Per-unit tone contours whose strength is keyed by emphasis cells."""
    plant_cells = {t: {"None": 1.0, "EMp": 1.0, "EM": 1.5, "EMc": 0.7}
                   for t in TONES}
    return SyntheticSpec(
        registry=("AT", "EM") + TONES,
        attitude_set=("AT",),
        prototypes=(
            PrototypeSpec("AT", "constant", 0.0),
            PrototypeSpec("EM", "constant", 0.0),
            PrototypeSpec("T1", "level", 3.0, scope_extension_right=2),
            PrototypeSpec("T2", "rise", 4.0, scope_extension_right=2),
            PrototypeSpec("T3", "dip", 3.5, scope_extension_right=2),
            PrototypeSpec("T4", "fall", 4.0, scope_extension_right=2),
        ),
        plant=PlantSpec(key_by="emphasis", cells=plant_cells),
        n_utterances=300,
        length_range=(6, 12),
        noise_sigma=0.25,
        seed=seed,
        per_unit_functions=TONES,
        emphasis_probability=emphasis_probability,
        emphasis_scope_range=(2, 3),
        context_mode="emphasis",
    )


def tone_config(**overrides) -> TrainingConfig:
    base = dict(batch_size=256, reg_coeff=10.0, learning_rate=0.02,
                max_outer_iterations=30, inner_epochs=50, seed=5,
                outer_tolerance=1e-4, context_mode="emphasis",
                scope_extension_right={t: 2 for t in TONES})
    base.update(overrides)
    return TrainingConfig(**base)


@pytest.fixture(scope="session")
def tone_bundle():
    base_corpus, _ = synthgen.generate_corpus(tone_spec(0.0, 31))
    emph_corpus, gt = synthgen.generate_corpus(tone_spec(0.8, 32))
    bt, bv, _ = split_corpus(base_corpus, (0.8, 0.1, 0.1), 3)
    et, ev, _ = split_corpus(emph_corpus, (0.8, 0.1, 0.1), 3)
    cfg = tone_config()
    base = trainer.init_fresh_model(bt, cfg)
    base, base_hist = trainer.analysis_by_synthesis(base, bt, bv, cfg)
    frozen_before = [w.copy() for g in base.wcgs.values()
                     for w in g.cg.weights + g.cg.biases]
    tuned = base.copy()
    tuned, tuned_hist = trainer.retrain_weights_only(tuned, et, ev, cfg)
    return {"base": base, "tuned": tuned, "base_history": base_hist,
            "tuned_history": tuned_hist, "emph_train": et,
            "emph_val": ev, "gt": gt, "frozen_before": frozen_before,
            "config": cfg}
