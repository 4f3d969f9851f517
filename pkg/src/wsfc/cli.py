"""Command-line front end.

Subcommands: generate, train, sweep, eval, decompose, export-weights.
Experiments are described by a versioned JSON config; unknown keys are
rejected so typos fail loudly.  Every report path writes delimited output
and, unless --no-figures is given, renders the matching figures next to
it.  Runs are deterministic given config and seeds; --threads only
changes how many sweep cells run at once, never their results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from . import evaluate, synthgen, trainer, wcg
from .corpus import Corpus, CorpusError, load_corpus, save_corpus, split_corpus
from .trainer import TrainingConfig

OUTPUT_DIR_ENV = "WSFC_OUT_DIR"
CONFIG_FORMAT = "wsfc-experiment"
CONFIG_VERSION = 1

MODES = ("sfc", "wsfc")
STRATEGIES = ("full", "pretrain_freeze", "retrain_weights")


class ConfigError(Exception):
    """Bad experiment configuration."""


@dataclass
class ExperimentConfig:
    corpus: str
    mode: str = "wsfc"
    strategy: str = "full"
    split_ratios: tuple[float, float, float] | None = (0.7, 0.15, 0.15)
    split_seed: int = 0
    pretrain_attitude: str | None = None
    base_checkpoint: str | None = None
    checkpoint_name: str | None = None
    output_dir: str | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sweep_batch_sizes: list[int] = field(default_factory=list)
    sweep_reg_coeffs: list[float] = field(default_factory=list)


def _reject_unknown(data: dict, allowed: list[str], where: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def load_experiment_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from exc
    if data.pop("format", None) != CONFIG_FORMAT:
        raise ConfigError(f"{path}: not a {CONFIG_FORMAT} file")
    if data.pop("version", None) != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version")
    _reject_unknown(data, ["corpus", "mode", "strategy", "split",
                           "pretrain_attitude", "base_checkpoint",
                           "checkpoint_name", "output_dir", "training",
                           "sweep"], path)
    if "corpus" not in data:
        raise ConfigError(f"{path}: missing 'corpus'")

    split = data.pop("split", {"ratios": [0.7, 0.15, 0.15], "seed": 0})
    ratios, seed = (0.7, 0.15, 0.15), 0
    if split is None:
        ratios = None
    else:
        _reject_unknown(split, ["ratios", "seed"], f"{path}: split")
        if "ratios" in split:
            ratios = tuple(float(r) for r in split["ratios"])
            if len(ratios) != 3:
                raise ConfigError(f"{path}: split needs 3 ratios")
        seed = int(split.get("seed", 0))

    training = data.pop("training", {})
    _reject_unknown(training, list(TrainingConfig.__dataclass_fields__),
                    f"{path}: training")
    if "frozen_cg" in training:
        training["frozen_cg"] = frozenset(training["frozen_cg"])
    try:
        tc = TrainingConfig(**training)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: training: {exc}") from exc

    sweep = data.pop("sweep", {})
    _reject_unknown(sweep, ["batch_sizes", "reg_coeffs"], f"{path}: sweep")

    cfg = ExperimentConfig(
        corpus=str(data["corpus"]),
        mode=str(data.get("mode", "wsfc")),
        strategy=str(data.get("strategy", "full")),
        split_ratios=ratios,
        split_seed=seed,
        pretrain_attitude=data.get("pretrain_attitude"),
        base_checkpoint=data.get("base_checkpoint"),
        checkpoint_name=data.get("checkpoint_name"),
        output_dir=data.get("output_dir"),
        training=tc,
        sweep_batch_sizes=[int(b) for b in sweep.get("batch_sizes", [])],
        sweep_reg_coeffs=[float(r) for r in sweep.get("reg_coeffs", [])],
    )
    if cfg.mode not in MODES:
        raise ConfigError(f"{path}: mode must be one of {MODES}")
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"{path}: strategy must be one of {STRATEGIES}")
    if cfg.mode == "sfc" and cfg.strategy != "full":
        raise ConfigError(f"{path}: sfc mode only supports the full strategy")
    if cfg.strategy == "pretrain_freeze" and not cfg.pretrain_attitude:
        raise ConfigError(f"{path}: pretrain_freeze needs pretrain_attitude")
    if cfg.strategy == "retrain_weights" and not cfg.base_checkpoint:
        raise ConfigError(f"{path}: retrain_weights needs base_checkpoint")
    return cfg


def _resolve_out_dir(flag: str | None, cfg_dir: str | None = None) -> str:
    out = flag or cfg_dir or os.environ.get(OUTPUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _split(cfg: ExperimentConfig, corpus: Corpus
           ) -> tuple[Corpus, Corpus | None, Corpus | None]:
    if cfg.split_ratios is None:
        return corpus, None, None
    return split_corpus(corpus, cfg.split_ratios, cfg.split_seed)


def _check_registry(model: wcg.ModelSet, corpus: Corpus, where: str) -> None:
    if model.registry != corpus.registry:
        raise ConfigError(f"{where}: checkpoint registry does not match corpus")


def _train_once(cfg: ExperimentConfig, train: Corpus, val: Corpus | None
                ) -> tuple[wcg.ModelSet, trainer.TrainHistory]:
    tc = cfg.training
    if cfg.strategy == "full":
        model = trainer.init_fresh_model(train, tc)
        if cfg.mode == "sfc":
            wcg.set_identity_weights(model)
        return trainer.analysis_by_synthesis(model, train, val, tc)
    if cfg.strategy == "pretrain_freeze":
        subset = train.subset([u for u in train.utterances
                               if u.attitude == cfg.pretrain_attitude])
        if not subset.utterances:
            raise ConfigError(
                f"no {cfg.pretrain_attitude!r} utterances to pretrain on")
        return trainer.pretrain_freeze(subset, train, val, tc)
    model = wcg.load_model(cfg.base_checkpoint)
    _check_registry(model, train, cfg.base_checkpoint)
    return trainer.retrain_weights_only(model, train, val, tc)


def cmd_generate(args) -> int:
    spec = synthgen.load_genspec(args.spec)
    out = _resolve_out_dir(args.out)
    corpus_path = args.corpus or os.path.join(out, "corpus.jsonl")
    truth_path = args.truth or os.path.join(out, "truth.jsonl")
    corpus, gt = synthgen.generate_corpus(spec)
    save_corpus(corpus, corpus_path)
    synthgen.save_ground_truth(gt, truth_path)
    n_inst = sum(len(u.instances) for u in corpus.utterances)
    print(f"wrote {corpus_path}: {len(corpus)} utterances, {n_inst} instances, "
          f"noise sigma {spec.noise_sigma:g}, seed {spec.seed}")
    print(f"wrote {truth_path}")
    return 0


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config)
    out = _resolve_out_dir(args.out, cfg.output_dir)
    corpus = load_corpus(cfg.corpus)
    train, val, _ = _split(cfg, corpus)
    model, history = _train_once(cfg, train, val)
    ckpt = os.path.join(out, cfg.checkpoint_name or f"model_{cfg.mode}.json")
    wcg.save_model(model, ckpt)
    csv_path = os.path.join(out, "history.csv")
    history.to_csv(csv_path)
    print(f"wrote {ckpt}")
    print(f"wrote {csv_path}")
    print(f"stopped: {history.stop_reason} after {len(history.records)} iterations")
    print(f"final train RMSE {history.final_train_rmse:.4f} st, "
          f"val RMSE {history.final_val_rmse:.4f} st")
    if not args.no_figures:
        from . import figures
        fig_path = os.path.join(out, "history.png")
        figures.history_figure(history, fig_path)
        print(f"wrote {fig_path}")
    return 0


def _sweep_worker(task) -> tuple[int, float, list[tuple], str]:
    corpus_path, cfg_json, batch, reg = task
    cfg = ExperimentConfig(**{**cfg_json, "training": TrainingConfig(
        **{**cfg_json["training"],
           "batch_size": batch, "reg_coeff": reg,
           "frozen_cg": frozenset(cfg_json["training"]["frozen_cg"])})})
    corpus = load_corpus(corpus_path)
    train, val, _ = _split(cfg, corpus)
    model, _ = _train_once(cfg, train, val)
    rows = evaluate.weight_table(model, train)
    return batch, reg, [(r.function, r.cell, r.count, r.mean, r.std,
                         r.min, r.max) for r in rows], ""


def cmd_sweep(args) -> int:
    cfg = load_experiment_config(args.config)
    if not cfg.sweep_batch_sizes or not cfg.sweep_reg_coeffs:
        raise ConfigError(f"{args.config}: sweep needs batch_sizes and reg_coeffs")
    out = _resolve_out_dir(args.out, cfg.output_dir)
    cfg_json = {k: v for k, v in asdict(cfg).items()
                if k not in ("sweep_batch_sizes", "sweep_reg_coeffs")}
    cfg_json["training"]["frozen_cg"] = sorted(cfg.training.frozen_cg)
    tasks = [(cfg.corpus, cfg_json, b, r)
             for b in cfg.sweep_batch_sizes for r in cfg.sweep_reg_coeffs]
    results = []
    failures = []
    threads = args.threads or os.cpu_count() or 1
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_sweep_worker, t) for t in tasks]
            for task, fut in zip(tasks, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    failures.append((task[2], task[3], str(exc)))
    else:
        for task in tasks:
            try:
                results.append(_sweep_worker(task))
            except Exception as exc:
                failures.append((task[2], task[3], str(exc)))

    csv_path = os.path.join(out, "sweep.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("batch_size,reg_coeff,function,cell,count,mean,std,min,max\n")
        for batch, reg, rows, _ in results:
            for f, cell, count, mean, std, lo, hi in rows:
                fh.write(f"{batch},{reg!r},{f},{cell},{count},"
                         f"{mean!r},{std!r},{lo!r},{hi!r}\n")
    print(f"wrote {csv_path} ({len(results)} of {len(tasks)} grid cells)")
    for batch, reg, msg in failures:
        print(f"grid cell batch={batch} reg={reg} failed: {msg}",
              file=sys.stderr)
    if not args.no_figures and results:
        from . import figures
        tables = {(b, r): {(f, c): (m, s) for f, c, _, m, s, _, _ in rows}
                  for b, r, rows, _ in results}
        fig_path = os.path.join(out, "sweep.png")
        figures.sweep_figure(tables, fig_path)
        print(f"wrote {fig_path}")
    return 1 if failures else 0


def cmd_eval(args) -> int:
    model = wcg.load_model(args.checkpoint)
    corpus = load_corpus(args.corpus)
    _check_registry(model, corpus, args.checkpoint)
    out = _resolve_out_dir(args.out)
    report = evaluate.rmse_vocalic(model, corpus)
    csv_path = os.path.join(out, "rmse_report.csv")
    report.save_csv(csv_path)
    print(f"wrote {csv_path}")
    print(f"pitch RMSE {report.mean:.4f} +/- {report.std:.4f} st over "
          f"{len(report.values)} utterances ({report.excluded} excluded)")
    histograms = {"model": report.values}
    if args.compare:
        other = wcg.load_model(args.compare)
        _check_registry(other, corpus, args.compare)
        other_report = evaluate.rmse_vocalic(other, corpus)
        other_csv = os.path.join(out, "rmse_report_compare.csv")
        other_report.save_csv(other_csv)
        print(f"wrote {other_csv}")
        print(f"comparison RMSE {other_report.mean:.4f} +/- "
              f"{other_report.std:.4f} st")
        histograms["comparison"] = other_report.values
        try:
            t, p = evaluate.paired_t_test(report.values, other_report.values)
            print(f"paired t-test: t={t:.4f}, p={p:.4f}")
        except evaluate.DegenerateDataError as exc:
            print(f"paired t-test not defined: {exc}")
    if not args.no_figures:
        from . import figures
        fig_path = os.path.join(out, "rmse_hist.png")
        figures.rmse_histogram_figure(histograms, fig_path)
        print(f"wrote {fig_path}")
    return 0


def cmd_decompose(args) -> int:
    model = wcg.load_model(args.checkpoint)
    corpus = load_corpus(args.corpus)
    _check_registry(model, corpus, args.checkpoint)
    out = _resolve_out_dir(args.out)
    utt = corpus.utterance(args.utterance)
    csv_path = os.path.join(out, f"decomposition_{utt.id}.csv")
    rows = evaluate.export_decomposition(model, utt, csv_path)
    print(f"wrote {csv_path}")
    if not args.no_figures:
        from . import figures
        fig_path = os.path.join(out, f"decomposition_{utt.id}.png")
        figures.decomposition_figure(rows, utt.id, fig_path)
        print(f"wrote {fig_path}")
    return 0


def cmd_export_weights(args) -> int:
    model = wcg.load_model(args.checkpoint)
    corpus = load_corpus(args.corpus)
    _check_registry(model, corpus, args.checkpoint)
    out = _resolve_out_dir(args.out)
    groups = evaluate.weight_groups(model, corpus, args.grouping)
    rows = evaluate.weight_table(model, corpus, args.grouping)
    csv_path = os.path.join(out, "weight_table.csv")
    evaluate.save_weight_table(rows, csv_path)
    print(f"wrote {csv_path}")
    for r in rows:
        print(f"  {r.function}/{r.cell}: mean {r.mean:.3f} std {r.std:.3f} "
              f"(n={r.count})")
    if not args.no_figures:
        from . import figures
        fig_path = os.path.join(out, "weights.png")
        figures.weight_distribution_figure(groups, fig_path)
        print(f"wrote {fig_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsfc",
        description="Decompose utterance prosody into weighted "
                    "function-specific contours.")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes for sweep grids "
                             "(default: all cores; results are identical "
                             "for any value)")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering, write only delimited output")
    parser.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUTPUT_DIR_ENV} "
                             "or the working directory)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic corpus")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--corpus", default=None, help="corpus output path")
    p.add_argument("--truth", default=None, help="ground truth output path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a model to a corpus")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train across a batch/regularization grid")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--compare", default=None,
                   help="second checkpoint for a paired t-test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decompose", help="per-unit contribution breakdown")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--utterance", required=True, help="utterance id")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("export-weights", help="gate statistics per context cell")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--grouping", default="auto",
                   choices=["auto", "attitude", "emphasis"])
    p.set_defaults(func=cmd_export_weights)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusError, synthgen.GenerationError,
            wcg.ModelError, trainer.TrainingDivergenceError, KeyError,
            OSError, ValueError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
