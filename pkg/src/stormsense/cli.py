"""Command-line pipeline: preprocess, embed, synth, train, evaluate.

Each command reads one JSON config (plus ``--key=value`` overrides), writes
only into the configured output directory, drops an effective-config
snapshot next to its outputs, and exits nonzero with a one-line JSON error
on any failure.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import traceback
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_tensors, save_tensors
from .classifier import CATEGORIES, classify_forward
from .config import OUT_DIR_ENV, SNAPSHOT_NAME, RunConfig, derive_seed, load_config
from .data import (
    ENV_FEATURES,
    parse_besttrack,
    pair_tweet_batches,
    read_sentiment_jsonl,
    synth_generate,
)
from .embeddings import (
    EmbeddingTable,
    export_table,
    gazetteer_from_semantic,
    import_table,
    load_semantic_vectors,
    merge_tables,
    train_skipgram,
)
from .evaluation import (
    confusion,
    export_confusion,
    export_metrics,
    export_timeseries,
    metrics,
    permutation_importance,
    timeseries_rows,
)
from .features import NormState
from .text import (
    preprocess_tweet,
    read_token_seqs_jsonl,
    read_tweets_jsonl,
    write_token_seqs_jsonl,
)
from .training import (
    JointConfig,
    JointModels,
    build_joint_dataset,
    fit,
    instance_features,
    predict_instances,
)

TWEET_TOKENS_NAME = "tokens_tweets.jsonl"
POOL_TOKENS_NAME = "tokens_sentiment.jsonl"
EMBEDDINGS_NAME = "embeddings.w2v"
CHECKPOINT_NAME = "checkpoint.bin"

_OVERRIDE_RE = re.compile(r"--([A-Za-z0-9_.]+)=(.*)", re.DOTALL)

FEATURE_NAMES = tuple(ENV_FEATURES) + ("c", "v_neg", "v_pos")


def _log(command: str, message: str) -> None:
    print(f"{command}: {message}")


# ---------------------------------------------------------------------------
# shared input plumbing
# ---------------------------------------------------------------------------


def _load_semantic(config: RunConfig):
    """Optional phrase -> vector map, with the gazetteer it implies."""
    raw = config.values["paths"]["semantic_vectors"]
    if not raw:
        return None, set()
    semantic = load_semantic_vectors(config.data_path("semantic_vectors"),
                                     expected_d=config.values["skipgram"]["d"])
    return semantic, gazetteer_from_semantic(semantic)


def _read_inputs(config: RunConfig):
    observations, rejections = parse_besttrack(config.data_path("besttrack"))
    tweets = read_tweets_jsonl(config.data_path("tweets"))
    sentiment_rows = read_sentiment_jsonl(config.data_path("sentiment"))
    instances, discarded = pair_tweet_batches(
        observations, tweets, slot_length=config.values["data"]["slot_length"])
    return observations, rejections, tweets, sentiment_rows, instances, discarded


def _tokenized_corpus(tweets, sentiment_rows, gazetteer):
    tweet_seqs = [preprocess_tweet(t, gazetteer) for t in tweets]
    pool_seqs = [preprocess_tweet(t, gazetteer) for t, _ in sentiment_rows]
    return tweet_seqs, pool_seqs


def _obtain_table(config: RunConfig, tweets, sentiment_rows) -> EmbeddingTable:
    """Import an exported table when one is configured or already built;
    otherwise train skip-gram on the full tweet corpus in memory."""
    explicit = config.values["paths"]["embedding_table"]
    if explicit:
        return import_table(config.data_path("embedding_table"))
    default = config.out_dir / EMBEDDINGS_NAME
    if default.exists():
        return import_table(default)
    semantic, gazetteer = _load_semantic(config)
    tweet_seqs, pool_seqs = _tokenized_corpus(tweets, sentiment_rows, gazetteer)
    table = train_skipgram(tweet_seqs + pool_seqs, config.skipgram_config())
    if semantic:
        table = merge_tables(table, semantic)
    return table


def _trivial_table() -> EmbeddingTable:
    """Placeholder table for the environment-only mode, where token content
    never reaches the model."""
    return EmbeddingTable(vocab={"<pad>": 0}, vectors=np.zeros((1, 1)), d=1)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_preprocess(config: RunConfig) -> None:
    observations, rejections, tweets, sentiment_rows, instances, discarded = \
        _read_inputs(config)
    _, gazetteer = _load_semantic(config)
    tweet_seqs, pool_seqs = _tokenized_corpus(tweets, sentiment_rows, gazetteer)
    write_token_seqs_jsonl(config.out_dir / TWEET_TOKENS_NAME, tweet_seqs)
    write_token_seqs_jsonl(config.out_dir / POOL_TOKENS_NAME, pool_seqs)
    report = {
        "observations": len(observations),
        "rejected_rows": rejections,
        "tweets": len(tweets),
        "paired_tweets": sum(len(i.tweets) for i in instances),
        "discarded_tweets": discarded,
        "slots_with_tweets": sum(1 for i in instances if i.tweets),
        "labeled_tweets": len(sentiment_rows),
        "entities": len(gazetteer),
    }
    with open(config.out_dir / "pairing_report.json", "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log("preprocess", f"tokenized {len(tweets)} tweets and "
         f"{len(sentiment_rows)} labeled tweets; "
         f"{report['paired_tweets']} paired, {discarded} discarded")


def cmd_embed(config: RunConfig) -> None:
    corpus = []
    for name in (TWEET_TOKENS_NAME, POOL_TOKENS_NAME):
        path = config.out_dir / name
        if not path.exists():
            raise FileNotFoundError(
                f"{path} not found; run the preprocess command first")
        corpus.extend(read_token_seqs_jsonl(path))
    table = train_skipgram(corpus, config.skipgram_config())
    semantic, _ = _load_semantic(config)
    if semantic:
        table = merge_tables(table, semantic)
    export_table(table, config.out_dir / EMBEDDINGS_NAME)
    report = {
        "vocab_size": len(table.vocab),
        "d": table.d,
        "entity_rows": len(table.entity_marks),
        "epoch_losses": table.epoch_losses,
    }
    with open(config.out_dir / "embed_report.json", "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log("embed", f"trained {len(table.vocab)} vectors of dimension {table.d} "
         f"({len(table.entity_marks)} entity rows)")


def cmd_synth(config: RunConfig) -> None:
    report = synth_generate(config.synth_spec(), config.out_dir)
    bayes = report["bayes_accuracy"]
    _log("synth", f"generated {report['n']} observations "
         f"(bayes env_only={bayes['env_only']:.4f} "
         f"combined={bayes['combined']:.4f})")


def _save_checkpoint(config: RunConfig, models: JointModels, table, dataset,
                     mode: str) -> None:
    arrays = {name: t.data for name, t in models.trainable().items()}
    meta = {
        "mode": mode,
        "f2_kind": config.values["models"]["f2_kind"],
        "f1_units": config.values["models"]["f1_units"],
        "env_dim": dataset.norm.m,
        "k": dataset.k,
        "seq_length": dataset.seq_length,
        "d": table.d,
        "vocab": table.vocab,
        "entity_marks": sorted(int(i) for i in table.entity_marks),
        "norm": {
            "env_min": dataset.norm.env_min.tolist(),
            "env_max": dataset.norm.env_max.tolist(),
            "log_count_max": dataset.norm.log_count_max,
        },
    }
    save_tensors(config.out_dir / CHECKPOINT_NAME, arrays, meta)


def cmd_train(config: RunConfig) -> None:
    _, _, tweets, sentiment_rows, instances, _ = _read_inputs(config)
    cfg = config.joint_config()
    if cfg.mode == "standalone_env_only":
        table = _trivial_table()
    else:
        table = _obtain_table(config, tweets, sentiment_rows)
    dataset = build_joint_dataset(
        instances, sentiment_rows, table,
        split_ratio=config.values["data"]["split_ratio"],
        seed=derive_seed(config.seed, "split"),
        pool_eval_fraction=config.values["data"]["pool_eval_fraction"])
    models = JointModels.create(
        cfg.mode, table=table, env_dim=dataset.norm.m, k=dataset.k,
        head_kind=config.values["models"]["f2_kind"],
        units=config.values["models"]["f1_units"],
        seed=derive_seed(config.seed, "init"))
    report = fit(dataset, models, cfg)
    report.to_csv(config.out_dir / "training_curve.csv")
    _save_checkpoint(config, models, table, dataset, cfg.mode)
    last = report.final()
    _log("train", f"mode={cfg.mode} epochs={cfg.epochs} "
         f"train_acc={last.train_acc:.4f} test_acc={last.test_acc:.4f}")


def _restore_models(config: RunConfig, arrays: dict, meta: dict):
    """Rebuild the saved models and the table they were trained with."""
    mode = meta["mode"]
    if mode == "standalone_env_only":
        table = _trivial_table()
    else:
        vocab = {str(tok): int(idx) for tok, idx in meta["vocab"].items()}
        table = EmbeddingTable(vocab=vocab,
                               vectors=arrays["embedding.table"].copy(),
                               d=int(meta["d"]),
                               entity_marks=set(meta["entity_marks"]))
    models = JointModels.create(
        mode, table=None if mode == "standalone_env_only" else table,
        env_dim=int(meta["env_dim"]), k=int(meta["k"]),
        head_kind=meta["f2_kind"], units=int(meta["f1_units"]), seed=0)
    for name, tensor in models.trainable().items():
        if name not in arrays:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        if arrays[name].shape != tensor.data.shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {arrays[name].shape}, "
                f"model expects {tensor.data.shape}")
        tensor.data = arrays[name].copy()
    return models, table


def cmd_evaluate(config: RunConfig) -> None:
    checkpoint = config.out_dir / CHECKPOINT_NAME
    if not checkpoint.exists():
        raise FileNotFoundError(
            f"{checkpoint} not found; run the train command first")
    arrays, meta = load_tensors(checkpoint)
    models, table = _restore_models(config, arrays, meta)
    # the checkpoint's mode describes the saved model, so it wins here
    body = dict(config.values["training"])
    body["mode"] = meta["mode"]
    cfg = JointConfig(seed=derive_seed(config.seed, "train"), **body)
    norm = NormState(env_min=np.asarray(meta["norm"]["env_min"]),
                     env_max=np.asarray(meta["norm"]["env_max"]),
                     log_count_max=float(meta["norm"]["log_count_max"]))
    _, _, _, sentiment_rows, instances, _ = _read_inputs(config)
    dataset = build_joint_dataset(
        instances, sentiment_rows, table,
        split_ratio=config.values["data"]["split_ratio"],
        seed=derive_seed(config.seed, "split"),
        pool_eval_fraction=config.values["data"]["pool_eval_fraction"],
        seq_length=int(meta["seq_length"]), norm=norm)

    predictions = predict_instances(dataset.test, models, norm, cfg)
    true_idx = [inst.label_index for inst in dataset.test]
    cm = confusion(true_idx, predictions)
    report = metrics(cm)
    export_metrics(report, config.out_dir / "metrics.csv")
    export_confusion(cm, config.out_dir / "confusion.csv")

    features = np.stack([instance_features(inst, models, norm, cfg)
                         for inst in dataset.test])
    head = models.head

    def head_predict(matrix: np.ndarray) -> np.ndarray:
        probs = classify_forward(head, Tensor(np.asarray(matrix)))
        return np.argmax(probs.data, axis=1)

    base_seed = derive_seed(config.seed, "importance")
    lines = ["feature,mean_drop,std_drop"]
    for j, name in enumerate(FEATURE_NAMES[:features.shape[1]]):
        result = permutation_importance(head_predict, features, true_idx, j,
                                        repeats=5, seed=base_seed + j)
        lines.append(f"{name},{result.mean_drop!r},{result.std_drop!r}")
    with open(config.out_dir / "importance.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

    rows = timeseries_rows(dataset.test, predictions, models, cfg)
    export_timeseries(rows, config.out_dir / "timeseries.csv")
    _log("evaluate", f"test accuracy={report.accuracy:.4f} "
         f"f1_macro={report.f1_macro:.4f} over {len(dataset.test)} instances")


COMMANDS = {
    "preprocess": (cmd_preprocess, "pair tweets with observations and tokenize"),
    "embed": (cmd_embed, "train skip-gram vectors from tokenized output"),
    "synth": (cmd_synth, "generate a synthetic labeled dataset"),
    "train": (cmd_train, "fit the classifier, optionally jointly"),
    "evaluate": (cmd_evaluate, "score a trained checkpoint and export tables"),
}


def _blame_module(exc: BaseException) -> str:
    """Deepest package module on the traceback, for error context."""
    package_dir = Path(__file__).resolve().parent
    module = "stormsense.cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        frame_path = Path(frame.filename).resolve()
        if frame_path.parent == package_dir:
            module = f"stormsense.{frame_path.stem}"
    return module


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stormsense",
        description="Typhoon intensity classification from environmental "
                    "observations and tweet sentiment.",
        epilog="Any config key can be overridden with --section.key=value "
               f"flags; ${OUT_DIR_ENV} overrides the output directory.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None,
                         help="JSON config file (defaults apply when omitted)")
    return parser


def main(argv=None) -> int:
    args, extra = build_parser().parse_known_args(argv)
    command = args.command
    try:
        overrides = []
        for item in extra:
            match = _OVERRIDE_RE.fullmatch(item)
            if not match:
                raise ValueError(
                    f"unrecognized argument {item!r}; overrides look like "
                    "--section.key=value")
            overrides.append(f"{match.group(1)}={match.group(2)}")
        config = load_config(args.config, overrides)
        config.out_dir.mkdir(parents=True, exist_ok=True)
        config.snapshot(config.out_dir / SNAPSHOT_NAME)
        COMMANDS[command][0](config)
    except Exception as exc:
        payload = {
            "command": command,
            "error": str(exc) or type(exc).__name__,
            "module": _blame_module(exc),
        }
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
