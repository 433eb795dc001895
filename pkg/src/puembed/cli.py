"""Command-line interface: ``puembed synth|train|embed|eval``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .data import SYNTH_KEYS, SynthSpec, load_jsonl, resolve_priors, synth_generate, write_jsonl
from .errors import CheckpointError, ConfigError, DataError, NumericError, ShapeError, UsageError
from .evaluate import (load_eval_jsonl, logreg_probe, pair_features,
                       pair_similarities, similarity_threshold_eval, spearman)
from .trainer import TrainConfig, init_state, load_checkpoint, save_checkpoint, train, write_history_csv

logger = logging.getLogger("puembed")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
CONFIG_SECTIONS = {"train", "synth", "priors", "data"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config(path):
    """Flat INI file -> ``{section: {key: value}}``; unknown sections are rejected."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    unknown = set(parser.sections()) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return {s: dict(parser[s]) for s in parser.sections()}


def write_config(sections, path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, values in sections.items():
        parser[name] = {k: str(v) for k, v in values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def parse_priors(text):
    try:
        return [float(p) for p in text.replace(";", ",").split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse priors {text!r}") from None


def _model_dir(path):
    path = Path(path)
    if not (path / "manifest.txt").exists() and (path / "checkpoint" / "manifest.txt").exists():
        return path / "checkpoint"
    return path


# -- commands -------------------------------------------------------------------


def cmd_synth(args):
    sections = read_config(args.spec)
    if "synth" not in sections:
        raise ConfigError(f"{args.spec} has no [synth] section")
    values = dict(sections["synth"])
    if args.seed is not None:
        values["seed"] = args.seed
    spec = SynthSpec.from_mapping(values)
    _, population = synth_generate(spec)
    write_jsonl(population.dataset_records(), args.out)
    write_jsonl(population.records(), args.truth)
    labeled = sum(p.labeled for p in population.pairs)
    print(f"wrote {len(population.pairs)} pairs ({labeled} labeled) to {args.out}; truth to {args.truth}")
    return EXIT_OK


def cmd_train(args):
    sections = read_config(args.config) if args.config else {}
    values = dict(sections.get("train", {}))
    for key in ("seed", "epochs", "learning_rate", "batch_size", "alpha"):
        flag = getattr(args, key)
        if flag is not None:
            values[key] = flag
    config = TrainConfig.from_mapping(values)
    data_section = sections.get("data", {})
    if set(data_section) - {"path"}:
        raise ConfigError(f"unknown data keys: {sorted(set(data_section) - {'path'})}")
    data_path = args.data or data_section.get("path")
    if not data_path:
        raise ConfigError("no dataset given (--data or [data] path)")
    if not Path(data_path).is_file():
        raise ConfigError(f"data file not found: {data_path}")
    dataset = load_jsonl(data_path)

    prior_values = None
    if args.priors:
        prior_values = parse_priors(args.priors)
    elif "priors" in sections:
        raw = sections["priors"]
        unknown = set(raw) - set(dataset.label_names)
        if unknown:
            raise ConfigError(f"[priors] names unknown labels: {sorted(unknown)}")
        if set(raw) != set(dataset.label_names):
            raise ConfigError(f"[priors] must give every label: {dataset.label_names}")
        prior_values = [float(raw[name]) for name in dataset.label_names]
    priors = resolve_priors(dataset, prior_values) if config.use_pu else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"data": {"path": data_path}, "train": config.as_dict()}
    if priors is not None:
        resolved["priors"] = dict(zip(dataset.label_names, priors.pi_p))
    write_config(resolved, out / "config.ini")

    state = init_state(dataset, config, priors)
    _, history = train(dataset, config, priors, state=state)
    save_checkpoint(state, out / "checkpoint", config, dataset.label_names)
    write_history_csv(history, out / "history.csv")
    last = history[-1]
    print(f"trained {len(history)} steps on {dataset.summary()}")
    print(f"final ce_loss={last.ce_loss:.6f} pu_loss={last.pu_loss:.6f} -> {out}")
    return EXIT_OK


def cmd_embed(args):
    state = load_checkpoint(_model_dir(args.model))
    model = state.model
    with open(args.input, encoding="utf-8") as fh:
        sentences = [line.rstrip("\n") for line in fh]
    if not sentences:
        logger.warning("input %s is empty; writing an empty embedding file", args.input)
    emb = model.embed_texts(sentences)
    np.ascontiguousarray(emb, dtype="<f4").tofile(args.output)
    if args.text_output:
        with open(args.text_output, "w", encoding="utf-8") as fh:
            for row in emb.astype(np.float32):
                fh.write("\t".join(repr(float(x)) for x in row) + "\n")
    print(f"wrote {len(sentences)} x {model.d_enc} embeddings to {args.output}")
    return EXIT_OK


def cmd_eval(args):
    state = load_checkpoint(_model_dir(args.model))
    model = state.model
    scored = load_eval_jsonl(args.data)
    rows = []
    if args.task == "sts":
        if scored.binary:
            raise DataError("sts task needs 'score' fields, found binary 'label' fields")
        rho = spearman(pair_similarities(model, scored.pairs), scored.gold)
        rows.append(("spearman", rho))
    elif args.task == "cls":
        if not scored.binary:
            raise DataError("cls task needs 0/1 'label' fields")
        if args.dev:
            dev, test = load_eval_jsonl(args.dev), scored
            if not dev.binary:
                raise DataError("dev file needs 0/1 'label' fields")
        else:
            idx = np.arange(len(scored))
            dev, test = scored.subset(idx[::2]), scored.subset(idx[1::2])
        report = similarity_threshold_eval(model, test, dev)
        m = report.metrics
        rows += [("threshold", report.threshold), ("accuracy", m.accuracy),
                 ("precision", m.precision), ("recall", m.recall)]
        if m.precision_undefined or m.recall_undefined:
            logger.warning("precision/recall had a zero denominator and are reported as 0")
    else:
        if not scored.binary:
            raise DataError("probe task needs 0/1 'label' fields")
        report = logreg_probe(pair_features(model, scored.pairs), scored.gold, folds=args.folds)
        rows += [(f"fold_{i}", a) for i, a in enumerate(report.fold_accuracies)]
        rows.append(("mean_accuracy", report.mean_accuracy))
        if report.skipped:
            rows.append(("skipped_folds", len(report.skipped)))
    for name, value in rows:
        print(f"{name:>14s}  {value:.6f}" if isinstance(value, float) else f"{name:>14s}  {value}")
    if args.report:
        with open(args.report, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("task", "metric", "value"))
            for name, value in rows:
                writer.writerow((args.task, name, value))
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="puembed", description="Sentence embeddings from partially labeled pairs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic PU dataset and its fully labeled population")
    p.add_argument("--spec", required=True, help=f"INI file with a [synth] section ({', '.join(SYNTH_KEYS)})")
    p.add_argument("--out", required=True, help="dataset JSONL (hidden labels are null)")
    p.add_argument("--truth", required=True, help="population JSONL with every true label")
    p.add_argument("--seed", type=int, help="override the [synth] seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a dual encoder on a JSONL dataset")
    p.add_argument("--data", help="JSONL with premise, hypothesis, label (null = unlabeled); overrides [data] path")
    p.add_argument("--config", help="INI file with [train], optional [priors] and [data] sections")
    p.add_argument("--out", required=True, help="output directory (checkpoint/, history.csv, config.ini)")
    p.add_argument("--priors", help="comma-separated positive prior per class, in label order")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--epochs", type=int, help="epochs (overrides config)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="base learning rate (overrides config)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="batch size (overrides config)")
    p.add_argument("--alpha", type=float, help="annealing exponent, >= 2 (overrides config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="export sentence embeddings as little-endian float32 rows")
    p.add_argument("--model", required=True, help="checkpoint directory (or a train --out directory)")
    p.add_argument("--input", required=True, help="text file, one sentence per line")
    p.add_argument("--output", required=True, help="binary output, rows x d_enc float32")
    p.add_argument("--text-output", dest="text_output", help="optional tab-separated copy")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="evaluate embeddings on scored or labeled pairs")
    p.add_argument("--model", required=True, help="checkpoint directory (or a train --out directory)")
    p.add_argument("--data", required=True, help="JSONL with premise, hypothesis and score or 0/1 label")
    p.add_argument("--task", required=True, choices=("sts", "cls", "probe"),
                   help="sts: Spearman of cosine vs score; cls: thresholded cosine; probe: logistic regression")
    p.add_argument("--folds", type=int, default=10, help="probe cross-validation folds (default 10)")
    p.add_argument("--dev", help="cls: dev JSONL for threshold tuning (default: even rows of --data)")
    p.add_argument("--report", help="also write metrics as CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"puembed: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, UsageError, ShapeError, CheckpointError, OSError) as exc:
        print(f"puembed: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
