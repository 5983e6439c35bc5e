"""Command-line entry point: ``relkg <subcommand> [flags]``.

Exit status is 0 on success, 1 on bad or missing input and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from . import kgbuild, plotting, synthgen
from .corpus import Corpus, CorpusError, MentionStore, NO_RELATION, ingest_conllu, load_relation_inventory, \
    write_conllu
from .mentions import DEFAULT_MAX_PATH, generate_candidates, read_mentions, write_mentions
from .ruleset import EvidenceDB, RuleParseError, learn_weights, load_evidence, parse_rules
from .trainer import TrainConfig, load_labeler, save_run, train

log = logging.getLogger("relkg")

PATH_KEYS = ("corpus", "labeled", "unlabeled", "dev", "test", "rules", "inventory", "out")
HYPER_FLAGS = {  # flag -> (config key, type)
    "P": ("P", float), "C": ("C", float), "k_fraction": ("k_fraction", float),
    "max_iterations": ("max_iterations", int), "m_neg": ("m_neg", int), "lr": ("lr", float),
    "epochs": ("epochs", int), "hard_penalty": ("hard_penalty", float), "threshold": ("threshold", float),
}


class InputError(Exception):
    """Missing or unreadable input; maps to exit status 1."""


class UsageError(Exception):
    """Missing mandatory setting; maps to exit status 2."""


def _existing(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def _optional(path, what: str) -> Path | None:
    return None if path is None else _existing(path, what)


# -- config -----------------------------------------------------------------

def read_config(path: str | Path) -> dict[str, str]:
    """The ``[run]`` section of an INI file; relative paths resolve against its directory."""
    p = _existing(path, "config file")
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "P" and "C" as written
    try:
        parser.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise InputError(f"cannot parse config {p}: {exc}") from exc
    if "run" not in parser:
        raise InputError(f"config {p} has no [run] section")
    values = dict(parser["run"])
    for key in PATH_KEYS:
        if values.get(key):
            values[key] = str((p.parent / values[key]) if not Path(values[key]).is_absolute()
                              else Path(values[key]))
    return values


def resolve_settings(args, need_seed: bool = True) -> tuple[dict[str, str], TrainConfig]:
    """Merge config file and flags (flags win) into paths and a TrainConfig."""
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in PATH_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = str(flag)
    for flag, (key, _) in HYPER_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if need_seed and values.get("seed") in (None, ""):
        raise UsageError("a seed is required: pass --seed or set seed in the config")
    hyper = {k: v for k, v in values.items() if k not in PATH_KEYS}
    try:
        config = TrainConfig.from_mapping(hyper)
    except (KeyError, ValueError) as exc:
        raise InputError(f"bad configuration: {exc}") from exc
    paths = {k: values[k] for k in PATH_KEYS if values.get(k)}
    return paths, config


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    for flag, (_, typ) in HYPER_FLAGS.items():
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ, default=None)


def _add_path_flags(p: argparse.ArgumentParser, keys=PATH_KEYS) -> None:
    for key in keys:
        p.add_argument(f"--{key}", default=None)


# -- shared loading ---------------------------------------------------------

def _corpus(path) -> Corpus:
    corpus = ingest_conllu(_existing(path, "corpus"))
    for r in corpus.rejects:
        log.warning("rejected sentence: %s", r)
    return corpus


def _labeled(path, corpus, inventory, what="labeled mentions"):
    items = read_mentions(_existing(path, what), corpus)
    missing = [m for m, lbl in items if lbl is None]
    if missing:
        raise InputError(f"{path}: {len(missing)} mentions lack a label")
    unknown = sorted({lbl for _, lbl in items} - set(inventory.labels))
    if unknown:
        raise InputError(f"{path}: labels not in inventory: {unknown}")
    return items


def _training_inputs(paths):
    inventory = load_relation_inventory(_optional(paths.get("inventory"), "inventory"))
    corpus = _corpus(paths.get("corpus"))
    labeled = _labeled(paths.get("labeled"), corpus, inventory)
    unlabeled = []
    if paths.get("unlabeled"):
        unlabeled = [m for m, _ in read_mentions(_existing(paths["unlabeled"], "unlabeled mentions"), corpus)]
    rules = parse_rules(_optional(paths.get("rules"), "rules"), inventory)
    return inventory, corpus, labeled, unlabeled, rules


def _prediction_records(mentions, labeler):
    out = []
    for m, (label, conf) in zip(mentions, labeler.classify(mentions)):
        rec = m.to_record(label)
        rec["confidence"] = round(conf, 6)
        out.append(rec)
    return out


def _out_file(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_jsonl(records, path: Path) -> None:
    _out_file(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")


def _report_paths(out: Path) -> tuple[Path, Path, Path]:
    return out, out.with_suffix(".json"), out.with_suffix(".png")


# -- subcommands ------------------------------------------------------------

def cmd_ingest(args) -> int:
    corpus = ingest_conllu(_existing(args.corpus, "corpus"), definition_markers=not args.no_def_markers)
    for r in corpus.rejects:
        print(f"rejected: {r}", file=sys.stderr)
    if args.out:
        write_conllu(corpus, _out_file(args.out))
    n_def = sum(s.definition_term is not None for s in corpus.sentences)
    print(f"sentences\t{len(corpus)}\nrejected\t{len(corpus.rejects)}\ndefinition_sentences\t{n_def}")
    return 0


def cmd_candidates(args) -> int:
    corpus = _corpus(args.corpus)
    mentions = generate_candidates(corpus, args.max_path)
    write_mentions(mentions, _out_file(args.out))
    print(f"candidates\t{len(mentions)}")
    return 0


def cmd_learn_weights(args) -> int:
    inventory = load_relation_inventory(_optional(args.inventory, "inventory"))
    rules = parse_rules(_optional(args.rules, "rules"), inventory)
    if args.evidence:
        evidence = load_evidence(_existing(args.evidence, "evidence"), inventory)
    elif args.labeled and args.corpus:
        corpus = _corpus(args.corpus)
        evidence = EvidenceDB.from_labeled(_labeled(args.labeled, corpus, inventory))
    else:
        raise UsageError("learn-weights needs --evidence or --labeled with --corpus")
    result = learn_weights(rules, evidence, max_steps=args.max_steps)
    _out_file(args.out).write_text(result.ruleset.dumps(), encoding="utf-8")
    traj = Path(args.out).with_suffix(".trajectory.tsv")
    traj.write_text("".join(f"{i}\t{v:.10g}\n" for i, v in enumerate(result.trajectory)), encoding="utf-8")
    print(result.ruleset.dumps(), end="")
    print(f"# converged={result.converged} steps={result.steps}")
    return 0


def cmd_train(args) -> int:
    paths, config = resolve_settings(args, need_seed=True)
    if "out" not in paths:
        raise UsageError("train needs an output directory (--out or out in the config)")
    inventory, corpus, labeled, unlabeled, rules = _training_inputs(paths)
    dev = _labeled(paths["dev"], corpus, inventory, "dev mentions") if paths.get("dev") else []
    store = MentionStore(inventory, labeled, unlabeled)
    scorer = (lambda pred, gold: ev.metrics_dict(ev.score_lists(pred, gold))) if dev else None
    result = train(store, rules, config, dev, scorer)
    out = Path(paths["out"])
    written = save_run(result, out)
    plotting.plot_training(result.traces, out / "training.png")
    print(f"promoted\t{len(result.promotions)}\niterations\t{len(result.iterations)}\n"
          f"model\t{written['prediction'].parent}")
    return 0


def cmd_predict(args) -> int:
    inventory = load_relation_inventory(_optional(args.inventory, "inventory"))
    labeler, config = load_labeler(_existing(args.model, "model directory"), inventory)
    corpus = _corpus(args.corpus)
    if args.mentions:
        mentions = [m for m, _ in read_mentions(_existing(args.mentions, "mentions"), corpus)]
    else:
        mentions = generate_candidates(corpus, config.P)
    _write_jsonl(_prediction_records(mentions, labeler), Path(args.out))
    print(f"predictions\t{len(mentions)}")
    return 0


def cmd_build_kg(args) -> int:
    inventory = load_relation_inventory(_optional(args.inventory, "inventory"))
    labeler, config = load_labeler(_existing(args.model, "model directory"), inventory)
    corpus = _corpus(args.corpus)
    threshold = config.threshold if args.threshold is None else args.threshold
    definition = kgbuild.build_definition_graph(corpus, labeler, config.P)
    body = kgbuild.build_corpus_graph(corpus, labeler, threshold, config.P)
    graph = kgbuild.merge_graphs(definition, body)
    graph.write(_out_file(args.out), _out_file(args.json) if args.json else None)
    print(f"entities\t{len(graph.entities)}\ntriples\t{len(graph)}\n"
          f"definition_triples\t{len(definition)}\ncorpus_triples\t{len(body)}")
    return 0


def cmd_eval(args) -> int:
    inventory = load_relation_inventory(_optional(args.inventory, "inventory"))
    corpus = _corpus(args.corpus)
    gold = _labeled(args.gold, corpus, inventory, "gold mentions")
    if args.predictions:
        predicted = _labeled(args.predictions, corpus, inventory, "predictions")
        pred_map = {m.key: lbl for m, lbl in predicted}
    elif args.model:
        labeler, _ = load_labeler(_existing(args.model, "model directory"), inventory)
        mentions = [m for m, _ in gold]
        pred_map = {m.key: lbl for m, (lbl, _) in zip(mentions, labeler.classify(mentions))}
    else:
        raise UsageError("eval needs --predictions or --model")
    try:
        report = ev.score(pred_map, {m.key: lbl for m, lbl in gold}, args.split)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    text = report.format()
    if args.out:
        txt, js, png = _report_paths(_out_file(args.out))
        txt.write_text(text, encoding="utf-8")
        js.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        plotting.plot_eval_report(report, png)
    print(text, end="")
    return 0


def cmd_ablate(args) -> int:
    paths, config = resolve_settings(args, need_seed=True)
    if "out" not in paths:
        raise UsageError("ablate needs an output directory (--out or out in the config)")
    inventory, corpus, labeled, unlabeled, rules = _training_inputs(paths)
    dev = _labeled(_existing(paths.get("dev"), "dev mentions"), corpus, inventory, "dev mentions")
    test = _labeled(_existing(paths.get("test"), "test mentions"), corpus, inventory, "test mentions")
    subsets = ev.parse_subsets(args.subsets, rules.ids)
    out = Path(paths["out"])
    out.mkdir(parents=True, exist_ok=True)
    runs = []

    def run(active):
        result = train(MentionStore(inventory, labeled, unlabeled), active, config)
        labeler = result.labeler(inventory)
        dev_pred = [lbl for lbl, _ in labeler.classify([m for m, _ in dev])]
        test_pred = [lbl for lbl, _ in labeler.classify([m for m, _ in test])]
        runs.append((result, labeler))
        return dev_pred, test_pred, result.promotion_log()

    try:
        rows = ev.ablate(run, rules, subsets, [g for _, g in dev], [g for _, g in test],
                         include_reference=not args.no_reference)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from exc
    for k, (row, (result, labeler)) in enumerate(zip(rows, runs)):
        row_dir = out / f"row{k:02d}"
        row_dir.mkdir(exist_ok=True)
        (row_dir / "name.txt").write_text(row.name + "\n", encoding="utf-8")
        (row_dir / "promotions.jsonl").write_text(row.promotion_log, encoding="utf-8")
        _write_jsonl(_prediction_records([m for m, _ in dev], labeler), row_dir / "dev_predictions.jsonl")
        _write_jsonl(_prediction_records([m for m, _ in test], labeler), row_dir / "test_predictions.jsonl")
    table = ev.format_ablation(rows)
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    (out / "ablation.json").write_text(ev.ablation_json(rows), encoding="utf-8")
    plotting.plot_ablation(rows, out / "ablation.png")
    print(table, end="")
    return 0


def cmd_synth(args) -> int:
    spec = synthgen.SynthSpec(
        n_entities=args.n_entities, n_sentences=args.n_sentences, labeled_fraction=args.labeled_fraction,
        planted_rules=() if args.no_rules else synthgen.PLANTABLE, seed=args.seed)
    synth = synthgen.generate(spec)
    out = Path(args.out)
    paths = synthgen.write_synth(synth, out)
    splits = ev.split_fractions(synth.gold, args.dev_fraction, args.test_fraction, spec.labeled_fraction,
                                args.seed)
    write_mentions(splits.labeled, out / "train.jsonl")
    write_mentions(splits.unlabeled, out / "unlabeled.jsonl")
    write_mentions(splits.unlabeled_gold, out / "unlabeled_gold.jsonl")
    write_mentions(splits.dev, out / "dev.jsonl")
    write_mentions(splits.test, out / "test.jsonl")
    cfg = configparser.ConfigParser()
    cfg.optionxform = str
    cfg["run"] = {"corpus": paths["corpus"].name, "labeled": "train.jsonl", "unlabeled": "unlabeled.jsonl",
                  "dev": "dev.jsonl", "test": "test.jsonl", "out": "model", "seed": str(args.seed)}
    with open(out / "config.ini", "w", encoding="utf-8") as fh:
        cfg.write(fh)
    n_pos = sum(lbl != NO_RELATION for _, lbl in synth.gold)
    print(f"sentences\t{len(synth.corpus)}\ncandidates\t{len(synth.gold)}\npositive\t{n_pos}\n"
          f"labeled\t{len(splits.labeled)}\nunlabeled\t{len(splits.unlabeled)}\n"
          f"dev\t{len(splits.dev)}\ntest\t{len(splits.test)}")
    return 0


def cmd_split(args) -> int:
    inventory = load_relation_inventory(_optional(args.inventory, "inventory"))
    corpus = _corpus(args.corpus)
    gold = _labeled(args.gold, corpus, inventory, "annotated mentions")
    try:
        splits = ev.split_counts(gold, n_dev=args.dev, n_test=args.test, seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mentions(splits.labeled, out / "train.jsonl")
    write_mentions(splits.dev, out / "dev.jsonl")
    write_mentions(splits.test, out / "test.jsonl")
    print(f"train\t{len(splits.labeled)}\ndev\t{len(splits.dev)}\ntest\t{len(splits.test)}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relkg", description="Rule-regularized relation extraction "
                                     "and knowledge-graph construction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a CoNLL-U corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="write the accepted sentences here")
    p.add_argument("--no-def-markers", action="store_true", help="ignore # def_term comments")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("candidates", help="dump candidate mentions as JSONL")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-path", type=float, default=DEFAULT_MAX_PATH)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("learn-weights", help="fit rule weights by pseudo-likelihood")
    p.add_argument("--rules")
    p.add_argument("--evidence")
    p.add_argument("--labeled")
    p.add_argument("--corpus")
    p.add_argument("--inventory")
    p.add_argument("--max-steps", type=int, default=5000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_weights)

    p = sub.add_parser("train", help="run the dual training loop")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    _add_path_flags(p, ("corpus", "labeled", "unlabeled", "dev", "rules", "inventory", "out"))
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label mentions with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mentions", help="defaults to all candidates of the corpus")
    p.add_argument("--inventory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("build-kg", help="build and merge the knowledge graph")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", required=True, help="triple TSV")
    p.add_argument("--json", help="optional JSON graph dump")
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("eval", help="score predictions against gold labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--predictions")
    p.add_argument("--model")
    p.add_argument("--inventory")
    p.add_argument("--split", default="")
    p.add_argument("--out", help="text report; .json and .png are written alongside")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="retrain with rule subsets removed")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--subsets", default="all-singletons",
                   help="all-singletons, all, or ';'-separated id lists such as 'R2,R4,R6;R5'")
    p.add_argument("--no-reference", action="store_true", help="skip the no-rules and all-rules rows")
    _add_path_flags(p)
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic corpus with splits and a config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-sentences", type=int, default=synthgen.SynthSpec.n_sentences)
    p.add_argument("--n-entities", type=int, default=synthgen.SynthSpec.n_entities)
    p.add_argument("--labeled-fraction", type=float, default=synthgen.SynthSpec.labeled_fraction)
    p.add_argument("--dev-fraction", type=float, default=0.15)
    p.add_argument("--test-fraction", type=float, default=0.15)
    p.add_argument("--no-rules", action="store_true", help="plant no rules")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="hold out dev and test mentions from an annotated file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--inventory")
    p.add_argument("--dev", type=int, default=53)
    p.add_argument("--test", type=int, default=53)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"relkg: error: {exc}", file=sys.stderr)
        return 2
    except (InputError, CorpusError, RuleParseError, ValueError, KeyError, OSError,
            synthgen.SynthError) as exc:
        print(f"relkg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
