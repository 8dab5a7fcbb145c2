"""Command-line entry point: ``radpretrain <subcommand> ...``.

Exit codes: 0 success, 1 pipeline error, 2 usage error (bad flag, missing
input file, invalid config value).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

from radpretrain import corpus, losses, pipeline, syngen
from radpretrain.annotator import annotation_record
from radpretrain.masking import check_example
from radpretrain.taxonomy import load_taxonomy
from radpretrain.tokenizer import Provenance, Vocabulary, load_base_vocab

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

logger = logging.getLogger("radpretrain")

MIN_TARGET_SIZE = 256


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Flat key=value TOML; nested tables are rejected."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{p}: {exc}") from exc
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise UsageError(f"{p}: key {key!r} must be a scalar (flat key=value file)")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace, config: dict, key: str, default: Any = None) -> Any:
    """Flag value if given, else config value, else *default*."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    return config.get(key, default)


def need_file(value: Any, what: str) -> Path:
    if value is None:
        raise UsageError(f"missing required input: --{what}")
    p = Path(value)
    if not p.exists():
        raise UsageError(f"--{what}: file not found: {p}")
    return p


def out_dir(args: argparse.Namespace, config: dict) -> Path:
    out = Path(resolve(args, config, "out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tax(args, config):
    path = resolve(args, config, "tax")
    return load_taxonomy(need_file(path, "tax") if path is not None else None)


def _vocab(args, config) -> Vocabulary:
    return Vocabulary.load(need_file(resolve(args, config, "vocab"), "vocab"))


def _print(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


# --------------------------------------------------------------------------
# subcommands


def cmd_syngen(args, config) -> int:
    n = int(resolve(args, config, "n", 100))
    seed = int(resolve(args, config, "seed", 0))
    if n < 0:
        raise UsageError("--n must be non-negative")
    tax = _tax(args, config)
    out = out_dir(args, config)
    reports = syngen.generate(n, tax, seed, noise=float(resolve(args, config, "noise", 0.05)))
    corpus.write_jsonl(out / "corpus.jsonl", ({"id": g.raw.id, "text": g.raw.text} for g in reports))
    corpus.write_jsonl(out / "gold.jsonl", (g.gold_json() for g in reports))
    _print({"reports": n, "corpus": str(out / "corpus.jsonl"), "gold": str(out / "gold.jsonl")})
    return 0


def cmd_preprocess(args, config) -> int:
    src = need_file(resolve(args, config, "input"), "in")
    rules_path = resolve(args, config, "rules")
    headers_path = resolve(args, config, "headers")
    rules = corpus.load_rules(need_file(rules_path, "rules") if rules_path else None)
    headers = corpus.load_headers(need_file(headers_path, "headers") if headers_path else None)
    out = out_dir(args, config)
    kept, dropped = pipeline.preprocess_corpus(corpus.read_raw_reports(src), rules, headers)
    corpus.write_jsonl(out / "sectioned.jsonl", (r.to_json() for r in kept))
    _print({"reports": len(kept), "dropped": dropped, "output": str(out / "sectioned.jsonl")})
    return 0


def cmd_build_vocab(args, config) -> int:
    target = int(resolve(args, config, "target_size", 4000))
    if target < MIN_TARGET_SIZE:
        raise UsageError(f"--target-size must be at least {MIN_TARGET_SIZE}")
    base_path = resolve(args, config, "base")
    base = load_base_vocab(need_file(base_path, "base") if base_path else None)
    reports = corpus.read_sectioned(need_file(resolve(args, config, "corpus"), "corpus"))
    tax = _tax(args, config)
    out = out_dir(args, config)
    vocab, corpus_tokens = pipeline.build_vocab(base, reports, tax, target)
    vocab.save(out / "vocab.txt")
    _print({"base": len(base), "corpus_tokens": len(corpus_tokens), "vocab": len(vocab),
            "new": len(vocab.tokens_with(Provenance.NEW)), "output": str(out / "vocab.txt")})
    return 0


def cmd_annotate(args, config) -> int:
    reports = corpus.read_sectioned(need_file(resolve(args, config, "input"), "in"))
    tax = _tax(args, config)
    vocab = _vocab(args, config)
    out = out_dir(args, config)
    budget = int(resolve(args, config, "budget", corpus.DEFAULT_BUDGET))
    chunks, spans = pipeline.annotate_corpus(reports, vocab, tax, budget)
    n = corpus.write_jsonl(out / "annotations.jsonl",
                           (annotation_record(c, spans[(c.report_id, c.index)]) for c in chunks))
    _print({"chunks": n, "spans": sum(len(v) for v in spans.values()), "output": str(out / "annotations.jsonl")})
    return 0


def cmd_mask(args, config) -> int:
    objective = resolve(args, config, "objective", "mlm")
    if objective not in ("mlm", "kg", "ss"):
        raise UsageError("--objective must be one of mlm, kg, ss")
    reports = corpus.read_sectioned(need_file(resolve(args, config, "input"), "in"))
    tax = _tax(args, config)
    vocab = _vocab(args, config)
    seed = int(resolve(args, config, "seed", 0))
    budget = int(resolve(args, config, "budget", corpus.DEFAULT_BUDGET))
    out = out_dir(args, config)
    examples, _chunks, spans = pipeline.mask_corpus(objective, reports, vocab, tax, seed, budget)
    bad = sum(bool(check_example(e, spans.get((e.report_id, e.chunk_idx), ()), vocab.special_ids))
              for e in examples)
    corpus.write_jsonl(out / "masked.jsonl", (e.to_json() for e in examples))
    _print({"examples": len(examples), "invariant_violations": bad, "output": str(out / "masked.jsonl")})
    return 1 if bad else 0


TRAIN_KEYS = ("objective", "steps", "batch_size", "lr", "lambda_a", "lambda_kg", "mask_strategy", "eval_every")


def cmd_train(args, config) -> int:
    from radpretrain.toymodel import TrainConfig, train

    reports = corpus.read_sectioned(need_file(resolve(args, config, "input"), "in"))
    tax = _tax(args, config)
    vocab = _vocab(args, config)
    names = {f.name for f in fields(TrainConfig)}
    values = {k: v for k, v in config.items() if k in names}
    for key in TRAIN_KEYS:
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    if getattr(args, "seed", None) is not None or "seed" in config:
        values["run_seed"] = int(resolve(args, config, "seed"))
    try:
        cfg = TrainConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out = out_dir(args, config)
    report = train(cfg, reports, tax, vocab, out)
    _print({"steps": report.steps_run, "rtd_auc": report.rtd_auc, "section_accuracy": report.section_accuracy,
            "stopped_early": report.stopped_early, "report": str(out / "train_report.json")})
    return 0


def cmd_loss_eval(args, config) -> int:
    batch = losses.RtdBatch.load(need_file(resolve(args, config, "batch"), "batch"))
    weights = losses.LossWeights(float(resolve(args, config, "lambda_a", 1.0)),
                                 float(resolve(args, config, "lambda_kg", 1.0)))
    reduction = resolve(args, config, "reduction", "sum")
    if reduction not in ("sum", "mean"):
        raise UsageError("--reduction must be sum or mean")
    values = losses.evaluate_all(batch, float(resolve(args, config, "reg", 0.0)), weights, reduction)
    for key in ("l_mlm", "l_disc", "l_kg", "l_disc_kg"):
        print(f"{key}\t{values[key]!r}")
    return 0


def cmd_verify(args, config) -> int:
    from radpretrain.verify import VERIFY_SEED, run_verify

    report = run_verify(int(resolve(args, config, "n", 200)), int(resolve(args, config, "seed", VERIFY_SEED)))
    text = report.to_json()
    if resolve(args, config, "out") is not None:
        (out_dir(args, config) / "verify_report.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0 if report.passed else 1


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    # SUPPRESS keeps a subcommand's unset copy from clobbering a value given before it
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (all randomness derives from it)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="flat key=value TOML file; flags override it")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    g.add_argument("--log-level", default=argparse.SUPPRESS, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="radpretrain", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("syngen", parents=[common], help="generate a synthetic report corpus with gold labels")
    p.add_argument("--n", type=int)
    p.add_argument("--tax")
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_syngen)

    p = sub.add_parser("preprocess", parents=[common], help="clean and section raw reports")
    p.add_argument("--in", dest="input")
    p.add_argument("--rules")
    p.add_argument("--headers")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("build-vocab", parents=[common], help="induce WordPiece tokens and extend a base vocab")
    p.add_argument("--base")
    p.add_argument("--corpus")
    p.add_argument("--tax")
    p.add_argument("--target-size", type=int)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("annotate", parents=[common], help="dump entity spans per chunk")
    p.add_argument("--in", dest="input")
    p.add_argument("--tax")
    p.add_argument("--vocab")
    p.add_argument("--budget", type=int)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("mask", parents=[common], help="build masked training examples")
    p.add_argument("--objective", choices=["mlm", "kg", "ss"])
    p.add_argument("--in", dest="input")
    p.add_argument("--vocab")
    p.add_argument("--tax")
    p.add_argument("--budget", type=int)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", parents=[common], help="train the toy generator/discriminator pair")
    p.add_argument("--objective", choices=["mlm", "kg", "ss"])
    p.add_argument("--in", dest="input")
    p.add_argument("--vocab")
    p.add_argument("--tax")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-a", type=float)
    p.add_argument("--lambda-kg", type=float)
    p.add_argument("--mask-strategy", choices=["auto", "random", "kg"])
    p.add_argument("--eval-every", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("loss-eval", parents=[common], help="print all loss values for a batch JSON file")
    p.add_argument("--batch")
    p.add_argument("--reg", type=float)
    p.add_argument("--lambda-a", type=float)
    p.add_argument("--lambda-kg", type=float)
    p.add_argument("--reduction", choices=["sum", "mean"])
    p.set_defaults(func=cmd_loss_eval)

    p = sub.add_parser("verify", parents=[common], help="run the invariant suite; nonzero exit on failure")
    p.add_argument("--n", type=int, help="synthetic reports used by the data checks")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=getattr(logging, getattr(args, "log_level", "WARNING")), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(getattr(args, "config", None))
        return args.func(args, config)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"radpretrain: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug("pipeline failure", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command},
                         sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
