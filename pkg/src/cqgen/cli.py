"""Batch entry points: data prep, training, generation, evaluation, serving."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import textproc
from .corpus import TrainingPair, build_vocabs, load_corpus, read_jsonl, write_jsonl
from .generator import GeneratorConfig, GeneratorModel, train_generator
from .group import GenerateOptions, ModelBundle, generate_group
from .predictor import PredictorConfig, PredictorModel, train_predictor
from .selection import Blacklist, build_cooccurrence
from .synth import SynthConfig, write_corpus
from .vocab import KeywordVocab, TokenVocab


class CliError(ValueError):
    pass


def _parse_kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise CliError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _load_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                k, v = _parse_kv(line)
            except CliError as e:
                raise CliError(f"{path}:{lineno}: {e}") from e
            out[k] = v
    return out


def _coerce(value: str, typ) -> object:
    if typ is bool or typ == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise CliError(f"expected a boolean, got {value!r}")
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    if typ is str:
        return value
    if typ in (tuple, "tuple") or "tuple" in str(typ):
        return tuple(int(x) for x in value.split(",") if x)
    return value


def apply_config(cfg, overrides: dict[str, str]):
    """Apply key=value overrides onto a dataclass config; unknown keys fail."""
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    for key, raw in overrides.items():
        if key not in fields:
            raise CliError(f"unknown config key {key!r}; valid keys: {sorted(fields)}")
        current = getattr(cfg, key)
        typ = type(current) if current is not None else fields[key].type
        setattr(cfg, key, _coerce(raw, typ))
    return cfg


def _gather_overrides(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    if getattr(args, "config", None):
        overrides.update(_load_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        k, v = _parse_kv(item)
        overrides[k] = v
    return overrides


# -- subcommands ------------------------------------------------------------------


def cmd_clean(args) -> int:
    stats = corpus_mod.clean_corpus_file(args.input, args.output)
    print(f"records: {stats.records_kept}/{stats.records_in} kept; "
          f"questions: {stats.questions_kept}/{stats.questions_in} kept")
    return 0


def cmd_synth_corpus(args) -> int:
    cfg = SynthConfig(products=args.products, seed=args.seed)
    counts = write_corpus(args.out, cfg)
    print(f"wrote {counts} to {args.out}")
    return 0


def cmd_build_vocab(args) -> int:
    records = load_corpus(args.train)
    if not records:
        raise CliError(f"{args.train}: no usable records")
    token_vocab, keyword_vocab = build_vocabs(records, args.min_token_freq, args.min_keyword_freq)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    token_vocab.save(out / "tokens.tsv")
    keyword_vocab.save(out / "keywords.tsv")
    print(f"tokens: {len(token_vocab)}  keywords: {len(keyword_vocab)}")
    return 0


def _load_vocabs(vocab_dir: str) -> tuple[TokenVocab, KeywordVocab]:
    d = Path(vocab_dir)
    return TokenVocab.load(d / "tokens.tsv"), KeywordVocab.load(d / "keywords.tsv")


def cmd_train_predictor(args) -> int:
    token_vocab, keyword_vocab = _load_vocabs(args.vocab_dir)
    train_records = load_corpus(args.train)
    valid_records = load_corpus(args.valid) if args.valid else []
    cfg = apply_config(PredictorConfig(seed=args.seed), _gather_overrides(args))
    model, result = train_predictor(train_records, valid_records, token_vocab, keyword_vocab, cfg)
    model.save(args.out)
    report = {"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss,
              "seconds": round(result.seconds, 1), "loss_curve": result.loss_curve}
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=1)
    print(f"predictor saved to {args.out} (best epoch {result.best_epoch}, "
          f"val loss {result.best_val_loss:.4f}, {result.seconds:.0f}s)")
    return 0


def cmd_train_generator(args) -> int:
    token_vocab, keyword_vocab = _load_vocabs(args.vocab_dir)
    train_records = load_corpus(args.train)
    valid_records = load_corpus(args.valid) if args.valid else []
    predictor = None
    if args.predictor:
        predictor = PredictorModel.load(args.predictor, token_vocab, keyword_vocab)
    cfg = apply_config(GeneratorConfig(seed=args.seed), _gather_overrides(args))
    train_pairs = TrainingPair.from_corpus(train_records, token_vocab)
    valid_pairs = TrainingPair.from_corpus(valid_records, token_vocab)
    model, result = train_generator(train_pairs, valid_pairs, token_vocab, keyword_vocab,
                                    cfg, predictor=predictor)
    model.save(args.out)
    graph = build_cooccurrence(train_records, keyword_vocab)
    graph.save(Path(args.out).parent / "cooccurrence.json")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump({"best_epoch": result.best_epoch, "best_val_bleu": result.best_val_bleu,
                       "seconds": round(result.seconds, 1), "loss_curve": result.loss_curve}, f, indent=1)
    print(f"generator saved to {args.out} (best epoch {result.best_epoch}, "
          f"val BLEU {result.best_val_bleu:.2f}, {result.seconds:.0f}s)")
    return 0


def cmd_generate(args) -> int:
    bundle = ModelBundle.load(args.bundle)
    rows_out = []
    for raw in read_jsonl(args.input):
        context = raw.get("context", "")
        truth_keywords = None
        if args.strategy == "truth":
            questions = raw.get("questions") or []
            if not questions:
                raise CliError(f"record {raw.get('id')}: truth strategy needs reference questions")
            toks = textproc.tokenize(textproc.clean_context(questions[0]))
            truth_keywords = sorted(textproc.extract_keywords(toks))
        options = GenerateOptions(slots=args.slots, candidate_budget=args.budget,
                                  exclude=frozenset(args.exclude or []),
                                  truth_keywords=truth_keywords, seed=args.seed)
        group = generate_group(bundle, context, args.strategy, options)
        rows_out.append({
            "id": raw.get("id", ""),
            "group": [" ".join(h.text_tokens(bundle.token_vocab)) for h in group.selected],
            "keywords": [sorted(h.keyword_set) for h in group.selected],
            "scores": [h.score for h in group.selected],
        })
    write_jsonl(args.out, rows_out)
    print(f"wrote {len(rows_out)} groups to {args.out}")
    return 0


def _evaluate_system(hyp_rows: list[dict], refs_by_id: dict[str, list[list[str]]]) -> tuple[dict, list[dict]]:
    first_hyps, first_refs = [], []
    all_hyps: list[list[str]] = []
    rr_items: list[tuple[list[str], list[str]]] = []
    per_record = []
    pairwise_scores, avg_scores = [], []
    for row in hyp_rows:
        rid = str(row.get("id", ""))
        if rid not in refs_by_id:
            raise CliError(f"hypothesis id {rid!r} not present in references")
        refs = refs_by_id[rid]
        group = [textproc.tokenize(t) for t in row.get("group", [])]
        if not group:
            continue
        all_hyps.extend(group)
        first_hyps.append(group[0])
        first_refs.append(refs)
        rec = {"id": rid, "n": len(group)}
        rec["avg_bleu"] = metrics_mod.avg_bleu(group, refs)
        avg_scores.append(rec["avg_bleu"])
        if len(group) >= 2:
            rec["pairwise_bleu"] = metrics_mod.pairwise_bleu(group)
            pairwise_scores.append(rec["pairwise_bleu"])
        kw_lists = row.get("keywords")
        if kw_lists:
            for kws, hyp in zip(kw_lists, group):
                if kws:
                    rr_items.append((kws, hyp))
        per_record.append(rec)
    if not first_hyps:
        raise CliError("no hypotheses to evaluate")
    report = metrics_mod.MetricReport(
        distinct_3=metrics_mod.distinct_n(all_hyps, 3),
        bleu=metrics_mod.corpus_bleu(first_hyps, first_refs),
        meteor_simplified=metrics_mod.meteor_simplified(first_hyps, first_refs),
        pairwise_bleu=sum(pairwise_scores) / len(pairwise_scores) if pairwise_scores else None,
        avg_bleu=sum(avg_scores) / len(avg_scores) if avg_scores else None,
        response_rate=metrics_mod.response_rate(rr_items) if rr_items else None,
        mean_length=sum(len(h) for h in all_hyps) / len(all_hyps),
    )
    return report.to_dict(), per_record


def cmd_evaluate(args) -> int:
    refs_by_id: dict[str, list[list[str]]] = {}
    for rec in load_corpus(args.refs):
        refs_by_id[rec.id] = [list(q.question) for q in rec.questions]
    systems: dict[str, str] = {}
    for item in args.hyps:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = Path(item).stem, item
        systems[name] = path
    reports = {}
    per_record_all = {}
    for name, path in systems.items():
        rows = list(read_jsonl(path))
        reports[name], per_record_all[name] = _evaluate_system(rows, refs_by_id)
    out_report = reports if len(reports) > 1 else next(iter(reports.values()))
    text = json.dumps(out_report, indent=1)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    if args.per_record:
        with open(args.per_record, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["system", "id", "n", "pairwise_bleu", "avg_bleu"])
            for name, rows in per_record_all.items():
                for rec in rows:
                    w.writerow([name, rec["id"], rec["n"],
                                rec.get("pairwise_bleu", ""), rec.get("avg_bleu", "")])
    if args.scatter:
        with open(args.scatter, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["system", "pairwise_bleu", "avg_bleu"])
            for name, rep in reports.items():
                w.writerow([name, rep.get("pairwise_bleu", ""), rep.get("avg_bleu", "")])
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(args.bundle, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cqgen", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("clean", help="clean a raw JSONL corpus")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_clean)

    sp = sub.add_parser("synth-corpus", help="write a synthetic product corpus")
    sp.add_argument("--products", type=int, default=500)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_corpus)

    sp = sub.add_parser("build-vocab", help="build token + keyword vocabularies")
    sp.add_argument("--train", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--min-token-freq", type=int, default=2)
    sp.add_argument("--min-keyword-freq", type=int, default=2)
    sp.set_defaults(func=cmd_build_vocab)

    for name, fn in (("train-predictor", cmd_train_predictor), ("train-generator", cmd_train_generator)):
        sp = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a corpus")
        sp.add_argument("--train", required=True)
        sp.add_argument("--valid", default=None)
        sp.add_argument("--vocab-dir", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--report", default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None, help="key=value lines")
        sp.add_argument("--set", action="append", help="override config key=value")
        if name == "train-generator":
            sp.add_argument("--predictor", default=None, help="frozen predictor checkpoint")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("generate", help="generate question groups for contexts")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--strategy", default="beam")
    sp.add_argument("--slots", type=int, default=3)
    sp.add_argument("--budget", type=int, default=6)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--exclude", action="append")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="score hypothesis files against references")
    sp.add_argument("--hyps", action="append", required=True,
                    help="hypothesis JSONL, optionally name=path; repeatable")
    sp.add_argument("--refs", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--per-record", default=None)
    sp.add_argument("--scatter", default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("serve", help="run the HTTP generation service")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
