"""Command-line entry point: dataset construction, pre-training, training,
evaluation, and projection, each writing a run manifest next to its
outputs.  Exit codes: 0 success, 1 usage, 2 data error, 3 numeric error."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import augment as aug
from . import data as D
from . import evaluate as E
from . import synthetic
from .autograd import NumericError
from .checkpoint import CheckpointError, load_encoder, load_model, save_encoder, save_model
from .encoder import EncoderConfig, TransformerEncoder, Vocabulary
from .model import ModelKind, TataModel
from .providers import FileProviders, MissingProviderResponse, ProviderJobError, make_providers
from .train import TrainConfig, pretrain_tag, pretrain_taw, train_tata, write_history_csv

SEM16_TARGET_NAMES = {
    "DT": "donald trump",
    "HC": "hillary clinton",
    "FM": "feminist movement",
    "LA": "legalization of abortion",
    "A": "atheism",
    "CC": "climate change",
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(directory, command: str, config: dict, seeds, inputs, outputs, started: float):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).exists()},
        "outputs": [str(p) for p in outputs],
        "started_unix": started,
        "duration_s": round(time.time() - started, 3),
    }
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / f"manifest-{command}.json"
    tmp = target.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, target)
    return target


def _load_config(path, overrides: dict) -> tuple[TrainConfig, dict]:
    raw = {"train": {}, "encoder": {}}
    if path:
        raw.update(json.loads(Path(path).read_text(encoding="utf-8")))
    train_cfg = dict(raw.get("train", {}))
    for key, value in overrides.items():
        if value is not None:
            train_cfg[key] = value
    return TrainConfig.from_json(train_cfg), dict(raw.get("encoder", {}))


def _encoder_config(enc_json: dict, vocab: Vocabulary) -> EncoderConfig:
    enc_json = dict(enc_json)
    enc_json["vocab_size"] = len(vocab)
    return EncoderConfig.from_json(enc_json)


def _finish_file_providers(providers) -> None:
    """With directory-backed providers, persist unanswered requests and
    stop; a rerun picks up the worker's responses."""
    if isinstance(providers, FileProviders):
        path = providers.write_requests()
        if path is not None:
            raise D.DataError(
                f"{len(providers.pending)} provider responses missing; wrote {path}. "
                f"Run the provider worker over that directory, then rerun this command."
            )


def cmd_make_toy(args) -> int:
    started = time.time()
    out = Path(args.out)
    splits = synthetic.make_stance_corpus(args.seed)
    docs = synthetic.make_news_corpus(args.seed)
    D.save_stance_jsonl(splits["train"], out / "stance-train.jsonl")
    D.save_stance_jsonl(splits["val"], out / "stance-val.jsonl")
    D.save_stance_jsonl(splits["test"], out / "stance-test.jsonl")
    aug.save_corpus_jsonl(docs, out / "corpus.jsonl")
    outputs = [out / n for n in ("stance-train.jsonl", "stance-val.jsonl", "stance-test.jsonl", "corpus.jsonl")]
    _write_manifest(out, "make-toy", {"seed": args.seed}, [args.seed], [], outputs, started)
    print(f"wrote toy corpus under {out}")
    return 0


def cmd_build_vocab(args) -> int:
    started = time.time()
    texts: list[str] = []
    inputs = []
    for path in args.stance or []:
        inputs.append(path)
        for ex in D.load_stance_jsonl(path):
            texts.extend([ex.passage, ex.topic])
    for path in args.taw or []:
        inputs.append(path)
        for q in D.load_taw_jsonl(path):
            texts.extend([q.passage, q.topic, q.topic_paraphrase, q.similar_passage])
    for path in args.corpus or []:
        inputs.append(path)
        for doc in aug.load_corpus_jsonl(path):
            texts.append(doc.text)
    if not texts:
        raise UsageError("build-vocab needs at least one --stance/--taw/--corpus input")
    vocab = Vocabulary.build(texts, min_count=args.min_count)
    vocab.save(args.out)
    _write_manifest(Path(args.out).parent, "build-vocab", {"min_count": args.min_count},
                    [], inputs, [args.out], started)
    print(f"vocabulary of {len(vocab)} tokens -> {args.out}")
    return 0


def cmd_build_taw(args) -> int:
    started = time.time()
    docs = aug.load_corpus_jsonl(args.corpus)
    providers = make_providers(args.providers, seed=args.seed)
    config = aug.BuildTawConfig(
        per_site_cap=args.per_site_cap,
        per_topic_cap=args.topic_cap,
        sim_threshold=args.sim_threshold,
        target_size=args.target_size,
    )
    quads, stats = aug.build_taw_dataset(docs, providers, config)
    _finish_file_providers(providers)
    outputs = [args.out]
    if args.val_out:
        train, val = aug.split_taw_train_val(quads, val_fraction=args.val_fraction, seed=args.seed)
        D.save_taw_jsonl(train, args.out)
        D.save_taw_jsonl(val, args.val_out)
        outputs.append(args.val_out)
        print(f"{len(train)} train / {len(val)} val quadruplets (topic-disjoint)")
    else:
        D.save_taw_jsonl(quads, args.out)
        print(f"{len(quads)} quadruplets")
    print("build stats:", json.dumps(stats, sort_keys=True))
    _write_manifest(Path(args.out).parent, "build-taw",
                    {"config": config.__dict__, "providers": args.providers},
                    [args.seed], [args.corpus], outputs, started)
    return 0


def cmd_augment_vast(args) -> int:
    started = time.time()
    train = D.load_stance_jsonl(args.infile)
    providers = make_providers(args.providers, seed=args.seed)
    config = aug.AugmentConfig(
        max_passage_paraphrases=args.max_passage_paras,
        max_topic_paraphrases=args.max_topic_paras,
    )
    records, stats = aug.augment_vast(train, providers, config)
    _finish_file_providers(providers)
    D.save_stance_jsonl(records, args.out)
    print(f"{stats['inputs']} -> {stats['outputs']} examples")
    print("fan-out stats:", json.dumps(stats, sort_keys=True))
    _write_manifest(Path(args.out).parent, "augment-vast",
                    {"config": config.__dict__, "providers": args.providers},
                    [args.seed], [args.infile], [args.out], started)
    return 0


def _resolve_vocab(args, texts_fn) -> Vocabulary:
    if args.vocab:
        return Vocabulary.load(args.vocab)
    return Vocabulary.build(texts_fn())


def cmd_pretrain_taw(args) -> int:
    started = time.time()
    train = D.load_taw_jsonl(args.data)
    val = D.load_taw_jsonl(args.val)
    config, enc_json = _load_config(args.config, {"seed": args.seed, "lr": args.lr})

    def texts():
        out = []
        for q in train + val:
            out.extend([q.passage, q.topic, q.topic_paraphrase, q.similar_passage])
        return out

    vocab = _resolve_vocab(args, texts)
    encoder = TransformerEncoder(_encoder_config(enc_json, vocab), seed=config.seed)
    history = pretrain_taw(encoder, vocab, train, val, config)
    save_encoder(encoder, vocab, args.out_checkpoint, role="taw")
    print("validation triplet loss per epoch:", [round(v, 6) for v in history["val_loss"]])
    _write_manifest(Path(args.out_checkpoint).parent, "pretrain-taw",
                    {"train": config.to_json(), "encoder": encoder.config.to_json()},
                    [config.seed], [args.data, args.val], [args.out_checkpoint], started)
    return 0


def cmd_pretrain_tag(args) -> int:
    started = time.time()
    train = D.load_stance_jsonl(args.data)
    val = D.load_stance_jsonl(args.val)
    config, enc_json = _load_config(args.config, {"seed": args.seed, "lr": args.lr})

    def texts():
        out = []
        for ex in train + val:
            out.extend([ex.passage, ex.topic])
        return out

    vocab = _resolve_vocab(args, texts)
    encoder = TransformerEncoder(_encoder_config(enc_json, vocab), seed=config.seed + 1)
    history = pretrain_tag(encoder, vocab, train, val, config)
    save_encoder(encoder, vocab, args.out_checkpoint, role="tag")
    print("validation contrastive loss per epoch:", [round(v, 6) for v in history["val_loss"]])
    _write_manifest(Path(args.out_checkpoint).parent, "pretrain-tag",
                    {"train": config.to_json(), "encoder": encoder.config.to_json()},
                    [config.seed], [args.data, args.val], [args.out_checkpoint], started)
    return 0


def _build_model(kind: ModelKind, args, enc_json: dict, train, val, seed: int) -> TataModel:
    taw_enc = tag_enc = None
    vocab = None
    if kind in (ModelKind.TAW_ONLY, ModelKind.TATA):
        if not args.taw_ckpt:
            raise UsageError(f"--kind {kind.value} requires --taw-ckpt")
        taw_enc, vocab = load_encoder(args.taw_ckpt, expect_role="taw")
        if not taw_enc.frozen:
            taw_enc.freeze()
    if kind in (ModelKind.TAG_ONLY, ModelKind.TATA):
        if not args.tag_ckpt:
            raise UsageError(f"--kind {kind.value} requires --tag-ckpt")
        tag_enc, tag_vocab = load_encoder(args.tag_ckpt, expect_role="tag")
        if not tag_enc.frozen:
            tag_enc.freeze()
        if vocab is not None and vocab.id_to_token != tag_vocab.id_to_token:
            raise D.DataError("taw and tag checkpoints carry different vocabularies")
        vocab = tag_vocab

    joint_init = args.joint_init
    if joint_init == "auto":
        joint_init = "tag" if tag_enc is not None else ("taw" if taw_enc is not None else "fresh")
    if joint_init == "tag" and tag_enc is not None:
        joint = tag_enc.clone()
    elif joint_init == "taw" and taw_enc is not None:
        joint = taw_enc.clone()
    else:
        if vocab is None:
            texts = []
            for ex in train + val:
                texts.extend([ex.passage, ex.topic])
            vocab = Vocabulary.build(texts)
        joint = TransformerEncoder(_encoder_config(enc_json, vocab), seed=seed + 7)
    return TataModel(kind, vocab, joint, taw_encoder=taw_enc, tag_encoder=tag_enc,
                     head_dropout=args.head_dropout, seed=seed + 13)


def cmd_train(args) -> int:
    started = time.time()
    kind = ModelKind(args.kind)
    train = D.load_stance_jsonl(args.vast_train)
    val = D.load_stance_jsonl(args.vast_val)
    base_config, enc_json = _load_config(args.config, {"seed": args.seed, "lr": args.lr})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    summaries = []
    for offset in range(args.seeds):
        seed = base_config.seed + offset
        config = TrainConfig.from_json({**base_config.to_json(), "seed": seed})
        model = _build_model(kind, args, enc_json, train, val, seed)
        run_dir = out / f"seed{seed}" if args.seeds > 1 else out
        run_dir.mkdir(parents=True, exist_ok=True)
        history = train_tata(model, train, val, config, checkpoint_path=run_dir / "model.ckpt")
        write_history_csv(history, run_dir / "history.csv")
        summaries.append({
            "seed": seed,
            "best_epoch": history["best_epoch"],
            "best_val_macro_f1": history["best_val_macro_f1"],
            "epochs_run": len(history["epoch"]),
        })
        print(f"seed {seed}: best val macro-F1 {history['best_val_macro_f1']:.4f} "
              f"at epoch {history['best_epoch']}")
    summary = {
        "kind": kind.value,
        "runs": summaries,
        "mean_best_val_macro_f1": float(np.mean([s["best_val_macro_f1"] for s in summaries])),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    if args.seeds > 1:
        print(f"mean best val macro-F1 over {args.seeds} seeds: {summary['mean_best_val_macro_f1']:.4f}")
    inputs = [args.vast_train, args.vast_val] + [p for p in (args.taw_ckpt, args.tag_ckpt) if p]
    _write_manifest(out, "train", {"train": base_config.to_json(), "encoder": enc_json,
                                   "kind": kind.value, "joint_init": args.joint_init},
                    [s["seed"] for s in summaries], inputs,
                    [out / "summary.json"], started)
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.model, args.test]
    report_path = out / f"report-{args.report}.json"

    if args.report == "vast":
        test = D.load_stance_jsonl(args.test)
        zero, few, all_report = E.evaluate_splits(model, test)
        payload = {"zero_shot": zero.to_json(), "few_shot": few.to_json(), "all": all_report.to_json()}
        for rep in (zero, few, all_report):
            line = " ".join(f"{k}={v:.4f}" for k, v in rep.per_class.items())
            print(f"{rep.split:>9}: n={rep.n} {line} All={rep.macro:.4f}")
    elif args.report == "phenomena":
        test = D.load_stance_jsonl(args.test)
        preds = E.predict_all(model, test)
        report = E.phenomena_accuracy(preds, [ex.stance for ex in test], [ex.phenomena for ex in test])
        payload = report.to_json()
        for name, cell in payload.items():
            acc = "n/a" if cell["accuracy"] is None else f"{cell['accuracy']:.4f}"
            print(f"{name}: N={cell['n']} accuracy={acc}")
    elif args.report == "sem16":
        records = D.load_sem16_jsonl(args.test)
        preds = []
        for start in range(0, len(records), 32):
            chunk = records[start : start + 32]
            preds.extend(model.predict_batch(
                [r.passage for r in chunk], [SEM16_TARGET_NAMES[r.target] for r in chunk]
            ))
        overall = E.sem16_score(preds, [r.stance for r in records])
        payload = {"overall": overall.to_json(), "per_target": {}}
        for target in D.SEM16_TARGETS:
            idx = [i for i, r in enumerate(records) if r.target == target]
            if idx:
                score = E.sem16_score([preds[i] for i in idx], [records[i].stance for i in idx])
                payload["per_target"][target] = score.to_json()
        print(f"Pro/Against macro (all targets): {overall.score:.4f}")
        for target, cell in payload["per_target"].items():
            print(f"  {target}: {cell['score']:.4f}")
    elif args.report == "correlation":
        if not args.embeddings or not args.train_topics:
            raise UsageError("--report correlation requires --embeddings and --train-topics")
        test = D.load_stance_jsonl(args.test)
        inputs += [args.embeddings, args.train_topics]
        emb = E.WordEmbeddings.load(args.embeddings)
        train_topics = [
            line.strip() for line in Path(args.train_topics).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        preds = E.predict_all(model, test)
        rates = E.per_topic_correct_rates(test, preds)
        result = E.lexical_similarity_correlation(rates, train_topics, emb, threshold=args.threshold)
        payload = result.to_json()
        if result.defined:
            print(f"Pearson r={result.r:.4f} p={result.p:.4f} over {result.n} topics "
                  f"({result.skipped_topics} skipped, all tokens out of vocabulary)")
        else:
            print(f"correlation undefined: {result.reason}")
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown report {args.report}")

    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    _write_manifest(out, f"evaluate-{args.report}", {"report": args.report},
                    [], inputs, [report_path], started)
    return 0


def cmd_project(args) -> int:
    started = time.time()
    model = load_model(args.model)
    test = D.load_stance_jsonl(args.data)
    source = args.source
    if source == "auto":
        source = "tag" if model.tag_encoder is not None else "joint"
    encoder = {
        "tag": model.tag_encoder,
        "taw": model.taw_encoder,
        "joint": model.joint_encoder,
    }[source]
    if encoder is None:
        raise UsageError(f"model kind {model.kind.value} has no {source} encoder")
    from .encoder import format_pair, pad_batch

    hiddens = []
    for start in range(0, len(test), 32):
        chunk = test[start : start + 32]
        seqs = [format_pair(ex.passage, ex.topic, model.vocab, encoder.config.max_len) for ex in chunk]
        ids, mask = pad_batch(seqs)
        _, cls = encoder.encode(ids, mask, training=False)
        hiddens.append(cls.values)
    rows = E.project_embeddings(np.concatenate(hiddens, axis=0),
                                [ex.stance.canonical() for ex in test])
    E.write_projection_csv(rows, args.out_csv)
    print(f"projected {len(rows)} points -> {args.out_csv}")
    _write_manifest(Path(args.out_csv).parent, "project", {"source": source},
                    [], [args.model, args.data], [args.out_csv], started)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tata", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="write the bundled synthetic corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("build-vocab", help="build a shared vocabulary file")
    p.add_argument("--out", required=True)
    p.add_argument("--stance", action="append")
    p.add_argument("--taw", action="append")
    p.add_argument("--corpus", action="append")
    p.add_argument("--min-count", type=int, default=1)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("build-taw", help="build topic-paired quadruplets from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-out")
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.add_argument("--topic-cap", type=int, default=3)
    p.add_argument("--sim-threshold", type=float, default=0.70)
    p.add_argument("--per-site-cap", type=int, default=1000)
    p.add_argument("--target-size", type=int)
    p.add_argument("--providers", default="mock")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_taw)

    p = sub.add_parser("augment-vast", help="paraphrase fan-out of a stance training set")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-passage-paras", type=int, default=16)
    p.add_argument("--max-topic-paras", type=int, default=10)
    p.add_argument("--providers", default="mock")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment_vast)

    p = sub.add_parser("pretrain-taw", help="triplet pre-training of the topic-aware encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--config")
    p.add_argument("--vocab")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out-checkpoint", required=True)
    p.set_defaults(func=cmd_pretrain_taw)

    p = sub.add_parser("pretrain-tag", help="contrastive pre-training of the topic-agnostic encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--config")
    p.add_argument("--vocab")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out-checkpoint", required=True)
    p.set_defaults(func=cmd_pretrain_tag)

    p = sub.add_parser("train", help="train the stance classifier")
    p.add_argument("--vast-train", required=True)
    p.add_argument("--vast-val", required=True)
    p.add_argument("--taw-ckpt")
    p.add_argument("--tag-ckpt")
    p.add_argument("--kind", choices=[k.value for k in ModelKind], default="tata")
    p.add_argument("--joint-init", choices=["auto", "tag", "taw", "fresh"], default="auto")
    p.add_argument("--head-dropout", type=float, default=0.30)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", choices=["vast", "sem16", "phenomena", "correlation"], required=True)
    p.add_argument("--embeddings")
    p.add_argument("--train-topics")
    p.add_argument("--threshold", type=float, default=0.90)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("project", help="2-D projection of pooled hidden states")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--source", choices=["auto", "tag", "taw", "joint"], default="auto")
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_project)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (D.DataError, CheckpointError, ProviderJobError, MissingProviderResponse,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
