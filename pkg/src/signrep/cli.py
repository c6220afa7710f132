"""Command-line surface for the full pipeline.

Logs are line-delimited JSON on stdout; human diagnostics go to stderr.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command echoes its fully resolved config; train commands also
write the resolved tree as JSON beside their checkpoint so a run can be
reproduced from the snapshot alone.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import corpus as corpus_mod
from . import evalrun, mae as mae_mod
from .config import load_config, mae_config, save_snapshot
from .errors import (DataError, EmptyResult, NumericError, SignRepError,
                     UsageError)
from .metrics import mpjpe
from .nn.checkpoint import load_checkpoint
from .nn.gradcheck import TOL, run_operator_checks
from .pose import (KeypointSequence, center_and_normalize,
                   filter_noisy_frames, load_layout)
from .tasks.s2t import s2t_train, translate
from .tasks.slr import slr_classify, train_slr
from .tasks.t2s import t2s_generate, t2s_train
from .tasks.vocab import Vocabulary
from .tasks.windows import WindowSpec, extract_reprs


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def _diag(msg):
    sys.stderr.write(msg + "\n")


def _tree(args, flag_map):
    overrides = []
    for flag, dotted in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append((dotted, val))
    tree = load_config(getattr(args, "config", None), overrides)
    _emit({"event": "config", "config": tree})
    return tree


def _synth_spec(tree):
    c = tree["corpus"]
    return corpus_mod.SynthSpec(
        vocab_size=c["vocab_size"], proto_len=c["proto_len"],
        sentence_len=(c["sentence_min"], c["sentence_max"]),
        jitter=c["jitter"], n_sentences=c["n_sentences"],
        seed=tree["seed"], fps=c["fps"])


def cmd_synth(args):
    tree = _tree(args, {"seed": "seed", "vocab": "corpus.vocab_size",
                        "sentences": "corpus.n_sentences"})
    records, _ = corpus_mod.synth_generate(_synth_spec(tree))
    corpus_mod.write_corpus(records, args.out)
    _emit({"event": "synth", "records": len(records), "out": args.out})
    return 0


def cmd_ingest(args):
    tree = _tree(args, {})
    index_map = corpus_mod.read_index_map(args.index_map)
    layout = load_layout()
    records = corpus_mod.ingest_raw(args.raw, index_map, layout,
                                    log=_diag)
    corpus_mod.write_corpus(records, args.out)
    _emit({"event": "ingest", "records": len(records), "out": args.out})
    return 0


def cmd_preprocess(args):
    tree = _tree(args, {"threshold": "pose.filter_threshold"})
    threshold = tree["pose"]["filter_threshold"]
    records = corpus_mod.read_corpus(args.corpus)
    layout = load_layout()
    kept = []
    for rec in records:
        seq = rec.sequence()
        filtered, removed = filter_noisy_frames(seq, threshold)
        if removed:
            _diag(f"{rec.id}: dropped {len(removed)} noisy frames")
        try:
            norm = center_and_normalize(filtered, layout, on_degenerate="drop")
        except EmptyResult:
            _diag(f"{rec.id}: skipped, no usable frames")
            continue
        kept.append(corpus_mod.CorpusRecord(
            id=rec.id, fps=rec.fps, text=rec.text,
            keypoints=norm.frames.astype(np.float64).tolist(),
            labels=rec.labels))
    if not kept:
        raise corpus_mod.EmptyCorpus("no record survived preprocessing")
    corpus_mod.write_corpus(kept, args.out)
    _emit({"event": "preprocess", "records": len(kept), "out": args.out})
    return 0


def cmd_pretrain(args):
    tree = _tree(args, {"seed": "seed"})
    records = corpus_mod.read_corpus(args.corpus)
    model = mae_mod.pretrain(records, mae_config(tree), seed=tree["seed"],
                             log=lambda line: sys.stdout.write(line + "\n"),
                             ckpt_path=args.out)
    save_snapshot(tree, args.out + ".config.json")
    _emit({"event": "pretrain", "out": args.out,
           "params": sum(p.data.size for p in model.parameters())})
    return 0


def _load_mae(path):
    model = load_checkpoint(path)
    if model.model_type != "signmae":
        raise UsageError(f"{path} is a {model.model_type} checkpoint")
    return model


def cmd_train_s2t(args):
    tree = _tree(args, {"seed": "seed"})
    mae = _load_mae(args.mae)
    train = corpus_mod.read_corpus(args.corpus)
    valid = corpus_mod.read_corpus(args.valid) if args.valid else []
    cfg = dict(tree["s2t"])
    cfg["repr_dim"] = mae.config["d"]
    s2t_train(train, valid, mae, cfg, seed=tree["seed"],
              log=lambda line: sys.stdout.write(line + "\n"),
              ckpt_path=args.out)
    save_snapshot(tree, args.out + ".config.json")
    _emit({"event": "train-s2t", "out": args.out})
    return 0


def cmd_train_t2s(args):
    tree = _tree(args, {"seed": "seed"})
    mae = _load_mae(args.mae)
    records = corpus_mod.read_corpus(args.corpus)
    cfg = dict(tree["t2s"])
    cfg["repr_dim"] = mae.config["d"]
    t2s_train(records, mae, cfg, seed=tree["seed"],
              log=lambda line: sys.stdout.write(line + "\n"),
              ckpt_path=args.out)
    save_snapshot(tree, args.out + ".config.json")
    _emit({"event": "train-t2s", "out": args.out})
    return 0


def cmd_train_slr(args):
    tree = _tree(args, {"seed": "seed"})
    mae = _load_mae(args.mae)
    records = corpus_mod.read_corpus(args.corpus)
    train_slr(records, mae, dict(tree["slr"]), seed=tree["seed"],
              log=lambda line: sys.stdout.write(line + "\n"),
              ckpt_path=args.out)
    save_snapshot(tree, args.out + ".config.json")
    _emit({"event": "train-slr", "out": args.out})
    return 0


def cmd_translate(args):
    tree = _tree(args, {"beam": "eval.beam"})
    mae = _load_mae(args.mae)
    model = load_checkpoint(args.checkpoint)
    spec = WindowSpec(model.config["window_w"], model.config["window_s"])
    records = corpus_mod.read_corpus(args.corpus)
    lines = []
    for rec in records:
        z, _ = extract_reprs(rec.sequence(), mae, spec)
        ids, score = translate(model, z, beam=tree["eval"]["beam"])
        entry = {"id": rec.id, "hypothesis": model.vocab.decode(ids),
                 "score": score}
        _emit(entry)
        lines.append(entry)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for entry in lines:
                fh.write(json.dumps(entry) + "\n")
    return 0


def cmd_produce(args):
    tree = _tree(args, {})
    mae = _load_mae(args.mae)
    model = load_checkpoint(args.checkpoint)
    if args.text:
        texts = [("text-0000", args.text)]
    else:
        texts = [(r.id, r.text) for r in corpus_mod.read_corpus(args.corpus)]
    out_records = []
    for rid, text in texts:
        seq = t2s_generate(model, mae, text=text)
        out_records.append(corpus_mod.CorpusRecord(
            id=f"gen-{rid}", fps=tree["corpus"]["fps"], text=text,
            keypoints=seq.frames.astype(np.float64).tolist()))
        _emit({"event": "produce", "id": f"gen-{rid}",
               "frames": int(seq.frames.shape[0])})
    if args.out:
        corpus_mod.write_corpus(out_records, args.out)
    return 0


def cmd_evaluate(args):
    tree = _tree(args, {})
    mae = _load_mae(args.mae)
    s2t_model = load_checkpoint(args.s2t)
    t2s_model = load_checkpoint(args.t2s)
    records = corpus_mod.read_corpus(args.corpus)
    report = evalrun.back_translate_eval(records, mae, s2t_model, t2s_model)
    _emit({"event": "evaluate", "report": report.as_dict()})
    return 0


def cmd_export_reprs(args):
    tree = _tree(args, {"window": "s2t.window_w", "stride": "s2t.window_s"})
    mae = _load_mae(args.mae)
    spec = WindowSpec(tree["s2t"]["window_w"], tree["s2t"]["window_s"])
    records = corpus_mod.read_corpus(args.corpus)
    count = evalrun.export_reprs(records, mae, spec, args.out)
    _emit({"event": "export-reprs", "records": count, "out": args.out})
    return 0


def cmd_grad_check(args):
    results = run_operator_checks()
    worst = 0.0
    for name, err in sorted(results.items()):
        _emit({"op": name, "max_rel_err": err, "pass": bool(err <= TOL)})
        worst = max(worst, err)
    if worst > TOL:
        raise NumericError(f"worst operator relative error {worst:.3e}")
    _emit({"event": "grad-check", "operators": len(results), "worst": worst})
    return 0


SMOKE_OVERRIDES = [
    ("corpus.vocab_size", 5), ("corpus.n_sentences", 12),
    ("corpus.sentence_max", 4),
    ("signmae.d", 32), ("signmae.gc_channels", 8), ("signmae.refine_dim", 4),
    ("signmae.d_ff", 64), ("signmae.n_heads", 2), ("signmae.enc_layers", 1),
    ("signmae.dec_layers", 1), ("signmae.batch_size", 8),
    ("signmae.steps", 60), ("signmae.warmup_steps", 20),
    ("signmae.peak_lr", 3e-4), ("signmae.eval_segments_per_record", 1),
    ("s2t.d", 32), ("s2t.n_heads", 2), ("s2t.d_ff", 64),
    ("s2t.enc_layers", 1), ("s2t.dec_layers", 1), ("s2t.batch_size", 8),
    ("s2t.steps", 200), ("s2t.warmup_steps", 20), ("s2t.peak_lr", 1e-3),
    ("s2t.eval_interval", 100),
    ("t2s.d", 32), ("t2s.n_heads", 2), ("t2s.d_ff", 64),
    ("t2s.enc_layers", 1), ("t2s.dec_layers", 1), ("t2s.batch_size", 8),
    ("t2s.steps", 200), ("t2s.warmup_steps", 20), ("t2s.peak_lr", 1e-3),
    ("t2s.q_slots", 8),
]


def cmd_smoke(args):
    overrides = list(SMOKE_OVERRIDES)
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    tree = load_config(args.config, overrides)
    _emit({"event": "config", "config": tree})
    seed = tree["seed"]
    stage = "synth"
    try:
        records, _ = corpus_mod.synth_generate(_synth_spec(tree))
        stage = "pretrain"
        model = mae_mod.pretrain(records, mae_config(tree), seed=seed)
        stage = "train-s2t"
        s2t_cfg = dict(tree["s2t"])
        s2t_cfg["repr_dim"] = model.config["d"]
        s2t_model = s2t_train(records, [], model, s2t_cfg, seed=seed)
        stage = "train-t2s"
        t2s_cfg = dict(tree["t2s"])
        t2s_cfg["repr_dim"] = model.config["d"]
        t2s_model = t2s_train(records, model, t2s_cfg, seed=seed)
        stage = "evaluate"
        report = evalrun.back_translate_eval(records, model, s2t_model,
                                             t2s_model)
    except SignRepError as err:
        _diag(f"smoke failed at stage {stage}: {err}")
        raise
    _emit({"event": "smoke", "seed": seed, "records": len(records),
           "metrics": report.as_dict()})
    return 0


def build_parser():
    parser = _Parser(prog="signrep",
                     description="sign-language representation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        p.add_argument("--config", default=None)
        for flag, kw in flags.items():
            p.add_argument(f"--{flag.replace('_', '-')}", **kw)
        return p

    add("synth", cmd_synth,
        seed={"type": int, "default": None},
        vocab={"type": int, "default": None},
        sentences={"type": int, "default": None},
        out={"required": True})
    add("ingest", cmd_ingest,
        raw={"required": True},
        index_map={"required": True},
        out={"required": True})
    add("preprocess", cmd_preprocess,
        corpus={"required": True},
        threshold={"type": float, "default": None},
        out={"required": True})
    add("pretrain", cmd_pretrain,
        corpus={"required": True},
        seed={"type": int, "required": True},
        out={"required": True})
    add("train-s2t", cmd_train_s2t,
        corpus={"required": True},
        valid={"default": None},
        mae={"required": True},
        seed={"type": int, "required": True},
        out={"required": True})
    add("train-t2s", cmd_train_t2s,
        corpus={"required": True},
        mae={"required": True},
        seed={"type": int, "required": True},
        out={"required": True})
    add("train-slr", cmd_train_slr,
        corpus={"required": True},
        mae={"required": True},
        seed={"type": int, "required": True},
        out={"required": True})
    add("translate", cmd_translate,
        corpus={"required": True},
        mae={"required": True},
        checkpoint={"required": True},
        beam={"type": int, "default": None},
        out={"default": None})
    add("produce", cmd_produce,
        mae={"required": True},
        checkpoint={"required": True},
        text={"default": None},
        corpus={"default": None},
        out={"default": None})
    add("evaluate", cmd_evaluate,
        corpus={"required": True},
        mae={"required": True},
        s2t={"required": True},
        t2s={"required": True})
    add("export-reprs", cmd_export_reprs,
        corpus={"required": True},
        mae={"required": True},
        window={"type": int, "default": None},
        stride={"type": int, "default": None},
        out={"required": True})
    add("grad-check", cmd_grad_check)
    add("smoke", cmd_smoke,
        seed={"type": int, "default": None})
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UsageError as err:
        _diag(f"usage error: {err}")
        return 1
    except DataError as err:
        _diag(f"data error: {err}")
        return 2
    except NumericError as err:
        _diag(f"numeric failure: {err}")
        return 3
    except FileNotFoundError as err:
        _diag(f"usage error: {err}")
        return 1


def main():
    raise SystemExit(run())


if __name__ == "__main__":
    main()
