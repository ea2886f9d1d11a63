"""Command-line surface: generate, train, decode, eval, diagnose, selftest.

Every subcommand reads the same flat config (defaults, then --config file,
then repeated --set key=value overrides) and addresses artifacts through
explicit paths.  Exit codes: 0 success, 2 configuration, 3 file/parse,
4 numeric failure, 5 decode failure, 1 other toolkit errors.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfglib
from . import reports
from .decoder import (LexiconTrie, beam_decode_fused, beam_decode_hat,
                      corpus_wer, wer, WerCounts)
from .errors import (ConfigError, DecodeFailure, NumericError, ParseError,
                     ToolkitError)
from .ilm import linearity_stats, prior_cost, factorization_residual
from .loss import sequence_loss_value
from .network import (activations, init_params, load_checkpoint,
                      save_checkpoint)
from .ngram import load_arpa
from .posterior import CTC, HAT
from .selftest import run_selftest
from .synthetic import load_alphabet, load_dataset, load_lexicon, generate
from .training import format_epoch_log, format_step_log, train_model


def _add_common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key")


def _cfg(args):
    return cfglib.load_config(args.config, args.overrides)


def _task(data):
    data = Path(data)
    alphabet = load_alphabet(data / "labels.txt")
    lexicon = load_lexicon(data / "lexicon.tsv", alphabet)
    return alphabet, lexicon


def _split(data, split, lexicon):
    return load_dataset(Path(data) / split, lexicon)


def _lm_for(args, cfg, data):
    """The ARPA model matching the decode mode, or None when disabled."""
    choice = getattr(args, "lm", None)
    if choice == "none":
        return None
    if choice:
        path = Path(choice)
    elif cfg["decode.mode"] == "word_lm":
        path = Path(data) / "lm.arpa"
    else:
        path = Path(data) / "lm_labels.arpa"
    return load_arpa(path.read_text(encoding="ascii"))


def _decode_split(dataset, params, kind, lm, dcfg, trie, alphabet):
    word_mode = dcfg.mode == "word_lm"
    rows, first, oracle = [], WerCounts(), WerCounts()
    for utt in dataset:
        if kind == HAT:
            hyps = beam_decode_hat(utt.features, params, lm, dcfg, lexicon=trie)
        else:
            hyps = beam_decode_fused(kind, utt.features, params, lm, dcfg)
        ref = utt.words if word_mode else tuple(
            alphabet.name_of(y) for y in utt.labels)
        texts = [h.words if word_mode else tuple(alphabet.name_of(y)
                                                 for y in h.labels)
                 for h in hyps]
        first.add(wer(ref, texts[0]))
        oracle.add(min((wer(ref, t) for t in texts), key=lambda c: c.errors))
        rows.extend(reports.nbest_rows(utt.utt_id, hyps, dcfg, alphabet,
                                       word_mode))
    return rows, first, oracle


def cmd_generate(args):
    cfg = _cfg(args)
    paths = generate(cfglib.task_spec(cfg), args.out)
    for key in sorted(paths):
        if isinstance(paths[key], Path):
            print(f"{key}\t{paths[key]}")
    return 0


def cmd_train(args):
    cfg = _cfg(args)
    alphabet, lexicon = _task(args.data)
    dataset = _split(args.data, "train", lexicon)
    dims = cfglib.model_dims(cfg)
    if dataset and dataset[0].features.shape[1] != dims.d_in:
        raise ConfigError(f"model.d_in={dims.d_in} but the dataset has "
                          f"{dataset[0].features.shape[1]}-dim features")
    params = init_params(alphabet, dims, seed=cfg["train.seed"],
                         context_size=cfglib.context_of(cfg),
                         joint_nonlinearity=cfg["model.joint_nonlinearity"])
    kind = cfg["model.kind"]

    def on_epoch(row, wall_ms):
        print(f"epoch {row.epoch}: loss {row.mean_loss:.4f} "
              f"prior {row.prior_cost:.4f} ({wall_ms:.0f} ms wall)")

    result = train_model(dataset, params, kind,
                         epochs=cfg["train.epochs"], lr=cfg["train.lr"],
                         clip=cfg["train.clip"], batch_size=cfg["train.batch"],
                         seed=cfg["train.seed"],
                         mtl_weight=cfglib.mtl_weight_of(cfg),
                         on_epoch=on_epoch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "checkpoint.bin")
    (out / "step_log.tsv").write_text(format_step_log(result.step_rows),
                                      encoding="ascii")
    (out / "epoch_log.tsv").write_text(format_epoch_log(result.epoch_rows),
                                       encoding="ascii")
    (out / "resolved.cfg").write_text(cfglib.dump_config(cfg), encoding="ascii")
    print(f"wrote {out / 'checkpoint.bin'}")
    return 0


def cmd_decode(args):
    cfg = _cfg(args)
    alphabet, lexicon = _task(args.data)
    dataset = _split(args.data, args.split, lexicon)
    if args.limit:
        dataset = dataset[: args.limit]
    params = load_checkpoint(args.checkpoint, alphabet)
    kind = cfg["model.kind"]
    dcfg = cfglib.decode_config(cfg)
    if kind != HAT and dcfg.mode == "word_lm":
        raise ConfigError("fused decoding runs in label mode; "
                          "set decode.mode=label_lm")
    lm = _lm_for(args, cfg, args.data)
    trie = LexiconTrie(lexicon, alphabet) if dcfg.mode == "word_lm" else None
    rows, first, oracle = _decode_split(dataset, params, kind, lm, dcfg,
                                        trie, alphabet)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "nbest.tsv").write_text(
        reports.tsv(reports.NBEST_HEADER, rows), encoding="ascii")
    report = reports.wer_report(first, oracle)
    (out / "wer_report.txt").write_text(report, encoding="ascii")
    print(report, end="")
    return 0


def cmd_eval(args):
    cfg = _cfg(args)
    alphabet, lexicon = _task(args.data)
    dataset = _split(args.data, args.split, lexicon)
    if args.limit:
        dataset = dataset[: args.limit]
    params = load_checkpoint(args.checkpoint, alphabet)
    kind = cfg["model.kind"]
    losses = [sequence_loss_value(kind, u.features, u.labels, params)
              for u in dataset]
    mean_loss = sum(losses) / len(losses)
    prior = float("nan") if kind == CTC else prior_cost(dataset, params)
    line = reports.tsv(("kind", "split", "utterances", "mean_loss",
                        "prior_cost"),
                       [(kind, args.split, len(dataset), mean_loss, prior)])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.tsv").write_text(line, encoding="ascii")
    print(line, end="")
    return 0


def _parse_grid(text):
    text = text.strip()
    if not text:
        return []
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad sweep grid {text!r}") from None


def cmd_diagnose(args):
    cfg = _cfg(args)
    alphabet, lexicon = _task(args.data)
    dataset = _split(args.data, args.split, lexicon)
    if args.limit:
        dataset = dataset[: args.limit]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg["model.kind"]
    dcfg = cfglib.decode_config(cfg)
    wrote = []

    if args.checkpoint:
        params = load_checkpoint(args.checkpoint, alphabet)
        lm = _lm_for(args, cfg, args.data)
        trie = (LexiconTrie(lexicon, alphabet)
                if dcfg.mode == "word_lm" else None)
        grid = _parse_grid(args.lambda2_grid)
        if not grid:
            grid = [dcfg.lambda2]
        sweep = []
        for lam in grid:
            _, first, _ = _decode_split(dataset, params, kind, lm,
                                        replace(dcfg, lambda2=lam, nbest=1),
                                        trie, alphabet)
            sweep.append((lam, first))
        (out / "wer_vs_lambda2.tsv").write_text(reports.sweep_table(sweep),
                                                encoding="ascii")
        reports.fig_sweep(sweep, out / "wer_vs_lambda2.png", dcfg.lambda1)
        wrote += ["wer_vs_lambda2.tsv", "wer_vs_lambda2.png"]

        stats = linearity_stats(dataset, params)
        resid = max(factorization_residual(
            activations(u.features, u.labels, params), params)
            for u in dataset)
        table = reports.linearity_table(stats)
        table += (f"# linear_range_fraction={stats.linear_range_fraction:.6f} "
                  f"max_factorization_residual={resid:.10g}\n")
        (out / "linearity.tsv").write_text(table, encoding="ascii")
        reports.fig_linearity(stats, out / "linearity.png")
        wrote += ["linearity.tsv", "linearity.png"]

    if args.epoch_logs:
        series = {}
        for item in args.epoch_logs:
            name, _, path = item.rpartition("=")
            name = name or Path(path).parent.name or "run"
            pts = []
            lines = Path(path).read_text(encoding="ascii").splitlines()
            for ln in lines[1:]:
                epoch, _, prior = ln.split("\t")[:3]
                pts.append((int(epoch), float(prior)))
            series[name] = pts
        (out / "prior_series.tsv").write_text(
            reports.prior_series_table(series), encoding="ascii")
        reports.fig_prior_series(series, out / "prior_series.png")
        wrote += ["prior_series.tsv", "prior_series.png"]

    if args.context_checkpoints:
        rows = []
        lm = _lm_for(args, cfg, args.data)
        trie = (LexiconTrie(lexicon, alphabet)
                if dcfg.mode == "word_lm" else None)
        for item in args.context_checkpoints:
            name, _, path = item.rpartition("=")
            if not name:
                raise ConfigError(
                    f"--context-checkpoint needs NAME=PATH, got {item!r}")
            params = load_checkpoint(path, alphabet)
            losses = [sequence_loss_value(kind, u.features, u.labels, params)
                      for u in dataset]
            _, first, _ = _decode_split(dataset, params, kind, lm,
                                        replace(dcfg, nbest=1), trie, alphabet)
            rows.append((name, sum(losses) / len(losses), first.rate))
        (out / "contexts.tsv").write_text(reports.context_table(rows),
                                          encoding="ascii")
        wrote += ["contexts.tsv"]

    if not wrote:
        raise ConfigError("diagnose needs --checkpoint, --epoch-log, "
                          "or --context-checkpoint")
    for name in wrote:
        print(f"wrote {out / name}")
    return 0


def cmd_selftest(args):
    _ = args
    return 1 if run_selftest() else 0


def build_parser():
    top = argparse.ArgumentParser(
        prog="hatkit",
        description="sequence transducer toolkit with a factorized blank")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render the synthetic task")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a model with SGD")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="beam search a split, report WER")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--lm", help="ARPA path, or 'none' to disable fusion")
    p.add_argument("--limit", type=int, default=0,
                   help="decode only the first N utterances")
    _add_common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="loss and prior cost of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.add_argument("--limit", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="sweeps, linearity, prior series")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--lm")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--lambda2-grid", default="0,0.25,0.5,0.75,0.95,1.1")
    p.add_argument("--epoch-log", dest="epoch_logs", action="append",
                   default=[], metavar="NAME=PATH")
    p.add_argument("--context-checkpoint", dest="context_checkpoints",
                   action="append", default=[], metavar="NAME=PATH")
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("selftest", help="run the verification suites")
    p.set_defaults(func=cmd_selftest)
    return top


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except DecodeFailure as exc:
        print(f"decode failure: {exc}", file=sys.stderr)
        return 5
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
