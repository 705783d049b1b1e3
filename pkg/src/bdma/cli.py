"""Command-line entry point: ``bdma {preprocess,synth,train,evaluate,translate,gradcheck}``.

Settings resolve as flag > ``--config`` file > built-in default. Structured
results go to stdout as JSON; logs go to stderr.
Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .dictionary import bind, eval_groups, filter_unique, load_dictionary, sample_unique, split_tail
from .embeddings import load_vec, preprocess, save_vec
from .errors import DataError, NumericError
from .losses import LossKind, grad_check
from .mapper import FORMAT_VERSION, init_mapper, load, save
from .retrieval import RetrievalMethod, precision_at_k, translate
from .synth import SynthSpec, generate, write
from .trainer import TrainingConfig, train

logger = logging.getLogger("bdma")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _bool(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default); every key accepted in a config file
SCHEMA: dict[str, tuple] = {
    f.name: ({bool: _bool, int: int, float: float, str: str}.get(type(f.default), str), f.default)
    for f in fields(TrainingConfig) if f.name != "direction"
}
SCHEMA.update({
    "max_pairs": (int, 5000),
    "unique_filter": (_bool, True),
    "val_fraction": (float, 0.1),
    "preprocess": (_bool, True),
    "method": (str, "csls"),
    "k": (int, 10),
    "direction": (str, "fwd"),
    "threads": (int, os.cpu_count() or 1),
})


def read_config(path: str | Path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SCHEMA:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(args: argparse.Namespace) -> dict:
    settings = {k: default for k, (_, default) in SCHEMA.items()}
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    settings.update({k: v for k, v in vars(args).items() if k in SCHEMA})
    return settings


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _opt(p: argparse.ArgumentParser, *flags: str, **kw) -> None:
    # absent flags stay out of the namespace so config values can show through
    p.add_argument(*flags, default=argparse.SUPPRESS, **kw)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' settings file")
    _opt(p, "--seed", type=int)
    _opt(p, "--threads", type=int, help="worker/BLAS thread cap (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_embeddings(p: argparse.ArgumentParser) -> None:
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    _opt(p, "--max-vocab", dest="max_vocab", type=int)
    _opt(p, "--preprocess", type=_bool, metavar="{on,off}")


def _add_retrieval(p: argparse.ArgumentParser) -> None:
    _opt(p, "--direction", choices=["fwd", "rev"])
    _opt(p, "--method", choices=["nn", "csls"])
    _opt(p, "--k", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bdma", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"bdma {__version__} (model format {FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="normalize, center and renormalize a .vec file")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _opt(p, "--max-vocab", dest="max_vocab", type=int)

    p = sub.add_parser("synth", help="write a synthetic benchmark")
    _add_common(p)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--kind", choices=["identity", "orthogonal", "general-linear", "nonlinear"],
                   default="orthogonal")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--split", type=float, nargs=3, default=(0.9, 0.05, 0.05))
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train a bidirectional mapper")
    _add_common(p)
    _add_embeddings(p)
    p.add_argument("--train-dict", required=True)
    p.add_argument("--val-dict")
    _opt(p, "--loss", choices=[k.value for k in LossKind])
    _opt(p, "--arch", choices=["linear", "ffn"])
    _opt(p, "--hidden", type=int)
    _opt(p, "--sharing", choices=["shared", "independent"])
    _opt(p, "--epochs", type=int)
    _opt(p, "--batch-size", dest="batch_size", type=int)
    _opt(p, "--lr", dest="learning_rate", type=float)
    _opt(p, "--lr-decay", dest="lr_decay", type=float)
    _opt(p, "--lr-shrink", dest="lr_shrink", type=float)
    _opt(p, "--shrink-on", dest="shrink_on", choices=["decrease", "plateau"])
    _opt(p, "--map-beta", dest="map_beta", type=float)
    _opt(p, "--ortho", type=_bool, metavar="{on,off}")
    _opt(p, "--rcsls-k", dest="rcsls_k", type=int)
    _opt(p, "--rcsls-pool", dest="rcsls_pool", choices=["train", "full"])
    _opt(p, "--max-pairs", dest="max_pairs", type=int)
    _opt(p, "--val-fraction", dest="val_fraction", type=float)
    _opt(p, "--no-unique-filter", dest="unique_filter", action="store_false")
    p.add_argument("--model-out", required=True)
    p.add_argument("--report-out")

    p = sub.add_parser("evaluate", help="P@1/5/10 of a trained mapper")
    _add_common(p)
    p.add_argument("--model", required=True)
    _add_embeddings(p)
    p.add_argument("--eval-dict", required=True)
    _add_retrieval(p)
    _opt(p, "--no-unique-filter", dest="unique_filter", action="store_false")

    p = sub.add_parser("translate", help="ranked translations for a few words")
    _add_common(p)
    p.add_argument("--model", required=True)
    _add_embeddings(p)
    p.add_argument("--words", required=True, help="comma-separated tokens")
    _add_retrieval(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    _add_common(p)
    _opt(p, "--loss", choices=[k.value for k in LossKind])
    _opt(p, "--arch", choices=["linear", "ffn"])
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--dim", type=int, default=12)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    _opt(p, "--map-beta", dest="map_beta", type=float)
    _opt(p, "--rcsls-k", dest="rcsls_k", type=int)
    return parser


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _load_embeddings(args, s):
    src, tgt = load_vec(args.src_emb, s["max_vocab"]), load_vec(args.tgt_emb, s["max_vocab"])
    if s["preprocess"]:
        src, tgt = preprocess(src), preprocess(tgt)
    logger.info("source: %d x %d, target: %d x %d", len(src), src.dim, len(tgt), tgt.dim)
    return src, tgt


def cmd_preprocess(args, s) -> int:
    save_vec(preprocess(load_vec(args.input, s["max_vocab"])), args.out)
    return EXIT_OK


def cmd_synth(args, s) -> int:
    data = generate(SynthSpec(args.n, args.d, args.noise, args.kind, s["seed"], tuple(args.split)))
    paths = write(data, args.out_dir)
    _emit({k: str(v) for k, v in paths.items()})
    return EXIT_OK


def _config_from(s: dict) -> TrainingConfig:
    return TrainingConfig(**{f.name: s[f.name] for f in fields(TrainingConfig) if f.name in SCHEMA})


def cmd_train(args, s) -> int:
    cfg = _config_from(s)
    src, tgt = _load_embeddings(args, s)
    pairs = load_dictionary(args.train_dict)
    if s["unique_filter"]:
        pairs = filter_unique(pairs)
    pairs = sample_unique(pairs, s["max_pairs"], seed=s["seed"])
    if args.val_dict:
        val = load_dictionary(args.val_dict)
    else:
        pairs, val = split_tail(pairs, s["val_fraction"])
    bound = bind(pairs, src, tgt)
    logger.info("training pairs: %d (source OOV %d, target OOV %d)", len(bound), bound.src_oov, bound.tgt_oov)
    groups = eval_groups(val, src, tgt)
    model, report = train(src, tgt, bound, groups, cfg)
    save(model, args.model_out)
    records = report.records()
    if args.report_out:
        with open(args.report_out, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    logger.info("trained in %.1fs; best epoch %d", report.wall_time, report.best_epoch)
    _emit({"best_epoch": report.best_epoch, "best_val_p1": report.best_p1, "epochs": records,
           "train_pairs": len(bound), "src_oov": bound.src_oov, "tgt_oov": bound.tgt_oov})
    return EXIT_OK


def cmd_evaluate(args, s) -> int:
    model = load(args.model)
    src, tgt = _load_embeddings(args, s)
    d = load_dictionary(args.eval_dict)
    if s["unique_filter"]:
        d = filter_unique(d)
    # the dictionary file is always source -> target; reverse queries come from its right column
    query, cand = (src, tgt) if s["direction"] == "fwd" else (tgt, src)
    if s["direction"] == "rev":
        d = d.swapped()
    src_oov = sum(1 for a, _ in d if a not in query)
    tgt_oov = sum(1 for a, b in d if a in query and b not in cand)
    groups = eval_groups(d, query, cand)
    method = RetrievalMethod(s["method"], s["k"])
    ks = sorted({1, 5, 10} | {s["k"]}) if s["method"] == "nn" else (1, 5, 10)
    report = precision_at_k(model, s["direction"], groups, src, tgt, method, ks, threads=s["threads"])
    report.src_oov, report.tgt_oov = src_oov, tgt_oov
    logger.info("evaluated %d queries in %.2fs", report.queries, report.elapsed)
    _emit(report.to_json(with_time=False))
    return EXIT_OK


def cmd_translate(args, s) -> int:
    model = load(args.model)
    src, tgt = _load_embeddings(args, s)
    words = [w for w in args.words.split(",") if w]
    method = RetrievalMethod(s["method"], s["k"])
    _emit(translate(model, words, s["direction"], src, tgt, method, s["k"]))
    return EXIT_OK


def cmd_gradcheck(args, s) -> int:
    kind = LossKind(s["loss"])
    rng = np.random.default_rng(s["seed"])
    m = init_mapper(s["arch"], args.dim, args.hidden, seed=s["seed"])
    m.params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in m.params.items()}
    Xs = rng.standard_normal((args.batch, args.dim))
    Xt = rng.standard_normal((args.batch, args.dim))
    pools = (rng.standard_normal((4 * args.batch, args.dim)), rng.standard_normal((4 * args.batch, args.dim)))
    report = grad_check(m, Xs, Xt, kind, args.eps, args.tol, s["map_beta"], True, pools, s["rcsls_k"])
    _emit({"loss": kind.value, "arch": s["arch"], "max_rel_error": report.worst,
           "per_tensor": report.max_rel_error, "tolerance": args.tol, "passed": report.passed})
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {"preprocess": cmd_preprocess, "synth": cmd_synth, "train": cmd_train,
            "evaluate": cmd_evaluate, "translate": cmd_translate, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = resolve(args)
    except UsageError as exc:
        print(f"bdma: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", force=True)
    try:
        with threadpool_limits(limits=max(1, settings["threads"])):
            return COMMANDS[args.command](args, settings)
    except NumericError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except ValueError as exc:
        logger.error("invalid setting: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
