"""Command-line interface.

Subcommands: ingest, generate, train, evaluate, recommend, report. Options
resolve as CLI > config file > defaults; config files hold `key = value`
lines keyed by the long option names (without the leading dashes), with
'#' comments. Unknown keys are rejected. Every command echoes its
resolved configuration before doing work.

Exit codes: 0 success, 2 input/argument error, 3 numerical failure,
4 model/data incompatibility.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from hat import baselines, corpus, evaluation, inference, model
from hat.errors import CompatibilityError, CorpusFormatError, NumericalError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


class _Opt:
    def __init__(self, name, typ, default, help, choices=None):
        self.name = name
        self.typ = typ
        self.default = default
        self.help = help
        self.choices = choices

    @property
    def dest(self):
        d = self.name.replace("-", "_")
        return "lam" if d == "lambda" else d


_COMMON = [_Opt("config", str, None, "key=value config file")]

_HP_OPTS = [
    _Opt("topics", int, 4, "number of topics K"),
    _Opt("alpha", float, None, "interest Dirichlet prior (default 50/K)"),
    _Opt("gamma", float, 0.01, "word Dirichlet prior"),
    _Opt("sigma", float, 1.0, "authority log-space deviation"),
    _Opt("delta", float, 1.0, "hub log-space deviation"),
    _Opt("lambda", float, 0.5, "link score scale, in (0, 1)"),
]

_OPTIONS = {
    "ingest": _COMMON + [
        _Opt("edges", str, None, "edge list file (follower<TAB>followee)"),
        _Opt("posts", str, None, "post file (user<TAB>text)"),
        _Opt("min-word-count", int, 1, "drop words seen fewer times"),
        _Opt("out", str, None, "output dataset directory"),
    ],
    "generate": _COMMON + _HP_OPTS + [
        _Opt("users", int, 200, "number of users"),
        _Opt("posts-per-user", int, 20, "posts per user"),
        _Opt("words-per-post", int, 10, "tokens per post"),
        _Opt("vocab-size", int, 300, "vocabulary size"),
        _Opt("complement-links", _bool, False,
             "sample links with probability 1 - squash(score)"),
        _Opt("seed", int, 0, "generator seed"),
        _Opt("out", str, None, "output dataset directory"),
    ],
    "train": _COMMON + _HP_OPTS + [
        _Opt("data", str, None, "dataset directory"),
        _Opt("method", str, "hat", "model to fit",
             choices=("hat", "hits", "lda", "tlda")),
        _Opt("subsample-pct", float, 20.0, "percent of two-hop non-links kept"),
        _Opt("split-frac", float, 0.5, "per-user train fraction"),
        _Opt("seed", int, 0, "seed for split/subsample/fit"),
        _Opt("workers", int, 1, "parallel workers for HAT fitting"),
        _Opt("max-iters", int, 200, "outer iterations (sweeps for lda/tlda/hits)"),
        _Opt("em-steps", int, 1, "EM rounds per outer iteration"),
        _Opt("learning-rate", float, 0.5, "base step size"),
        _Opt("tol", float, 1e-4, "relative objective change for convergence"),
        _Opt("out", str, None, "output run directory"),
    ],
    "evaluate": _COMMON + [
        _Opt("data", str, None, "dataset directory"),
        _Opt("run", str, None, "run directory from train"),
        _Opt("k-max", int, 4, "largest precision@k"),
        _Opt("out", str, None, "metrics file (default <run>/metrics.txt)"),
    ],
    "recommend": _COMMON + [
        _Opt("data", str, None, "dataset directory"),
        _Opt("model", str, None, "model file"),
        _Opt("user", str, None, "external user name"),
        _Opt("top", int, 10, "number of recommendations"),
    ],
    "report": _COMMON + [
        _Opt("data", str, None, "dataset directory"),
        _Opt("model", str, None, "HAT model file"),
        _Opt("topic", int, -1, "topic to report (-1 for all)"),
        _Opt("keywords", int, 10, "keywords per topic"),
        _Opt("users", int, 10, "hub/authority users per topic"),
    ],
}

_REQUIRED = {
    "ingest": ("edges", "posts", "out"),
    "generate": ("out",),
    "train": ("data", "out"),
    "evaluate": ("data", "run"),
    "recommend": ("data", "model", "user"),
    "report": ("data", "model"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hat",
        description="Topical hub/authority modeling of follow graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in _OPTIONS.items():
        p = sub.add_parser(cmd)
        for o in opts:
            kwargs = {"dest": o.dest, "help": o.help, "default": None}
            if o.typ is _bool:
                kwargs["type"] = _bool
                kwargs["metavar"] = "BOOL"
            else:
                kwargs["type"] = o.typ
            if o.choices:
                kwargs["choices"] = o.choices
            p.add_argument(f"--{o.name}", **kwargs)
    return parser


def _read_config_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise CorpusFormatError(f"{path}: config file not found")
    entries = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CorpusFormatError(f"{path}:{lineno}: expected 'key = value'")
        entries[key.strip()] = value.strip()
    return entries


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file entries and CLI flags, in that order."""
    opts = {o.name: o for o in _OPTIONS[command]}
    resolved = {name: o.default for name, o in opts.items()}
    if getattr(args, "config", None):
        for key, raw in _read_config_file(Path(args.config)).items():
            if key not in opts or key == "config":
                raise CorpusFormatError(
                    f"unknown config key {key!r} for command '{command}'"
                )
            o = opts[key]
            try:
                value = o.typ(raw)
            except ValueError:
                raise CorpusFormatError(
                    f"bad value for config key {key!r}: {raw!r}"
                ) from None
            if o.choices and value not in o.choices:
                raise CorpusFormatError(
                    f"config key {key!r} must be one of {o.choices}"
                )
            resolved[key] = value
        resolved["config"] = args.config
    for name, o in opts.items():
        cli_val = getattr(args, o.dest, None)
        if cli_val is not None:
            resolved[name] = cli_val
    missing = [n for n in _REQUIRED[command] if resolved.get(n) is None]
    if missing:
        raise CorpusFormatError(
            f"missing required option(s): {', '.join('--' + m for m in missing)}"
        )
    return resolved


def _config_lines(resolved: dict) -> list[str]:
    lines = []
    for key in sorted(resolved):
        val = resolved[key]
        if val is None:
            shown = "none"
        elif isinstance(val, bool):
            shown = "true" if val else "false"
        elif isinstance(val, float):
            shown = repr(val)
        else:
            shown = str(val)
        lines.append(f"{key} = {shown}")
    return lines


def _echo_config(command: str, resolved: dict) -> None:
    print(f"resolved configuration ({command}):")
    for line in _config_lines(resolved):
        print(f"  {line}")


def _hyper_params(resolved: dict) -> model.HyperParams:
    return model.HyperParams(
        n_topics=resolved["topics"],
        alpha=resolved["alpha"],
        gamma=resolved["gamma"],
        sigma=resolved["sigma"],
        delta=resolved["delta"],
        lam=resolved["lambda"],
        subsample_pct=resolved.get("subsample-pct", 20.0),
    )


def _print_stats(stats: dict) -> None:
    print(f"total users  {stats['total_users']}")
    print(f"total links  {stats['total_links']}")
    print(f"avg links    {stats['avg_links']:.2f}")
    print(f"total posts  {stats['total_posts']}")
    print(f"min posts    {stats['min_posts']}")
    print(f"max posts    {stats['max_posts']}")
    print(f"vocabulary   {stats['vocabulary']}")


def cmd_ingest(resolved: dict) -> int:
    _echo_config("ingest", resolved)
    dataset = corpus.ingest(
        resolved["edges"], resolved["posts"],
        min_word_count=resolved["min-word-count"],
    )
    corpus.save_dataset(dataset, resolved["out"])
    _print_stats(corpus.dataset_stats(dataset))
    print(f"dataset written to {resolved['out']}")
    return 0


def cmd_generate(resolved: dict) -> int:
    _echo_config("generate", resolved)
    hp = _hyper_params(resolved)
    dataset, truth, _ = model.generate(
        hp,
        n_users=resolved["users"],
        n_posts_per_user=resolved["posts-per-user"],
        n_words_per_post=resolved["words-per-post"],
        vocab_size=resolved["vocab-size"],
        seed=resolved["seed"],
        complement_links=resolved["complement-links"],
    )
    out = Path(resolved["out"])
    corpus.save_dataset(dataset, out)
    model.save_model(truth, out / "truth_model.txt")
    _print_stats(corpus.dataset_stats(dataset))
    print(f"dataset and truth model written to {out}")
    return 0


def cmd_train(resolved: dict) -> int:
    _echo_config("train", resolved)
    dataset = corpus.load_dataset(resolved["data"])
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    seed = resolved["seed"]
    split = corpus.split(dataset, resolved["split-frac"], seed)
    corpus.save_split(split, out / "split.txt")
    method = resolved["method"]
    model_path = out / "model.txt"

    if method == "hat":
        hp = _hyper_params(resolved)
        pairs = corpus.subsample_pairs(
            split.train.graph, hp.subsample_pct, seed
        )
        config = inference.FitConfig(
            max_iters=resolved["max-iters"],
            em_steps_per_iter=resolved["em-steps"],
            learning_rate=resolved["learning-rate"],
            convergence_tol=resolved["tol"],
            workers=resolved["workers"],
            seed=seed,
        )
        params, _, trace = inference.fit(split.train, pairs, hp, config)
        model.save_model(params, model_path)
        trace.save(out / "trace.txt")
        final = trace.iterations[-1]
        print(
            f"fit {len(trace.iterations)} iterations, "
            f"converged={str(trace.converged).lower()}, "
            f"objective={final.objective:.4f}"
        )
    elif method == "hits":
        scores = baselines.hits(split.train.graph, n_iters=resolved["max-iters"])
        baselines.save_hits(scores, model_path)
        print(f"hits scores over {split.train.graph.n_edges} train links")
    elif method == "lda":
        fitted = baselines.fit_lda(
            split.train, resolved["topics"], alpha=resolved["alpha"],
            gamma=resolved["gamma"], n_sweeps=resolved["max-iters"], seed=seed,
        )
        baselines.save_lda(fitted, model_path)
        print(f"lda fit with {resolved['max-iters']} sweeps")
    else:
        fitted = baselines.fit_twitter_lda(
            split.train, resolved["topics"], alpha=resolved["alpha"],
            gamma=resolved["gamma"], n_sweeps=resolved["max-iters"], seed=seed,
        )
        baselines.save_twitter_lda(fitted, model_path)
        print(f"tlda fit with {resolved['max-iters']} sweeps")

    (out / "config.txt").write_text(
        "".join(line + "\n" for line in _config_lines(resolved)),
        encoding="utf-8",
    )
    print(f"run written to {out}")
    return 0


def load_any_model(path):
    """Sniff the magic line and load the matching model type."""
    p = Path(path)
    if not p.is_file():
        raise CorpusFormatError(f"{p}: model file not found")
    with p.open(encoding="utf-8") as fh:
        magic = fh.readline().strip()
    if magic == model.MODEL_MAGIC:
        return "hat", model.load_model(p)
    if magic == baselines.HITS_MAGIC:
        return "hits", baselines.load_hits(p)
    if magic == baselines.LDA_MAGIC:
        return "lda", baselines.load_lda(p)
    if magic == baselines.TLDA_MAGIC:
        return "tlda", baselines.load_twitter_lda(p)
    raise CorpusFormatError(f"{p}:1: unrecognized model magic {magic!r}")


def _check_compat(kind, fitted, dataset) -> None:
    n_users = getattr(fitted, "n_users", None)
    if n_users != dataset.n_users:
        raise CompatibilityError(
            f"model covers {n_users} users, dataset has {dataset.n_users}"
        )
    n_words = getattr(fitted, "n_words", None)
    if n_words is not None and n_words != dataset.n_words:
        raise CompatibilityError(
            f"model vocabulary {n_words} != dataset vocabulary {dataset.n_words}"
        )


def _scorer_for(kind, fitted) -> evaluation.Scorer:
    if kind == "hat":
        return evaluation.hat_scorer(fitted)
    if kind == "hits":
        return evaluation.hits_scorer(fitted)
    return evaluation.interest_scorer(fitted.user_topic)


def cmd_evaluate(resolved: dict) -> int:
    _echo_config("evaluate", resolved)
    dataset = corpus.load_dataset(resolved["data"])
    run = Path(resolved["run"])
    split = corpus.load_split(dataset, run / "split.txt")
    kind, fitted = load_any_model(run / "model.txt")
    _check_compat(kind, fitted, dataset)

    ranking = evaluation.rank_candidates(split, _scorer_for(kind, fitted))
    ppl = None
    if kind != "hits":
        # Falls back to the n/a marker when no test token is scorable.
        try:
            ppl = baselines.perplexity(fitted, split.test_posts)
        except ValueError:
            ppl = None
    rows = evaluation.metrics_rows(kind, ranking, ppl, k_max=resolved["k-max"])
    out = Path(resolved["out"]) if resolved["out"] else run / "metrics.txt"
    out.write_text("".join(r + "\n" for r in rows), encoding="utf-8")
    for r in rows:
        print(r)
    if ranking.n_skipped:
        print(f"skipped {ranking.n_skipped} users without candidates")
    print(f"metrics written to {out}")
    return 0


def cmd_recommend(resolved: dict) -> int:
    _echo_config("recommend", resolved)
    dataset = corpus.load_dataset(resolved["data"])
    kind, fitted = load_any_model(resolved["model"])
    _check_compat(kind, fitted, dataset)
    try:
        uid = dataset.user_id(resolved["user"])
    except KeyError:
        raise CorpusFormatError(f"unknown user {resolved['user']!r}") from None
    cands = corpus.two_hop_candidates(dataset.graph, uid)
    if cands.size == 0:
        print(f"no two-hop candidates for user {resolved['user']}")
        return 0
    scorer = _scorer_for(kind, fitted)
    scores = np.asarray(scorer(uid, cands), dtype=float)
    order = np.lexsort((cands, -scores))[: resolved["top"]]
    print(f"top {order.size} recommendations for {resolved['user']} ({kind}):")
    for rank, i in enumerate(order.tolist(), start=1):
        print(f"{rank}\t{dataset.users[cands[i]]}\t{float(scores[i])!r}")
    return 0


def cmd_report(resolved: dict) -> int:
    _echo_config("report", resolved)
    dataset = corpus.load_dataset(resolved["data"])
    kind, fitted = load_any_model(resolved["model"])
    if kind != "hat":
        raise CompatibilityError(
            f"topic reports need a HAT model, got '{kind}'"
        )
    _check_compat(kind, fitted, dataset)
    topics = (
        range(fitted.n_topics)
        if resolved["topic"] < 0
        else [resolved["topic"]]
    )
    for t in topics:
        rep = evaluation.topic_report(
            fitted, dataset, t,
            n_keywords=resolved["keywords"], n_users=resolved["users"],
        )
        print(f"topic {rep.topic}")
        print("  keywords:    " + ", ".join(
            f"{wd} ({p:.4f})" for wd, p in rep.keywords
        ))
        print("  hubs:        " + ", ".join(
            f"{u} ({v:.4f})" for u, v in rep.top_hubs
        ))
        print("  authorities: " + ", ".join(
            f"{u} ({v:.4f})" for u, v in rep.top_authorities
        ))
    return 0


_HANDLERS = {
    "ingest": cmd_ingest,
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = resolve_options(args.command, args)
        return _HANDLERS[args.command](resolved)
    except (CorpusFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
