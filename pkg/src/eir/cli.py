"""Command-line entry point: ``eir <verb> [flags]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import gradcheck
from .config import RunConfig, load_config
from .errors import ConfigError, ContractError, NumericError, ShapeError
from .synthdata import SPLITS, generate_corpus, read_corpus, write_corpus

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "data", None):
        cfg = cfg.replace("run", data=args.data)
    if getattr(args, "out", None):
        cfg = cfg.replace("run", out=args.out)
    return cfg


def _prepare_out(path: Path, overwrite: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise FileExistsError(f"{path} exists and is not empty; pass --overwrite to replace it")
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    world = cfg.world
    if args.seed is not None:
        cfg = cfg.replace("world", seed=args.seed)
        world = cfg.world
    corpus = generate_corpus(world)
    out = write_corpus(corpus, cfg.run.data, overwrite=args.overwrite)
    print(f"wrote {out} (vocab_hash={corpus.vocab_hash})")
    names = corpus.schema.diseases
    for split in SPLITS:
        marg = corpus.label_marginals(split)
        print(f"{split}\t{len(corpus.splits[split])}\t"
              + " ".join(f"{n}={m:.3f}" for n, m in zip(names, marg)))
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import read_curves, train

    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace("run", seed=args.seed)
    corpus = read_corpus(cfg.run.data)
    out = _prepare_out(Path(cfg.run.out), args.overwrite)
    (out / "run.cfg").write_text(cfg.to_text())
    result = train(cfg, corpus, out, on_log=print)
    if args.plot:
        from .plotting import plot_curves

        print(f"plot {plot_curves(read_curves(out / 'curves.tsv'), out / 'curves.png')}")
    if result.aborted:
        print(f"training aborted at {result.aborted}; last good checkpoint kept in {out}",
              file=sys.stderr)
        return EXIT_NUMERIC
    print(f"checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def _load(args):
    from .training import read_model

    ckpt = Path(args.checkpoint)
    data = args.data
    if data is None:
        data = _meta_value(ckpt, "run.data")
    corpus = read_corpus(data)
    if args.split not in corpus.splits or not corpus.splits[args.split]:
        raise ContractError(f"split {args.split!r} is missing or empty in {data}")
    model, cfg = read_model(ckpt, corpus)
    return corpus, model, cfg


def _meta_value(ckpt: Path, key: str) -> str:
    for line in ckpt.with_suffix(".meta").read_text().splitlines():
        if line.startswith(key + "="):
            return line.split("=", 1)[1]
    raise ContractError(f"{key} not recorded next to {ckpt}")


def cmd_eval(args) -> int:
    from .training import GraphStore, evaluate

    corpus, model, _ = _load(args)
    samples = corpus.splits[args.split]
    report, classifier = evaluate(model, samples, GraphStore(corpus))
    out = _prepare_out(Path(args.out or Path(args.checkpoint).parent / f"eval_{args.split}"),
                       args.overwrite)
    (out / "scores.txt").write_text(report.to_text())
    (out / "per_sample.tsv").write_text(report.per_sample_tsv())
    (out / "generations.txt").write_text(
        "".join(f"{rec['id']}\t{rec['generated']}\n" for rec in report.per_sample)
    )
    print(report.to_text(), end="")
    print("classifier P={:.4f} R={:.4f} F1={:.4f}".format(*classifier))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .model import make_batch
    from .synthdata import STATES
    from .training import GraphStore

    corpus, model, _ = _load(args)
    samples = corpus.splits[args.split]
    matches = [s for s in samples if s.id == args.id] if args.id is not None else samples[:1]
    if not matches:
        raise ContractError(f"no sample with id {args.id} in split {args.split!r}")
    sample = matches[0]
    graphs = GraphStore(corpus)
    states, reports = model.predict(make_batch([sample], graphs.adjacency([sample]), model.vocab))
    print(f"id\t{sample.id}")
    print(f"history\t{' '.join(sample.history)}")
    print(f"generated\t{' '.join(reports[0])}")
    print(f"reference\t{' '.join(sample.report)}")
    print("states\t" + " ".join(
        f"{n}={STATES[s]}" for n, s in zip(corpus.schema.diseases, states[0])))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scopes = gradcheck.SCOPES if args.scope == "all" else (args.scope,)
    failed = 0
    print("scope\tgroup\tcoords\trel_error\tstatus")
    for scope in scopes:
        for r in gradcheck.run_scope(scope, seed=args.seed or 0):
            ok = r.passed(args.threshold)
            failed += not ok
            print(f"{r.scope}\t{r.name}\t{r.coords}\t{r.rel_error:.3e}\t{'ok' if ok else 'FAIL'}")
    print(f"{failed} group(s) above threshold {args.threshold:g}")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    from .training import ABLATION_METRICS, ablation_tsv, run_ablation

    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace("run", seeds=tuple(range(args.seed, args.seed + len(cfg.run.seeds))))
    if not cfg.run.arms:
        raise ContractError("ablation needs at least one arm")
    corpus = read_corpus(cfg.run.data)
    out = _prepare_out(Path(cfg.run.out), args.overwrite)
    (out / "run.cfg").write_text(cfg.to_text())
    rows = run_ablation(cfg, corpus, out, on_log=print)
    table = ablation_tsv(rows)
    (out / "ablation.tsv").write_text(table)
    print(table, end="")
    if args.plot:
        from .plotting import plot_ablation

        print(f"plot {plot_ablation(rows, ABLATION_METRICS, out / 'ablation.png')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eir", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, *, data=True, out=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--overwrite", action="store_true")
        if data:
            p.add_argument("--data", help="dataset directory (overrides run.data)")
        if out:
            p.add_argument("--out", help="output directory (overrides run.out)")
        return p

    common(sub.add_parser("gen-data", help="write a synthetic dataset")).set_defaults(fn=cmd_gen_data)

    p = common(sub.add_parser("train", help="train one arm"))
    p.add_argument("--plot", action="store_true", help="also render curves.png")
    p.set_defaults(fn=cmd_train)

    for verb, fn, text in (("eval", cmd_eval, "score a checkpoint on a split"),
                           ("generate", cmd_generate, "generate one report")):
        p = common(sub.add_parser(verb, help=text), out=(verb == "eval"))
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", default="test", choices=SPLITS)
        if verb == "generate":
            p.add_argument("--id", type=int, default=None, help="sample id (default: first)")
        p.set_defaults(fn=fn)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", default="all", choices=("all",) + gradcheck.SCOPES)
    p.add_argument("--threshold", type=float, default=gradcheck.THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = common(sub.add_parser("ablate", help="train and compare ablation arms"))
    p.add_argument("--plot", action="store_true", help="also render ablation.png")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ContractError, ShapeError, FileExistsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
