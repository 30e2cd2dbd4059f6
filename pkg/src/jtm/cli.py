"""Command line entry point: ``jtm <command> [options]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
"""

import argparse
import logging
import sys
from pathlib import Path

from jtm import corpus as corpus_mod
from jtm.config import load_config
from jtm.corpus import SplitSpec, prepare_dataset, read_queries, write_interactions, write_sequences
from jtm.errors import ConfigError, DataError, DivergenceError
from jtm.model import Optimizer, init_params, load_params, save_params, train_epoch
from jtm.plotting import plot_metrics, plot_trajectory
from jtm.retrieval import beam_search, format_result
from jtm.rng import substream
from jtm.synth import SyntheticSpec, generate
from jtm.trainer import eval_checkpoint, run_joint, write_atomic
from jtm.tree import init_by_category, init_random, read_tree, validate, write_tree
from jtm.tree_learning import learn_tree

logger = logging.getLogger("jtm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _add_common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--interactions", help="tab-separated interaction file")
    p.add_argument("--min-interactions", type=int)
    p.add_argument("--split", help="train,validation,test fractions, e.g. 0.8,0.1,0.1")
    p.add_argument("--seed", type=int)
    p.add_argument("--window-len", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="jtm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted synthetic interaction file")
    p.add_argument("--out", required=True)
    p.add_argument("--num-items", type=int, default=1024)
    p.add_argument("--num-users", type=int, default=2000)
    p.add_argument("--num-clusters", type=int, default=16)
    p.add_argument("--behaviors-per-user", type=int, default=20)
    p.add_argument("--noise-rate", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("ingest", help="write normalised per-user sequences with their split")
    _add_common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("tree-init", help="build an initial tree")
    _add_common(p)
    p.add_argument("--strategy", choices=["random", "category"], default="category")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the model for E epochs on a fixed tree")
    _add_common(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--model", help="checkpoint to continue from")
    p.add_argument("--out", required=True)

    p = sub.add_parser("tree-learn", help="one tree-learning pass with a fixed model")
    _add_common(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("joint", help="alternate training and tree learning T times")
    _add_common(p)
    p.add_argument("--tree", help="initial tree (default: category initialisation)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--eval-split", choices=["validation", "test", "none"], default="validation")

    p = sub.add_parser("retrieve", help="beam-search candidates for each query")
    _add_common(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--queries", required=True, help="user_id<TAB>item,item,... lines")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("eval", help="Precision/Recall/F-Measure on held-out users")
    _add_common(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--which", choices=["validation", "test"], default="test")
    p.add_argument("--out", help="directory for metrics.csv and metrics.png")
    return parser


def _config(args):
    cfg = load_config(getattr(args, "config", None))
    overrides = {
        "interactions": getattr(args, "interactions", None),
        "min_interactions": getattr(args, "min_interactions", None),
        "split": getattr(args, "split", None),
        "seed": getattr(args, "seed", None),
        "window_len": getattr(args, "window_len", None),
    }
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return cfg.updated(**overrides)


def _dataset(cfg):
    if not cfg.interactions:
        raise ConfigError("no interaction file given (--interactions or interactions=)")
    interactions = corpus_mod.load_interactions(cfg.interactions)
    split = SplitSpec(*cfg.split, seed=cfg.seed)
    return prepare_dataset(interactions, cfg.min_interactions, split)


def _check_tree(tree, path):
    problem = validate(tree)
    if problem:
        raise DataError(f"{path}: {problem}")
    return tree


def cmd_synth(args):
    spec = SyntheticSpec(args.num_items, args.num_users, args.num_clusters,
                         args.behaviors_per_user, args.noise_rate, args.seed)
    interactions = generate(spec)
    write_interactions(interactions, args.out)
    print(f"wrote {len(interactions)} interactions to {args.out}")


def cmd_ingest(args, cfg):
    ds = _dataset(cfg)
    write_sequences(ds, args.out)
    print(f"users: train={len(ds.train)} validation={len(ds.validation)} test={len(ds.test)}; "
          f"items={len(ds.corpus.items)}")


def cmd_tree_init(args, cfg):
    ds = _dataset(cfg)
    rng = substream(cfg.seed, "tree-init")
    if args.strategy == "random":
        tree = init_random(ds.corpus.items, rng)
    else:
        tree = init_by_category(ds.corpus.categories, rng)
    write_tree(tree, args.out)
    print(f"wrote tree with l_max={tree.l_max} over {len(tree.leaf_of)} items to {args.out}")


def cmd_train(args, cfg):
    ds = _dataset(cfg)
    tree = _check_tree(read_tree(args.tree), args.tree)
    if args.model:
        params = load_params(args.model)
    else:
        params = init_params(tree.l_max, cfg.emb_dim, cfg.hidden_dims, cfg.window_len,
                             rng=substream(cfg.seed, "model-init"), hierarchical=cfg.use_hierarchical)
    if params.l_max != tree.l_max:
        raise DataError(f"model l_max={params.l_max} does not match tree l_max={tree.l_max}")
    samples = ds.training_samples(params.window_len)
    opt_cfg = cfg.optimizer_config()
    optimizer = Optimizer(opt_cfg)
    rng = substream(cfg.seed, "train")
    for epoch in range(cfg.E):
        params, loss = train_epoch(params, samples, tree, opt_cfg, rng, optimizer)
        print(f"epoch {epoch}: loss {loss:.6f}")
    write_atomic(args.out, lambda p: save_params(params, p))


def cmd_tree_learn(args, cfg):
    ds = _dataset(cfg)
    tree = _check_tree(read_tree(args.tree), args.tree)
    params = load_params(args.model)
    samples = ds.training_samples(params.window_len)
    new_tree = learn_tree(params, tree, samples, cfg.gap_d, cfg.sample_cap_S, cfg.stickiness_eps,
                          substream(cfg.seed, "tree-learn"), threads=cfg.threads)
    moved = sum(new_tree.leaf_of[i] != tree.leaf_of[i] for i in tree.leaf_of)
    write_atomic(args.out, lambda p: write_tree(new_tree, p))
    print(f"moved {moved} of {len(tree.leaf_of)} items; wrote {args.out}")


def cmd_joint(args, cfg):
    ds = _dataset(cfg)
    if args.tree:
        tree = _check_tree(read_tree(args.tree), args.tree)
    else:
        tree = init_by_category(ds.corpus.categories, substream(cfg.seed, "tree-init"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tree(tree, out / "initial_tree.txt")
    jcfg = cfg.joint_config()
    cases = ds.eval_cases(args.eval_split) if args.eval_split != "none" else None
    result = run_joint(ds.training_samples(cfg.window_len), tree, jcfg, cases, out)
    write_tree(result.tree, out / "final_tree.txt")
    save_params(result.params, out / "final_model.bin")
    plot_trajectory(result.records, out / "trajectory.png")
    if cases:
        lines = ["iter,precision,recall,f_measure"]
        lines += [f"{r.iteration},{r.precision:.6f},{r.recall:.6f},{r.f_measure:.6f}" for r in result.records]
        (out / "metrics_by_iter.csv").write_text("\n".join(lines) + "\n")
    for r in result.records:
        print(r.csv_line())
    print(f"artifacts in {out}")


def cmd_retrieve(args, cfg):
    tree = _check_tree(read_tree(args.tree), args.tree)
    params = load_params(args.model)
    queries = read_queries(args.queries)
    lines = []
    for user, behaviors in queries:
        unknown = [b for b in behaviors if b not in tree.leaf_of]
        if unknown:
            raise DataError(f"query for user {user} references unknown item {unknown[0]}")
        result = beam_search(params, tree, behaviors, cfg.beam_width, cfg.result_M)
        lines.append(format_result(user, result))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_eval(args, cfg):
    ds = _dataset(cfg)
    tree = _check_tree(read_tree(args.tree), args.tree)
    params = load_params(args.model)
    cases = ds.eval_cases(args.which)
    report = eval_checkpoint(params, tree, cases, cfg.result_M, cfg.beam_width)
    print(report.to_table())
    print(report.to_csv(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(report.to_csv())
        plot_metrics(report, out / "metrics.png", title=f"{args.which} @ M={cfg.result_M}")


COMMANDS = {
    "ingest": cmd_ingest,
    "tree-init": cmd_tree_init,
    "train": cmd_train,
    "tree-learn": cmd_tree_learn,
    "joint": cmd_joint,
    "retrieve": cmd_retrieve,
    "eval": cmd_eval,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            cmd_synth(args)
        else:
            COMMANDS[args.command](args, _config(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
