"""Command-line harness.

Subcommands::

    init-train   train the initial class block and save a checkpoint
    incr-run     full experiment: initial stage plus P incremental phases
    eval         accuracy of a checkpoint on the configured test set
    fuse         fuse any live adapters in a checkpoint and re-save it
    score-dump   write difficulty scores for the configured training set
    count        parameter/MAC counters against the dense-conv twin

All subcommands read an optional ``--config FILE`` (flat ``key = value``
text) with ``--set key=value`` overrides.  Exit codes: 0 success, 1 usage
error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import default_experiment_config, load_config_file, apply_setting
from .errors import ConfigError, DataError, EngineError
from .experiment import config_echo, load_data, run_experiment
from .network import plain_mac_count, plain_param_count, resnet18_config
from .pruning import score_dataset
from .training import TrainLog, evaluate, train_initial, add_initial_prototypes
from .prototypes import PrototypeStore


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="cilearn", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("init-train", "train the initial class block"),
        ("incr-run", "run the full class-incremental experiment"),
        ("eval", "evaluate a checkpoint on the test set"),
        ("fuse", "fuse live adapters in a checkpoint"),
        ("score-dump", "dump difficulty scores for the training set"),
        ("count", "report parameter/MAC counts and reduction ratios"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key = value configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one configuration key")
        p.add_argument("--seed", type=int, default=None, help="experiment seed override")
        p.add_argument("--out", default=None, help="output directory override")
        if name in ("eval", "fuse", "score-dump"):
            p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    return parser


def _effective_config(args):
    cfg = default_experiment_config()
    if args.config is not None:
        cfg = load_config_file(args.config, cfg)
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        apply_setting(cfg, key, value)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def _print_config(cfg):
    for key, value in sorted(config_echo(cfg).items()):
        print(f"# {key} = {value}")


def cmd_incr_run(args) -> int:
    cfg = _effective_config(args)
    _print_config(cfg)
    result = run_experiment(cfg)
    print("phase,classes_seen,top1_acc,avg_inc_acc,retained_samples,params,flops,seconds")
    for pm in result.phases:
        print(pm.csv_row())
    print(f"average incremental accuracy: {result.average_incremental_accuracy:.6f}")
    if cfg.out_dir:
        print(f"outputs written to {cfg.out_dir}")
    return 0


def cmd_init_train(args) -> int:
    cfg = _effective_config(args)
    _print_config(cfg)
    from .data import split_class_incremental
    from .network import build_model

    train_set, test_set = load_data(cfg.data)
    plan = split_class_incremental(train_set.class_count, cfg.phases, cfg.seed,
                                   initial_classes=cfg.initial_classes or None)
    head_of = {c: i for i, c in enumerate(plan.initial_classes)}
    idx = train_set.indices_of_classes(plan.initial_classes)
    heads = np.array([head_of[int(l)] for l in train_set.labels[idx]])
    model = build_model(cfg.model, num_classes=len(plan.initial_classes), seed=cfg.seed)
    model.head_classes = list(plan.initial_classes)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    log = TrainLog()
    outcome = train_initial(model, train_set.images[idx], heads, cfg.train, rng, log)
    store = PrototypeStore(cfg.model.feature_dim)
    add_initial_prototypes(model, train_set.images[idx], heads, store, head_of)
    tidx = test_set.indices_of_classes(plan.initial_classes)
    theads = np.array([head_of[int(l)] for l in test_set.labels[tidx]])
    acc, _, _ = evaluate(model, test_set.images[tidx], theads)
    print(f"initial stage: {len(plan.initial_classes)} classes, {outcome.steps} steps, "
          f"test accuracy {acc:.4f}")
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    store.save(out / "prototypes.bin")
    log.write(out / "train_log.csv")
    print(f"checkpoint written to {out / 'model.ckpt'}")
    return 0


def _load_eval_data(cfg):
    train_set, test_set = load_data(cfg.data)
    return train_set, test_set


def _head_mapping(model):
    classes = model.head_classes or list(range(model.num_classes))
    return {int(c): h for h, c in enumerate(classes)}


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    model = load_checkpoint(args.checkpoint)
    _, test_set = _load_eval_data(cfg)
    head_of = _head_mapping(model)
    idx = [i for i, lab in enumerate(test_set.labels) if int(lab) in head_of]
    if not idx:
        raise DataError("test set contains no samples of the checkpoint's classes")
    heads = np.array([head_of[int(test_set.labels[i])] for i in idx])
    acc, correct, total = evaluate(model, test_set.images[idx], heads)
    print(f"samples: {len(idx)}")
    print(f"top1_acc: {acc:.6f}")
    class_of = {h: c for c, h in head_of.items()}
    for head in range(model.num_classes):
        if total[head]:
            print(f"class {class_of[head]}: {correct[head]}/{total[head]}")
    return 0


def cmd_fuse(args) -> int:
    model = load_checkpoint(args.checkpoint)
    before = model.param_count()
    if model.has_adapters:
        model.fuse_adapters()
        save_checkpoint(model, args.checkpoint)
        print(f"fused adapters: params {before} -> {model.param_count()}")
    else:
        print("no live adapters; checkpoint unchanged")
    print(f"params: {model.param_count()}")
    print(f"flops: {model.mac_count()}")
    return 0


def cmd_score_dump(args) -> int:
    cfg = _effective_config(args)
    model = load_checkpoint(args.checkpoint)
    train_set, _ = _load_eval_data(cfg)
    head_of = _head_mapping(model)
    idx = [i for i, lab in enumerate(train_set.labels) if int(lab) in head_of]
    if not idx:
        raise DataError("training set contains no samples of the checkpoint's classes")
    heads = np.array([head_of[int(train_set.labels[i])] for i in idx])
    scored = score_dataset(model, train_set.images[idx], heads, sample_indices=idx)
    class_of = {h: c for c, h in head_of.items()}
    from dataclasses import replace as _replace

    records = [_replace(r, class_id=class_of[r.class_id]) for r in scored]
    out_dir = cfg.out_dir
    lines = ["sample_index,class_id,score,epoch"]
    lines += [f"{r.sample_index},{r.class_id},{r.score:.9f},{r.epoch_measured}" for r in records]
    text = "\n".join(lines) + "\n"
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(out_dir) / "scores.csv"
        path.write_text(text)
        print(f"wrote {len(records)} scores to {path}")
    else:
        print(text, end="")
    return 0


def cmd_count(args) -> int:
    cfg = _effective_config(args)
    from .network import build_model

    entries = [("configured", cfg.model, cfg.data.classes),
               ("resnet18-shaped", resnet18_config(), 100)]
    for name, model_cfg, classes in entries:
        model = build_model(model_cfg, num_classes=classes, seed=0)
        params, macs = model.param_count(), model.mac_count()
        p_plain = plain_param_count(model_cfg, classes)
        m_plain = plain_mac_count(model_cfg, classes)
        print(f"[{name}] params: {params} vs plain {p_plain} (ratio {params / p_plain:.4f})")
        print(f"[{name}] flops: {macs} vs plain {m_plain} (ratio {macs / m_plain:.4f})")
    return 0


_COMMANDS = {
    "incr-run": cmd_incr_run,
    "init-train": cmd_init_train,
    "eval": cmd_eval,
    "fuse": cmd_fuse,
    "score-dump": cmd_score_dump,
    "count": cmd_count,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
