"""Command-line entry point wiring data, model, training and evaluation.

Commands:
  prepare    parse, filter and split a log; write a validated dataset bundle
  train      fit a model and write a checkpoint plus the loss history
  evaluate   RMSE/AUC report for a checkpoint under the temporal protocol
  sweep      RMSE across a minimum-sequence-length grid
  explain    per-step attention-score export for listed (user, item) pairs

Every run writes its fully-resolved configuration next to its outputs;
re-running a command with ``--config`` pointing at that file reproduces the
outputs bitwise. No command mutates its input files.
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

from . import checkpoint as ckpt
from . import data as dt
from . import evaluation as ev
from .evaluation import AucProtocol
from .model import ModelConfig, ModelParameters, Recommender  # noqa: F401
from .training import TrainConfig, train

CLI_BACKBONES = ("rnn", "lstm", "tagm", "iarn-plain", "iarn")
DEFAULT_GRID = "3,10,20,30,50,100"


class CliError(RuntimeError):
    pass


def _add_data_flags(p):
    p.add_argument("--interactions", required=True, help="user,item,rating,timestamp CSV")
    p.add_argument("--features", default=None, help="item_id,feature_id CSV")
    p.add_argument("--hierarchy", default=None, help="feature_id,parent_feature_id CSV")
    p.add_argument("--min-ratings", type=int, default=3,
                   help="keep entities with more than this many ratings")
    p.add_argument("--cutoff", type=int, default=None,
                   help="epoch-second split point; earlier records train, the rest test")


def _add_model_flags(p):
    p.add_argument("--backbone", choices=CLI_BACKBONES, default="iarn")
    p.add_argument("--encoder", choices=("none", "flat", "hier"), default="none")
    p.add_argument("--embed-dim", type=int, default=25)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--att-dim", type=int, default=64)
    p.add_argument("--max-seq-len", type=int, default=0,
                   help="optional cap on history length (0 = unlimited)")
    p.add_argument("--prefix-mode", action="store_true",
                   help="train on strictly-earlier history per instance")


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--clip", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)


def _add_eval_flags(p):
    p.add_argument("--pos-threshold", type=float, default=4.0)
    p.add_argument("--n-negatives", type=int, default=100)
    p.add_argument("--auc-seed", type=int, default=0)
    p.add_argument("--skip-auc", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="iarn",
        description="attention-gated recurrent recommender toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="JSON file of resolved options to use as defaults")
        p.add_argument("--out", default="iarn_out", help="output directory")
        subparsers[name] = p
        return p

    p = command("prepare", "validate and bundle a dataset")
    _add_data_flags(p)

    p = command("train", "fit a model and write a checkpoint")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("evaluate", "score a checkpoint on the test split")
    _add_data_flags(p)
    _add_eval_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--backbone", choices=CLI_BACKBONES, default=None,
                   help="assert the checkpoint was trained with this backbone")

    p = command("sweep", "evaluate across a minimum-sequence-length grid")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--min-len-grid", default=DEFAULT_GRID,
                   help="comma-separated ascending lengths")

    p = command("explain", "export attention traces for listed pairs")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True, help="user_id,item_id CSV")

    return parser, subparsers


def _internal_backbone(name):
    return name.replace("-", "_") if name else name


def _resolved_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "config"}
    cfg["config"] = None
    return cfg


def _write_outputs(out_dir, args):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(_resolved_config(args), sort_keys=True, indent=2)
    (out / "resolved_config.json").write_text(blob + "\n", encoding="utf-8")
    return out


def _load_dataset(args, need_taxonomy):
    try:
        with open(args.interactions, encoding="utf-8") as fh:
            log = dt.parse_interactions(fh)
    except OSError as exc:
        raise CliError("cannot read interactions file: %s" % exc)
    log = dt.filter_min_ratings(log, args.min_ratings)
    if not log.records:
        raise CliError("no interactions survive the min-ratings filter")
    if args.cutoff is None:
        train_log = log
        test_log = dt.InteractionLog(user_index=log.user_index,
                                     item_index=log.item_index)
    else:
        train_log, test_log = dt.temporal_split(log, args.cutoff)
    if not train_log.records:
        raise CliError("training split is empty; lower the cutoff")
    user_seqs, item_seqs = dt.build_sequences(train_log)
    taxonomy = None
    if args.features:
        try:
            with open(args.features, encoding="utf-8") as ffh:
                if args.hierarchy:
                    with open(args.hierarchy, encoding="utf-8") as hfh:
                        taxonomy = dt.load_taxonomy(ffh, hfh, log.item_index)
                else:
                    taxonomy = dt.load_taxonomy(ffh, None, log.item_index)
        except OSError as exc:
            raise CliError("cannot read feature files: %s" % exc)
    elif need_taxonomy:
        raise CliError("--encoder %s requires --features" % args.encoder)
    return log, train_log, test_log, user_seqs, item_seqs, taxonomy


def cmd_prepare(args):
    _log, train_log, test_log, user_seqs, item_seqs, taxonomy = \
        _load_dataset(args, need_taxonomy=False)
    out = _write_outputs(args.out, args)
    bundle = {"train": train_log, "test": test_log, "user_seqs": user_seqs,
              "item_seqs": item_seqs, "taxonomy": taxonomy}
    with open(out / "dataset.bundle", "wb") as fh:
        pickle.dump(bundle, fh, protocol=4)
    print("users=%d items=%d train=%d test=%d features=%s"
          % (train_log.n_users, train_log.n_items, len(train_log.records),
             len(test_log.records),
             taxonomy.n_features if taxonomy else 0))
    return 0


def cmd_train(args):
    need_tax = args.encoder != "none"
    _log, train_log, _test, user_seqs, item_seqs, taxonomy = \
        _load_dataset(args, need_taxonomy=need_tax)
    model_config = ModelConfig(
        n_users=train_log.n_users, n_items=train_log.n_items,
        backbone=_internal_backbone(args.backbone), encoder_mode=args.encoder,
        embed_dim=args.embed_dim, hidden_dim=args.hidden_dim,
        att_dim=args.att_dim,
        n_features=taxonomy.n_features if (taxonomy and need_tax) else 0,
        max_seq_len=args.max_seq_len, prefix_mode=args.prefix_mode)
    train_config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        dropout_rate=args.dropout, clip_bound=args.clip, seed=args.seed)
    params, history = train(train_log, user_seqs, item_seqs, taxonomy,
                            model_config, train_config)
    out = _write_outputs(args.out, args)
    ckpt.save_checkpoint(params, out / "checkpoint.bin")
    with open(out / "loss_history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_mse\n")
        for epoch, value in enumerate(history):
            fh.write("%d,%r\n" % (epoch, value))
    if history:
        print("trained %d epochs; final train mse %.6f" % (len(history), history[-1]))
    else:
        print("trained 0 epochs")
    return 0


def _load_recommender(args, need_taxonomy_from_ckpt=True):
    params = ckpt.load_checkpoint(
        args.checkpoint,
        expect_backbone=_internal_backbone(getattr(args, "backbone", None)))
    _log, train_log, test_log, user_seqs, item_seqs, taxonomy = \
        _load_dataset(args, need_taxonomy=False)
    cfg = params.config
    if cfg.n_users != train_log.n_users or cfg.n_items != train_log.n_items:
        raise CliError(
            "checkpoint was trained on %d users / %d items but the data has "
            "%d / %d; use the same files and filters"
            % (cfg.n_users, cfg.n_items, train_log.n_users, train_log.n_items))
    if cfg.encoder_mode != "none" and taxonomy is None:
        raise CliError("checkpoint uses the feature encoder; pass --features")
    rec = Recommender(params, user_seqs, item_seqs, taxonomy)
    return rec, train_log, test_log, user_seqs, item_seqs


def cmd_evaluate(args):
    rec, _train, test_log, user_seqs, item_seqs = _load_recommender(args)
    if not test_log.records:
        raise CliError("test split is empty; set --cutoff inside the data range")
    report = ev.evaluate_rmse(rec, test_log)
    auc_note = None
    if not args.skip_auc:
        protocol = AucProtocol(pos_threshold=args.pos_threshold,
                               n_negatives=args.n_negatives, seed=args.auc_seed)
        try:
            report.auc = ev.auc(rec, test_log, protocol)
        except ev.ProtocolError as exc:
            auc_note = str(exc)
    out = _write_outputs(args.out, args)
    blob = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    (out / "eval_report.json").write_text(blob + "\n", encoding="utf-8")
    lines = ["pairs evaluated: %d" % report.n_pairs,
             "cold-start skipped: %d" % report.n_skipped_cold_start,
             "rmse: %s" % (repr(report.rmse) if report.rmse is not None else "n/a")]
    if report.auc is not None:
        lines.append("auc: %r" % report.auc)
    elif auc_note:
        lines.append("auc: n/a (%s)" % auc_note)
    text = "\n".join(lines) + "\n"
    (out / "eval_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_sweep(args):
    rec, _train, test_log, user_seqs, item_seqs = _load_recommender(args)
    if not test_log.records:
        raise CliError("test split is empty; set --cutoff inside the data range")
    try:
        grid = [int(x) for x in args.min_len_grid.split(",") if x.strip()]
    except ValueError:
        raise CliError("--min-len-grid must be comma-separated integers")
    report = ev.sweep_min_length(lambda l_min: rec, user_seqs, item_seqs,
                                 test_log, grid)
    out = _write_outputs(args.out, args)
    blob = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    (out / "sweep_report.json").write_text(blob + "\n", encoding="utf-8")
    lines = []
    for l_min in grid:
        entry = report.sweep[l_min]
        if entry is None:
            lines.append("min_len=%d: no test pairs" % l_min)
        else:
            lines.append("min_len=%d: rmse=%r over %d pairs"
                         % (l_min, entry["rmse"], entry["n_pairs"]))
    text = "\n".join(lines) + "\n"
    (out / "sweep_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_explain(args):
    rec, train_log, _test, _useqs, _iseqs = _load_recommender(args)
    pairs = []
    try:
        with open(args.pairs, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                fields = [f.strip() for f in raw.strip().split(",")]
                if len(fields) != 2:
                    raise CliError("pairs line %d: expected user_id,item_id" % lineno)
                user_tok, item_tok = fields
                if user_tok not in train_log.user_index:
                    raise CliError("pairs line %d: unknown user %r" % (lineno, user_tok))
                if item_tok not in train_log.item_index:
                    raise CliError("pairs line %d: unknown item %r" % (lineno, item_tok))
                pairs.append((train_log.user_index[user_tok],
                              train_log.item_index[item_tok]))
    except OSError as exc:
        raise CliError("cannot read pairs file: %s" % exc)
    out = _write_outputs(args.out, args)
    user_names = train_log.user_names()
    item_names = train_log.item_names()
    with open(out / "attention.ndjson", "w", encoding="utf-8") as nd, \
            open(out / "attention.csv", "w", encoding="utf-8", newline="") as cs:
        n = ev.export_attention(rec, pairs, user_names, item_names, nd, cs)
    print("wrote %d attention records for %d pairs" % (n, len(pairs)))
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "explain": cmd_explain,
}


def run(argv):
    """Parse ``argv`` (without the program name) and execute one command."""
    parser, subparsers = build_parser()
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        try:
            with open(cfg_path, encoding="utf-8") as fh:
                stored = json.load(fh)
        except (OSError, ValueError) as exc:
            print("error: cannot load config %s: %s" % (cfg_path, exc),
                  file=sys.stderr)
            return 1
        command = stored.get("command")
        if command in subparsers:
            defaults = {k: v for k, v in stored.items()
                        if k not in ("command", "config")}
            sub = subparsers[command]
            sub.set_defaults(**defaults)
            for action in sub._actions:
                if action.dest in defaults:
                    action.required = False
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (CliError, dt.ParseError, dt.ValidationError, ckpt.CheckpointError,
            ev.ProtocolError, ValueError, LookupError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
