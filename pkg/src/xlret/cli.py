"""Command-line entry point: gen-synthetic, train, eval, diag, export-proj.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from xlret.config import (
    LossConfig,
    ProjectionConfig,
    TrainConfig,
    parse_float_list,
    parse_int_list,
)
from xlret.errors import DataError

log = logging.getLogger("xlret")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

# loss flags are None-defaulted so explicit use can be detected
M3L_DEFAULTS = {"rho": 4.0, "alpha1": 0.5, "alpha2": 1.0, "denom_eps": 1e-8}
PATR_DEFAULTS = {"eta": 1100.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_text_inputs(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--text-emb", action="append", required=required, metavar="PATH",
                   help="text embedding file (.xemb); repeat for several files")
    p.add_argument("--text-manifest", action="append", required=required, metavar="PATH",
                   help="JSON-lines manifest for the matching --text-emb")


def _add_image_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--img-emb", required=True, metavar="PATH", help="image embedding file (.xemb)")
    p.add_argument("--img-manifest", required=True, metavar="PATH", help="image manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xlret", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synthetic", help="write a synthetic multi-language dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n-items", type=int, default=6000, help="items in total (default: 6000)")
    g.add_argument("--n-test", type=int, default=1000,
                   help="trailing items written as a held-out test split, 0 for none (default: 1000)")
    g.add_argument("--languages", default="en,xx", help="comma-separated codes (default: en,xx)")
    g.add_argument("--latent-dim", type=int, default=32, help="(default: 32)")
    g.add_argument("--text-dim", type=int, default=512, help="(default: 512)")
    g.add_argument("--image-dim", type=int, default=256, help="(default: 256)")
    g.add_argument("--gamma", type=float, default=0.05, help="per-language misalignment (default: 0.05)")
    g.add_argument("--sigma", type=float, default=0.1, help="relative noise level (default: 0.1)")
    g.add_argument("--image-scale", type=float, default=None,
                   help="image vector scale (default: sqrt(2/image_dim), unit expected norm)")
    g.add_argument("--seed", type=int, default=0, help="(default: 0)")

    t = sub.add_parser("train", help="train a projection head on one language")
    _add_text_inputs(t)
    _add_image_inputs(t)
    t.add_argument("--train-lang", default="en",
                   help="language used for training; 'all' disables the filter (default: en)")
    t.add_argument("--loss", choices=("m3l", "patr"), default="m3l", help="(default: m3l)")
    t.add_argument("--rho", type=float, help="M3L distance exponent (default: 4)")
    t.add_argument("--alpha1", type=float, help="M3L negative-image weight (default: 0.5)")
    t.add_argument("--alpha2", type=float, help="M3L negative-text weight (default: 1)")
    t.add_argument("--denom-eps", type=float, help="M3L denominator epsilon (default: 1e-8)")
    t.add_argument("--eta", type=float, help="PATR margin (default: 1100)")
    t.add_argument("--epochs", type=int, default=50, help="(default: 50)")
    t.add_argument("--batch-size", type=int, default=128, help="(default: 128)")
    t.add_argument("--lr", type=float, default=0.001, help="(default: 0.001)")
    t.add_argument("--beta1", type=float, default=0.99, help="(default: 0.99)")
    t.add_argument("--beta2", type=float, default=0.999, help="(default: 0.999)")
    t.add_argument("--adam-eps", type=float, default=1e-8, help="(default: 1e-8)")
    t.add_argument("--seed", type=int, default=0, help="(default: 0)")
    t.add_argument("--dims", default="1024,2048,2048", help="block widths (default: 1024,2048,2048)")
    t.add_argument("--dropout", default="0.2,0.1,0.0", help="per-block dropout (default: 0.2,0.1,0.0)")
    t.add_argument("--no-final-relu", action="store_true",
                   help="drop the ReLU of the last block (default: keep it)")
    t.add_argument("--normalize-inputs", action="store_true",
                   help="l2-normalise sentence embeddings before the head (default: off)")
    t.add_argument("--log-every", type=int, default=1, help="log every N batches (default: 1)")
    t.add_argument("--checkpoint", required=True, help="output checkpoint path (.xckp)")
    t.add_argument("--checkpoint-every", type=int, default=0,
                   help="also save <checkpoint>.epochN every N epochs, 0 for never (default: 0)")
    t.add_argument("--out", required=True, help="directory for loss log and figures")
    t.add_argument("--no-figures", action="store_true", help="skip PNG figures (default: write them)")

    e = sub.add_parser("eval", help="per-language Recall@K against an image gallery")
    e.add_argument("--checkpoint", required=True, help="trained checkpoint (.xckp)")
    _add_text_inputs(e)
    _add_image_inputs(e)
    e.add_argument("--k", default="1,5,10", help="comma-separated K values (default: 1,5,10)")
    e.add_argument("--distance", choices=("sqeuclidean", "cosine"), default="sqeuclidean",
                   help="ranking distance (default: sqeuclidean)")
    e.add_argument("--out", required=True, help="directory for reports and figures")
    e.add_argument("--no-figures", action="store_true", help="skip PNG figures (default: write them)")

    d = sub.add_parser("diag", help="cross-lingual alignment ratios")
    _add_text_inputs(d)
    d.add_argument("--checkpoint", help="measure in the projected space (default: raw inputs)")
    d.add_argument("--out", required=True, help="directory for reports and figures")
    d.add_argument("--no-figures", action="store_true", help="skip PNG figures (default: write them)")

    x = sub.add_parser("export-proj", help="write projected text coordinates as CSV")
    x.add_argument("--checkpoint", required=True, help="trained checkpoint (.xckp)")
    _add_text_inputs(x)
    x.add_argument("--out", required=True, help="directory; writes projections.csv")
    return parser


def _loss_config(args: argparse.Namespace) -> LossConfig:
    given_m3l = [k for k in M3L_DEFAULTS if getattr(args, k) is not None]
    given_patr = [k for k in PATR_DEFAULTS if getattr(args, k) is not None]
    if args.loss == "m3l" and given_patr:
        raise UsageError("--eta: valid only with --loss patr")
    if args.loss == "patr" and given_m3l:
        flags = ", ".join("--" + k.replace("_", "-") for k in given_m3l)
        raise UsageError(f"{flags}: valid only with --loss m3l")
    values = {k: (getattr(args, k) if getattr(args, k) is not None else v)
              for k, v in {**M3L_DEFAULTS, **PATR_DEFAULTS}.items()}
    return LossConfig(kind=args.loss, **values)


def _text_pairs(args: argparse.Namespace) -> list[tuple[str, str]]:
    embs, mans = args.text_emb or [], args.text_manifest or []
    if len(embs) != len(mans):
        raise UsageError("--text-emb and --text-manifest must be given the same number of times")
    return list(zip(embs, mans))


def _load_texts(pairs):
    from xlret.data_io import read_embedding_file, read_manifest

    return [(read_embedding_file(e), read_manifest(m)) for e, m in pairs]


def _cmd_gen(args) -> int:
    from xlret.synthgen import SynthConfig, generate, write_synth

    langs = [l.strip() for l in args.languages.split(",") if l.strip()]
    cfg = SynthConfig(args.n_items, args.latent_dim, args.text_dim, args.image_dim, langs,
                      args.gamma, args.sigma, args.seed, args.image_scale)
    if not 0 <= args.n_test < args.n_items:
        raise UsageError("--n-test must lie in [0, n_items)")
    data = generate(cfg)
    if args.n_test:
        train_part, test_part = data.split(args.n_items - args.n_test)
        paths = write_synth(train_part, args.out, "train_")
        paths.update({f"test_{k}": v for k, v in write_synth(test_part, args.out, "test_").items()})
    else:
        paths = write_synth(data, args.out)
    print(f"wrote {cfg.n_items} items x {len(langs)} languages to {args.out}")
    for key in sorted(paths):
        print(f"  {key:<20} {paths[key]}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from xlret.data_io import (
        concat_sources,
        join_pairs,
        read_embedding_file,
        read_manifest,
        save_checkpoint,
    )
    from xlret.trainer import train

    loss_cfg = _loss_config(args)
    dims, dropout = parse_int_list(args.dims), parse_float_list(args.dropout)
    train_cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.beta1, args.beta2,
                            args.adam_eps, args.seed, loss_cfg, args.normalize_inputs, args.log_every)
    if args.checkpoint_every < 0:
        raise UsageError("--checkpoint-every must be >= 0")
    text_pairs = _text_pairs(args)
    relu = [True] * len(dims)
    if args.no_final_relu and relu:
        relu[-1] = False
    # validate block structure before any file is read; input_dim is patched later
    ProjectionConfig(1, dims, dropout, relu_flags=relu)

    images = read_embedding_file(args.img_emb)
    image_manifest = read_manifest(args.img_manifest)
    merged, records = concat_sources(_load_texts(text_pairs))
    lang_filter = None if args.train_lang == "all" else args.train_lang
    dataset = join_pairs(merged, records, images, image_manifest, lang_filter)
    if not len(dataset):
        raise DataError(f"no text records for language {args.train_lang!r}")
    proj_cfg = ProjectionConfig(merged.dim, dims, dropout, relu_flags=relu)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def every(epoch: int, ckpt) -> None:
        if args.checkpoint_every and epoch % args.checkpoint_every == 0 and epoch < args.epochs:
            save_checkpoint(ckpt, f"{args.checkpoint}.epoch{epoch}")

    ckpt, loss_log = train(dataset, proj_cfg, train_cfg, on_epoch_end=every)
    save_checkpoint(ckpt, args.checkpoint)
    loss_log.write_csv(out / "loss_log.csv")
    if not args.no_figures:
        from xlret.plotting import plot_loss_curve

        plot_loss_curve(loss_log, out / "loss_curve.png", title=f"{loss_cfg.kind.upper()} loss")
    means = loss_log.epoch_means()
    print(f"trained on {len(dataset)} '{args.train_lang}' pairs, {args.epochs} epochs, loss {loss_cfg.kind}")
    if means:
        first, last = means[min(means)], means[max(means)]
        print(f"  mean loss: first epoch {first:.6g}, last epoch {last:.6g}")
    print(f"  checkpoint: {args.checkpoint}")
    print(f"  loss log:   {out / 'loss_log.csv'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from xlret.data_io import load_checkpoint, read_embedding_file, read_manifest
    from xlret.evaluation import evaluate_zero_shot

    k_list = parse_int_list(args.k)
    if not k_list or any(k < 1 for k in k_list):
        raise UsageError("--k needs positive integers")
    text_pairs = _text_pairs(args)
    ckpt = load_checkpoint(args.checkpoint)
    images = read_embedding_file(args.img_emb)
    image_manifest = read_manifest(args.img_manifest)
    report = evaluate_zero_shot(ckpt, _load_texts(text_pairs), images, image_manifest,
                                k_list, args.distance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "recall_report.json").write_text(report.to_json())
    report.write_csv(out / "recall_report.csv")
    table = report.format_table()
    (out / "recall_table.txt").write_text(table)
    if not args.no_figures:
        from xlret.plotting import plot_recall

        plot_recall(report, out / "recall_at_k.png")
    print(table, end="")
    return EXIT_OK


def _cmd_diag(args) -> int:
    from xlret.data_io import load_checkpoint
    from xlret.evaluation import alignment_report

    text_pairs = _text_pairs(args)
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    report = alignment_report(_load_texts(text_pairs), ckpt)
    if not report.entries:
        raise DataError("no language pair shares at least 2 image ids")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "alignment_report.json").write_text(report.to_json())
    report.write_csv(out / "alignment_report.csv")
    if not args.no_figures:
        from xlret.plotting import plot_alignment

        plot_alignment(report, out / "alignment.png")
    print(report.format_table(), end="")
    return EXIT_OK


def _cmd_export(args) -> int:
    from xlret.data_io import load_checkpoint
    from xlret.evaluation import export_projection_csv

    text_pairs = _text_pairs(args)
    ckpt = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = export_projection_csv(ckpt, _load_texts(text_pairs), out / "projections.csv")
    print(f"wrote {n} projected rows to {out / 'projections.csv'}")
    return EXIT_OK


COMMANDS = {
    "gen-synthetic": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "diag": _cmd_diag,
    "export-proj": _cmd_export,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"xlret {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"xlret {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # config validation failures are usage errors
        print(f"xlret {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
