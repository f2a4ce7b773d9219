"""Command-line front end: one subcommand per pipeline stage.

generate-data -> train -> index -> query/evaluate/serve, each a thin wrapper
over the corresponding module. Exit code 0 on success, 1 with a one-line
diagnostic on any runtime failure, 2 on bad flags (argparse's convention).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import evaluation as ev
from . import retrieval as rt
from . import service as sv
from . import synthdata as sd
from . import training as tr


def _cmd_generate_data(args) -> int:
    manifest = sd.generate_corpus(
        args.out,
        n_patients=args.patients,
        images_per_patient=tuple(args.images_per_patient),
        seed=args.seed,
    )
    print(f"wrote {len(manifest.records)} images for {args.patients} patients to {args.out}")
    return 0


def _cmd_train(args) -> int:
    overrides = {
        name: value
        for name, value in (
            ("epochs", args.epochs),
            ("batch_size", args.batch_size),
            ("learning_rate", args.learning_rate),
            ("temperature", args.temperature),
            ("seed", args.seed),
        )
        if value is not None
    }
    if args.no_augmentation:
        overrides["augmentation"] = False
    config = tr.TrainConfig.desk(**overrides)
    report, _ = tr.train(config, sd.Corpus(args.data), out_dir=args.out)
    print(
        f"trained {config.epochs} epochs in {report.wall_seconds:.1f}s, "
        f"best val loss {min(report.val_losses):.4f} "
        f"(epoch {report.best_epoch}), checkpoint {report.checkpoint_path}"
    )
    return 0


def _cmd_index(args) -> int:
    index = rt.build_index(args.checkpoint, sd.Corpus(args.data), args.split, base=args.out)
    print(f"indexed {index.size} images from split {args.split!r} to {args.out}.bin")
    return 0


def _cmd_query(args) -> int:
    model, fingerprint = rt.load_model(args.checkpoint)
    index = rt.EmbeddingIndex.load(args.index)
    result = rt.query(args.text, args.k, index, model, fingerprint=fingerprint)
    for rank, (rid, score) in enumerate(result.items, start=1):
        record = index.records[rid]
        print(f"{rank} {rid} {score:.6f} {record.stage} {record.region}")
    return 0


def _cmd_evaluate(args) -> int:
    corpus = sd.Corpus(args.data)
    bundle = ev.build_bundle(corpus, args.checkpoint, args.noaug_checkpoint)
    if args.suite == "default":
        suite = ev.generate_query_suite(
            corpus.manifest.split("test"), corpus.lexicon,
            per_tier=args.per_tier, seed=args.seed,
        )
    else:
        # a suite file carries no source images, so the image-only ablation
        # has nothing to embed and is skipped
        suite = ev.load_suite(args.suite, corpus.lexicon)
        bundle.image_store = None
        bundle.probe_model = None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = ev.run_evaluation(
        bundle, suite, k=args.k, kappa_images=args.kappa_images,
        seed=args.seed, out_dir=out,
    )
    print("\n".join(ev.report_lines(report)))
    print(f"wrote reports to {out}")
    return 0


def _cmd_serve(args) -> int:
    config = sv.ServiceConfig(
        checkpoint=args.checkpoint,
        index_base=args.index,
        data_dir=args.data,
        host=args.host,
        port=args.port,
        max_k=args.max_k,
        static_dir=args.static,
    )
    sv.serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="periosearch",
        description="Language-image retrieval over synthetic periodontal radiographs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render a labeled synthetic corpus")
    p.add_argument("--patients", type=int, default=60)
    p.add_argument("--images-per-patient", type=int, nargs=2, default=(10, 16),
                   metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate_data)

    p = sub.add_parser("train", help="fit the dual encoder on a corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-augmentation", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("index", help="embed a split into a searchable index")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("query", help="rank indexed images against one text query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("evaluate", help="score the model and its ablations")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--noaug-checkpoint")
    p.add_argument("--suite", default="default",
                   help='"default" generates one from the test split; else a suite file')
    p.add_argument("--per-tier", type=int, default=60)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--kappa-images", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP search service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-k", type=int, default=sv.MAX_K)
    p.add_argument("--static")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
