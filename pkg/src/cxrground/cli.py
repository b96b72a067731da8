"""Command-line entry point.

Subcommands: synth, ground, pairs, run, qc, eval, overlay, serve.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, data errors exit 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cxrground", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic study corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--studies", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--conf-noise", type=float, default=0.0)

    for name, help_text in (
        ("ground", "grounding only: records + lesion masks"),
        ("pairs", "pair generation from existing grounding records"),
        ("run", "full pipeline: QC, grounding, pairs, stats"),
        ("qc", "quality-control report only"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config", default=None)
        p.add_argument("--parallelism", type=int, default=1)
        p.add_argument("--force", action="store_true", help="recompute existing records")

    p = sub.add_parser("eval", help="score a predictions file against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("overlay", help="render a mask overlay PNG")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="run the expert-review service")
    p.add_argument("--dataset", required=True)
    p.add_argument("--experts", required=True, help="comma-separated expert ids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static", default=None, help="directory with the web client")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"cxrground: data error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "synth":
        from .synth import build_corpus

        manifest = build_corpus(
            args.out,
            n_studies=args.studies,
            seed=args.seed,
            jitter=args.jitter,
            conf_noise=args.conf_noise,
            size=args.size,
        )
        print(f"wrote {args.studies} studies; manifest: {manifest}")
        return 0

    if args.command in ("ground", "pairs", "run", "qc"):
        from .pipeline import regen_pairs, run_pipeline, run_qc_only

        config = load_config(args.config)
        if args.command == "qc":
            summary = run_qc_only(args.manifest, config, args.out)
        elif args.command == "pairs":
            summary = regen_pairs(args.out, config)
        else:
            summary = run_pipeline(
                args.manifest, config, args.out,
                parallelism=args.parallelism,
                do_pairs=args.command == "run",
                resume=not args.force,
            )
        print(json.dumps(summary, indent=1, sort_keys=True))
        return 0

    if args.command == "eval":
        from .evaluate import evaluate_dataset, render_report_table
        from .storage import atomic_write_json

        report = evaluate_dataset(args.dataset, args.predictions)
        print(render_report_table(report))
        if args.out:
            atomic_write_json(args.out, report)
        return 0

    if args.command == "overlay":
        from .pipeline import render_overlay
        from .storage import load_image_png, load_mask_png

        render_overlay(load_image_png(args.image), load_mask_png(args.mask), args.out)
        print(f"wrote {args.out}")
        return 0

    if args.command == "serve":
        import uvicorn

        from .review import create_app

        experts = [e.strip() for e in args.experts.split(",") if e.strip()]
        app = create_app(
            args.dataset, experts, seed=args.seed, static_dir=args.static
        )
        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
