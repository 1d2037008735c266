"""Command line front end.

Exit codes: 0 success, 2 validation/configuration error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, parse_config
from .errors import StageError, TrainingDiverged, ValidationError
from .lexicon import load_lexicon
from . import pipeline
from .synth import generate_world


def _load_run_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "ablation", None) is not None:
        cfg.ablation = args.ablation
    if getattr(args, "beam", None) is not None:
        cfg.beam = args.beam
    return cfg


def _add_config_arg(parser) -> None:
    parser.add_argument("--config", default=None, help="key = value run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capalign")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-lexicon", help="validate a lexicon file and print statistics")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", default=None, help="write a normalized copy")

    p = sub.add_parser("train-lm", help="train the sentence autoencoder")
    _add_config_arg(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--word-vectors", default=None,
                   help="optional pretrained word vectors (GloVe text format)")
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("build-graph", help="build the weak image-sentence graph")
    _add_config_arg(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True, help="graph TSV path")

    p = sub.add_parser("train-align", help="train translator / decoder / critic")
    _add_config_arg(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--lm-ckpt", required=True)
    p.add_argument("--graph", default=None, help="reuse a graph TSV instead of rebuilding")
    p.add_argument("--ablation", choices=["align-only", "mle", "joint-l2", "joint-robust", "joint-adv"],
                   default=None)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("caption", help="decode captions for image features")
    _add_config_arg(p)
    p.add_argument("--features", required=True)
    p.add_argument("--ids", default=None, help="sidecar ids file (default: <features>.ids)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--out", required=True, help="captions TSV path")

    p = sub.add_parser("evaluate", help="score captions against references")
    _add_config_arg(p)
    p.add_argument("--candidates", required=True, help="captions TSV")
    p.add_argument("--references", required=True, help="references TSV")
    p.add_argument("--corpus", default=None, help="training corpus for the novelty rate")
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub.add_parser("diagnose-embedding", help="modality mixing diagnostic")
    _add_config_arg(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True, help="diagnostics JSON path")

    p = sub.add_parser("synth-gen", help="generate a synthetic world")
    _add_config_arg(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("run-pipeline", help="run every stage end to end")
    _add_config_arg(p)
    p.add_argument("--out", required=True, help="artifacts directory")
    p.add_argument("--ablation", choices=["align-only", "mle", "joint-l2", "joint-robust", "joint-adv"],
                   default=None)
    p.add_argument("--resume", action="store_true", help="skip stages whose outputs exist")
    return parser


def _cmd_build_lexicon(args) -> int:
    lex = load_lexicon(args.lexicon)
    print(f"surface forms: {len(lex.entries)}")
    print(f"concepts: {lex.concept_count}")
    print(f"hyponym parents: {len(lex.hyponyms)}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for surface in sorted(lex.entries):
                fh.write(f"{surface}\t{lex.entries[surface]}\n")
            for parent in sorted(lex.hyponyms):
                for child in sorted(lex.hyponyms[parent]):
                    fh.write(f"!hypo\t{child}\t{parent}\n")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "build-lexicon":
            return _cmd_build_lexicon(args)

        cfg = _load_run_config(args)
        if args.command == "train-lm":
            pipeline.stage_train_lm(cfg, args.corpus, args.lexicon, args.out,
                                    word_vectors_path=args.word_vectors)
        elif args.command == "build-graph":
            graph, _, _ = pipeline.stage_build_graph(
                cfg, args.corpus, args.lexicon, args.features, args.detections, args.out
            )
            print(f"graph rows: {len(graph)} (dropped {len(graph.dropped)} images)")
        elif args.command == "train-align":
            pipeline.stage_train_align(
                cfg, args.corpus, args.lexicon, args.features, args.detections,
                args.lm_ckpt, args.out, graph_tsv=args.graph,
            )
        elif args.command == "caption":
            captions = pipeline.stage_caption(cfg, args.ckpt, args.features, args.out, ids_path=args.ids)
            print(f"captioned {len(captions)} images")
        elif args.command == "evaluate":
            report = pipeline.stage_evaluate(
                cfg, args.candidates, args.references, args.out, corpus_path=args.corpus
            )
            print(
                f"bleu1={report.bleu1:.4f} bleu2={report.bleu2:.4f} "
                f"bleu3={report.bleu3:.4f} bleu4={report.bleu4:.4f} rougeL={report.rougeL:.4f}"
            )
        elif args.command == "diagnose-embedding":
            score = pipeline.stage_diagnose(
                cfg, args.ckpt, args.corpus, args.lexicon, args.features, args.detections, args.out
            )
            print(f"mixing_score={score:.4f}")
        elif args.command == "synth-gen":
            generate_world(pipeline.world_config(cfg), args.out)
            print(f"world written to {args.out}")
        elif args.command == "run-pipeline":
            artifacts = pipeline.run_pipeline(cfg, args.out, resume=args.resume)
            print(f"pipeline complete: {Path(args.out) / 'run.log'}")
            for name, path in artifacts.items():
                print(f"  {name}: {path}")
        else:  # pragma: no cover
            raise ValidationError(f"unknown command {args.command}")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.__cause__, TrainingDiverged):
            return 3
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
