"""End-to-end orchestration: synth-gen -> train-lm -> build-graph ->
train-align -> caption -> evaluate, with per-stage artifacts.

Each stage is a pure function of (inputs, config, seed); artifacts land in
the run directory and a stage is skipped on resume when its outputs are
already present.  The run log echoes the full configuration and a content
hash of every input file, so a run can be audited and reproduced.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import plots
from .align import (
    AlignConfig,
    AssignmentGraph,
    build_graph,
    load_image_records,
    train_align,
)
from .config import RunConfig
from .corpus import build_corpus, build_pair_index, tokenize
from .errors import StageError, ValidationError
from .evaluate import EvalReport, mixing_score, score_captions
from .inference import caption_feature
from .lexicon import load_lexicon
from .lm import LMConfig, encode_records, load_word_vectors, train_lm
from .nn import ParameterStore
from .align import Translator, load_features
from .synth import WorldConfig, generate_world, load_references

log = logging.getLogger(__name__)


def lm_config(run: RunConfig) -> LMConfig:
    return LMConfig(
        word_dim=run.word_dim,
        hidden=run.hidden,
        embed_dim=run.embed_dim,
        margin=run.margin,
        lambda_t=run.lambda_t,
        batch=run.batch,
        lr_enc=run.lr_enc,
        lr_dec=run.lr_dec,
    )


def align_config(run: RunConfig) -> AlignConfig:
    return AlignConfig(
        K=run.K,
        lambda_ce=run.lambda_ce,
        lambda_r=run.lambda_r,
        lambda_adv=run.lambda_adv,
        gp_coeff=run.gp_coeff,
        critic_steps=run.critic_steps,
        translator_hidden=run.translator_hidden,
        critic_hidden=run.critic_hidden,
        lr=run.lr_align,
        feature_dim=run.feature_dim,
        batch=run.align_batch,
        conventional_polarity=run.conventional_polarity,
    )


def world_config(run: RunConfig) -> WorldConfig:
    return WorldConfig(
        seed=run.seed,
        n_images=run.synth_images,
        n_sentences=run.synth_sentences,
        n_concepts=run.synth_concepts,
        feature_dim=run.feature_dim,
        noise_sigma=run.synth_noise,
        cooccurrence=run.synth_cooccurrence,
        probe_cooccurrence=(
            None if run.synth_probe_cooccurrence < 0 else run.synth_probe_cooccurrence
        ),
        detector_noise=run.synth_detector_noise,
        synonyms=run.synth_synonyms,
        cluster_arity=run.synth_cluster_arity,
        n_backgrounds=run.synth_backgrounds,
        bg_rate=run.synth_bg_rate,
    )


def content_hash(path) -> str:
    """Git-style blob hash of a file's contents."""
    data = Path(path).read_bytes()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def save_meta(path, vocab, run: RunConfig) -> None:
    meta = {
        "tokens": vocab.id_to_token,
        "word_dim": run.word_dim,
        "hidden": run.hidden,
        "embed_dim": run.embed_dim,
        "feature_dim": run.feature_dim,
        "translator_hidden": run.translator_hidden,
        "critic_hidden": run.critic_hidden,
        "margin": run.margin,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


def load_meta(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def meta_lm_config(meta: dict) -> LMConfig:
    return LMConfig(
        word_dim=meta["word_dim"],
        hidden=meta["hidden"],
        embed_dim=meta["embed_dim"],
        margin=meta.get("margin", 0.5),
    )


def write_lm_log_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss_ce,loss_triplet,ratio_intra_inter\n")
        for row in rows:
            fh.write(f"{row.epoch},{row.loss_ce!r},{row.loss_triplet!r},{row.ratio_intra_inter!r}\n")


def write_align_log_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss_ce,loss_robust,loss_adv,wasserstein,grad_penalty\n")
        for row in rows:
            fh.write(
                f"{row.epoch},{row.loss_ce!r},{row.loss_robust!r},{row.loss_adv!r},"
                f"{row.wasserstein!r},{row.grad_penalty!r}\n"
            )


def write_captions_tsv(path, captions: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, text in captions.items():
            fh.write(f"{image_id}\t{text}\n")


def load_captions_tsv(path) -> dict[str, str]:
    captions: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            image_id, text = line.split("\t", 1)
            captions[image_id] = text
    return captions


# ---------------------------------------------------------------------------
# stages

def stage_train_lm(run: RunConfig, corpus_path, lexicon_path, out_ckpt,
                   word_vectors_path=None, figures: bool = True):
    lex = load_lexicon(lexicon_path, strip_plural_s=run.strip_plural_s)
    vocab, records = build_corpus(corpus_path, lex, min_count=run.min_count, max_len=run.max_len)
    index = build_pair_index(records)
    index.save(Path(out_ckpt).parent / "pairs.pidx")
    cfg = lm_config(run)
    word_vectors = None
    if word_vectors_path:
        word_vectors = load_word_vectors(word_vectors_path, vocab, run.word_dim, seed=run.seed)
    result = train_lm(records, index, cfg, epochs=run.lm_epochs, seed=run.seed,
                      vocab_size=len(vocab), word_vectors=word_vectors)
    result.store.save(out_ckpt)
    save_meta(str(out_ckpt) + ".meta.json", vocab, run)
    write_lm_log_csv(result.log, Path(out_ckpt).parent / "lm_log.csv")
    if figures:
        plots.plot_lm_log(result.log, Path(out_ckpt).parent / "lm_curves.png")
    return result, vocab, records


def stage_build_graph(run: RunConfig, corpus_path, lexicon_path, features_path, detections_path, out_tsv):
    lex = load_lexicon(lexicon_path, strip_plural_s=run.strip_plural_s)
    _, records = build_corpus(corpus_path, lex, min_count=run.min_count, max_len=run.max_len)
    images = load_image_records(features_path, detections_path, lex)
    graph = build_graph(images, records)
    graph.save_tsv(out_tsv)
    return graph, images, records


def stage_train_align(
    run: RunConfig,
    corpus_path,
    lexicon_path,
    features_path,
    detections_path,
    lm_ckpt,
    out_ckpt,
    graph_tsv=None,
    figures: bool = True,
):
    lex = load_lexicon(lexicon_path, strip_plural_s=run.strip_plural_s)
    vocab, records = build_corpus(corpus_path, lex, min_count=run.min_count, max_len=run.max_len)
    images = load_image_records(features_path, detections_path, lex)
    if graph_tsv is not None and Path(graph_tsv).exists():
        graph = AssignmentGraph.load_tsv(graph_tsv)
    else:
        graph = build_graph(images, records)
    store = ParameterStore.load(lm_ckpt)
    result = train_align(
        images,
        records,
        graph,
        store,
        lm_config(run),
        align_config(run),
        lex,
        epochs=run.align_epochs,
        seed=run.seed,
        ablation=run.ablation,
    )
    result.store.save(out_ckpt)
    save_meta(str(out_ckpt) + ".meta.json", vocab, run)
    write_align_log_csv(result.log, Path(out_ckpt).parent / "align_log.csv")
    if figures:
        plots.plot_align_log(result.log, Path(out_ckpt).parent / "align_curves.png")
    return result, vocab, records, images, graph


def stage_caption(run: RunConfig, ckpt, features_path, out_tsv, ids_path=None):
    store = ParameterStore.load(ckpt)
    meta = load_meta(str(ckpt) + ".meta.json")
    cfg = meta_lm_config(meta)
    tokens = meta["tokens"]
    ids, features = load_features(features_path, ids_path)
    captions: dict[str, str] = {}
    for image_id, feature in zip(ids, features):
        token_ids = caption_feature(
            feature,
            store,
            cfg,
            width=run.beam,
            max_len=run.caption_max_len,
            suppress_unk=run.suppress_unk,
            length_normalize=run.beam_length_normalize,
        )
        words = [tokens[t] for t in token_ids if tokens[t] not in ("<eos>", "<pad>", "<bos>")]
        captions[image_id] = " ".join(words)
    write_captions_tsv(out_tsv, captions)
    return captions


def stage_evaluate(
    run: RunConfig,
    captions_tsv,
    references_tsv,
    out_json,
    corpus_path=None,
    figures: bool = True,
) -> EvalReport:
    captions = load_captions_tsv(captions_tsv)
    references = load_references(references_tsv)
    cands, refs = [], []
    skipped = 0
    for image_id, text in captions.items():
        if image_id not in references:
            skipped += 1
            continue
        cands.append(tokenize(text))
        refs.append([tokenize(r) for r in references[image_id]])
    if not cands:
        raise ValidationError("no captioned image has references")
    if skipped:
        log.warning("evaluate: %d captioned images had no references", skipped)
    training_texts = None
    if corpus_path is not None:
        with open(corpus_path, "r", encoding="utf-8") as fh:
            training_texts = {" ".join(tokenize(line)) for line in fh if line.strip()}
    report = score_captions(cands, refs, training_texts)
    report.to_json(out_json)
    if figures:
        plots.plot_report(report, Path(out_json).parent / "report_metrics.png")
    return report


def stage_diagnose(
    run: RunConfig,
    ckpt,
    corpus_path,
    lexicon_path,
    features_path,
    detections_path,
    out_json,
    figures: bool = True,
):
    """Modality-mixing diagnostic over the joint space, plus a scatter figure."""
    lex = load_lexicon(lexicon_path, strip_plural_s=run.strip_plural_s)
    _, records = build_corpus(corpus_path, lex, min_count=run.min_count, max_len=run.max_len)
    images = load_image_records(features_path, detections_path, lex)
    store = ParameterStore.load(ckpt)
    meta = load_meta(str(ckpt) + ".meta.json")
    cfg = meta_lm_config(meta)

    text_records = [r for r in records if r.concepts]
    text_emb = encode_records(store, cfg, text_records)
    usable_images = [im for im in images if im.concepts]
    if not usable_images:
        raise ValidationError("diagnose: no image carries concepts")
    translator = Translator(store)
    img_emb, _ = translator.forward(
        np.stack([im.feature for im in usable_images]).astype(store.dtype)
    )

    embeddings = np.concatenate([text_emb, img_emb], axis=0)
    is_text = np.array([True] * len(text_records) + [False] * len(usable_images))
    labels = np.array(
        [min(r.concepts) for r in text_records] + [min(im.concepts) for im in usable_images]
    )
    score = mixing_score(embeddings, is_text, labels, k=run.mixing_k)

    out_dir = Path(out_json).parent
    with open(out_json, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "mixing_score": score,
                "k": run.mixing_k,
                "n_text": len(text_records),
                "n_images": len(usable_images),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    with open(out_dir / "embedding.tsv", "w", encoding="utf-8") as fh:
        fh.write("kind\tlabel\t" + "\t".join(f"d{i}" for i in range(embeddings.shape[1])) + "\n")
        for row, (text_flag, label) in enumerate(zip(is_text, labels)):
            kind = "text" if text_flag else "image"
            values = "\t".join(repr(float(x)) for x in embeddings[row])
            fh.write(f"{kind}\t{label}\t{values}\n")
    if figures:
        plots.plot_embedding_scatter(embeddings, is_text, labels, out_dir / "embedding_scatter.png")
    return score


def run_pipeline(run: RunConfig, out_dir, resume: bool = False) -> dict[str, str]:
    """Execute every stage into out_dir; returns artifact paths.

    Input corpora and features come from the synthetic generator stage, so
    the whole pipeline is self-contained and reproducible from the seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world_dir = out / "world"
    artifacts = {
        "world": str(world_dir),
        "lm_ckpt": str(out / "lm.ckpt"),
        "graph": str(out / "graph.tsv"),
        "align_ckpt": str(out / "align.ckpt"),
        "captions": str(out / "captions.tsv"),
        "report": str(out / "report.json"),
        "diagnostics": str(out / "diagnostics.json"),
    }

    def done(*paths) -> bool:
        return resume and all(Path(p).exists() for p in paths)

    run_log: list[str] = ["[config]"]
    run_log.extend(run.lines())

    stage = "synth-gen"
    try:
        if not done(world_dir / "corpus.txt"):
            generate_world(world_config(run), world_dir)
        corpus = world_dir / "corpus.txt"
        lexicon = world_dir / "lexicon.tsv"
        features = world_dir / "features.bin"
        detections = world_dir / "detections.tsv"
        run_log.append("[inputs]")
        for path in (corpus, lexicon, features, detections):
            run_log.append(f"{path.name} {content_hash(path)}")

        stage = "train-lm"
        if not done(artifacts["lm_ckpt"]):
            stage_train_lm(run, corpus, lexicon, artifacts["lm_ckpt"])
        run_log.append(f"[stage] train-lm ok {content_hash(artifacts['lm_ckpt'])}")

        stage = "build-graph"
        if not done(artifacts["graph"]):
            stage_build_graph(run, corpus, lexicon, features, detections, artifacts["graph"])
        run_log.append(f"[stage] build-graph ok {content_hash(artifacts['graph'])}")

        stage = "train-align"
        if not done(artifacts["align_ckpt"]):
            stage_train_align(
                run, corpus, lexicon, features, detections,
                artifacts["lm_ckpt"], artifacts["align_ckpt"], graph_tsv=artifacts["graph"],
            )
        run_log.append(f"[stage] train-align ok {content_hash(artifacts['align_ckpt'])}")

        stage = "caption"
        if not done(artifacts["captions"]):
            stage_caption(run, artifacts["align_ckpt"], features, artifacts["captions"])
        run_log.append(f"[stage] caption ok {content_hash(artifacts['captions'])}")

        stage = "evaluate"
        if not done(artifacts["report"]):
            stage_evaluate(
                run, artifacts["captions"], world_dir / "references.tsv",
                artifacts["report"], corpus_path=corpus,
            )
        run_log.append(f"[stage] evaluate ok {content_hash(artifacts['report'])}")

        stage = "diagnose-embedding"
        if not done(artifacts["diagnostics"]):
            stage_diagnose(
                run, artifacts["align_ckpt"], corpus, lexicon, features, detections,
                artifacts["diagnostics"],
            )
        run_log.append(f"[stage] diagnose-embedding ok {content_hash(artifacts['diagnostics'])}")
    except Exception as exc:
        run_log.append(f"[stage] {stage} FAILED: {exc}")
        (out / "run.log").write_text("\n".join(run_log) + "\n", encoding="utf-8")
        raise StageError(stage, str(exc)) from exc

    (out / "run.log").write_text("\n".join(run_log) + "\n", encoding="utf-8")
    return artifacts
