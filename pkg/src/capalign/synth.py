"""Deterministic synthetic world: sentences, image features, detections.

Salient concepts form co-occurrence clusters (pairs or triples); a scene
draws one cluster, usually shows all its members plus one background-only
object, and pairs with a sentence mentioning the same things.  Cluster 0 is
the discovery probe: its second concept is invisible to the simulated
detector, so the only way a model can caption it is through co-occurrence
with the cluster's detectable members.  Image features are a fixed random
linear map of a noisy indicator over visible concepts and the sentence's
appearance slots, which keeps content linearly decodable without any vision
stack.  Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import save_features
from .errors import ValidationError
from .seeding import substream

# grammar carries far more entropy than the concept slots, so an
# unconstrained autoencoder organizes by template and filler words while the
# triplet term is what pulls shared-concept sentences together
TEMPLATES_TWO = (
    "a {a1} {x} sits near the {a2} {y} {adv}",
    "the {y} rests beside a {a1} {x}",
    "there is a {x} and a {a2} {y} here {adv}",
    "one {a1} {x} stands behind the {y} {adv}",
    "the {x} waits with the {y} in the {a1} corner",
    "some {a2} {y} appears over the {x} now and then",
    "a {a1} {y} and a {a2} {x} share the floor {adv}",
    "the {a1} {x} leans on a wall near one {y}",
    "people see a {x} with a {a2} {y} around here",
    "that {a1} {y} stays close to the {x} {adv}",
)

TEMPLATES_THREE = (
    "a {a1} {x} sits with the {y} and the {z} {adv}",
    "the {x} the {y} and a {a2} {z} rest here",
    "there is a {x} near a {y} and some {a1} {z} {adv}",
    "one {a1} {x} stands by the {y} with the {z}",
    "people see a {x} a {a2} {y} and the {z} around here",
    "that {a1} {z} stays between the {x} and the {y} {adv}",
    "some {a2} {y} appears over the {x} and one {z} now",
    "the {x} waits as the {y} leans on a {a1} {z}",
    "a {a1} {y} and a {a2} {z} share the floor with the {x}",
    "the {z} rests while a {x} sits near one {a1} {y}",
)

# optional background mention appended to a scene's sentence
BACKGROUND_PHRASES = (
    "with a {w} behind",
    "beside some {w}",
    "near one {w} too",
)

TEMPLATES_ONE = (
    "a {a1} {x} sits here {adv}",
    "the {x} rests in the {a1} corner",
    "there is one {a1} {x} {adv}",
    "some {a1} {x} appears now",
    "that {x} stays near the wall {adv}",
)

ADJECTIVES = (
    "small", "big", "old", "new", "quiet", "bright", "dark", "plain",
    "round", "flat", "tall", "short", "clean", "dusty", "warm", "cold",
)

# the first adjective slot can act as a detectable visual attribute (its own
# concept in the lexicon), which gives the weak assignment style resolution
# inside an object cluster; the second slot stays plain filler
ATTRIBUTES = ADJECTIVES[:8]
PLAIN_ADJECTIVES = ADJECTIVES[8:]

ADVERBS = ("today", "now", "often", "still", "again", "nearby", "outside", "early")


def attribute_id(word: str) -> str:
    return f"{word}.s.01"


@dataclass
class WorldConfig:
    seed: int = 0
    n_images: int = 150
    n_sentences: int = 500
    n_concepts: int = 30
    feature_dim: int = 2048
    noise_sigma: float = 0.1
    cooccurrence: float = 1.0           # pair probability for clusters >= 1
    probe_cooccurrence: float | None = None  # cluster 0; defaults to cooccurrence
    detector_noise: float = 0.0         # chance of dropping a detectable label
    undetectable: tuple[int, ...] = (1,)  # concept indices hidden from the detector
    refs_per_image: int = 5
    synonyms: int = 3                   # surface forms per concept
    cluster_arity: int = 3              # salient concepts per co-occurrence cluster
    n_backgrounds: int = 8              # dedicated background-only concepts
    bg_rate: float = 0.7                # chance a scene shows one background object
    attributes: bool = False            # first adjective slot is a detectable concept

    def __post_init__(self):
        if self.n_concepts < 4:
            raise ValidationError("need at least 4 concepts")
        if self.cluster_arity not in (2, 3):
            raise ValidationError("cluster_arity must be 2 or 3")
        if self.n_concepts < self.cluster_arity:
            raise ValidationError("not enough concepts for one cluster")
        if self.n_images > self.n_sentences:
            raise ValidationError("n_images must not exceed n_sentences (1:1 scene pairing)")
        if self.probe_cooccurrence is None:
            self.probe_cooccurrence = self.cooccurrence


@dataclass
class WorldInfo:
    """Generation metadata consumed by tests and diagnostics."""

    concept_ids: list[str]
    surfaces: list[list[str]]          # synonym surface forms per concept
    sentence_clusters: list[int]
    sentence_concepts: list[list[str]]
    image_ids: list[str]
    image_clusters: list[int]
    probe_a: str
    probe_b: str
    probe_b_surfaces: list[str]
    probe_image_ids: list[str] = field(default_factory=list)
    attribute_ids: list[str] = field(default_factory=list)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "WorldInfo":
        with open(path, "r", encoding="utf-8") as fh:
            return WorldInfo(**json.load(fh))


def concept_id(k: int) -> str:
    return f"c{k:02d}.n.01"


def concept_surfaces(k: int, synonyms: int) -> list[str]:
    return [f"obj{k:02d}{chr(ord('a') + s)}" for s in range(synonyms)]


def generate_world(cfg: WorldConfig, out_dir) -> WorldInfo:
    """Write corpus, lexicon, features, detections, ground-truth pairs, and
    references under out_dir; returns the generation metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arity = cfg.cluster_arity
    n_clusters = cfg.n_concepts // arity
    n_total = cfg.n_concepts + cfg.n_backgrounds
    concept_ids = [concept_id(k) for k in range(n_total)]
    surfaces = [concept_surfaces(k, cfg.synonyms) for k in range(n_total)]

    scene_rng = substream(cfg.seed, "synth-scenes")
    text_rng = substream(cfg.seed, "synth-text")
    bg_rng = substream(cfg.seed, "synth-background")
    single_side = [0] * n_clusters
    undetectable = set(cfg.undetectable)
    # background-only concepts never form caption clusters of their own;
    # they give each scene a detectable side detail that narrows its weak
    # assignments without linking it to another cluster
    bg_pool = list(range(cfg.n_concepts, n_total))

    scenes: list[list[int]] = []
    backgrounds: list[int | None] = []
    clusters: list[int] = []
    for s in range(cfg.n_sentences):
        g = s % n_clusters
        members = list(range(arity * g, arity * g + arity))
        p_full = cfg.probe_cooccurrence if g == 0 else cfg.cooccurrence
        if scene_rng.uniform() < p_full:
            scene = members
        else:
            scene = [members[single_side[g]]]
            single_side[g] = (single_side[g] + 1) % arity
        if bg_pool and bg_rng.uniform() < cfg.bg_rate:
            backgrounds.append(bg_pool[int(bg_rng.integers(0, len(bg_pool)))])
        else:
            backgrounds.append(None)
        scenes.append(scene)
        clusters.append(g)

    def surface_of(k: int) -> str:
        return surfaces[k][int(text_rng.integers(0, cfg.synonyms))]

    a1_pool = ATTRIBUTES if cfg.attributes else ADJECTIVES
    sentences: list[str] = []
    styles: list[tuple[int, int]] = []   # (a1 index into ADJECTIVES, template index)
    for scene, bg in zip(scenes, backgrounds):
        a1 = int(text_rng.integers(0, len(a1_pool)))
        slots = {
            "a1": a1_pool[a1],
            "a2": PLAIN_ADJECTIVES[int(text_rng.integers(0, len(PLAIN_ADJECTIVES)))],
            "adv": ADVERBS[int(text_rng.integers(0, len(ADVERBS)))],
        }
        a1_global = ADJECTIVES.index(a1_pool[a1])
        order = list(scene)
        text_rng.shuffle(order)
        if len(scene) == 3:
            t = int(text_rng.integers(0, len(TEMPLATES_THREE)))
            text = TEMPLATES_THREE[t].format(
                x=surface_of(order[0]), y=surface_of(order[1]), z=surface_of(order[2]), **slots
            )
            styles.append((a1_global, t))
        elif len(scene) == 2:
            t = int(text_rng.integers(0, len(TEMPLATES_TWO)))
            text = TEMPLATES_TWO[t].format(x=surface_of(order[0]), y=surface_of(order[1]), **slots)
            styles.append((a1_global, t))
        else:
            t = int(text_rng.integers(0, len(TEMPLATES_ONE)))
            text = TEMPLATES_ONE[t].format(x=surface_of(scene[0]), **slots)
            styles.append((a1_global, len(TEMPLATES_TWO) + t))
        if bg is not None:
            phrase = BACKGROUND_PHRASES[int(text_rng.integers(0, len(BACKGROUND_PHRASES)))]
            text = text + " " + phrase.format(w=surface_of(bg))
        sentences.append(text)

    with open(out / "corpus.txt", "w", encoding="utf-8") as fh:
        for line in sentences:
            fh.write(line + "\n")

    with open(out / "lexicon.tsv", "w", encoding="utf-8") as fh:
        fh.write("# synthetic concept lexicon\n")
        fh.write("entity\tentity.n.01\n")
        for forms, concept in zip(surfaces, concept_ids):
            for surface in forms:
                fh.write(f"{surface}\t{concept}\n")
        if cfg.attributes:
            for word in ATTRIBUTES:
                fh.write(f"{word}\t{attribute_id(word)}\n")
        for concept in concept_ids:
            fh.write(f"!hypo\t{concept}\tentity.n.01\n")

    # image features: fixed random projection of a noisy indicator carrying
    # the visible concepts plus the appearance signature (adjective,
    # template) that the paired sentence describes, so captions stay
    # predictable from the image alone
    feat_rng = substream(cfg.seed, "synth-features")
    n_templates = len(TEMPLATES_TWO) + len(TEMPLATES_ONE)
    ind_dim = n_total + len(ADJECTIVES) + n_templates
    W = feat_rng.normal(0.0, 1.0 / np.sqrt(ind_dim), size=(cfg.feature_dim, ind_dim))
    image_ids = [f"img{str(i).zfill(5)}" for i in range(cfg.n_images)]
    indicators = np.zeros((cfg.n_images, ind_dim))
    for i in range(cfg.n_images):
        indicators[i, scenes[i]] = 1.0
        if backgrounds[i] is not None:
            indicators[i, backgrounds[i]] = 1.0
        a1, t = styles[i]
        indicators[i, n_total + a1] = 1.0
        indicators[i, n_total + len(ADJECTIVES) + t] = 1.0
    noisy = indicators + feat_rng.normal(0.0, cfg.noise_sigma, size=indicators.shape)
    features = (noisy @ W.T).astype(np.float32)
    save_features(out / "features.bin", image_ids, features)

    detect_rng = substream(cfg.seed, "synth-detector")
    probe_image_ids = []
    with open(out / "detections.tsv", "w", encoding="utf-8") as fh:
        for i, image_id in enumerate(image_ids):
            visible = list(scenes[i])
            if backgrounds[i] is not None:
                visible.append(backgrounds[i])
            labels = []
            for k in visible:
                if k in undetectable:
                    continue
                if cfg.detector_noise > 0 and detect_rng.uniform() < cfg.detector_noise:
                    continue
                labels.append(surfaces[k][0])  # detectors emit one canonical label
            if cfg.attributes:
                labels.append(ADJECTIVES[styles[i][0]])
            if labels:
                fh.write(f"{image_id}\t{','.join(labels)}\n")
            if clusters[i] == 0 and 0 in scenes[i]:
                probe_image_ids.append(image_id)

    with open(out / "gt_pairs.tsv", "w", encoding="utf-8") as fh:
        for i, image_id in enumerate(image_ids):
            fh.write(f"{image_id}\t{i}\n")

    # references: sentences whose full scene (salient pair plus background)
    # matches the image's scene exactly
    scene_key = [
        tuple(sorted(s + ([bg] if bg is not None else [])))
        for s, bg in zip(scenes, backgrounds)
    ]
    members: dict[tuple, list[int]] = {}
    for j, key in enumerate(scene_key):
        members.setdefault(key, []).append(j)
    with open(out / "references.tsv", "w", encoding="utf-8") as fh:
        for i, image_id in enumerate(image_ids):
            pool = members[scene_key[i]]
            start = pool.index(i)
            picked = [pool[(start + off) % len(pool)] for off in range(min(cfg.refs_per_image, len(pool)))]
            for j in picked:
                fh.write(f"{image_id}\t{sentences[j]}\n")

    info = WorldInfo(
        concept_ids=concept_ids,
        surfaces=surfaces,
        sentence_clusters=clusters,
        sentence_concepts=[[concept_ids[k] for k in key] for key in scene_key],
        image_ids=image_ids,
        image_clusters=[clusters[i] for i in range(cfg.n_images)],
        probe_a=concept_ids[0],
        probe_b=concept_ids[1],
        probe_b_surfaces=list(surfaces[1]),
        probe_image_ids=probe_image_ids,
        attribute_ids=[attribute_id(w) for w in ATTRIBUTES] if cfg.attributes else [],
    )
    info.save(out / "world.json")
    return info


def load_references(path) -> dict[str, list[str]]:
    """image_id<TAB>reference, repeated ids allowed."""
    references: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            image_id, text = line.split("\t", 1)
            references.setdefault(image_id, []).append(text)
    return references


def load_gt_pairs(path) -> dict[str, int]:
    pairs: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            image_id, j = line.split("\t")
            pairs[image_id] = int(j)
    return pairs
