"""Bundled synthetic data: an annotation corpus and a conditional toy task.

Two generators live here. `build_store` fabricates an annotation store large
enough to exercise all four benchmark builders (attribute-labelled object
crops plus panoptic scenes with controlled category overlap). `build_block_world`
constructs an embedding-space task whose correct target is the reference
vector with one coordinate block swapped, which a trained combiner can solve
but no single-modality baseline can. Both are deterministic in their seed.

Run as a module to write the corpus and toy task to disk:
    python -m condsim.synthetic --out DIR [--seed N]
"""
from __future__ import annotations

import argparse
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import (
    AnnotationStore,
    AttributeTaxonomy,
    ImageRecord,
    ObjectInstance,
    PanopticRecord,
    StorePaths,
    save_store,
)
from .benchmark import RetrievalTemplate, TargetSpec, write_templates
from .captions import CaptionRecord
from .embeddings import EmbeddingTable, KIND_IMAGE, KIND_TEXT, stub_embed, write_gceb
from .mining import MinedTriplet, write_triplets

ATTRIBUTE_CATEGORIES = (
    "laptop", "train", "sofa", "chair", "car", "bicycle", "kettle", "lamp")
ATTRIBUTE_TYPES = {
    "color": ("red", "green", "blue", "white"),
    "material": ("wood", "metal", "plastic", "glass"),
    "size": ("small", "large", "narrow", "wide"),
    "surface": ("striped", "plain", "dotted", "checkered"),
    # These two types are in the filtered set and must never become conditions.
    "state": ("new", "old", "broken", "wet"),
    "type": ("electric", "manual", "digital", "analog"),
}
INSTANCES_PER_CATEGORY = 24

CORE_SCENE_CATEGORIES = (
    "sky", "grass", "tree", "road", "building", "water", "sand",
    "wall", "fence", "person", "bench", "light", "sign", "rock")
EXTRA_SCENE_CATEGORIES = (
    "ceiling", "refrigerator", "umbrella", "boat", "dog", "clock",
    "flower", "statue")
FAR_ONLY_CATEGORIES = (
    "cave", "dune", "iceberg", "reef", "glacier", "canyon", "marsh", "volcano")
N_REFERENCE_SCENES = 10
N_CLOSE_SCENES = 48
N_FAR_SCENES = 48

# Raw-file spellings exercised by write_corpus; loading strips the suffixes.
RAW_CATEGORY_SPELLINGS = {
    "sky": "sky-stuff",
    "wall": "wall-stuff",
    "tree": "tree-merged",
    "water": "water-other",
}

CAPTION_SUBJECTS = ("horse", "dog", "cat", "bird", "cow")
CAPTION_PLACES = (
    "meadow", "canvas", "beach", "street", "barn", "boat", "castle", "garden",
    "forest", "river", "bridge", "tower", "field", "harbor", "valley", "cliff")
CAPTION_PREDICATES = (
    "in", "on", "near", "under",
    "standing in", "sitting on", "walking near",
    "grazing in", "resting under", "running along")
ABSTRACT_WORDS = ("idea", "happiness", "concept", "freedom")


def _fractions(rng: np.random.Generator, cats: list[str]) -> dict[str, float]:
    raw = rng.uniform(1.0, 2.0, size=len(cats))
    scaled = raw / raw.sum() * 0.9
    return {cat: float(f) for cat, f in zip(cats, scaled)}


def build_store(seed: int = 0) -> AnnotationStore:
    """The bundled ~200-image store feeding all four benchmark builders."""
    rng = np.random.default_rng(seed)
    images: list[ImageRecord] = []
    instances: list[ObjectInstance] = []
    panoptic: list[PanopticRecord] = []

    # Attribute half: boxed object instances, two per image.
    pending: list[tuple[str, dict[str, str]]] = []
    for category in ATTRIBUTE_CATEGORIES:
        for _ in range(INSTANCES_PER_CATEGORY):
            values = {t: vals[rng.integers(len(vals))]
                      for t, vals in ATTRIBUTE_TYPES.items()}
            pending.append((category, values))
    boxes = ((40.0, 80.0, 240.0, 320.0), (360.0, 80.0, 240.0, 320.0))
    for i in range(0, len(pending), 2):
        image_id = f"attr-img-{i // 2:03d}"
        images.append(ImageRecord(id=image_id, width=640, height=480))
        for slot, (category, values) in enumerate(pending[i:i + 2]):
            positives = frozenset(values.values())
            negatives = frozenset(
                v for t, vals in ATTRIBUTE_TYPES.items()
                for v in vals if v != values[t])
            instances.append(ObjectInstance(
                id=f"inst-{i + slot:03d}-{category}",
                image_id=image_id,
                category=category,
                box=boxes[slot],
                positive_attributes=positives,
                negative_attributes=negatives,
            ))

    # Scene half: reference scenes see both a close pool and a far pool.
    core = list(CORE_SCENE_CATEGORIES)
    extras = list(EXTRA_SCENE_CATEGORIES)
    far_only = list(FAR_ONLY_CATEGORIES)

    def add_scene(image_id: str, cats: list[str]) -> None:
        images.append(ImageRecord(id=image_id, width=640, height=480))
        fractions = _fractions(rng, cats)
        if rng.random() < 0.35:
            absent = [c for c in core + extras + far_only if c not in fractions]
            fractions[absent[rng.integers(len(absent))]] = 0.006
        panoptic.append(PanopticRecord(image_id=image_id, fractions=fractions))

    for i in range(N_REFERENCE_SCENES):
        cats = sorted(rng.choice(core, size=12, replace=False).tolist())
        add_scene(f"scene-ref-{i:02d}", cats)
    for i in range(N_CLOSE_SCENES):
        n_core = int(rng.integers(9, 12))
        n_extra = int(rng.integers(1, 3))
        cats = sorted(rng.choice(core, size=n_core, replace=False).tolist()
                      + rng.choice(extras, size=n_extra, replace=False).tolist())
        add_scene(f"scene-close-{i:02d}", cats)
    for i in range(N_FAR_SCENES):
        cats = sorted(
            [core[(2 * i) % len(core)], core[(2 * i + 1) % len(core)],
             extras[(2 * i) % len(extras)], extras[(2 * i + 1) % len(extras)]]
            + rng.choice(far_only, size=2, replace=False).tolist())
        add_scene(f"scene-far-{i:02d}", cats)

    taxonomy = AttributeTaxonomy.from_mapping(
        {t: list(vals) for t, vals in ATTRIBUTE_TYPES.items()})
    return AnnotationStore(
        images=images, instances=instances, panoptic=panoptic, taxonomy=taxonomy)


def build_caption_corpus(
    seed: int = 0, n_captions: int = 120
) -> tuple[list[CaptionRecord], dict[str, float]]:
    """Captions over a small vocabulary plus matching concreteness ratings."""
    rng = np.random.default_rng(seed + 1)
    records: list[CaptionRecord] = []
    for i in range(n_captions):
        image_id = f"cap-img-{int(rng.integers(100)):03d}"
        subject = CAPTION_SUBJECTS[rng.integers(len(CAPTION_SUBJECTS))]
        predicate = CAPTION_PREDICATES[rng.integers(len(CAPTION_PREDICATES))]
        place = CAPTION_PLACES[rng.integers(len(CAPTION_PLACES))]
        article = "a" if i % 3 else "the"
        records.append(CaptionRecord(
            image_id=image_id,
            text=f"{article} {subject} {predicate} the {place}",
        ))
        if i % 10 == 0:
            abstract = ABSTRACT_WORDS[i // 10 % len(ABSTRACT_WORDS)]
            records.append(CaptionRecord(
                image_id=image_id,
                text=f"the {abstract} of {ABSTRACT_WORDS[(i // 10 + 1) % len(ABSTRACT_WORDS)]}",
            ))
    ratings: dict[str, float] = {}
    for i, word in enumerate(CAPTION_SUBJECTS + CAPTION_PLACES):
        ratings[word] = round(4.8 + 0.01 * (i % 20), 2)
    for word in ABSTRACT_WORDS:
        ratings[word] = 1.9
    return records, ratings


def write_corpus(directory: str | Path, seed: int = 0) -> None:
    """Write the synthetic store, captions, and ratings as raw input files.

    A handful of panoptic categories are spelled with their dataset suffixes
    ("sky-stuff" etc.) so that loading the corpus exercises normalization.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    store = build_store(seed)
    paths = StorePaths.in_dir(directory)
    save_store(store, paths)
    raw_lines = []
    for rec in store.panoptic:
        fractions = {
            RAW_CATEGORY_SPELLINGS.get(cat, cat): rec.fractions[cat]
            for cat in sorted(rec.fractions)
        }
        raw_lines.append(json.dumps(
            {"image_id": rec.image_id, "fractions": fractions}))
    paths.panoptic.write_text("\n".join(raw_lines) + "\n", encoding="utf-8")

    captions, ratings = build_caption_corpus(seed)
    with open(directory / "captions.jsonl", "w", encoding="utf-8") as fh:
        for rec in captions:
            fh.write(json.dumps({"image_id": rec.image_id, "text": rec.text}) + "\n")
    with open(directory / "concreteness.tsv", "w", encoding="utf-8") as fh:
        for word in sorted(ratings):
            fh.write(f"{word}\t{ratings[word]}\n")


BLOCK_NAMES = ("ground", "sky", "left", "right")
BLOCK_WORDS = (
    ("grass", "sand", "snow", "mud"),
    ("clear", "cloudy", "sunset", "stars"),
    ("tree", "rock", "fence", "bush"),
    ("river", "road", "hill", "dune"),
)
N_BLOCKS = 4
BLOCK_DIM = 16
VOCAB = 4
BLOCK_WORLD_DIM = N_BLOCKS * BLOCK_DIM
BLOCK_TASK = "block_swap"


def _content_vector(block: int, content: int) -> np.ndarray:
    return stub_embed(f"content:{block}:{content}", BLOCK_DIM, salt="block-world")


def _scene_vector(contents: tuple[int, ...]) -> np.ndarray:
    parts = [_content_vector(b, c) for b, c in enumerate(contents)]
    return np.concatenate(parts) / np.sqrt(N_BLOCKS)


def _condition_text(block: int, content: int) -> str:
    return f"set {BLOCK_NAMES[block]} {BLOCK_WORDS[block][content]}"


@dataclass
class BlockWorld:
    """Embeddings, training triplets, and evaluation templates for the toy task."""

    table: EmbeddingTable
    train_triplets: list[MinedTriplet]
    templates: list[RetrievalTemplate]


def build_block_world(
    seed: int = 0,
    n_train_scenes: int = 64,
    n_val_scenes: int = 32,
    n_templates: int = 200,
) -> BlockWorld:
    """Construct the conditional block-swap task in embedding space.

    A scene embedding concatenates four unit content vectors, one per block.
    The target for condition "set <block> <word>" is the reference scene with
    that block's content replaced, so solving the task requires combining both
    inputs: the reference alone misses the swap, the condition alone misses
    the scene.
    """
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(dim=BLOCK_WORLD_DIM)
    for block in range(N_BLOCKS):
        for content in range(VOCAB):
            table.add(
                _condition_text(block, content),
                stub_embed(_condition_text(block, content), BLOCK_WORLD_DIM,
                           salt="block-world-condition"),
                KIND_TEXT,
            )

    def draw_contents() -> tuple[int, ...]:
        return tuple(int(v) for v in rng.integers(0, VOCAB, size=N_BLOCKS))

    def add_scene(image_id: str, contents: tuple[int, ...]) -> None:
        table.add(image_id, _scene_vector(contents), KIND_IMAGE)

    def swap(contents: tuple[int, ...], block: int, content: int) -> tuple[int, ...]:
        out = list(contents)
        out[block] = content
        return tuple(out)

    def target_id(scene_id: str, block: int, content: int) -> str:
        return f"{scene_id}+swap-{block}{content}"

    triplets: list[MinedTriplet] = []
    for i in range(n_train_scenes):
        scene_id = f"train-scene-{i:03d}"
        contents = draw_contents()
        add_scene(scene_id, contents)
        for block in range(N_BLOCKS):
            for content in range(VOCAB):
                if content == contents[block]:
                    continue
                tid = target_id(scene_id, block, content)
                add_scene(tid, swap(contents, block, content))
                triplets.append(MinedTriplet(
                    reference_image_id=scene_id,
                    target_image_id=tid,
                    condition_text=_condition_text(block, content),
                    subject=BLOCK_NAMES[block],
                    reference_object=BLOCK_WORDS[block][contents[block]],
                    target_predicate="set",
                    target_object=BLOCK_WORDS[block][content],
                ))

    templates: list[RetrievalTemplate] = []
    val_contents: dict[str, tuple[int, ...]] = {}
    for i in range(n_val_scenes):
        scene_id = f"val-scene-{i:02d}"
        contents = draw_contents()
        val_contents[scene_id] = contents
        add_scene(scene_id, contents)

    def noise_scene(image_id: str, block: int, content: int,
                    forbidden: tuple[int, ...] | None) -> str:
        while True:
            contents = draw_contents()
            if block >= 0:
                contents = swap(contents, block, content)
            if contents != forbidden:
                break
        add_scene(image_id, contents)
        return image_id

    for i in range(n_templates):
        scene_id = f"val-scene-{i % n_val_scenes:02d}"
        contents = val_contents[scene_id]
        block = int(rng.integers(N_BLOCKS))
        others = [c for c in range(VOCAB) if c != contents[block]]
        content = others[int(rng.integers(len(others)))]
        positive_contents = swap(contents, block, content)
        pos_id = target_id(scene_id, block, content)
        if pos_id not in table:
            add_scene(pos_id, positive_contents)
        gallery_ids = [pos_id]
        for wrong in others:
            if wrong == content:
                continue
            wid = target_id(scene_id, block, wrong)
            if wid not in table:
                add_scene(wid, swap(contents, block, wrong))
            gallery_ids.append(wid)
        other_swaps: list[tuple[int, int]] = []
        while len(other_swaps) < 4:
            ob = int(rng.integers(N_BLOCKS))
            oc = int(rng.integers(VOCAB))
            if ob == block or oc == contents[ob] or (ob, oc) in other_swaps:
                continue
            other_swaps.append((ob, oc))
            oid = target_id(scene_id, ob, oc)
            if oid not in table:
                add_scene(oid, swap(contents, ob, oc))
            gallery_ids.append(oid)
        for j in range(4):
            gallery_ids.append(noise_scene(
                f"noise-{i:03d}-{j}", block, content, positive_contents))
        for j in range(4):
            gallery_ids.append(noise_scene(
                f"rand-{i:03d}-{j}", -1, -1, positive_contents))
        gallery = [TargetSpec(image_id=g) for g in gallery_ids]
        order = rng.permutation(len(gallery))
        shuffled = [gallery[int(k)] for k in order]
        templates.append(RetrievalTemplate(
            task=BLOCK_TASK,
            reference=TargetSpec(image_id=scene_id),
            condition=_condition_text(block, content),
            gallery=tuple(shuffled),
            positive_index=shuffled.index(gallery[0]),
        ))
    return BlockWorld(table=table, train_triplets=triplets, templates=templates)


def write_block_world(directory: str | Path, seed: int = 0) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    world = build_block_world(seed)
    write_gceb(world.table, directory / "embeddings.gceb")
    write_triplets(world.train_triplets, directory / "triplets.jsonl")
    write_templates(world.templates, directory / "templates.jsonl")


@dataclass
class ExperimentResult:
    """Block-swap outcome: trained R@1 against the three baselines."""

    combiner_r1: float
    baseline_r1: dict[str, float]
    train_result: "TrainResult"


def run_swap_experiment(
    seed: int = 0,
    steps: int = 2000,
    batch_size: int = 32,
    learning_rate: float = 1e-3,
    temperature: float = 0.01,
) -> ExperimentResult:
    """Train on the block-swap task and score all scorers on its templates."""
    from .evaluation import make_scorer, recall_at_k
    from .training import TrainConfig, train

    world = build_block_world(seed)
    config = TrainConfig(
        temperature=temperature, batch_size=batch_size, steps=steps,
        learning_rate=learning_rate, seed=seed,
        eval_interval=max(1, steps // 20 or 1))
    result = train(world.train_triplets, world.table, config,
                   val_templates=world.templates)
    combiner = recall_at_k(
        world.templates, make_scorer("combiner", result.params), world.table)
    baselines = {}
    for name in ("image-only", "text-only", "image-plus-text"):
        report = recall_at_k(world.templates, make_scorer(name), world.table)
        baselines[name] = report.average_r1 / 100.0
    return ExperimentResult(
        combiner_r1=combiner.average_r1 / 100.0,
        baseline_r1=baselines,
        train_result=result,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        description="write the bundled synthetic corpus and block-world task")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    out = Path(args.out)
    write_corpus(out / "corpus", seed=args.seed)
    write_block_world(out / "block-world", seed=args.seed)
    print(f"wrote synthetic corpus and block world under {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
