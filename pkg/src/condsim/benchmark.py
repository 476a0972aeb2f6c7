"""Construction and validation of the four conditional retrieval task sets.

Attribute tasks draw galleries of object crops from instance-level attribute
labels; object tasks draw whole scenes from panoptic category fractions. Every
template carries exactly one positive, and every distractor is required to
fail the task condition in the specific way the task prescribes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .annotations import (
    AnnotationStore,
    CropSpec,
    ObjectInstance,
    PRESENCE_THRESHOLD,
    categories_present,
    dilate_and_pad_box,
)
from .errors import (
    InsufficientScene,
    IntegrityError,
    SchemaError,
    TemplateUnderflow,
    ValidationError,
)

logger = logging.getLogger(__name__)

TASK_FOCUS_ATTRIBUTE = "focus_attribute"
TASK_CHANGE_ATTRIBUTE = "change_attribute"
TASK_FOCUS_OBJECT = "focus_object"
TASK_CHANGE_OBJECT = "change_object"
ALL_TASKS = (
    TASK_FOCUS_ATTRIBUTE,
    TASK_CHANGE_ATTRIBUTE,
    TASK_FOCUS_OBJECT,
    TASK_CHANGE_OBJECT,
)
ATTRIBUTE_TASKS = frozenset({TASK_FOCUS_ATTRIBUTE, TASK_CHANGE_ATTRIBUTE})

GALLERY_SIZES = {
    TASK_FOCUS_ATTRIBUTE: 10,
    TASK_CHANGE_ATTRIBUTE: 15,
    TASK_FOCUS_OBJECT: 15,
    TASK_CHANGE_OBJECT: 15,
}

EXCLUDED_ATTRIBUTE_TYPES = frozenset({
    "opinion",
    "other after",
    "other physical quality",
    "state",
    "type",
})

CLOSE_MIN_OVERLAP = 6
MIN_REFERENCE_CATEGORIES = 10
DEFAULT_FAR_MAX = 2
DEFAULT_DILATION = 0.7
DEFAULT_PER_TYPE_QUOTA = 50


@dataclass(frozen=True)
class TargetSpec:
    """One retrievable item: a whole image or a cropped object instance."""

    image_id: str
    crop: CropSpec | None = None
    instance_id: str | None = None

    @property
    def key(self) -> str:
        """Embedding-table id: the instance for crops, the image otherwise."""
        return self.instance_id if self.instance_id is not None else self.image_id

    def to_json(self) -> dict:
        obj: dict = {"image_id": self.image_id}
        if self.crop is not None:
            obj["crop"] = self.crop.to_json()
        if self.instance_id is not None:
            obj["instance_id"] = self.instance_id
        return obj

    @classmethod
    def from_json(cls, obj: Mapping) -> "TargetSpec":
        if not isinstance(obj.get("image_id"), str):
            raise SchemaError("target spec missing 'image_id'")
        crop = obj.get("crop")
        return cls(
            image_id=obj["image_id"],
            crop=None if crop is None else CropSpec.from_json(crop),
            instance_id=obj.get("instance_id"),
        )


@dataclass(frozen=True)
class RetrievalTemplate:
    """Reference + condition + gallery with exactly one positive."""

    task: str
    reference: TargetSpec
    condition: str
    gallery: tuple[TargetSpec, ...]
    positive_index: int

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "reference": self.reference.to_json(),
            "condition": self.condition,
            "gallery": [t.to_json() for t in self.gallery],
            "positive_index": self.positive_index,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "RetrievalTemplate":
        for key in ("task", "reference", "condition", "gallery", "positive_index"):
            if key not in obj:
                raise SchemaError(f"template missing {key!r}")
        gallery = obj["gallery"]
        if not isinstance(gallery, list):
            raise SchemaError("gallery must be a list")
        index = obj["positive_index"]
        if not isinstance(index, int) or isinstance(index, bool):
            raise SchemaError("positive_index must be an integer")
        return cls(
            task=obj["task"],
            reference=TargetSpec.from_json(obj["reference"]),
            condition=obj["condition"],
            gallery=tuple(TargetSpec.from_json(g) for g in gallery),
            positive_index=index,
        )


@dataclass(frozen=True)
class SceneSets:
    """Close and far neighbor pools around one reference scene."""

    reference_cats: frozenset[str]
    i_close: tuple[tuple[str, int], ...]
    i_far: tuple[str, ...]


def _template_rng(seed: int, task: str, *labels: str) -> random.Random:
    """Stable per-template stream from (seed, task, reference labels)."""
    tag = "|".join([str(seed), task, *labels])
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def _assemble(
    task: str,
    reference: TargetSpec,
    condition: str,
    positive: TargetSpec,
    distractors: Sequence[TargetSpec],
    rng: random.Random,
) -> RetrievalTemplate:
    gallery = [positive, *distractors]
    rng.shuffle(gallery)
    return RetrievalTemplate(
        task=task,
        reference=reference,
        condition=condition,
        gallery=tuple(gallery),
        positive_index=gallery.index(positive),
    )


def _instance_spec(store: AnnotationStore, inst: ObjectInstance, dilation: float) -> TargetSpec:
    crop = dilate_and_pad_box(inst.box, store.image_size(inst.image_id), dilation)
    return TargetSpec(image_id=inst.image_id, crop=crop, instance_id=inst.id)


def _round_robin_types(
    store: AnnotationStore,
    task: str,
    per_type_quota: int,
    make: Callable[[ObjectInstance, str], RetrievalTemplate | None],
) -> list[RetrievalTemplate]:
    """Cycle attribute types, building one template per type per round.

    `make(ref, type)` returns a template, None when the reference is not a
    candidate for that type, or raises TemplateUnderflow for counted skips.
    """
    types = [t for t in store.taxonomy.types if t not in EXCLUDED_ATTRIBUTE_TYPES]
    refs = sorted(store.instances, key=lambda inst: inst.id)
    iters: dict[str, Iterator[ObjectInstance]] = {t: iter(refs) for t in types}
    counts = {t: 0 for t in types}
    skipped = 0
    templates: list[RetrievalTemplate] = []
    active = [t for t in types if per_type_quota > 0]
    while active:
        still_active = []
        for t in active:
            made = False
            for ref in iters[t]:
                try:
                    tmpl = make(ref, t)
                except TemplateUnderflow:
                    skipped += 1
                    continue
                if tmpl is None:
                    continue
                templates.append(tmpl)
                counts[t] += 1
                made = True
                break
            if made and counts[t] < per_type_quota:
                still_active.append(t)
        active = still_active
    if skipped:
        logger.warning("%s: skipped %d underflowing templates", task, skipped)
    logger.info("%s: built %d templates (%s)", task, len(templates),
                ", ".join(f"{t}={counts[t]}" for t in types))
    return templates


def build_focus_attribute(
    store: AnnotationStore,
    seed: int,
    per_type_quota: int = DEFAULT_PER_TYPE_QUOTA,
    dilation: float = DEFAULT_DILATION,
) -> list[RetrievalTemplate]:
    """Condition on an attribute type; gallery of 10 same-category crops.

    The positive shares one of the reference's positive attributes of the
    condition type; all 9 distractors carry that attribute in their negative
    set.
    """
    type_of = store.taxonomy.type_of

    def make(ref: ObjectInstance, t: str) -> RetrievalTemplate | None:
        ref_attrs = sorted(a for a in ref.positive_attributes if type_of.get(a) == t)
        if not ref_attrs:
            return None
        rng = _template_rng(seed, TASK_FOCUS_ATTRIBUTE, ref.id, t)
        attr = rng.choice(ref_attrs)
        mates = [i for i in store.instances_by_category.get(ref.category, ())
                 if i.id != ref.id]
        positives = sorted((i for i in mates if attr in i.positive_attributes),
                           key=lambda i: i.id)
        negatives = sorted((i for i in mates if attr in i.negative_attributes),
                           key=lambda i: i.id)
        if not positives or len(negatives) < 9:
            raise TemplateUnderflow(
                f"{ref.id}/{attr}: {len(positives)} positives, {len(negatives)} negatives")
        positive = rng.choice(positives)
        nine = rng.sample(negatives, 9)
        return _assemble(
            TASK_FOCUS_ATTRIBUTE,
            _instance_spec(store, ref, dilation),
            t,
            _instance_spec(store, positive, dilation),
            [_instance_spec(store, d, dilation) for d in nine],
            rng,
        )

    return _round_robin_types(store, TASK_FOCUS_ATTRIBUTE, per_type_quota, make)


def build_change_attribute(
    store: AnnotationStore,
    seed: int,
    per_type_quota: int = DEFAULT_PER_TYPE_QUOTA,
    dilation: float = DEFAULT_DILATION,
) -> list[RetrievalTemplate]:
    """Condition on a new attribute value; gallery of 15 crops (1 + 9 + 5).

    9 distractors carry the condition attribute on a different object
    category; 5 share the reference category with the condition attribute
    negatively labelled.
    """
    type_of = store.taxonomy.type_of

    def make(ref: ObjectInstance, t: str) -> RetrievalTemplate | None:
        ref_vals = {a for a in ref.positive_attributes if type_of.get(a) == t}
        if not ref_vals:
            return None
        rng = _template_rng(seed, TASK_CHANGE_ATTRIBUTE, ref.id, t)
        mates = [i for i in store.instances_by_category.get(ref.category, ())
                 if i.id != ref.id]
        pairs = sorted(
            (inst.id, a)
            for inst in mates
            for a in inst.positive_attributes
            if type_of.get(a) == t and a not in ref.positive_attributes
        )
        if not pairs:
            raise TemplateUnderflow(f"{ref.id}/{t}: no attribute-changing positive")
        pos_id, attr = pairs[rng.randrange(len(pairs))]
        positive = store.instances_by_id[pos_id]
        other_cat = sorted(
            (i for i in store.instances
             if i.category != ref.category and attr in i.positive_attributes),
            key=lambda i: i.id)
        same_neg = sorted((i for i in mates if attr in i.negative_attributes),
                          key=lambda i: i.id)
        if len(other_cat) < 9 or len(same_neg) < 5:
            raise TemplateUnderflow(
                f"{ref.id}/{attr}: {len(other_cat)} other-category, "
                f"{len(same_neg)} same-category candidates")
        distractors = rng.sample(other_cat, 9) + rng.sample(same_neg, 5)
        return _assemble(
            TASK_CHANGE_ATTRIBUTE,
            _instance_spec(store, ref, dilation),
            attr,
            _instance_spec(store, positive, dilation),
            [_instance_spec(store, d, dilation) for d in distractors],
            rng,
        )

    return _round_robin_types(store, TASK_CHANGE_ATTRIBUTE, per_type_quota, make)


def build_scene_sets(
    store: AnnotationStore,
    reference_image: str,
    far_max: int = DEFAULT_FAR_MAX,
    presence_threshold: float = PRESENCE_THRESHOLD,
) -> SceneSets:
    """Rank other scenes by category overlap with the reference.

    i_close members share at least 6 categories and lack at least one
    reference category, ranked by (overlap desc, image_id asc); i_far members
    share at most far_max.
    """
    if reference_image not in store.panoptic_by_image:
        raise IntegrityError(f"no panoptic record for image {reference_image!r}")
    ref_cats = store.scene_categories(reference_image, presence_threshold)
    if len(ref_cats) < MIN_REFERENCE_CATEGORIES:
        raise InsufficientScene(
            f"reference {reference_image!r} has {len(ref_cats)} categories; "
            f"need >= {MIN_REFERENCE_CATEGORIES}")
    close: list[tuple[str, int]] = []
    far: list[str] = []
    for rec in store.panoptic:
        if rec.image_id == reference_image:
            continue
        cats = categories_present(rec, presence_threshold)
        overlap = len(cats & ref_cats)
        if overlap >= CLOSE_MIN_OVERLAP and not ref_cats <= cats:
            close.append((rec.image_id, overlap))
        if overlap <= far_max:
            far.append(rec.image_id)
    close.sort(key=lambda pair: (-pair[1], pair[0]))
    return SceneSets(
        reference_cats=frozenset(ref_cats),
        i_close=tuple(close),
        i_far=tuple(sorted(far)),
    )


def _scene_references(
    store: AnnotationStore, presence_threshold: float
) -> list[str]:
    return sorted(
        rec.image_id for rec in store.panoptic
        if len(categories_present(rec, presence_threshold)) >= MIN_REFERENCE_CATEGORIES)


def _object_gallery(
    store: AnnotationStore,
    task: str,
    image_id: str,
    scene: SceneSets,
    positive_id: str,
    condition: str,
    rng: random.Random,
    presence_threshold: float,
) -> RetrievalTemplate:
    close_pool = [
        cid for cid, _ in scene.i_close
        if cid != positive_id
        and condition not in store.scene_categories(cid, presence_threshold)
    ]
    far_pool = [
        fid for fid in scene.i_far
        if condition in store.scene_categories(fid, presence_threshold)
    ]
    if len(close_pool) < 9 or len(far_pool) < 5:
        raise TemplateUnderflow(
            f"{image_id}/{condition}: {len(close_pool)} close, {len(far_pool)} far")
    distractors = rng.sample(close_pool, 9) + rng.sample(far_pool, 5)
    return _assemble(
        task,
        TargetSpec(image_id=image_id),
        condition,
        TargetSpec(image_id=positive_id),
        [TargetSpec(image_id=d) for d in distractors],
        rng,
    )


def build_focus_object(
    store: AnnotationStore,
    seed: int,
    far_max: int = DEFAULT_FAR_MAX,
    quota: int | None = None,
    presence_threshold: float = PRESENCE_THRESHOLD,
) -> list[RetrievalTemplate]:
    """Condition on a shared scene category; gallery of 15 whole images.

    The positive is drawn randomly from i_close (not necessarily the best
    overlap); 9 close distractors lack the condition category, 5 far
    distractors contain it.
    """
    templates: list[RetrievalTemplate] = []
    skipped = 0
    for image_id in _scene_references(store, presence_threshold):
        if quota is not None and len(templates) >= quota:
            break
        scene = build_scene_sets(store, image_id, far_max, presence_threshold)
        rng = _template_rng(seed, TASK_FOCUS_OBJECT, image_id)
        try:
            if not scene.i_close:
                raise TemplateUnderflow(f"{image_id}: i_close empty")
            positive_id = rng.choice([cid for cid, _ in scene.i_close])
            shared = sorted(
                store.scene_categories(positive_id, presence_threshold)
                & scene.reference_cats)
            condition = rng.choice(shared)
            templates.append(_object_gallery(
                store, TASK_FOCUS_OBJECT, image_id, scene,
                positive_id, condition, rng, presence_threshold))
        except TemplateUnderflow:
            skipped += 1
    if skipped:
        logger.warning("%s: skipped %d underflowing templates",
                       TASK_FOCUS_OBJECT, skipped)
    logger.info("%s: built %d templates", TASK_FOCUS_OBJECT, len(templates))
    return templates


def build_change_object(
    store: AnnotationStore,
    seed: int,
    far_max: int = DEFAULT_FAR_MAX,
    quota: int | None = None,
    presence_threshold: float = PRESENCE_THRESHOLD,
) -> list[RetrievalTemplate]:
    """Condition on a category the positive adds; gallery of 15 whole images.

    The positive is the highest-ranked i_close member that contributes at
    least one category absent from the reference; the condition is one such
    category.
    """
    templates: list[RetrievalTemplate] = []
    skipped = 0
    for image_id in _scene_references(store, presence_threshold):
        if quota is not None and len(templates) >= quota:
            break
        scene = build_scene_sets(store, image_id, far_max, presence_threshold)
        rng = _template_rng(seed, TASK_CHANGE_OBJECT, image_id)
        try:
            positive_id, extras = None, []
            for cid, _ in scene.i_close:
                cand = sorted(
                    store.scene_categories(cid, presence_threshold)
                    - scene.reference_cats)
                if cand:
                    positive_id, extras = cid, cand
                    break
            if positive_id is None:
                raise TemplateUnderflow(f"{image_id}: no i_close member adds a category")
            condition = rng.choice(extras)
            templates.append(_object_gallery(
                store, TASK_CHANGE_OBJECT, image_id, scene,
                positive_id, condition, rng, presence_threshold))
        except TemplateUnderflow:
            skipped += 1
    if skipped:
        logger.warning("%s: skipped %d underflowing templates",
                       TASK_CHANGE_OBJECT, skipped)
    logger.info("%s: built %d templates", TASK_CHANGE_OBJECT, len(templates))
    return templates


def build_all_tasks(
    store: AnnotationStore,
    seed: int,
    per_type_quota: int = DEFAULT_PER_TYPE_QUOTA,
    far_max: int = DEFAULT_FAR_MAX,
    quota: int | None = None,
    dilation: float = DEFAULT_DILATION,
    presence_threshold: float = PRESENCE_THRESHOLD,
) -> list[RetrievalTemplate]:
    return (
        build_focus_attribute(store, seed, per_type_quota, dilation)
        + build_change_attribute(store, seed, per_type_quota, dilation)
        + build_focus_object(store, seed, far_max, quota, presence_threshold)
        + build_change_object(store, seed, far_max, quota, presence_threshold)
    )


@dataclass
class BenchmarkReport:
    """Validation outcome: per-task counts plus condition distributions."""

    task_counts: dict[str, int]
    condition_histogram: dict[str, Counter]
    violations: list[str]

    def format_summary(self) -> str:
        lines = []
        for task in ALL_TASKS:
            count = self.task_counts.get(task, 0)
            top = self.condition_histogram.get(task, Counter()).most_common(3)
            tops = ", ".join(f"{c}:{n}" for c, n in top)
            lines.append(f"{task}: {count} templates ({tops})")
        return "\n".join(lines)


class _TemplateChecker:
    """Per-template predicate checks against the source store."""

    def __init__(self, store: AnnotationStore, far_max: int, presence_threshold: float):
        self.store = store
        self.far_max = far_max
        self.threshold = presence_threshold

    def check(self, tmpl: RetrievalTemplate) -> list[str]:
        problems: list[str] = []
        expected = GALLERY_SIZES.get(tmpl.task)
        if expected is None:
            return [f"unknown task {tmpl.task!r}"]
        if len(tmpl.gallery) != expected:
            problems.append(f"gallery size {len(tmpl.gallery)}, expected {expected}")
        if not 0 <= tmpl.positive_index < len(tmpl.gallery):
            return problems + [f"positive_index {tmpl.positive_index} out of range"]
        keys = [t.key for t in tmpl.gallery]
        if len(set(keys)) != len(keys):
            problems.append("duplicate gallery members")
        if tmpl.reference.key in keys:
            problems.append("reference appears in its own gallery")
        wants_crop = tmpl.task in ATTRIBUTE_TASKS
        for spec in (tmpl.reference, *tmpl.gallery):
            if wants_crop and (spec.crop is None or spec.instance_id is None):
                problems.append(f"{spec.key}: attribute task requires crop + instance")
            if not wants_crop and spec.crop is not None:
                problems.append(f"{spec.key}: object task must not carry crops")
        if problems:
            return problems
        checker = {
            TASK_FOCUS_ATTRIBUTE: self._focus_attribute,
            TASK_CHANGE_ATTRIBUTE: self._change_attribute,
            TASK_FOCUS_OBJECT: self._focus_object,
            TASK_CHANGE_OBJECT: self._change_object,
        }[tmpl.task]
        return checker(tmpl)

    def _instances(self, tmpl: RetrievalTemplate) -> tuple | None:
        index = self.store.instances_by_id
        ids = [tmpl.reference.instance_id] + [t.instance_id for t in tmpl.gallery]
        if any(i not in index for i in ids):
            return None
        ref = index[tmpl.reference.instance_id]
        gallery = [index[t.instance_id] for t in tmpl.gallery]
        positive = gallery[tmpl.positive_index]
        distractors = [g for i, g in enumerate(gallery) if i != tmpl.positive_index]
        return ref, gallery, positive, distractors

    def _focus_attribute(self, tmpl: RetrievalTemplate) -> list[str]:
        resolved = self._instances(tmpl)
        if resolved is None:
            return ["gallery references unknown instances"]
        ref, gallery, positive, distractors = resolved
        problems = []
        if any(g.category != ref.category for g in gallery):
            problems.append("gallery crosses object categories")
        type_of = self.store.taxonomy.type_of
        if tmpl.condition in EXCLUDED_ATTRIBUTE_TYPES:
            problems.append(f"condition type {tmpl.condition!r} is excluded")
        shared = [
            a for a in ref.positive_attributes
            if type_of.get(a) == tmpl.condition
            and a in positive.positive_attributes
            and all(a in d.negative_attributes for d in distractors)
        ]
        if not shared:
            problems.append(
                "no shared attribute of the condition type is negative on "
                "every distractor")
        return problems

    def _change_attribute(self, tmpl: RetrievalTemplate) -> list[str]:
        resolved = self._instances(tmpl)
        if resolved is None:
            return ["gallery references unknown instances"]
        ref, _, positive, distractors = resolved
        problems = []
        attr = tmpl.condition
        type_of = self.store.taxonomy.type_of
        if attr not in type_of:
            return [f"condition {attr!r} is not a known attribute"]
        if type_of[attr] in EXCLUDED_ATTRIBUTE_TYPES:
            problems.append(f"condition type {type_of[attr]!r} is excluded")
        if positive.category != ref.category:
            problems.append("positive changes object category")
        if attr not in positive.positive_attributes:
            problems.append("positive lacks the condition attribute")
        if attr in ref.positive_attributes:
            problems.append("reference already has the condition attribute")
        if not any(type_of.get(a) == type_of[attr] for a in ref.positive_attributes):
            problems.append("reference has no positive attribute of the condition type")
        other = [d for d in distractors
                 if d.category != ref.category and attr in d.positive_attributes]
        same = [d for d in distractors
                if d.category == ref.category and attr in d.negative_attributes]
        if len(other) != 9 or len(same) != 5 or len(other) + len(same) != len(distractors):
            problems.append(
                f"distractor split {len(other)}/{len(same)}, expected 9/5")
        return problems

    def _scene(self, image_id: str) -> set[str] | None:
        rec = self.store.panoptic_by_image.get(image_id)
        if rec is None:
            return None
        return categories_present(rec, self.threshold)

    def _object_common(
        self, tmpl: RetrievalTemplate
    ) -> tuple[list[str], set[str], set[str], list[set[str]]] | None:
        ref_cats = self._scene(tmpl.reference.image_id)
        pos_cats = self._scene(tmpl.gallery[tmpl.positive_index].image_id)
        gallery_cats = [self._scene(t.image_id) for t in tmpl.gallery]
        if ref_cats is None or pos_cats is None or any(c is None for c in gallery_cats):
            return None
        problems = []
        if len(ref_cats) < MIN_REFERENCE_CATEGORIES:
            problems.append(f"reference has only {len(ref_cats)} categories")
        distractor_cats = [
            c for i, c in enumerate(gallery_cats) if i != tmpl.positive_index]
        return problems, ref_cats, pos_cats, distractor_cats

    def _close_predicate(self, cats: set[str], ref_cats: set[str]) -> bool:
        overlap = len(cats & ref_cats)
        return overlap >= CLOSE_MIN_OVERLAP and not ref_cats <= cats

    def _object_split(
        self,
        problems: list[str],
        ref_cats: set[str],
        distractor_cats: list[set[str]],
        condition: str,
    ) -> list[str]:
        close = [c for c in distractor_cats
                 if self._close_predicate(c, ref_cats) and condition not in c]
        far = [c for c in distractor_cats
               if len(c & ref_cats) <= self.far_max and condition in c]
        if len(close) != 9 or len(far) != 5:
            problems.append(f"distractor split {len(close)}/{len(far)}, expected 9/5")
        return problems

    def _focus_object(self, tmpl: RetrievalTemplate) -> list[str]:
        resolved = self._object_common(tmpl)
        if resolved is None:
            return ["gallery references images without panoptic records"]
        problems, ref_cats, pos_cats, distractor_cats = resolved
        if tmpl.condition not in ref_cats:
            problems.append("condition category absent from the reference scene")
        if tmpl.condition not in pos_cats:
            problems.append("condition category absent from the positive")
        if not self._close_predicate(pos_cats, ref_cats):
            problems.append("positive is not an i_close member")
        return self._object_split(problems, ref_cats, distractor_cats, tmpl.condition)

    def _change_object(self, tmpl: RetrievalTemplate) -> list[str]:
        resolved = self._object_common(tmpl)
        if resolved is None:
            return ["gallery references images without panoptic records"]
        problems, ref_cats, pos_cats, distractor_cats = resolved
        if tmpl.condition in ref_cats:
            problems.append("condition category already in the reference scene")
        if tmpl.condition not in pos_cats:
            problems.append("condition category absent from the positive")
        if not self._close_predicate(pos_cats, ref_cats):
            problems.append("positive is not an i_close member")
        return self._object_split(problems, ref_cats, distractor_cats, tmpl.condition)


def validate_benchmark(
    templates: Sequence[RetrievalTemplate],
    store: AnnotationStore,
    far_max: int = DEFAULT_FAR_MAX,
    presence_threshold: float = PRESENCE_THRESHOLD,
) -> BenchmarkReport:
    """Check every template against its task contract.

    Returns the report when everything passes; raises ValidationError listing
    every violated template otherwise.
    """
    checker = _TemplateChecker(store, far_max, presence_threshold)
    counts: dict[str, int] = {}
    histogram: dict[str, Counter] = {}
    violations: list[str] = []
    for i, tmpl in enumerate(templates):
        counts[tmpl.task] = counts.get(tmpl.task, 0) + 1
        histogram.setdefault(tmpl.task, Counter())[tmpl.condition] += 1
        for problem in checker.check(tmpl):
            violations.append(f"[{tmpl.task} #{i}] {problem}")
    report = BenchmarkReport(
        task_counts=counts, condition_histogram=histogram, violations=violations)
    if violations:
        raise ValidationError(violations)
    return report


def write_templates(templates: Iterable[RetrievalTemplate], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tmpl in templates:
            fh.write(json.dumps(tmpl.to_json()) + "\n")


def read_templates(path: str | Path) -> list[RetrievalTemplate]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", str(path), lineno) from exc
            try:
                out.append(RetrievalTemplate.from_json(obj))
            except SchemaError as exc:
                raise SchemaError(str(exc), str(path), lineno) from exc
    return out
