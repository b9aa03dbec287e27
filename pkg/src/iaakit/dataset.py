"""Dataset manifest model, stratified splitting, and factor-conditioned tables.

The manifest is a JSON array of image objects:

    [{"image_id": ..., "image_path": ..., "diagnosis": ..., "malignant": bool,
      "masks": [{"mask_path": ..., "annotator_id": ..., "tool": "T1|T2|T3",
                 "skill": "S1|S2"}, ...]}, ...]

Tool codes: T1 manual polygon tracing, T2 semi-automated flood fill,
T3 automated segmentation reviewed by an expert. Skill codes: S1 expert,
S2 novice.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .agreement import AgreementRecord, IaaScore
from .stats import Sample, UndefinedEffectError, cohens_d, mann_whitney

FOLDS = ("train", "valid", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)
FACTORS = ("annotator", "tool", "skill")
RELATIONS = ("same", "different")
MALIGNANCY_SLICES = ("all", "benign", "malignant")


class ManifestError(ValueError):
    """Manifest fails to parse or violates its invariants."""


class MissingFileWarning(UserWarning):
    """A manifest-referenced file does not exist on disk."""


class Tool(str, Enum):
    MANUAL_POLYGON = "T1"
    SEMI_AUTO_FLOOD_FILL = "T2"
    AUTO_REVIEWED = "T3"


class Skill(str, Enum):
    EXPERT = "S1"
    NOVICE = "S2"


@dataclass(frozen=True)
class MaskRecord:
    mask_path: str
    annotator_id: str
    tool: Tool
    skill: Skill


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    image_path: str
    diagnosis: str
    malignant: bool
    masks: tuple[MaskRecord, ...]

    @property
    def mask_count(self) -> int:
        return len(self.masks)


@dataclass(frozen=True)
class SplitAssignment:
    image_id: str
    fold: str
    stratum: tuple[bool, int, str]  # (malignant, mask count, dice bin)


@dataclass(frozen=True)
class FactorRow:
    """One cell of the factor table plus the same-vs-different comparison.

    ``p_value`` and ``cohens_d`` compare the same and different groups within
    this row's factor and malignancy slice; they are attached to both rows of
    the pair and are None when either group is empty or the effect size is
    undefined.
    """

    factor: str
    relation: str
    malignancy: str
    n_pairs: int
    mean_dice: float | None
    std_dice: float | None
    p_value: float | None
    cohens_d: float | None


@dataclass(frozen=True)
class FactorTable:
    rows: tuple[FactorRow, ...]

    def row(self, factor: str, relation: str, malignancy: str) -> FactorRow:
        for r in self.rows:
            if (r.factor, r.relation, r.malignancy) == (factor, relation, malignancy):
                return r
        raise KeyError((factor, relation, malignancy))


def _parse_mask(entry: dict, image_id: str) -> MaskRecord:
    try:
        tool = Tool(entry["tool"])
    except ValueError:
        raise ManifestError(f"image {image_id}: unknown tool code {entry.get('tool')!r}")
    try:
        skill = Skill(entry["skill"])
    except ValueError:
        raise ManifestError(f"image {image_id}: unknown skill code {entry.get('skill')!r}")
    return MaskRecord(
        mask_path=str(entry["mask_path"]),
        annotator_id=str(entry["annotator_id"]),
        tool=tool,
        skill=skill,
    )


def load_manifest(path: str | Path, check_files: bool = True) -> list[ImageRecord]:
    """Load and validate a manifest file.

    Missing referenced files produce MissingFileWarning rather than errors,
    so manifests can be validated away from the data they describe; pass
    ``check_files=False`` to skip the existence checks entirely.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ManifestError(f"{path}: manifest root must be a JSON array")
    records: list[ImageRecord] = []
    seen: set[str] = set()
    base = path.parent
    for entry in raw:
        try:
            image_id = str(entry["image_id"])
            masks = tuple(_parse_mask(m, image_id) for m in entry["masks"])
            record = ImageRecord(
                image_id=image_id,
                image_path=str(entry["image_path"]),
                diagnosis=str(entry["diagnosis"]),
                malignant=bool(entry["malignant"]),
                masks=masks,
            )
        except KeyError as exc:
            raise ManifestError(f"{path}: manifest entry missing field {exc}") from exc
        if record.image_id in seen:
            raise ManifestError(f"{path}: duplicate image_id {record.image_id!r}")
        seen.add(record.image_id)
        if check_files:
            for p in [record.image_path] + [m.mask_path for m in record.masks]:
                if not (base / p).exists() and not Path(p).exists():
                    warnings.warn(
                        f"image {record.image_id}: referenced file not found: {p}",
                        MissingFileWarning,
                        stacklevel=2,
                    )
        records.append(record)
    return records


def resolve_path(manifest_path: str | Path, ref: str) -> Path:
    """Resolve a manifest-relative file reference."""
    p = Path(ref)
    if p.is_absolute():
        return p
    return Path(manifest_path).parent / p


def dice_bin(value: float | IaaScore) -> str:
    """Bin an IAA score: low (< 0.5), medium ([0.5, 0.8]), high (> 0.8)."""
    v = value.value if isinstance(value, IaaScore) else float(value)
    if v < 0.5:
        return "low"
    if v > 0.8:
        return "high"
    return "medium"


def stratified_split(
    records: Sequence[ImageRecord],
    iaa: Mapping[str, IaaScore | float],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> list[SplitAssignment]:
    """Deterministic stratified split into train/valid/test folds.

    Strata are (malignant, mask count, dice bin) triples. Within each
    stratum, images are shuffled with the seed and each fold receives
    floor(n * ratio) items; leftover items go to the folds with the largest
    fractional quotas (ties broken train, valid, test), which keeps every
    per-stratum fold count strictly within one item of n * ratio.
    Assignments come back sorted by image_id.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    if len(ratios) != len(FOLDS) or any(r < 0 for r in ratios):
        raise ValueError(f"need {len(FOLDS)} non-negative ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    strata: dict[tuple[bool, int, str], list[str]] = {}
    for rec in records:
        if rec.image_id not in iaa:
            raise ValueError(f"no IAA score for image {rec.image_id!r}")
        key = (rec.malignant, rec.mask_count, dice_bin(iaa[rec.image_id]))
        strata.setdefault(key, []).append(rec.image_id)
    rng = np.random.default_rng(seed)
    assignments: list[SplitAssignment] = []
    for key in sorted(strata, key=lambda k: (k[0], k[1], k[2])):
        ids = sorted(strata[key])
        order = rng.permutation(len(ids))
        n = len(ids)
        counts = [int(np.floor(n * r)) for r in ratios]
        fractions = [n * r - c for r, c in zip(ratios, counts)]
        priority = sorted(range(len(FOLDS)), key=lambda i: (-fractions[i], i))
        for i in priority[: n - sum(counts)]:
            counts[i] += 1
        cursor = 0
        for fold, count in zip(FOLDS, counts):
            for idx in order[cursor : cursor + count]:
                assignments.append(SplitAssignment(ids[idx], fold, key))
            cursor += count
    assignments.sort(key=lambda a: a.image_id)
    return assignments


def _mask_factor_value(mask: MaskRecord, factor: str) -> str:
    if factor == "annotator":
        return mask.annotator_id
    if factor == "tool":
        return mask.tool.value
    if factor == "skill":
        return mask.skill.value
    raise ValueError(f"unknown factor {factor!r}")


def factor_table(
    records: Sequence[ImageRecord],
    agreements: Mapping[str, Sequence[AgreementRecord]],
) -> FactorTable:
    """Intra- vs inter-factor agreement table over all pairwise records.

    Each mask pair is classified as same or different under each factor
    (annotator, tool, skill) according to the two masks' metadata, overall
    and restricted to the benign and malignant subsets. Same-vs-different
    Dice distributions are compared per slice with a two-sided Mann-Whitney
    test and Cohen's d whenever both groups are populated.
    """
    by_id = {rec.image_id: rec for rec in records}
    buckets: dict[tuple[str, str, str], list[float]] = {
        (f, r, m): [] for f in FACTORS for r in RELATIONS for m in MALIGNANCY_SLICES
    }
    for image_id, recs in agreements.items():
        rec = by_id.get(image_id)
        if rec is None:
            raise ValueError(f"agreements reference unknown image {image_id!r}")
        for pair in recs:
            if pair.mask_index_b >= rec.mask_count:
                raise ValueError(
                    f"image {image_id}: pair index {pair.mask_index_b} out of range"
                )
            mask_a = rec.masks[pair.mask_index_a]
            mask_b = rec.masks[pair.mask_index_b]
            slices = ("all", "malignant" if rec.malignant else "benign")
            for factor in FACTORS:
                same = _mask_factor_value(mask_a, factor) == _mask_factor_value(mask_b, factor)
                relation = "same" if same else "different"
                for m in slices:
                    buckets[(factor, relation, m)].append(pair.dice)
    rows: list[FactorRow] = []
    for factor in FACTORS:
        for malignancy in MALIGNANCY_SLICES:
            same_vals = buckets[(factor, "same", malignancy)]
            diff_vals = buckets[(factor, "different", malignancy)]
            p_value = d_value = None
            if same_vals and diff_vals:
                sample_same = Sample(np.array(same_vals), label="same")
                sample_diff = Sample(np.array(diff_vals), label="different")
                p_value = mann_whitney(sample_same, sample_diff).p_value
                if len(same_vals) >= 2 and len(diff_vals) >= 2:
                    try:
                        d_value = cohens_d(sample_same, sample_diff).cohens_d
                    except UndefinedEffectError:
                        d_value = None
            for relation in RELATIONS:
                vals = buckets[(factor, relation, malignancy)]
                rows.append(
                    FactorRow(
                        factor=factor,
                        relation=relation,
                        malignancy=malignancy,
                        n_pairs=len(vals),
                        mean_dice=float(np.mean(vals)) if vals else None,
                        std_dice=float(np.std(vals, ddof=1)) if len(vals) >= 2 else None,
                        p_value=p_value,
                        cohens_d=d_value,
                    )
                )
    return FactorTable(rows=tuple(rows))
