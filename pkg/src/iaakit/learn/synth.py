"""Synthetic multi-annotator dataset with a built-in agreement gap.

Each image holds one grayscale blob. Benign blobs have smooth, sharp
boundaries; malignant blobs have irregular, fuzzy boundaries. Simulated
annotators produce boundary-perturbed copies of the true blob, with the
perturbation magnitude tied to the boundary fuzziness, so the per-image
agreement score (mean pairwise Dice, computed by the agreement module) is
stochastically lower for the malignant class. Everything derives from
per-image substreams of one seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..agreement import aggregate_iaa, pairwise_agreements
from ..masks import BinaryMask, save_mask
from .network import STREAM_SYNTH
from .training import FoldData

ANNOTATOR_POOL = ("a1", "a2", "a3", "a4", "a5")
EXPERT_ANNOTATORS = frozenset({"a1", "a2", "a3"})
TOOLS = ("T1", "T2", "T3")
MASK_COUNT_CHOICES = (2, 2, 2, 3)  # mostly two annotators per image


@dataclass(frozen=True)
class SynthMask:
    mask: BinaryMask
    annotator_id: str
    tool: str
    skill: str


@dataclass(frozen=True)
class SynthImage:
    image_id: str
    image: np.ndarray  # (H, W) float64 in [0, 1]
    malignant: bool
    diagnosis: str
    masks: tuple[SynthMask, ...]
    iaa: float


@dataclass(frozen=True)
class SynthDataset:
    images: tuple[SynthImage, ...]
    side: int
    seed: int

    def iaa_values(self, malignant: bool | None = None) -> np.ndarray:
        return np.array(
            [im.iaa for im in self.images if malignant is None or im.malignant == malignant]
        )


def _radial_wobble(theta: np.ndarray, amps: np.ndarray, phases: np.ndarray,
                   harmonics: np.ndarray) -> np.ndarray:
    return np.sum(
        amps[:, None] * np.cos(harmonics[:, None] * theta[None, :] + phases[:, None]),
        axis=0,
    )


def _make_blob(side: int, malignant: bool, rng: np.random.Generator,
               pixel_noise: float):
    """Sample blob geometry; returns (image, dist, theta, boundary, fuzz)."""
    scale = side / 32.0
    cy, cx = side / 2.0 + rng.uniform(-0.06, 0.06, 2) * side
    r0 = rng.uniform(0.22, 0.32) * side
    harmonics = np.arange(2, 7)
    # Class-conditional ranges overlap, so neither boundary roughness nor
    # edge softness separates the classes on its own.
    if malignant:
        amp_scale = rng.uniform(0.04, 0.16)
        fuzz = rng.uniform(1.2, 3.2) * scale
    else:
        amp_scale = rng.uniform(0.0, 0.08)
        fuzz = rng.uniform(0.4, 2.0) * scale
    amps = amp_scale * rng.uniform(0.3, 1.0, harmonics.size) / harmonics
    phases = rng.uniform(0.0, 2.0 * np.pi, harmonics.size)
    rows, cols = np.mgrid[0:side, 0:side]
    dist = np.hypot(rows - cy, cols - cx)
    theta = np.arctan2(rows - cy, cols - cx)
    boundary = (
        r0 * (1.0 + _radial_wobble(theta.ravel(), amps, phases, harmonics))
    ).reshape(side, side)
    # Class-irrelevant nuisance: illumination shading and a variable lesion
    # contrast. Edge-gradient magnitude then confounds contrast with
    # boundary fuzz, so sharpness alone is a poor malignancy cue; the
    # agreement signal in the masks is untouched.
    contrast = rng.uniform(0.45, 0.65)
    ax, ay = rng.uniform(-0.18, 0.18, 2)
    shading = (
        rng.uniform(-0.10, 0.10)
        + ax * (cols / side - 0.5)
        + ay * (rows / side - 0.5)
    )
    edge = 1.0 / (1.0 + np.exp(-(boundary - dist) / fuzz))
    image = 0.25 + contrast * edge + shading + rng.normal(0.0, pixel_noise, (side, side))
    return np.clip(image, 0.0, 1.0), dist, theta, boundary, fuzz


def _annotator_mask(dist: np.ndarray, theta: np.ndarray, boundary: np.ndarray,
                    fuzz: float, rng: np.random.Generator) -> BinaryMask:
    """A plausible annotation: the true boundary plus smooth radial noise."""
    harmonics = np.arange(1, 5)
    amps = fuzz * rng.normal(0.0, 0.6, harmonics.size) / np.sqrt(harmonics)
    phases = rng.uniform(0.0, 2.0 * np.pi, harmonics.size)
    offset = fuzz * rng.normal(0.0, 0.5)
    side = dist.shape[0]
    perturb = _radial_wobble(theta.ravel(), amps, phases, harmonics).reshape(side, side)
    radius = np.maximum(boundary + perturb + offset, 2.0)  # never empty
    return BinaryMask(grid=dist <= radius)


def synth_generate(n: int, seed: int, side: int = 32,
                   pixel_noise: float = 0.05) -> SynthDataset:
    """Generate n images (alternating benign/malignant) with annotator masks.

    Per-image substreams make generation bit-stable for a fixed seed and
    side: image i of a larger run equals image i of a smaller one.
    """
    if n < 20:
        raise ValueError(f"need at least 20 images, got {n}")
    if side < 16:
        raise ValueError(f"side must be at least 16 pixels, got {side}")
    images = []
    for i in range(n):
        rng = np.random.default_rng((seed, STREAM_SYNTH, i))
        malignant = i % 2 == 1
        image_id = f"synth_{i:05d}"
        image, dist, theta, boundary, fuzz = _make_blob(side, malignant, rng, pixel_noise)
        n_masks = MASK_COUNT_CHOICES[rng.integers(0, len(MASK_COUNT_CHOICES))]
        masks = []
        for _ in range(n_masks):
            annotator = ANNOTATOR_POOL[rng.integers(0, len(ANNOTATOR_POOL))]
            tool = TOOLS[rng.integers(0, len(TOOLS))]
            skill = "S1" if annotator in EXPERT_ANNOTATORS else "S2"
            mask = _annotator_mask(dist, theta, boundary, fuzz, rng)
            masks.append(SynthMask(mask=mask, annotator_id=annotator, tool=tool, skill=skill))
        iaa = aggregate_iaa(pairwise_agreements([m.mask for m in masks]), image_id=image_id)
        images.append(
            SynthImage(
                image_id=image_id,
                image=image,
                malignant=malignant,
                diagnosis="irregular-blob" if malignant else "smooth-blob",
                masks=tuple(masks),
                iaa=iaa.value,
            )
        )
    return SynthDataset(images=tuple(images), side=side, seed=seed)


def write_synth_dataset(ds: SynthDataset, out_dir: str | Path) -> Path:
    """Materialize a synthetic dataset as PNGs plus a manifest; returns the
    manifest path.

    Images quantize to 8-bit grayscale; masks round-trip exactly through
    the binary PNG encoding.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for im in ds.images:
        image_rel = f"images/{im.image_id}.png"
        arr = np.clip(np.round(im.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(out / image_rel, format="PNG")
        mask_entries = []
        for k, sm in enumerate(im.masks):
            mask_rel = f"masks/{im.image_id}_mask{k}.png"
            save_mask(sm.mask, out / mask_rel)
            mask_entries.append(
                {
                    "mask_path": mask_rel,
                    "annotator_id": sm.annotator_id,
                    "tool": sm.tool,
                    "skill": sm.skill,
                }
            )
        entries.append(
            {
                "image_id": im.image_id,
                "image_path": image_rel,
                "diagnosis": im.diagnosis,
                "malignant": im.malignant,
                "masks": mask_entries,
            }
        )
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2, sort_keys=True))
    return manifest


def fold_data(ds: SynthDataset, image_ids: set[str] | None = None) -> FoldData:
    """Stack (a subset of) a synthetic dataset into trainer-ready arrays."""
    selected = [
        im for im in ds.images if image_ids is None or im.image_id in image_ids
    ]
    if not selected:
        raise ValueError("no images selected for fold")
    return FoldData(
        images=np.stack([im.image for im in selected])[:, None, :, :],
        labels=np.array([int(im.malignant) for im in selected], dtype=np.int64),
        iaa=np.array([im.iaa for im in selected]),
        image_ids=tuple(im.image_id for im in selected),
    )


def synth_folds(ds: SynthDataset, seed: int = 0) -> dict[str, FoldData]:
    """70:15:15 stratified folds of a synthetic dataset, trainer-ready."""
    from ..dataset import ImageRecord, MaskRecord, Skill, Tool, stratified_split

    records = [
        ImageRecord(
            image_id=im.image_id,
            image_path="",
            diagnosis=im.diagnosis,
            malignant=im.malignant,
            masks=tuple(
                MaskRecord(
                    mask_path="",
                    annotator_id=sm.annotator_id,
                    tool=Tool(sm.tool),
                    skill=Skill(sm.skill),
                )
                for sm in im.masks
            ),
        )
        for im in ds.images
    ]
    iaa = {im.image_id: im.iaa for im in ds.images}
    assignments = stratified_split(records, iaa, seed=seed)
    folds = {}
    for fold in ("train", "valid", "test"):
        ids = {a.image_id for a in assignments if a.fold == fold}
        if ids:
            folds[fold] = fold_data(ds, ids)
    return folds
