import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iaakit.agreement import AgreementRecord
from iaakit.dataset import (
    ImageRecord,
    ManifestError,
    MaskRecord,
    MissingFileWarning,
    Skill,
    Tool,
    dice_bin,
    factor_table,
    load_manifest,
    stratified_split,
)


def make_record(image_id, malignant=False, annotators=("a1", "a2"), tools=None,
                skills=None):
    tools = tools or ["T1"] * len(annotators)
    skills = skills or ["S1"] * len(annotators)
    return ImageRecord(
        image_id=image_id,
        image_path=f"images/{image_id}.png",
        diagnosis="malignant" if malignant else "benign",
        malignant=malignant,
        masks=tuple(
            MaskRecord(f"masks/{image_id}_{k}.png", ann, Tool(t), Skill(s))
            for k, (ann, t, s) in enumerate(zip(annotators, tools, skills))
        ),
    )


def manifest_entry(image_id, n_masks=2, malignant=False):
    return {
        "image_id": image_id,
        "image_path": f"images/{image_id}.png",
        "diagnosis": "melanoma" if malignant else "nevus",
        "malignant": malignant,
        "masks": [
            {
                "mask_path": f"masks/{image_id}_{k}.png",
                "annotator_id": f"a{k}",
                "tool": "T1",
                "skill": "S1",
            }
            for k in range(n_masks)
        ],
    }


class TestManifest:
    def test_single_image(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([manifest_entry("img1", 2)]))
        with pytest.warns(MissingFileWarning):
            records = load_manifest(path)
        assert len(records) == 1 and records[0].mask_count == 2

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([manifest_entry("img1"), manifest_entry("img1")]))
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(path, check_files=False)

    def test_unknown_tool_rejected(self, tmp_path):
        entry = manifest_entry("img1")
        entry["masks"][0]["tool"] = "T9"
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([entry]))
        with pytest.raises(ManifestError, match="tool"):
            load_manifest(path, check_files=False)

    def test_unknown_skill_rejected(self, tmp_path):
        entry = manifest_entry("img1")
        entry["masks"][0]["skill"] = "guru"
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([entry]))
        with pytest.raises(ManifestError, match="skill"):
            load_manifest(path, check_files=False)

    def test_parse_failure(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(ManifestError):
            load_manifest(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([{"image_id": "x"}]))
        with pytest.raises(ManifestError, match="missing field"):
            load_manifest(path)

    def test_archive_scale_mask_census(self, tmp_path):
        # 2130 two-mask + 209 three-mask + 51 four-mask + 4 five-mask images
        # = 2394 images carrying 5111 masks.
        entries = []
        idx = 0
        for count, k in ((2130, 2), (209, 3), (51, 4), (4, 5)):
            for _ in range(count):
                entries.append(manifest_entry(f"img{idx:05d}", k))
                idx += 1
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(entries))
        records = load_manifest(path, check_files=False)
        assert len(records) == 2394
        assert sum(r.mask_count for r in records) == 5111


class TestDiceBin:
    @pytest.mark.parametrize(
        "value,expected",
        [(0.49, "low"), (0.5, "medium"), (0.8, "medium"), (0.81, "high"),
         (0.0, "low"), (1.0, "high")],
    )
    def test_boundaries(self, value, expected):
        assert dice_bin(value) == expected

    @given(st.floats(0.0, 1.0))
    def test_total_partition(self, value):
        assert dice_bin(value) in ("low", "medium", "high")


class TestStratifiedSplit:
    def _records(self, n, **kwargs):
        return [make_record(f"img{i:04d}", **kwargs) for i in range(n)]

    def test_twenty_items_14_3_3(self):
        records = self._records(20)
        iaa = {r.image_id: 0.9 for r in records}
        assignments = stratified_split(records, iaa, seed=1)
        counts = {f: sum(a.fold == f for a in assignments) for f in ("train", "valid", "test")}
        assert counts == {"train": 14, "valid": 3, "test": 3}

    def test_ten_items_largest_remainder(self):
        # floors 7/1/1; the leftover goes to the largest fractional quota
        # (valid and test tie at 0.5, valid wins by fold order).
        records = self._records(10)
        iaa = {r.image_id: 0.9 for r in records}
        assignments = stratified_split(records, iaa, seed=1)
        counts = {f: sum(a.fold == f for a in assignments) for f in ("train", "valid", "test")}
        assert counts == {"train": 7, "valid": 2, "test": 1}
        for fold, ratio in zip(("train", "valid", "test"), (0.7, 0.15, 0.15)):
            assert abs(counts[fold] - 10 * ratio) < 1.0

    def test_single_item_stratum_goes_to_train(self):
        records = self._records(1)
        assignments = stratified_split(records, {"img0000": 0.9}, seed=3)
        assert assignments[0].fold == "train"

    def test_missing_iaa_rejected(self):
        with pytest.raises(ValueError, match="no IAA"):
            stratified_split(self._records(3), {}, seed=0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            stratified_split([], {}, seed=0)

    def test_bad_ratios_rejected(self):
        records = self._records(3)
        iaa = {r.image_id: 0.9 for r in records}
        with pytest.raises(ValueError):
            stratified_split(records, iaa, ratios=(0.5, 0.2, 0.2), seed=0)

    def test_deterministic_and_partition(self):
        rng = np.random.default_rng(0)
        records = []
        iaa = {}
        for i in range(120):
            rec = make_record(f"img{i:04d}", malignant=bool(rng.integers(0, 2)),
                              annotators=tuple(f"a{j}" for j in range(rng.integers(2, 5))))
            records.append(rec)
            iaa[rec.image_id] = float(rng.random())
        one = stratified_split(records, iaa, seed=9)
        two = stratified_split(records, iaa, seed=9)
        assert one == two
        assert sorted(a.image_id for a in one) == sorted(r.image_id for r in records)
        assert all(sum(a.image_id == r.image_id for a in one) == 1 for r in records)
        # per-stratum deviation strictly below one item
        strata = {}
        for a in one:
            strata.setdefault(a.stratum, []).append(a.fold)
        for folds in strata.values():
            n = len(folds)
            for fold, ratio in zip(("train", "valid", "test"), (0.7, 0.15, 0.15)):
                assert abs(folds.count(fold) - n * ratio) < 1.0

    def test_global_proportions_close_for_realistic_strata(self):
        rng = np.random.default_rng(4)
        records = []
        iaa = {}
        for i in range(400):
            rec = make_record(f"img{i:04d}", malignant=bool(rng.integers(0, 2)))
            records.append(rec)
            iaa[rec.image_id] = float(rng.random())
        assignments = stratified_split(records, iaa, seed=2)
        counts = {f: sum(a.fold == f for a in assignments) for f in ("train", "valid", "test")}
        assert abs(counts["train"] / 400 - 0.70) < 0.02
        assert abs(counts["valid"] / 400 - 0.15) < 0.02
        assert abs(counts["test"] / 400 - 0.15) < 0.02

    def test_different_seeds_differ(self):
        records = self._records(40)
        iaa = {r.image_id: 0.9 for r in records}
        assert stratified_split(records, iaa, seed=1) != stratified_split(records, iaa, seed=2)


class TestFactorTable:
    def test_same_annotator_pair_classified_same(self):
        rec = make_record("img1", annotators=("a1", "a1"))
        table = factor_table([rec], {"img1": [AgreementRecord(0, 1, 0.9, None)]})
        assert table.row("annotator", "same", "all").n_pairs == 1
        assert table.row("annotator", "different", "all").n_pairs == 0

    def test_pair_classification_enumeration(self):
        rec = make_record("img1", annotators=("a1", "a1", "a2"))
        pairs = [
            AgreementRecord(0, 1, 0.9, None),
            AgreementRecord(0, 2, 0.5, None),
            AgreementRecord(1, 2, 0.4, None),
        ]
        table = factor_table([rec], {"img1": pairs})
        assert table.row("annotator", "same", "all").n_pairs == 1
        assert table.row("annotator", "different", "all").n_pairs == 2

    def test_all_distinct_annotators_empty_same_cell(self):
        rec = make_record("img1", annotators=("a1", "a2"))
        table = factor_table([rec], {"img1": [AgreementRecord(0, 1, 0.7, None)]})
        row = table.row("annotator", "same", "all")
        assert row.n_pairs == 0 and row.mean_dice is None and row.p_value is None

    def test_pair_counts_partition_per_factor(self):
        rng = np.random.default_rng(8)
        records = []
        agreements = {}
        total = 0
        for i in range(25):
            k = int(rng.integers(2, 5))
            rec = make_record(
                f"img{i:03d}",
                malignant=bool(rng.integers(0, 2)),
                annotators=tuple(f"a{rng.integers(0, 3)}" for _ in range(k)),
                tools=[("T1", "T2", "T3")[rng.integers(0, 3)] for _ in range(k)],
                skills=[("S1", "S2")[rng.integers(0, 2)] for _ in range(k)],
            )
            pairs = [
                AgreementRecord(a, b, float(rng.random()), None)
                for a in range(k)
                for b in range(a + 1, k)
            ]
            records.append(rec)
            agreements[rec.image_id] = pairs
            total += len(pairs)
        table = factor_table(records, agreements)
        for factor in ("annotator", "tool", "skill"):
            same = table.row(factor, "same", "all").n_pairs
            diff = table.row(factor, "different", "all").n_pairs
            assert same + diff == total
            ben = (table.row(factor, "same", "benign").n_pairs
                   + table.row(factor, "different", "benign").n_pairs)
            mal = (table.row(factor, "same", "malignant").n_pairs
                   + table.row(factor, "different", "malignant").n_pairs)
            assert ben + mal == total

    def test_malignancy_slices(self):
        rec_b = make_record("b1", malignant=False, annotators=("a1", "a2"))
        rec_m = make_record("m1", malignant=True, annotators=("a1", "a2"))
        agreements = {
            "b1": [AgreementRecord(0, 1, 0.9, None)],
            "m1": [AgreementRecord(0, 1, 0.4, None)],
        }
        table = factor_table([rec_b, rec_m], agreements)
        assert table.row("annotator", "different", "benign").mean_dice == 0.9
        assert table.row("annotator", "different", "malignant").mean_dice == 0.4

    def test_unknown_image_rejected(self):
        with pytest.raises(ValueError, match="unknown image"):
            factor_table([], {"ghost": [AgreementRecord(0, 1, 0.5, None)]})

    def test_out_of_range_pair_rejected(self):
        rec = make_record("img1", annotators=("a1", "a2"))
        with pytest.raises(ValueError, match="out of range"):
            factor_table([rec], {"img1": [AgreementRecord(0, 5, 0.5, None)]})
