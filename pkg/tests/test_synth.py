import numpy as np
import pytest

from iaakit.agreement import aggregate_iaa, pairwise_agreements
from iaakit.dataset import load_manifest
from iaakit.learn import synth_folds, synth_generate, write_synth_dataset
from iaakit.masks import load_mask
from iaakit.stats import Sample, fosd_test


@pytest.fixture(scope="module")
def dataset():
    return synth_generate(80, seed=17)


class TestGeneration:
    def test_determinism(self, dataset):
        again = synth_generate(80, seed=17)
        for a, b in zip(dataset.images, again.images):
            assert np.array_equal(a.image, b.image)
            assert a.iaa == b.iaa
            assert all(x.mask == y.mask for x, y in zip(a.masks, b.masks))

    def test_prefix_stability(self, dataset):
        shorter = synth_generate(40, seed=17)
        for a, b in zip(shorter.images, dataset.images[:40]):
            assert np.array_equal(a.image, b.image) and a.iaa == b.iaa

    def test_iaa_self_consistency(self, dataset):
        for im in dataset.images[:20]:
            recomputed = aggregate_iaa(
                pairwise_agreements([m.mask for m in im.masks])
            ).value
            assert im.iaa == recomputed

    def test_classes_alternate(self, dataset):
        assert [im.malignant for im in dataset.images[:4]] == [False, True, False, True]

    def test_minimum_size_enforced(self):
        with pytest.raises(ValueError):
            synth_generate(10, seed=0)

    def test_masks_never_empty(self, dataset):
        for im in dataset.images:
            for m in im.masks:
                assert m.mask.foreground_count > 0

    def test_benign_agreement_dominates(self):
        ds = synth_generate(500, seed=23)
        ben = Sample(ds.iaa_values(False), "benign")
        mal = Sample(ds.iaa_values(True), "malignant")
        reject = fosd_test(mal, ben, iterations=300, seed=1)
        keep = fosd_test(ben, mal, iterations=300, seed=1)
        assert reject.p_value < 0.001
        assert keep.p_value >= 0.001


class TestMaterialization:
    def test_written_dataset_round_trips(self, dataset, tmp_path):
        manifest = write_synth_dataset(dataset, tmp_path)
        records = load_manifest(manifest)  # file checks pass: everything exists
        assert len(records) == len(dataset.images)
        by_id = {im.image_id: im for im in dataset.images}
        for rec in records[:10]:
            src = by_id[rec.image_id]
            assert rec.malignant == src.malignant
            assert rec.mask_count == len(src.masks)
            for mask_rec, sm in zip(rec.masks, src.masks):
                loaded = load_mask(tmp_path / mask_rec.mask_path)
                assert loaded == sm.mask  # binary PNG round trip is exact
                assert mask_rec.annotator_id == sm.annotator_id

    def test_written_iaa_matches_recomputation(self, dataset, tmp_path):
        manifest = write_synth_dataset(dataset, tmp_path)
        records = load_manifest(manifest)
        by_id = {im.image_id: im for im in dataset.images}
        for rec in records[:10]:
            masks = [load_mask(tmp_path / m.mask_path) for m in rec.masks]
            score = aggregate_iaa(pairwise_agreements(masks)).value
            assert score == by_id[rec.image_id].iaa


class TestFolds:
    def test_folds_partition_dataset(self, dataset):
        folds = synth_folds(dataset, seed=3)
        ids = [i for f in folds.values() for i in f.image_ids]
        assert sorted(ids) == sorted(im.image_id for im in dataset.images)
        assert set(folds) == {"train", "valid", "test"}

    def test_fold_arrays_consistent(self, dataset):
        folds = synth_folds(dataset, seed=3)
        by_id = {im.image_id: im for im in dataset.images}
        fold = folds["valid"]
        for i, image_id in enumerate(fold.image_ids):
            src = by_id[image_id]
            assert np.array_equal(fold.images[i, 0], src.image)
            assert fold.labels[i] == int(src.malignant)
            assert fold.iaa[i] == src.iaa
