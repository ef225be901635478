import numpy as np
import pytest

from divmix.corpus import ImageRecord, Manifest
from divmix.diversity import condensed_distances
from divmix.errors import ValidationError
from divmix.gist import DescriptorSet
from divmix.partition import (
    DIVERSE,
    SIMILAR,
    MixtureSpec,
    sample_mixture,
    sample_random,
    split_similar_diverse,
    write_partition_csv,
)

PHASH = "p" * 16


def make_class_data(positions_by_class, split="train"):
    """1-D descriptor positions per class -> (DescriptorSet, Manifest)."""
    records, rows = [], []
    for cls, positions in positions_by_class.items():
        for i, pos in enumerate(positions):
            records.append(ImageRecord(f"{cls}{i}", f"{cls}{i}.png", cls, split))
            rows.append([float(pos)])
    manifest = Manifest(tuple(records), tuple(sorted(positions_by_class)))
    dset = DescriptorSet(tuple(r.id for r in records), np.array(rows), PHASH)
    return dset, manifest


class TestSplitSimilarDiverse:
    def test_two_identical_tie_broken_by_order(self):
        dset, manifest = make_class_data({"a": [1.0, 1.0]})
        labels = split_similar_diverse(dset, manifest)
        assert labels.assignment == {"a0": SIMILAR, "a1": DIVERSE}
        assert labels.per_class_counts == {"a": (1, 1)}

    def test_collinear_medoid_and_ranking(self):
        # positions 0,1,2,10: summed distances 12, 11, 12, 27 -> medoid is 1;
        # distances to medoid 1,0,1,9 -> similar = {pos1, pos0} (order tie)
        dset, manifest = make_class_data({"a": [0.0, 1.0, 2.0, 10.0]})
        positions = np.array([0.0, 1.0, 2.0, 10.0])
        sums = np.abs(positions[:, None] - positions[None, :]).sum(axis=1)
        assert int(np.argmin(sums)) == 1  # exhaustive medoid oracle
        labels = split_similar_diverse(dset, manifest)
        assert labels.assignment == {
            "a1": SIMILAR, "a0": SIMILAR, "a2": DIVERSE, "a3": DIVERSE,
        }
        assert labels.medoid_distance["a3"] == pytest.approx(9.0)

    def test_two_cluster_outliers_all_diverse(self):
        positions = [0.0, 0.1, 0.2, 0.05, 0.15, 50.0, 51.0, 52.0, 49.0, 53.0]
        dset, manifest = make_class_data({"a": positions})
        labels = split_similar_diverse(dset, manifest)
        # brute-force oracle over the constructed set
        pos = np.array(positions)
        sums = np.abs(pos[:, None] - pos[None, :]).sum(axis=1)
        medoid = int(np.argmin(sums))
        order = np.argsort(np.abs(pos - pos[medoid]), kind="stable")
        expected_similar = {f"a{i}" for i in order[:5]}
        got_similar = {i for i, s in labels.assignment.items() if s == SIMILAR}
        assert got_similar == expected_similar
        assert all(labels.assignment[f"a{i}"] == DIVERSE for i in (5, 6, 7, 8, 9))

    def test_counts_within_one(self):
        rng = np.random.default_rng(0)
        for m in (2, 3, 7, 10, 15):
            dset, manifest = make_class_data({"a": rng.random(m)})
            labels = split_similar_diverse(dset, manifest)
            n_sim, n_div = labels.per_class_counts["a"]
            assert n_sim + n_div == m
            assert abs(n_sim - n_div) <= 1
            assert n_sim == (m + 1) // 2

    def test_class_too_small(self):
        dset, manifest = make_class_data({"a": [1.0], "b": [0.0, 2.0]})
        with pytest.raises(ValidationError, match="'a'"):
            split_similar_diverse(dset, manifest)

    def test_missing_descriptor_row(self):
        dset, manifest = make_class_data({"a": [0.0, 1.0]})
        trimmed = DescriptorSet(dset.ids[:1], dset.matrix[:1], PHASH)
        with pytest.raises(ValidationError, match="a1"):
            split_similar_diverse(trimmed, manifest)

    def test_only_train_records_partitioned(self):
        records = (
            ImageRecord("t0", "t0.png", "a", "train"),
            ImageRecord("t1", "t1.png", "a", "train"),
            ImageRecord("x0", "x0.png", "a", "test"),
        )
        manifest = Manifest(records, ("a",))
        dset = DescriptorSet(("t0", "t1", "x0"), np.zeros((3, 2)), PHASH)
        labels = split_similar_diverse(dset, manifest)
        assert set(labels.assignment) == {"t0", "t1"}

    def test_diverse_mean_distance_at_least_similar(self):
        # gaussian clouds, 20 seeds: the diverse half is never tighter on average
        for seed in range(20):
            rng = np.random.default_rng(seed)
            dset, manifest = make_class_data({
                "a": rng.standard_normal(24) * rng.uniform(0.5, 3.0),
                "b": rng.standard_normal(17) * rng.uniform(0.5, 3.0),
            })
            labels = split_similar_diverse(dset, manifest)
            rows = {i: dset.matrix[k] for k, i in enumerate(dset.ids)}
            for cls in ("a", "b"):
                members = [r.id for r in manifest.records if r.class_label == cls]
                sim = np.array([rows[i] for i in members
                                if labels.assignment[i] == SIMILAR])
                div = np.array([rows[i] for i in members
                                if labels.assignment[i] == DIVERSE])
                mean_sim = condensed_distances(sim).mean()
                mean_div = condensed_distances(div).mean()
                assert mean_div >= mean_sim


def big_partitioned(n=40, classes=("a", "b")):
    rng = np.random.default_rng(1)
    data = {c: np.sort(rng.random(n)) for c in classes}
    dset, manifest = make_class_data(data)
    return split_similar_diverse(dset, manifest), manifest


class TestSampleMixture:
    def test_pure_similar(self):
        labels, manifest = big_partitioned()
        out = sample_mixture(labels, manifest, MixtureSpec(p=1.0, n_per_class=10, seed=0))
        assert all(labels.assignment[r.id] == SIMILAR for r in out.records)
        assert len(out.records) == 20

    def test_pure_diverse(self):
        labels, manifest = big_partitioned()
        out = sample_mixture(labels, manifest, MixtureSpec(p=0.0, n_per_class=10, seed=0))
        assert all(labels.assignment[r.id] == DIVERSE for r in out.records)

    def test_paper_proportions_75_25(self):
        labels, manifest = big_partitioned(n=200)
        out = sample_mixture(labels, manifest, MixtureSpec(p=0.75, n_per_class=100, seed=3))
        for cls in manifest.classes:
            chosen = [r for r in out.records if r.class_label == cls]
            n_sim = sum(labels.assignment[r.id] == SIMILAR for r in chosen)
            assert (n_sim, len(chosen) - n_sim) == (75, 25)

    def test_round_half_up(self):
        labels, manifest = big_partitioned(n=40)
        out = sample_mixture(labels, manifest, MixtureSpec(p=0.5, n_per_class=25, seed=0))
        chosen = [r for r in out.records if r.class_label == "a"]
        n_sim = sum(labels.assignment[r.id] == SIMILAR for r in chosen)
        assert n_sim == 13  # round(12.5) rounds half up

    def test_shortfall_names_class_and_amount(self):
        labels, manifest = big_partitioned(n=10)  # pools of 5 per class
        with pytest.raises(ValidationError, match=r"'a'.*short 3"):
            sample_mixture(labels, manifest, MixtureSpec(p=1.0, n_per_class=8, seed=0))

    def test_deterministic(self):
        labels, manifest = big_partitioned()
        spec = MixtureSpec(p=0.5, n_per_class=12, seed=9)
        assert sample_mixture(labels, manifest, spec) == sample_mixture(labels, manifest, spec)

    def test_no_duplicates_and_train_only(self):
        labels, manifest = big_partitioned()
        out = sample_mixture(labels, manifest, MixtureSpec(p=0.5, n_per_class=15, seed=2))
        ids = [r.id for r in out.records]
        assert len(ids) == len(set(ids))
        assert all(r.split == "train" for r in out.records)

    def test_monotone_composition(self):
        # nested pool prefixes: moving p by 1/n swaps exactly one record
        labels, manifest = big_partitioned(n=40)
        n = 20
        previous = None
        for k in range(n + 1):
            spec = MixtureSpec(p=k / n, n_per_class=n, seed=5)
            current = {r.id for r in sample_mixture(labels, manifest, spec).records}
            if previous is not None:
                assert len(current - previous) == 2  # one swap per class
                assert len(previous - current) == 2
            previous = current


class TestSampleRandom:
    def test_full_class_is_exact_membership(self):
        _, manifest = big_partitioned(n=12)
        out = sample_random(manifest, 12, seed=4)
        assert sorted(r.id for r in out.records) == sorted(r.id for r in manifest.records)
        assert [r.id for r in out.records] == [r.id for r in manifest.records]

    def test_same_seed_identical(self):
        _, manifest = big_partitioned()
        assert sample_random(manifest, 7, seed=1) == sample_random(manifest, 7, seed=1)

    def test_insufficient_class(self):
        _, manifest = big_partitioned(n=5)
        with pytest.raises(ValidationError, match="need 9"):
            sample_random(manifest, 9, seed=0)

    def test_pair_frequencies_uniform(self):
        # 4-item class, n=2: each of the 6 pairs should appear ~1/6 of the time
        records = tuple(ImageRecord(f"r{i}", f"r{i}.png", "a", "train") for i in range(4))
        manifest = Manifest(records, ("a",))
        counts = {}
        trials = 1000
        for seed in range(trials):
            out = sample_random(manifest, 2, seed=seed)
            key = tuple(sorted(r.id for r in out.records))
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 6
        expected = trials / 6
        sigma = np.sqrt(trials * (1 / 6) * (5 / 6))
        for key, count in counts.items():
            assert abs(count - expected) <= 3 * sigma


class TestPartitionCsv:
    def test_export_rows(self, tmp_path):
        labels, manifest = big_partitioned(n=6)
        path = write_partition_csv(labels, manifest, tmp_path / "p.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "id,class,subset,medoid_distance"
        assert len(lines) == 1 + len(manifest.records)


class TestMixtureSpec:
    def test_bounds(self):
        with pytest.raises(ValidationError):
            MixtureSpec(p=1.2, n_per_class=5, seed=0)
        with pytest.raises(ValidationError):
            MixtureSpec(p=0.5, n_per_class=0, seed=0)
