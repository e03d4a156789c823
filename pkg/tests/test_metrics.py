import itertools

import numpy as np
import pytest

from ssn_lab import (
    LabelMap,
    PortableRng,
    SampleSet,
    ShapeError,
    ValidationError,
    dsc,
    dsc_nod,
    ged_squared,
    iou_distance,
    make_toy_dataset,
    marginal_entropy,
    sample_diversity,
)

BINARY_ENTROPY_QUARTER = 0.8112781244591328  # -(.25 log2 .25 + .75 log2 .75)


def binary_map(labels):
    return LabelMap(labels=np.asarray(labels, dtype=np.int64), num_classes=1)


def random_sample_set(seed, count, num_pixels=6, num_classes=1):
    rng = PortableRng(seed)
    maps = [
        LabelMap(
            labels=np.asarray(
                rng.integers(0, max(num_classes, 2), size=num_pixels),
                dtype=np.int64,
            ),
            num_classes=num_classes,
        )
        for _ in range(count)
    ]
    return SampleSet(samples=maps)


class TestIouDistance:
    def test_identical_nonempty_maps(self):
        a = binary_map([1, 1, 0, 0])
        assert iou_distance(a, a) == 0.0

    def test_both_empty_maps(self):
        a = binary_map([0, 0, 0])
        b = binary_map([0, 0, 0])
        assert iou_distance(a, b) == 0.0

    def test_toy_maps_half_distance(self):
        data = make_toy_dataset()
        assert iou_distance(data.maps[0], data.maps[1]) == pytest.approx(
            0.5, abs=1e-15
        )

    def test_nested_binary_maps(self):
        a = binary_map([1] * 7 + [0] * 14)
        b = binary_map([1] * 14 + [0] * 7)
        assert iou_distance(a, b) == pytest.approx(0.5, abs=1e-15)

    def test_multiclass_average_excludes_background(self):
        a = LabelMap(labels=np.array([0, 1, 2, 1]), num_classes=3)
        b = LabelMap(labels=np.array([0, 1, 1, 2]), num_classes=3)
        # class 1: IoU 1/3; class 2: IoU 0 -> d = 1 - 1/6
        assert iou_distance(a, b) == pytest.approx(5.0 / 6.0, abs=1e-15)

    def test_class_absent_from_both_excluded(self):
        a = LabelMap(labels=np.array([1, 0]), num_classes=3)
        b = LabelMap(labels=np.array([1, 0]), num_classes=3)
        assert iou_distance(a, b) == 0.0

    def test_symmetry(self):
        rng = PortableRng(3)
        for _ in range(20):
            a = binary_map(np.asarray(rng.integers(0, 2, size=9)))
            b = binary_map(np.asarray(rng.integers(0, 2, size=9)))
            assert iou_distance(a, b) == iou_distance(b, a)

    def test_bounds(self):
        rng = PortableRng(4)
        for _ in range(30):
            a = binary_map(np.asarray(rng.integers(0, 2, size=5)))
            b = binary_map(np.asarray(rng.integers(0, 2, size=5)))
            assert 0.0 <= iou_distance(a, b) <= 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            iou_distance(binary_map([1, 0]), binary_map([1, 0, 0]))


class TestGedSquared:
    def test_identical_single_maps(self):
        a = SampleSet(samples=[binary_map([1, 0, 1])])
        report = ged_squared(a, a)
        assert report.ged_squared == 0.0

    def test_hand_computed_two_disjoint_maps(self):
        first = binary_map([1, 1, 0, 0])
        second = binary_map([0, 0, 1, 1])
        gt = SampleSet(samples=[first, second], source="ground_truth")
        pred = SampleSet(samples=[first], source="model")
        report = ged_squared(gt, pred)
        assert report.cross_term == pytest.approx(0.5, abs=1e-15)
        assert report.gt_self_term == pytest.approx(0.5, abs=1e-15)
        assert report.diversity == 0.0
        assert report.ged_squared == pytest.approx(0.5, abs=1e-15)

    def test_identical_multisets_in_different_order_give_exact_zero(self):
        maps = [binary_map([1, 0, 0]), binary_map([0, 1, 1]), binary_map([1, 0, 0])]
        gt = SampleSet(samples=maps, source="ground_truth")
        pred = SampleSet(samples=maps[::-1], source="model")
        assert ged_squared(gt, pred).ged_squared == 0.0

    def test_report_identity_holds(self):
        gt = random_sample_set(10, 5)
        pred = random_sample_set(11, 7)
        report = ged_squared(gt, pred)
        assert report.ged_squared == pytest.approx(
            2.0 * report.cross_term - report.gt_self_term - report.diversity,
            abs=1e-12,
        )
        assert 0.0 <= report.cross_term <= 1.0
        assert 0.0 <= report.diversity <= 1.0
        assert -1.0 <= report.ged_squared <= 2.0

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_brute_force_enumeration(self, seed):
        """Independent all-ordered-pairs loop, no grouping."""
        gt = random_sample_set(seed, int(2 + seed % 3))
        pred = random_sample_set(seed + 100, int(2 + (seed + 1) % 3))

        def mean_pairwise(set_a, set_b):
            values = [
                iou_distance(a, b)
                for a, b in itertools.product(set_a.samples, set_b.samples)
            ]
            return float(np.mean(values))

        expected = (
            2.0 * mean_pairwise(gt, pred)
            - mean_pairwise(gt, gt)
            - mean_pairwise(pred, pred)
        )
        assert ged_squared(gt, pred).ged_squared == pytest.approx(
            expected, abs=1e-12
        )

    def test_perfect_toy_model_distribution(self):
        data = make_toy_dataset()
        gt = SampleSet(samples=list(data.maps), source="ground_truth")
        # an exactly balanced large sample from the same two-atom distribution
        pred = SampleSet(samples=[data.maps[0]] * 500 + [data.maps[1]] * 500)
        report = ged_squared(gt, pred)
        assert report.ged_squared == pytest.approx(0.0, abs=1e-12)
        assert report.diversity == pytest.approx(0.25, abs=1e-12)


class TestSampleDiversity:
    def test_identical_samples_have_zero_diversity(self):
        pred = SampleSet(samples=[binary_map([1, 0, 1])] * 5)
        assert sample_diversity(pred) == 0.0

    def test_balanced_two_atom_distribution(self):
        data = make_toy_dataset()
        pred = SampleSet(samples=[data.maps[0], data.maps[1]])
        # ordered pairs incl. self: half the pairs at distance 0.5
        assert sample_diversity(pred) == pytest.approx(0.25, abs=1e-12)

    def test_single_sample_warns_and_returns_zero(self):
        pred = SampleSet(samples=[binary_map([1, 0])])
        with pytest.warns(UserWarning):
            assert sample_diversity(pred) == 0.0


class TestDsc:
    def test_perfect_match(self):
        a = binary_map([1, 1, 0])
        assert dsc(a, a, 1) == 1.0

    def test_absent_class_is_undefined_not_one(self):
        a = binary_map([0, 0, 0])
        assert dsc(a, a, 1) is None

    def test_hand_counted_overlap(self):
        pred = binary_map([1] * 7 + [0] * 14)
        gt = binary_map([1] * 14 + [0] * 7)
        assert dsc(pred, gt, 1) == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_symmetry(self):
        a = binary_map([1, 1, 0, 0, 1])
        b = binary_map([1, 0, 0, 1, 1])
        assert dsc(a, b, 1) == dsc(b, a, 1)


class TestDscNod:
    def test_all_ground_truths_empty_is_undefined(self):
        pred = binary_map([1, 0])
        gts = SampleSet(samples=[binary_map([0, 0]), binary_map([0, 0])])
        assert dsc_nod(pred, gts) is None

    def test_empty_ground_truths_excluded(self):
        x = binary_map([1, 1, 0])
        gts = SampleSet(samples=[binary_map([0, 0, 0]), x])
        assert dsc_nod(x, gts) == 1.0

    def test_duplicate_nonempty_ground_truths(self):
        x = binary_map([0, 1, 1])
        gts = SampleSet(samples=[x, x])
        assert dsc_nod(x, gts) == 1.0


class TestMarginalEntropy:
    def test_maximal_binary_entropy(self):
        rows = np.array([[0.5, 0.5], [0.5, 0.5]])
        assert np.allclose(marginal_entropy([rows]), 1.0, atol=1e-12)

    def test_one_hot_entropy_is_zero(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert np.allclose(marginal_entropy([rows]), 0.0, atol=1e-12)

    def test_quarter_three_quarter_binary(self):
        rows = np.array([[0.25, 0.75]])
        assert marginal_entropy([rows])[0] == pytest.approx(
            BINARY_ENTROPY_QUARTER, abs=1e-12
        )

    def test_averages_over_samples_before_entropy(self):
        # two confident but opposite samples average to maximal entropy
        first = np.array([[1.0, 0.0]])
        second = np.array([[0.0, 1.0]])
        assert marginal_entropy([first, second])[0] == pytest.approx(1.0, abs=1e-12)

    def test_bernoulli_vector_input_uses_two_classes(self):
        values = marginal_entropy([np.array([0.25, 0.5])])
        assert values[0] == pytest.approx(BINARY_ENTROPY_QUARTER, abs=1e-12)
        assert values[1] == pytest.approx(1.0, abs=1e-12)

    def test_three_class_base(self):
        rows = np.array([[1 / 3, 1 / 3, 1 / 3]])
        assert marginal_entropy([rows])[0] == pytest.approx(1.0, abs=1e-12)

    def test_unnormalised_rows_rejected(self):
        with pytest.raises(ValidationError):
            marginal_entropy([np.array([[0.5, 0.4]])])

    def test_bounds_on_random_inputs(self):
        rng = PortableRng(8)
        for _ in range(10):
            raw = np.abs(rng.standard_normal((4, 3))) + 1e-3
            rows = raw / raw.sum(axis=1, keepdims=True)
            values = marginal_entropy([rows])
            assert np.all(values >= 0.0) and np.all(values <= 1.0 + 1e-12)


class TestSampleSet:
    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            SampleSet(samples=[])

    def test_mixed_shapes_rejected(self):
        with pytest.raises(ShapeError):
            SampleSet(samples=[binary_map([1, 0]), binary_map([1, 0, 0])])
