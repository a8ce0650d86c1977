import numpy as np
import pytest

from core.auction import (
    AuctionConfig,
    MechanismOutcome,
    ValuationProfile,
    allocation_selection,
    check_feasibility,
    enumerate_bundles,
    enumerate_feasible_allocations,
    revenue,
    sample_profiles,
    support_bounds,
    utilities,
    utility,
)
from utils.error_handler import GuardError, ValidationError


class TestBundles:
    def test_enumeration_order(self):
        """Test bundles are ascending bitmasks"""
        assert enumerate_bundles(2) == [1, 2, 3]
        assert len(enumerate_bundles(5)) == 31

    @pytest.mark.parametrize('m', [0, 13])
    def test_item_count_guard(self, m):
        """Test item counts outside [1, 12] are rejected"""
        with pytest.raises(ValidationError):
            enumerate_bundles(m)

    def test_incidence(self, config_2x2):
        """Test incidence rows mark the bundles containing each item"""
        np.testing.assert_array_equal(config_2x2.incidence, [[1, 0, 1], [0, 1, 1]])

    def test_singleton_columns(self):
        """Test singleton j sits at column 2^j - 1"""
        assert AuctionConfig(2, 3).singleton_columns == [0, 1, 3]

    def test_column_out_of_range(self, config_2x2):
        """Test invalid bundle bitmasks raise"""
        with pytest.raises(ValidationError):
            config_2x2.column(4)

    def test_relabel_columns(self, config_2x2):
        """Test swapping two items swaps their singletons and fixes the full bundle"""
        np.testing.assert_array_equal(config_2x2.relabel_columns([1, 0]), [1, 0, 2])

    def test_relabel_rejects_non_permutation(self, config_2x2):
        with pytest.raises(ValidationError):
            config_2x2.relabel_columns([0, 0])

    def test_non_positive_bidders(self):
        with pytest.raises(ValidationError):
            AuctionConfig(0, 2)


class TestSampling:
    def test_setting_a_is_additive(self, config_2x2, rng):
        """Test setting A bundle values are sums of item values in [0, 1]"""
        profile = sample_profiles('A', config_2x2, 500, rng)
        v = profile.values
        assert v.shape == (500, 2, 3)
        np.testing.assert_allclose(v[..., 2], v[..., 0] + v[..., 1])
        assert v[..., :2].min() >= 0 and v[..., :2].max() <= 1

    def test_setting_b_within_support(self, config_2x3, rng):
        """Test setting B samples stay inside the support box"""
        v = sample_profiles('B', config_2x3, 2000, rng).values
        low, high = support_bounds('B', config_2x3)
        assert np.all(v >= low - 1e-12) and np.all(v <= high + 1e-12)

    def test_setting_c_asymmetric(self, config_2x2, rng):
        """Test setting C draws bidder 2 items from U[1, 5]"""
        profile = sample_profiles('C', config_2x2, 2000, rng)
        assert profile.item_values[:, 0].max() <= 2
        assert profile.item_values[:, 1].max() > 2

    def test_setting_c_needs_two_bidders(self, rng):
        with pytest.raises(ValidationError):
            sample_profiles('C', AuctionConfig(3, 2), 1, rng)

    def test_unknown_setting(self, config_2x2, rng):
        with pytest.raises(ValidationError):
            sample_profiles('D', config_2x2, 1, rng)

    def test_seed_reproducibility(self, config_2x2):
        """Test the same seed gives the same draws"""
        a = sample_profiles('B', config_2x2, 10, np.random.default_rng(3)).values
        b = sample_profiles('B', config_2x2, 10, np.random.default_rng(3)).values
        assert np.array_equal(a, b)

    def test_profile_validation(self):
        """Test profiles reject wrong rank and negative values"""
        with pytest.raises(ValidationError):
            ValuationProfile(np.ones((2, 3)), 'A', [])
        with pytest.raises(ValidationError):
            ValuationProfile(-np.ones((1, 2, 3)), 'A', [])

    def test_subset(self, config_2x2, rng):
        profile = sample_profiles('A', config_2x2, 6, rng)
        sub = profile.subset(np.array([0, 5]))
        assert sub.batch == 2
        np.testing.assert_array_equal(sub.values[1], profile.values[5])


class TestSupportBounds:
    def test_setting_b_box(self, config_2x2):
        """Test the clipped noisy box for setting B"""
        low, high = support_bounds('B', config_2x2)
        np.testing.assert_allclose(low[0], [0, 0, 1])
        np.testing.assert_allclose(high[0], [3, 3, 5])

    def test_setting_a_box(self, config_2x2):
        low, high = support_bounds('A', config_2x2)
        np.testing.assert_allclose(low, 0)
        np.testing.assert_allclose(high[1], [1, 1, 2])

    def test_nonnegative_domain(self, config_2x2):
        low, high = support_bounds('A', config_2x2, domain='nonnegative')
        assert np.all(low == 0) and np.all(np.isinf(high))


class TestEconomics:
    def test_utility_example(self):
        """Test utility of winning the full bundle at price 0.5"""
        assert utility([0.8, 0.5, 1.3], [0, 0, 1], 0.5) == pytest.approx(0.8)

    def test_utility_shape_mismatch(self):
        with pytest.raises(ValidationError):
            utility([0.8, 0.5], [0, 0, 1], 0.5)

    def test_utilities_and_revenue(self):
        """Test batched utilities and mean revenue"""
        values = np.array([[[0.8, 0.5, 1.3], [0.3, 0.9, 1.2]]])
        outcome = MechanismOutcome(np.array([[[1.0, 0, 0], [0, 1.0, 0]]]), np.array([[0.3, 0.5]]))
        np.testing.assert_allclose(utilities(values, outcome), [[0.5, 0.4]])
        assert revenue(outcome) == pytest.approx(0.8)

    def test_unbatched_revenue(self):
        assert revenue(MechanismOutcome(np.zeros((2, 3)), np.array([0.2, 0.1]))) == pytest.approx(0.3)


class TestFeasibilityCheck:
    def test_feasible_allocation(self, config_2x2):
        """Test disjoint singletons pass"""
        report = check_feasibility(np.array([[1.0, 0, 0], [0, 1.0, 0]]), config_2x2)
        assert report.feasible
        assert report.violation_count == 0

    def test_item_overlap(self, config_2x2):
        """Test giving item 0 twice is an item violation of magnitude 1"""
        report = check_feasibility(np.array([[1.0, 0, 0], [0, 0, 1.0]]), config_2x2)
        assert not report.feasible
        assert report.violations[0].constraint == 'item'
        assert report.violations[0].index == (0,)
        assert report.max_violation == pytest.approx(1.0)

    def test_bidder_and_range(self, config_2x2):
        """Test a bidder holding two bundles and a negative entry are both reported"""
        report = check_feasibility(np.array([[0.7, 0.7, 0], [-0.1, 0, 0]]), config_2x2)
        kinds = {v.constraint for v in report.violations}
        assert {'bidder', 'range'} <= kinds

    def test_violation_listing_is_capped(self, config_2x2):
        z = np.ones((50, 2, 3))
        report = check_feasibility(z, config_2x2, max_listed=10)
        assert len(report.violations) == 10
        assert report.violation_count > 10

    def test_shape_checked(self, config_2x2):
        with pytest.raises(ValidationError):
            check_feasibility(np.zeros((2, 4)), config_2x2)


class TestAllocationEnumeration:
    @pytest.mark.parametrize('n, m, count', [(1, 1, 2), (2, 2, 9), (2, 5, 243), (3, 2, 16)])
    def test_counts(self, n, m, count):
        """Test there are (n+1)^m deterministic feasible allocations"""
        assert len(enumerate_feasible_allocations(AuctionConfig(n, m))) == count

    def test_empty_first_and_disjoint(self, config_2x2):
        """Test ordering starts at the empty allocation and bidders never share items"""
        allocations = enumerate_feasible_allocations(config_2x2)
        assert allocations[0].tolist() == [0, 0]
        assert np.all(allocations[:, 0] & allocations[:, 1] == 0)

    def test_guard(self):
        with pytest.raises(GuardError):
            enumerate_feasible_allocations(AuctionConfig(2, 7))
        with pytest.raises(GuardError):
            enumerate_feasible_allocations(AuctionConfig(5, 2))

    def test_selection_is_feasible(self, config_2x3):
        """Test every one-hot selection passes the feasibility check"""
        selection = allocation_selection(enumerate_feasible_allocations(config_2x3), config_2x3)
        assert selection.shape == (27, 2, 7)
        assert check_feasibility(selection, config_2x3).feasible
