import json
import os

import numpy as np
import pytest

from config import ExperimentSpec
from core.auction import AuctionConfig, check_feasibility, sample_profiles
from core.tensor import Tensor, backward
from core.trainer import outer_loss, regret_terms
from mechanisms.base import price
from mechanisms.caformer import CAFormer, item_projection
from mechanisms.canet import CANet
from mechanisms.factory import build_mechanism, from_descriptor, load_mechanism, save_mechanism
from utils.error_handler import ConfigurationError, DatasetError, ShapeError, ValidationError


@pytest.fixture
def canet(config_2x2, rng) -> CANet:
    return CANet(config_2x2, rng, hidden_layers=2, hidden_units=8)


@pytest.fixture
def caformer(config_2x3, rng) -> CAFormer:
    return CAFormer(config_2x3, rng, d_model=8, heads=2)


class TestCANet:
    def test_output_shapes(self, canet, config_2x2, rng):
        bids = sample_profiles('A', config_2x2, 5, rng).values
        out = canet(bids)
        assert out.allocation.shape == (5, 2, 3)
        assert out.payments.shape == (5, 2)
        assert out.pricing.shape == (5, 2)

    def test_zero_parameters_give_uniform_outcome(self, canet):
        """Test the all-zero network allocates 1/6 everywhere and charges half the allocated value"""
        canet.zero_()
        out = canet(np.ones((1, 2, 3)))
        np.testing.assert_allclose(out.allocation.data, 1 / 6)
        np.testing.assert_allclose(out.pricing.data, 0.5)
        np.testing.assert_allclose(out.payments.data, [[0.25, 0.25]])

    def test_zero_parameters_expected_revenue(self, canet, config_2x2):
        """Test the all-zero network revenue at expected setting A values is 1/3"""
        canet.zero_()
        mean_values = np.array([[[0.5, 0.5, 1.0], [0.5, 0.5, 1.0]]])
        np.testing.assert_allclose(canet(mean_values).payments.data.sum(), 1 / 3)

    def test_individual_rationality(self, canet, config_2x2, rng):
        """Test payments never exceed the allocated value"""
        values = sample_profiles('B', config_2x2, 64, rng).values
        out = canet(values)
        allocated = np.sum(out.allocation.data * values, axis=-1)
        assert np.all(out.payments.data <= allocated + 1e-12)
        assert np.all(out.payments.data >= 0)

    def test_feasible(self, canet, config_2x2, rng):
        values = sample_profiles('B', config_2x2, 64, rng).values
        assert check_feasibility(canet(values).allocation.data, config_2x2).feasible

    def test_bid_checks(self, canet):
        with pytest.raises(ShapeError):
            canet(np.ones((1, 3, 3)))
        with pytest.raises(ValidationError):
            canet(-np.ones((1, 2, 3)))

    def test_unbatched_outcome(self, canet):
        outcome = canet.outcome(np.ones((2, 3)))
        assert outcome.allocation.shape == (2, 3)
        assert outcome.payments.shape == (2,)

    def test_every_parameter_gets_gradient(self, canet, config_2x2, rng):
        values = sample_profiles('A', config_2x2, 4, rng).values
        backward(canet(values).payments.sum())
        assert all(p.grad is not None for p in canet.parameters())

    def test_invalid_theta(self, config_2x2, rng):
        with pytest.raises(ValidationError):
            CANet(config_2x2, rng, theta=0)


class TestPrice:
    def test_fraction_of_allocated_value(self):
        pricing = Tensor(np.array([[0.5, 0.25]]))
        allocation = Tensor(np.array([[[1.0, 0.0, 0.0], [0.0, 0.5, 0.0]]]))
        bids = Tensor(np.array([[[0.8, 0.1, 0.9], [0.3, 0.6, 1.0]]]))
        assert np.allclose(price(pricing, allocation, bids).data, [[0.4, 0.075]])

    def test_payment_never_exceeds_allocated_bid(self, rng):
        allocation = Tensor(rng.uniform(size=(4, 2, 3)))
        bids = Tensor(rng.uniform(size=(4, 2, 3)))
        payments = price(Tensor(rng.uniform(size=(4, 2))), allocation, bids).data
        assert np.all(payments <= (allocation.data * bids.data).sum(axis=-1))


class TestItemProjection:
    def test_squares_on_singletons(self, config_2x2):
        """Test b' holds bᵀ b restricted to singleton rows"""
        bids = Tensor(np.array([[[2.0, 3.0, 7.0]]]))
        projected = item_projection(bids, AuctionConfig(1, 2))
        np.testing.assert_allclose(projected.data, [[[4, 6, 14], [6, 9, 21]]])

    def test_bilinear_over_bidders(self, config_2x2, rng):
        """Test the projection sums per-bidder outer products"""
        bids = rng.uniform(size=(1, 2, 3))
        projected = item_projection(Tensor(bids), config_2x2).data
        expected = sum(np.outer(bids[0, i, :2], bids[0, i]) for i in range(2))
        np.testing.assert_allclose(projected[0], expected)

    def test_normalized_rows(self, config_2x3, rng):
        bids = Tensor(rng.uniform(0.1, 1, size=(4, 2, 7)))
        projected = item_projection(bids, config_2x3, normalize=True)
        assert projected.shape == (4, 3, 7)
        np.testing.assert_allclose(projected.data.sum(axis=-1), 1.0)


class TestCAFormer:
    def test_output_shapes(self, caformer, config_2x3, rng):
        out = caformer(sample_profiles('A', config_2x3, 3, rng).values)
        assert out.allocation.shape == (3, 2, 7)
        assert out.payments.shape == (3, 2)
        assert check_feasibility(out.allocation.data, config_2x3).feasible

    def test_agent_equivariance(self, caformer, config_2x3, rng):
        """Test swapping bidders swaps allocations and payments"""
        values = sample_profiles('A', config_2x3, 4, rng).values
        out = caformer(values)
        swapped = caformer(values[:, ::-1].copy())
        np.testing.assert_allclose(swapped.allocation.data, out.allocation.data[:, ::-1], atol=1e-10)
        np.testing.assert_allclose(swapped.payments.data, out.payments.data[:, ::-1], atol=1e-10)

    def test_item_equivariance(self, caformer, config_2x3, rng):
        """Test relabeling items permutes bundle columns of the allocation accordingly"""
        values = sample_profiles('A', config_2x3, 4, rng).values
        target = config_2x3.relabel_columns([2, 0, 1])
        relabeled = np.empty_like(values)
        relabeled[..., target] = values
        out = caformer(values)
        moved = caformer(relabeled)
        np.testing.assert_allclose(moved.allocation.data[..., target], out.allocation.data, atol=1e-10)
        np.testing.assert_allclose(moved.payments.data, out.payments.data, atol=1e-10)

    def test_positional_mode_breaks_agent_symmetry(self, config_2x2, rng):
        """Test agent encodings make identical bidders distinguishable"""
        model = CAFormer(config_2x2, rng, d_model=8, heads=2, positional_mode='agent_bundle')
        out = model(np.ones((1, 2, 3)))
        assert not np.allclose(out.payments.data[0, 0], out.payments.data[0, 1])

    def test_unknown_positional_mode(self, config_2x2, rng):
        with pytest.raises(ValidationError):
            CAFormer(config_2x2, rng, d_model=4, heads=2, positional_mode='items')

    def test_describe(self, caformer):
        described = caformer.describe()
        assert described['type'] == 'caformer'
        assert described['d_model'] == 8 and described['m'] == 3


class TestOuterLossGradient:
    @pytest.mark.parametrize('build', [
        lambda config: CANet(config, np.random.default_rng(3), hidden_layers=2, hidden_units=5),
        lambda config: CAFormer(config, np.random.default_rng(3), d_model=4, heads=2),
    ], ids=['canet', 'caformer'])
    def test_every_parameter_matches_finite_differences(self, build, config_2x2, finite_diff):
        """Test backward through regret and revenue against central differences for every parameter"""
        numerical_gradient, relative_error = finite_diff
        mechanism = build(config_2x2)
        data_rng = np.random.default_rng(11)
        values = sample_profiles('A', config_2x2, 3, data_rng).values
        misreports = np.clip(values + data_rng.uniform(-0.3, 0.3, size=values.shape), 0.0, None)

        def loss() -> Tensor:
            rgt, truthful = regret_terms(mechanism, values, misreports)
            rev = truthful.payments.sum(axis=-1).mean()
            return outer_loss(rev, rgt, 0.6, 0.4)

        backward(loss())
        worst = 0.0
        for name, param in mechanism.named_parameters().items():
            assert param.grad is not None, name
            numeric = numerical_gradient(lambda _: loss().item(), param.data)
            worst = max(worst, relative_error(param.grad, numeric))
        assert worst < 1e-4


class TestFactory:
    def test_build_from_spec(self, small_spec, rng):
        mechanism = build_mechanism(small_spec, rng)
        assert isinstance(mechanism, CANet)
        assert mechanism.hidden_units == 4

    def test_build_caformer_for_setting_c(self, small_train_config, tmp_path, rng):
        """Test setting C resolves to agent/bundle positional encodings"""
        spec = ExperimentSpec(setting='C', mechanism='caformer', output_dir=str(tmp_path), train=small_train_config)
        mechanism = build_mechanism(spec, rng)
        assert mechanism.positional_mode == 'agent_bundle'

    def test_classic_kind_rejected(self, small_train_config, tmp_path, rng):
        spec = ExperimentSpec(mechanism='vcg', output_dir=str(tmp_path), train=small_train_config)
        with pytest.raises(ConfigurationError):
            build_mechanism(spec, rng)

    def test_descriptor_round_trip(self, caformer):
        rebuilt = from_descriptor(caformer.describe())
        assert rebuilt.describe() == caformer.describe()

    def test_descriptor_validation(self):
        with pytest.raises(ValidationError):
            from_descriptor({'type': 'canet', 'n': 2, 'm': 2})
        with pytest.raises(ValidationError):
            from_descriptor({'type': 'mlp', 'n': 2, 'm': 2, 'theta': 1.0})

    @pytest.mark.parametrize('name', ['canet', 'caformer'])
    def test_checkpoint_round_trip(self, name, canet, caformer, tmp_path, rng):
        """Test a saved network reloads with identical outputs"""
        mechanism = canet if name == 'canet' else caformer
        values = sample_profiles('A', mechanism.config, 3, rng).values
        save_mechanism(mechanism, str(tmp_path / name), extra={'iteration': 5})
        loaded = load_mechanism(str(tmp_path / name))
        np.testing.assert_array_equal(loaded(values).allocation.data, mechanism(values).allocation.data)
        np.testing.assert_array_equal(loaded(values).payments.data, mechanism(values).payments.data)

    def test_load_without_architecture(self, canet, tmp_path):
        save_mechanism(canet, str(tmp_path))
        manifest_path = os.path.join(str(tmp_path), 'manifest.json')
        with open(manifest_path) as f:
            manifest = json.load(f)
        del manifest['architecture']
        with open(manifest_path, 'w') as f:
            json.dump(manifest, f)
        with pytest.raises(DatasetError):
            load_mechanism(str(tmp_path))
