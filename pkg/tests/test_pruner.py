import numpy as np
import pytest

from blockprune import (BlockPruner, CalibSpec, NotFittedError, SparsityTarget,
                        apply_prune, collect_stats, compute_scores, init_model,
                        sample_calibration, select_masks)
from blockprune.model import named_parameters
from conftest import tiny_config


class TestParams:
    def test_get_params_round_trip(self):
        p = BlockPruner(method="wanda", ratio=0.4, seed=3)
        q = BlockPruner(**p.get_params())
        assert q.get_params() == p.get_params()

    def test_set_params_chains_and_validates(self):
        p = BlockPruner()
        assert p.set_params(ratio=0.3, method="nisp") is p
        assert p.get_params()["ratio"] == 0.3
        with pytest.raises(ValueError, match="unknown parameter"):
            p.set_params(sparsity=0.3)


class TestFitTransform:
    def make_model(self):
        return init_model(tiny_config(n_blocks=2, causal=True), seed=4, init_std=0.3)

    def test_transform_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            BlockPruner().transform(self.make_model())

    def test_fit_requires_data_for_activation_methods(self):
        with pytest.raises(ValueError, match="calibration"):
            BlockPruner(method="bip").fit(self.make_model())

    def test_stats_free_method_fits_without_data(self):
        m = self.make_model()
        pruner = BlockPruner(method="magnitude", ratio=0.5)
        out = pruner.fit_transform(m)
        assert out.blocks[0].wu.shape[1] == 8
        assert pruner.mask_ is not None

    def test_matches_functional_pipeline(self, corpus):
        m = self.make_model()
        pruner = BlockPruner(method="bip", ratio=0.25, n_samples=8, seq_len=16, seed=9)
        fitted = pruner.fit(m, corpus)
        assert fitted is pruner
        estimator_out = pruner.transform(m)

        batch = sample_calibration(corpus, CalibSpec(n_samples=8, seq_len=16, seed=9))
        stats = collect_stats(m, batch)
        scores = compute_scores(m, "bip", stats=stats, seed=9)
        functional_out = apply_prune(m, select_masks(scores, SparsityTarget(0.25)))

        for (na, pa), (nb, pb) in zip(named_parameters(estimator_out),
                                      named_parameters(functional_out)):
            assert na == nb
            np.testing.assert_array_equal(pa, pb)

    def test_fit_accepts_sequence_list(self):
        m = self.make_model()
        batch = [np.array([1, 2, 3, 4]), np.array([5, 6, 7, 8])]
        pruner = BlockPruner(method="wanda", ratio=0.5).fit(m, batch)
        out = pruner.transform(m)
        assert out.blocks[0].wu.shape[1] == 8
