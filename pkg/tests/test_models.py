import numpy as np
import pytest

from cycleadapt.autodiff import Tensor, no_grad
from cycleadapt.models import ArchConfig, build_suite, predict, translate
from cycleadapt.nn import collect_params

from conftest import SMALL_ARCH


class TestBuildSuite:
    def test_domain_disc_width_from_exact_conditioning(self):
        cfg = ArchConfig(input_dim=2, num_classes=2, feature_dim=16)
        suite = build_suite(cfg)
        assert cfg.domain_disc_in_dim() == 32  # 16*2 <= 4096 -> exact
        assert suite.domain_disc.in_dim == 32
        assert suite.maps is None

    def test_randomized_branch_gets_maps(self):
        cfg = ArchConfig(
            input_dim=2, num_classes=2, feature_dim=16,
            cond_threshold=16, cond_randomized_dim=24,
        )
        suite = build_suite(cfg)
        assert suite.maps is not None
        assert suite.domain_disc.in_dim == 24

    def test_same_seed_identical_parameter_bytes(self):
        a = build_suite(SMALL_ARCH)
        b = build_suite(SMALL_ARCH)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert pa.data.tobytes() == pb.data.tobytes()

    def test_different_seed_differs(self):
        from dataclasses import replace

        a = build_suite(SMALL_ARCH)
        b = build_suite(replace(SMALL_ARCH, seed=SMALL_ARCH.seed + 1))
        assert any(
            not np.array_equal(pa.data, pb.data)
            for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_translators_map_feature_space_to_itself(self, small_suite):
        assert small_suite.s2t.in_dim == small_suite.s2t.out_dim == SMALL_ARCH.feature_dim
        assert small_suite.t2s.in_dim == small_suite.t2s.out_dim == SMALL_ARCH.feature_dim

    def test_depths(self, small_suite):
        assert len(small_suite.features.layers) == 3  # two hidden layers
        assert len(small_suite.predictor.layers) == 1
        assert len(small_suite.domain_disc.layers) == 3
        assert len(small_suite.s2t.layers) == 4
        assert len(small_suite.t2s.layers) == 4
        assert len(small_suite.source_disc.layers) == 3
        assert len(small_suite.target_disc.layers) == 3

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            ArchConfig(input_dim=2, num_classes=1)
        with pytest.raises(ValueError):
            ArchConfig(input_dim=0, num_classes=2)

    def test_maps_excluded_from_parameters(self):
        cfg = ArchConfig(
            input_dim=2, num_classes=2, feature_dim=8,
            cond_threshold=4, cond_randomized_dim=8,
        )
        suite = build_suite(cfg)
        param_ids = {id(p.data) for p in suite.parameters()}
        assert id(suite.maps.r_f) not in param_ids
        assert id(suite.maps.r_p) not in param_ids


class TestForwardPass:
    def test_all_networks_finite_and_discs_in_unit_interval(self, small_suite, small_batch):
        x_s, _, x_t = small_batch
        with no_grad():
            f, p = predict(small_suite, Tensor(x_s))
            dd = small_suite.domain_disc(small_suite.condition(f, p))
            fake_t = small_suite.s2t(f)
            fake_s = small_suite.t2s(small_suite.features(Tensor(x_t)))
            ds = small_suite.source_disc(f)
            dt = small_suite.target_disc(fake_t)
        for t in (f, p, dd, fake_t, fake_s, ds, dt):
            assert np.all(np.isfinite(t.data))
        for t in (dd, ds, dt):
            assert np.all((t.data > 0.0) & (t.data < 1.0))

    def test_predict_probability_rows_sum_to_one(self, small_suite, small_batch):
        x_s, _, _ = small_batch
        _, p = predict(small_suite, Tensor(x_s))
        np.testing.assert_allclose(p.data.sum(axis=1), np.ones(4), atol=1e-12)

    def test_predict_shapes(self, small_suite):
        x = Tensor(np.random.default_rng(0).standard_normal((7, 3)))
        f, p = predict(small_suite, x)
        assert f.shape == (7, SMALL_ARCH.feature_dim)
        assert p.shape == (7, SMALL_ARCH.num_classes)

    def test_predict_is_pure(self, small_suite, small_batch):
        x_s, _, _ = small_batch
        f1, p1 = predict(small_suite, Tensor(x_s))
        f2, p2 = predict(small_suite, Tensor(x_s))
        assert np.array_equal(f1.data, f2.data)
        assert np.array_equal(p1.data, p2.data)

    def test_argmax_defines_predicted_label(self, small_suite, small_batch):
        x_s, _, _ = small_batch
        _, p = predict(small_suite, Tensor(x_s))
        labels = p.data.argmax(axis=1)
        assert labels.shape == (4,)
        assert np.all((labels >= 0) & (labels < SMALL_ARCH.num_classes))


class TestTranslate:
    def test_shape_preserved(self, small_suite):
        f = Tensor(np.random.default_rng(1).standard_normal((6, SMALL_ARCH.feature_dim)))
        for direction in ("s2t", "t2s"):
            assert translate(small_suite, f, direction).shape == f.shape

    def test_untrained_round_trip_differs_from_input(self, small_suite):
        f = Tensor(np.random.default_rng(2).standard_normal((5, SMALL_ARCH.feature_dim)))
        back = translate(small_suite, translate(small_suite, f, "s2t"), "t2s")
        assert float(np.abs(back.data - f.data).max()) > 1e-6

    def test_unknown_direction(self, small_suite):
        f = Tensor(np.zeros((1, SMALL_ARCH.feature_dim)))
        with pytest.raises(ValueError):
            translate(small_suite, f, "sideways")


def test_param_count_matches_closed_form(small_suite):
    def mlp_count(dims):
        return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))

    a = SMALL_ARCH
    expected = (
        mlp_count((a.input_dim, a.feature_hidden, a.feature_hidden, a.feature_dim))
        + mlp_count((a.feature_dim, a.num_classes))
        + mlp_count((a.feature_dim * a.num_classes, a.domain_disc_hidden,
                     a.domain_disc_hidden, 1))
        + 2 * mlp_count((a.feature_dim, a.translator_hidden, a.translator_hidden,
                         a.translator_hidden, a.feature_dim))
        + 2 * mlp_count((a.feature_dim, a.sample_disc_hidden, a.sample_disc_hidden, 1))
    )
    assert small_suite.param_count() == expected
    assert sum(p.size for p in collect_params(list(small_suite.networks().values()))) == expected
