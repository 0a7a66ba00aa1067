"""Face generator, discriminators and the reenactor loss stack."""

import math

import pytest
import torch

from facegan.perceptual import IdentityExtractor, PoolingExtractor, make_extractor
from facegan.reenactor import (BACKGROUND, FACE, HAIR, MultiScaleDiscriminator,
                               PatchDiscriminator, ReenactorGenerator,
                               ReenactorLossWeights, ReenactorTrainConfig,
                               gr_forward, loss_ce, loss_radv, loss_reenactor_total,
                               loss_rp, loss_rr, mask_background, mask_face,
                               moving_average, train_reenactor)


class TestMovingAverage:
    def test_constant_sequence(self):
        assert moving_average([2.0] * 5, 3) == [2.0] * 5

    def test_window(self):
        out = moving_average([1.0, 2.0, 3.0, 4.0], 2)
        assert out == [1.0, 1.5, 2.5, 3.5]


class TestGenerator:
    def test_output_shapes_and_range(self):
        gen = ReenactorGenerator(base=8, depth=3, resolutions=(64,))
        img, seg = gen(torch.rand(2, 3, 64, 64), torch.rand(2, 1, 64, 64))
        assert img.shape == (2, 3, 64, 64)
        assert seg.shape == (2, 3, 64, 64)
        assert img.min().item() >= 0.0 and img.max().item() <= 1.0

    def test_size_mismatch(self):
        gen = ReenactorGenerator(base=8, depth=3, resolutions=(64,))
        with pytest.raises(ValueError):
            gen(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 32, 32))

    def test_indivisible_resolution(self):
        gen = ReenactorGenerator(base=8, depth=3, resolutions=(20,))
        with pytest.raises(ValueError):
            gen(torch.rand(1, 3, 20, 20), torch.rand(1, 1, 20, 20))

    def test_gr_forward_validates_stage(self):
        gen = ReenactorGenerator(base=8, depth=3, resolutions=(64,))
        with pytest.raises(ValueError):
            gr_forward(gen, torch.rand(3, 32, 32), torch.rand(1, 32, 32))

    def test_gr_forward_probabilities(self):
        gen = ReenactorGenerator(base=8, depth=3, resolutions=(32,))
        img, seg = gr_forward(gen, torch.rand(3, 32, 32), torch.rand(1, 32, 32))
        assert img.shape == (3, 32, 32) and seg.shape == (3, 32, 32)
        assert torch.allclose(seg.sum(dim=0), torch.ones(32, 32), atol=1e-6)


class TestMasks:
    def test_mask_face_labels(self):
        img = torch.ones(3, 2, 2)
        labels = torch.tensor([[BACKGROUND, FACE], [HAIR, BACKGROUND]])
        out = mask_face(img, labels)
        assert out[:, 0, 0].sum() == 0 and out[:, 1, 0].sum() == 3
        assert out[:, 0, 1].sum() == 3

    def test_mask_background_complement(self):
        img = torch.rand(3, 4, 4)
        labels = torch.randint(0, 3, (4, 4))
        assert torch.allclose(mask_face(img, labels) + mask_background(img, labels), img)

    def test_mask_face_probability_map(self):
        img = torch.ones(3, 1, 2)
        probs = torch.tensor([[[0.8, 0.1]], [[0.1, 0.8]], [[0.1, 0.1]]])
        out = mask_face(img, probs)
        assert out[:, 0, 0].sum() == 0 and out[:, 0, 1].sum() == 3

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mask_face(torch.rand(3, 4, 4), torch.zeros(2, 2))


class TestAdversarial:
    def test_stub_half_probability_values(self):
        # constant 0.5 discriminator on 3 scales: g = 3 ln 2, d = 6 ln 2
        def d_set(x):
            return [torch.full((1, 1, 2, 2), 0.5)] * 3
        g, d = loss_radv(d_set, torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8))
        assert g.item() == pytest.approx(3 * math.log(2), rel=1e-6)
        assert d.item() == pytest.approx(6 * math.log(2), rel=1e-6)

    def test_resolution_mismatch(self):
        disc = MultiScaleDiscriminator(1, 3, 8)
        with pytest.raises(ValueError):
            loss_radv(disc, torch.rand(1, 3, 16, 16), torch.rand(1, 3, 32, 32))

    def test_d_loss_does_not_touch_generator_graph(self):
        disc = MultiScaleDiscriminator(1, 3, 8)
        fake = torch.rand(1, 3, 16, 16, requires_grad=True)
        _, d = loss_radv(disc, torch.rand(1, 3, 16, 16), fake)
        d.backward()
        assert fake.grad is None  # fake branch is detached in d_loss

    def test_patch_output_in_unit_interval(self):
        disc = PatchDiscriminator(3, base=8, n_layers=2)
        out = disc(torch.rand(1, 3, 32, 32))
        assert out.min().item() > 0.0 and out.max().item() < 1.0


class TestLosses:
    def test_loss_rr(self):
        a = torch.zeros(3, 4, 4)
        b = torch.full((3, 4, 4), 0.25)
        assert loss_rr(a, b).item() == pytest.approx(0.25)
        with pytest.raises(ValueError):
            loss_rr(a, torch.zeros(3, 2, 2))

    def test_loss_rp_identity_extractor_equals_rr(self):
        a, b = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
        assert loss_rp(a, b, IdentityExtractor()).item() == pytest.approx(
            loss_rr(a, b).item(), rel=1e-6)

    def test_loss_rp_zero_for_equal(self):
        a = torch.rand(1, 3, 8, 8)
        assert loss_rp(a, a.clone(), PoolingExtractor()).item() == 0.0

    def test_loss_ce_matches_manual(self):
        logits = torch.randn(1, 3, 4, 4)
        labels = torch.randint(0, 3, (1, 4, 4))
        expect = torch.nn.functional.cross_entropy(logits, labels)
        assert loss_ce(logits, labels).item() == pytest.approx(expect.item(), rel=1e-6)

    def test_loss_ce_unbatched(self):
        val = loss_ce(torch.randn(3, 4, 4), torch.randint(0, 3, (4, 4)))
        assert torch.isfinite(val)

    def test_loss_ce_bounded_under_extreme_logits(self):
        logits = torch.full((1, 3, 2, 2), 1e9)
        logits[0, 0] = -1e9
        val = loss_ce(logits, torch.zeros(1, 2, 2, dtype=torch.long))
        assert torch.isfinite(val)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            ReenactorLossWeights(lambda_r1=-2.0)

    def test_total(self):
        w = ReenactorLossWeights(lambda_r1=2, lambda_r2=3, lambda_r3=5, lambda_r4=7)
        total, comps = loss_reenactor_total(
            torch.tensor(1.0), torch.tensor(1.0), torch.tensor(1.0), torch.tensor(1.0), w)
        assert total.item() == pytest.approx(17.0)
        assert comps["total"] == pytest.approx(17.0)


class TestExtractors:
    def test_pooling_levels(self):
        feats = PoolingExtractor(levels=3)(torch.rand(1, 3, 16, 16))
        assert [f.shape[-1] for f in feats] == [16, 8, 4]

    def test_factory(self):
        assert isinstance(make_extractor("identity"), IdentityExtractor)
        with pytest.raises(ValueError):
            make_extractor("nope")


class TestTraining:
    def make_samples(self, n=4, res=16):
        g = torch.Generator().manual_seed(0)
        return [(torch.rand(3, res, res, generator=g), torch.rand(1, res, res, generator=g),
                 torch.rand(3, res, res, generator=g),
                 torch.randint(0, 3, (res, res), generator=g)) for _ in range(n)]

    def test_empty_dataset(self):
        cfg = ReenactorTrainConfig(schedule=((16, 1),), base_width=4, depth=2,
                                   disc_base=4, n_disc_scales=1, checkpoint_dir=None)
        with pytest.raises(ValueError):
            train_reenactor([], cfg)

    def test_progressive_stages_and_history(self):
        cfg = ReenactorTrainConfig(schedule=((16, 3), (32, 3)), fade_steps=2,
                                   base_width=4, depth=2, disc_base=4,
                                   n_disc_scales=1, log_interval=1, checkpoint_dir=None)
        gen, discs, history = train_reenactor(self.make_samples(res=32), cfg)
        assert gen.resolutions == (16, 32)
        stages = [h["stage"] for h in history if "total" in h]
        assert stages == [16, 16, 16, 32, 32, 32]
        assert any(h.get("event") == "stage_32_done" for h in history)
        assert all(torch.isfinite(torch.tensor(h["total"])) for h in history if "total" in h)

    def test_determinism(self):
        cfg = ReenactorTrainConfig(schedule=((16, 3),), base_width=4, depth=2,
                                   disc_base=4, n_disc_scales=1, checkpoint_dir=None)
        g1, _, _ = train_reenactor(self.make_samples(), cfg)
        g2, _, _ = train_reenactor(self.make_samples(), cfg)
        for a, b in zip(g1.parameters(), g2.parameters()):
            assert torch.equal(a, b)
