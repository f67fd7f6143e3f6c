import math
import time

import numpy as np
import pytest
import torch

from vapturn.codec import SWAP_PERM, N_STATES
from vapturn.errors import ConfigError, DimensionError
from vapturn.net import (
    ModelConfig,
    VapNet,
    compute_losses,
    gradient_check,
    masked_losses,
)

TOY = ModelConfig(d_model=16, heads=2, dropout=0.0, max_frames=128, input_dim=8)


def toy_net(cfg=TOY, seed=0):
    net = VapNet(cfg, seed=seed)
    net.eval()
    return net


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.d_model == 256
        assert cfg.self_layers == 1
        assert cfg.cross_layers == 3
        assert cfg.heads == 4
        assert cfg.max_frames == 1000
        assert cfg.state_classes == 256

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=30, heads=4)
        with pytest.raises(ConfigError):
            ModelConfig(dropout=1.0)
        with pytest.raises(ConfigError):
            ModelConfig(state_classes=128)
        with pytest.raises(ConfigError):
            ModelConfig(lid_classes=-1)

    def test_dict_roundtrip(self):
        cfg = ModelConfig(d_model=64, lid_classes=3, tied_channels=True)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForwardShapes:
    def test_unbatched(self):
        net = toy_net()
        out = net(torch.randn(2, 12, 8))
        assert out.vap_logits.shape == (12, N_STATES)
        assert out.vad_logits.shape == (12, 2)
        assert out.lid_logits is None

    def test_batched_with_lid(self):
        cfg = ModelConfig(
            d_model=16, heads=2, dropout=0.0, max_frames=64, input_dim=8, lid_classes=3
        )
        net = toy_net(cfg)
        out = net(torch.randn(4, 2, 10, 8))
        assert out.vap_logits.shape == (4, 10, N_STATES)
        assert out.vad_logits.shape == (4, 10, 2)
        assert out.lid_logits.shape == (4, 10, 3)

    def test_numpy_input_accepted(self):
        net = toy_net()
        out = net(np.random.default_rng(0).normal(size=(2, 5, 8)).astype(np.float32))
        assert out.vap_logits.shape == (5, N_STATES)

    def test_rejects_bad_shapes(self):
        net = toy_net()
        with pytest.raises(DimensionError):
            net(torch.randn(3, 10, 8))  # not two channels
        with pytest.raises(DimensionError):
            net(torch.randn(2, 10, 16))  # wrong feature dim
        with pytest.raises(DimensionError):
            net(torch.randn(2, 129, 8))  # beyond max_frames

    def test_vap_probs_normalized(self):
        net = toy_net()
        probs = net(torch.randn(2, 9, 8)).vap_probs()
        torch.testing.assert_close(probs.sum(-1), torch.ones(9))
        assert (probs >= 0).all()

    def test_zero_input_finite(self):
        net = toy_net()
        out = net(torch.zeros(2, 16, 8))
        assert torch.isfinite(out.vap_logits).all()
        assert torch.isfinite(out.vad_logits).all()

    def test_seed_determinism(self):
        x = torch.randn(2, 7, 8, generator=torch.Generator().manual_seed(5))
        a = toy_net(seed=3)(x)
        b = toy_net(seed=3)(x)
        assert torch.equal(a.vap_logits, b.vap_logits)
        assert torch.equal(a.vad_logits, b.vad_logits)
        c = toy_net(seed=4)(x)
        assert not torch.equal(a.vap_logits, c.vap_logits)


class TestCausality:
    def test_suffix_perturbation_exact(self):
        # future frames must not influence past outputs, bit for bit
        cfg = ModelConfig(
            d_model=16, heads=2, dropout=0.0, max_frames=64, input_dim=8, lid_classes=2
        )
        net = toy_net(cfg)
        g = torch.Generator().manual_seed(11)
        for trial in range(10):
            t = int(torch.randint(6, 30, (1,), generator=g))
            cut = int(torch.randint(1, t, (1,), generator=g))
            x = torch.randn(2, t, 8, generator=g)
            y = x.clone()
            y[:, cut:] += torch.randn(2, t - cut, 8, generator=g)
            with torch.no_grad():
                a, b = net(x), net(y)
            assert torch.equal(a.vap_logits[:cut], b.vap_logits[:cut])
            assert torch.equal(a.vad_logits[:cut], b.vad_logits[:cut])
            assert torch.equal(a.lid_logits[:cut], b.lid_logits[:cut])
            # sanity: the perturbation itself must register somewhere
            assert not torch.equal(a.vap_logits[cut:], b.vap_logits[cut:])

    def test_truncation_matches_prefix(self):
        # truncation changes kernel reduction order, so only near-exact;
        # bit-exactness is guaranteed for same-length suffix perturbation
        net = toy_net()
        x = torch.randn(2, 20, 8, generator=torch.Generator().manual_seed(2))
        with torch.no_grad():
            full = net(x)
            part = net(x[:, :8])
        torch.testing.assert_close(
            part.vap_logits, full.vap_logits[:8], atol=1e-6, rtol=1e-6
        )


class TestTiedSymmetry:
    def test_channel_swap_permutes_outputs(self):
        cfg = ModelConfig(
            d_model=16,
            heads=2,
            dropout=0.0,
            max_frames=64,
            input_dim=8,
            tied_channels=True,
            lid_classes=3,
        )
        net = toy_net(cfg)
        x = torch.randn(2, 14, 8, generator=torch.Generator().manual_seed(9))
        with torch.no_grad():
            orig = net(x)
            swapped = net(x.flip(0))
        perm = torch.from_numpy(SWAP_PERM.copy())
        torch.testing.assert_close(
            swapped.vap_logits, orig.vap_logits[:, perm], atol=1e-5, rtol=1e-5
        )
        torch.testing.assert_close(
            swapped.vad_logits, orig.vad_logits.flip(-1), atol=1e-5, rtol=1e-5
        )
        torch.testing.assert_close(
            swapped.lid_logits, orig.lid_logits, atol=1e-5, rtol=1e-5
        )

    def test_untied_is_not_symmetric(self):
        net = toy_net()
        x = torch.randn(2, 14, 8, generator=torch.Generator().manual_seed(9))
        with torch.no_grad():
            orig = net(x)
            swapped = net(x.flip(0))
        perm = torch.from_numpy(SWAP_PERM.copy())
        assert not torch.allclose(swapped.vap_logits, orig.vap_logits[:, perm])


class TestLosses:
    def _zero_logit_out(self, t, lid_classes=0):
        from vapturn.net import NetworkOutput

        return NetworkOutput(
            vap_logits=torch.zeros(1, t, N_STATES),
            vad_logits=torch.zeros(1, t, 2),
            lid_logits=torch.zeros(1, t, lid_classes) if lid_classes else None,
        )

    def test_uniform_anchors(self):
        # zero logits: vap = ln 256, vad = 2 ln 2, lid = ln 3
        t, window = 120, 100
        out = self._zero_logit_out(t, lid_classes=3)
        labels = torch.randint(0, N_STATES, (1, t - window))
        truth = torch.randint(0, 2, (1, t, 2)).float()
        tags = torch.tensor([1])
        losses = masked_losses(out, labels, truth, None, tags)
        assert abs(losses.l_vap.item() - math.log(N_STATES)) < 1e-6
        assert abs(losses.l_vad.item() - 2 * math.log(2)) < 1e-6
        assert abs(losses.l_lid.item() - math.log(3)) < 1e-6
        expected = math.log(N_STATES) + 2 * math.log(2) + math.log(3)
        assert abs(losses.total.item() - expected) < 1e-5

    def test_confident_correct_drives_loss_down(self):
        from vapturn.net import NetworkOutput

        t, window = 30, 10
        labels = torch.randint(0, N_STATES, (1, t - window))
        vap = torch.zeros(1, t, N_STATES)
        vap[0, torch.arange(t - window), labels[0]] = 30.0
        truth = torch.randint(0, 2, (1, t, 2)).float()
        vad = (truth * 2 - 1) * 30.0
        out = NetworkOutput(vap_logits=vap, vad_logits=vad)
        losses = masked_losses(out, labels, truth)
        assert losses.l_vap.item() < 1e-6
        assert losses.l_vad.item() < 1e-6

    def test_padding_ignored(self):
        # padded frames must contribute nothing to any term
        from vapturn.net import NetworkOutput

        g = torch.Generator().manual_seed(3)
        t, window, pad = 40, 10, 13
        vap = torch.randn(1, t + pad, N_STATES, generator=g)
        vad = torch.randn(1, t + pad, 2, generator=g)
        lid = torch.randn(1, t + pad, 3, generator=g)
        labels = torch.randint(0, N_STATES, (1, t - window), generator=g)
        truth = torch.randint(0, 2, (1, t + pad, 2), generator=g).float()
        tags = torch.tensor([2])

        padded_labels = torch.cat(
            [labels, torch.full((1, pad), -1, dtype=torch.int64)], dim=1
        )
        mask = torch.zeros(1, t + pad, dtype=torch.bool)
        mask[:, :t] = True
        out_pad = NetworkOutput(vap_logits=vap, vad_logits=vad, lid_logits=lid)
        with_pad = masked_losses(out_pad, padded_labels, truth, mask, tags)

        out_cut = NetworkOutput(
            vap_logits=vap[:, :t], vad_logits=vad[:, :t], lid_logits=lid[:, :t]
        )
        no_pad = masked_losses(out_cut, labels, truth[:, :t], None, tags)
        for key in ("l_vap", "l_vad", "l_lid", "total"):
            assert abs(with_pad.detached()[key] - no_pad.detached()[key]) < 1e-6

    def test_frame_weighted_batch_mean(self):
        # two dialogues of unequal length: mean weights frames, not dialogues
        from vapturn.net import NetworkOutput

        g = torch.Generator().manual_seed(4)
        window = 5
        t1, t2 = 25, 9
        vap = torch.randn(2, t1, N_STATES, generator=g)
        vad = torch.randn(2, t1, 2, generator=g)
        labels = torch.full((2, t1 - window), -1, dtype=torch.int64)
        labels[0] = torch.randint(0, N_STATES, (t1 - window,), generator=g)
        labels[1, : t2 - window] = torch.randint(0, N_STATES, (t2 - window,), generator=g)
        truth = torch.randint(0, 2, (2, t1, 2), generator=g).float()
        mask = torch.zeros(2, t1, dtype=torch.bool)
        mask[0] = True
        mask[1, :t2] = True
        out = NetworkOutput(vap_logits=vap, vad_logits=vad)
        batch = masked_losses(out, labels, truth, mask)

        def single(i, t):
            o = NetworkOutput(vap_logits=vap[i : i + 1, :t], vad_logits=vad[i : i + 1, :t])
            lab = labels[i : i + 1, : t - window]
            return masked_losses(o, lab, truth[i : i + 1, :t])

        a, b = single(0, t1), single(1, t2)
        na, nb = t1 - window, t2 - window
        want_vap = (a.l_vap.item() * na + b.l_vap.item() * nb) / (na + nb)
        want_vad = (a.l_vad.item() * t1 + b.l_vad.item() * t2) / (t1 + t2)
        assert abs(batch.l_vap.item() - want_vap) < 1e-5
        assert abs(batch.l_vad.item() - want_vad) < 1e-5

    def test_compute_losses_label_count_enforced(self):
        net = toy_net()
        out = net(torch.randn(2, 110, 8))
        with pytest.raises(DimensionError):
            compute_losses(out, np.zeros(110, dtype=np.int64), np.zeros((2, 110), bool))
        losses = compute_losses(
            out, np.zeros(10, dtype=np.int64), np.zeros((2, 110), bool)
        )
        assert torch.isfinite(losses.total)

    def test_lang_tag_without_head_rejected(self):
        net = toy_net()
        out = net(torch.randn(2, 110, 8))
        with pytest.raises(ConfigError):
            compute_losses(
                out, np.zeros(10, dtype=np.int64), np.zeros((2, 110), bool), lang_tag=0
            )

    def test_total_backpropagates(self):
        net = VapNet(TOY, seed=0)
        net.train()
        out = net(torch.randn(1, 2, 110, 8))
        labels = torch.randint(0, N_STATES, (1, 10))
        truth = torch.randint(0, 2, (1, 110, 2)).float()
        losses = masked_losses(out, labels, truth)
        losses.total.backward()
        grads = [p.grad for p in net.parameters() if p.grad is not None]
        assert grads and all(torch.isfinite(g).all() for g in grads)


class TestGradientCheck:
    def test_max_relative_error_small(self):
        start = time.monotonic()
        err = gradient_check(seed=0)
        elapsed = time.monotonic() - start
        assert err <= 1e-4
        assert elapsed < 60.0

    def test_rejects_dropout(self):
        cfg = ModelConfig(d_model=16, heads=2, dropout=0.1, max_frames=16, input_dim=16)
        with pytest.raises(ConfigError):
            gradient_check(cfg)

    def test_rejects_non_toy(self):
        cfg = ModelConfig(d_model=64, heads=2, dropout=0.0, max_frames=16, input_dim=16)
        with pytest.raises(ConfigError):
            gradient_check(cfg)
