"""Network tests: depth stem shapes, injector identity/permutation, LoRA
against a dense oracle, identity at init, gradients vs finite differences."""

import math

import numpy as np
import pytest
import torch

from affkit.errors import MissingDepth, ShapeMismatch
from affkit.losses import LossConfig, total_loss
from affkit.model import (
    AffordanceModel,
    DepthFeatureInjector,
    DepthStem,
    LoRALinear,
    ModelConfig,
    backbone_state,
    load_checkpoint,
    lora_linear,
    save_checkpoint,
    trainable_parameters,
)

torch.manual_seed(0)


def small_cfg(**kw):
    base = dict(input_size=32, patch_size=8, channels=32, encoder_depth=4,
                encoder_heads=2, num_blocks=4, lora_rank=2, num_labels=2)
    base.update(kw)
    return ModelConfig(**base)


class TestDepthStem:
    def test_token_shape(self):
        stem = DepthStem(32)
        out = stem(torch.rand(1, 1, 64, 64), grid=8)
        assert out.shape == (1, 64, 32)

    def test_constant_zero_identical_tokens(self):
        stem = DepthStem(16)
        out = stem(torch.zeros(1, 1, 64, 64), grid=8)
        assert torch.isfinite(out).all()
        assert torch.allclose(out, out[:, :1, :].expand_as(out))

    def test_indivisible_input(self):
        with pytest.raises(ShapeMismatch):
            ModelConfig(input_size=450, patch_size=14)


class TestInjector:
    def test_identity_at_init(self):
        dfi = DepthFeatureInjector(16)
        f_img = torch.randn(2, 9, 16)
        f_dep = torch.randn(2, 9, 16)
        out = dfi(f_img, f_dep)
        assert torch.equal(out, f_img)  # beta = 0 -> bitwise passthrough

    def test_key_value_permutation_invariance(self):
        dfi = DepthFeatureInjector(8)
        with torch.no_grad():
            dfi.beta.copy_(torch.rand(8))
        f_img = torch.randn(1, 12, 8)
        f_dep = torch.randn(1, 12, 8)
        perm = torch.randperm(12)
        out1 = dfi(f_img, f_dep)
        out2 = dfi(f_img, f_dep[:, perm])
        assert torch.allclose(out1, out2, atol=1e-6)

    def test_hand_evaluated_case(self):
        # N=2, C=1, identity projections, beta=1: zero depth -> V=0 -> output = f_img
        dfi = DepthFeatureInjector(1)
        with torch.no_grad():
            for proj in (dfi.query_proj, dfi.key_proj, dfi.value_proj):
                proj.weight.fill_(1.0)
                proj.bias.zero_()
            dfi.beta.fill_(1.0)
        f_img = torch.tensor([[[1.0], [3.0]]])
        f_dep = torch.zeros(1, 2, 1)
        assert torch.allclose(dfi(f_img, f_dep), f_img)

    def test_shape_mismatch(self):
        dfi = DepthFeatureInjector(8)
        with pytest.raises(ShapeMismatch):
            dfi(torch.randn(1, 4, 8), torch.randn(1, 5, 8))


class TestLoRA:
    def test_zero_b_exact(self):
        layer = LoRALinear(16, 16, rank=4)
        x = torch.randn(5, 16)
        expected = torch.nn.functional.linear(x, layer.base.weight, layer.base.bias)
        assert torch.equal(layer(x), expected)

    def test_matches_dense_oracle(self):
        layer = LoRALinear(12, 8, rank=2)
        with torch.no_grad():
            layer.lora_b.normal_()
        x = torch.randn(7, 12)
        dense = layer.base.weight + layer.lora_b @ layer.lora_a
        expected = x @ dense.T + layer.base.bias
        assert torch.allclose(layer(x), expected, atol=1e-5)

    def test_functional_form(self):
        w0 = torch.randn(6, 10)
        a = torch.randn(2, 10)
        b = torch.randn(6, 2)
        x = torch.randn(4, 10)
        expected = x @ (w0 + b @ a).T
        assert torch.allclose(lora_linear(x, w0, a, b), expected, atol=1e-5)

    def test_delta_rank_bounded(self):
        layer = LoRALinear(20, 20, rank=3)
        with torch.no_grad():
            layer.lora_b.normal_()
        assert torch.linalg.matrix_rank(layer.delta_weight()).item() <= 3

    def test_rank_cap(self):
        with pytest.raises(ValueError):
            LoRALinear(16, 16, rank=5)  # max is 16 // 4 = 4

    def test_gradient_only_to_adapters(self):
        layer = LoRALinear(8, 8, rank=2)
        out = layer(torch.randn(3, 8)).sum()
        out.backward()
        assert not layer.base.weight.requires_grad
        assert layer.lora_a.grad is not None and layer.lora_b.grad is not None


class TestEncoderForward:
    def test_token_shape(self):
        cfg = small_cfg()
        model = AffordanceModel(cfg)
        tokens = model.encoder_forward(torch.randn(1, 3, 32, 32), torch.rand(1, 1, 32, 32))
        assert tokens.shape == (1, 16, 32)

    def test_identity_at_init_bitwise(self):
        cfg = small_cfg()
        model = AffordanceModel(cfg).eval()
        plain = AffordanceModel(small_cfg(dfi_enabled="off", lora_rank=0)).eval()
        shared = {k: v for k, v in model.state_dict().items()
                  if k in plain.state_dict() and "lora" not in k}
        plain.load_state_dict(shared, strict=False)
        img = torch.randn(1, 3, 32, 32)
        dep = torch.rand(1, 1, 32, 32)
        with torch.no_grad():
            s1 = model.score_maps(img, dep)
            s2 = plain.score_maps(img)
        assert torch.equal(s1, s2)

    def test_train_only_mode(self):
        model = AffordanceModel(small_cfg(dfi_enabled="train_only"))
        img = torch.randn(1, 3, 32, 32)
        model.train()
        with pytest.raises(MissingDepth):
            model.encoder_forward(img, None)
        model.eval()
        model.encoder_forward(img, None)  # depth discarded at inference

    def test_off_mode_ignores_depth(self):
        model = AffordanceModel(small_cfg(dfi_enabled="off", lora_rank=0)).eval()
        img = torch.randn(1, 3, 32, 32)
        with torch.no_grad():
            a = model.score_maps(img, None)
            b = model.score_maps(img, torch.rand(1, 1, 32, 32))
        assert torch.equal(a, b)


class TestSegment:
    def test_scores_bounded_and_threshold(self):
        model = AffordanceModel(small_cfg()).eval()
        img, dep = torch.randn(1, 3, 32, 32), torch.rand(1, 1, 32, 32)
        out = model.segment(img, dep)
        assert out.scores.shape == (2, 32, 32)
        assert out.scores.min() >= -1 - 1e-6 and out.scores.max() <= 1 + 1e-6
        hi = model.segment(img, dep, tau=1.01)
        assert (hi.labels == -1).all()
        lo = model.segment(img, dep, tau=-1.01)
        assert (lo.labels != -1).all()

    def test_foreground_monotone_in_tau(self):
        model = AffordanceModel(small_cfg()).eval()
        img, dep = torch.randn(1, 3, 32, 32), torch.rand(1, 1, 32, 32)
        taus = [-0.5, 0.0, 0.3, 0.8]
        fgs = [model.segment(img, dep, tau=t).labels != -1 for t in taus]
        for a, b in zip(fgs, fgs[1:]):
            assert (b <= a).all()  # nested foreground sets

    def test_cosine_scale_invariance(self):
        model = AffordanceModel(small_cfg()).eval()
        img, dep = torch.randn(1, 3, 32, 32), torch.rand(1, 1, 32, 32)
        out1 = model.segment(img, dep)
        with torch.no_grad():
            model.class_embeddings.mul_(torch.tensor([[3.0], [0.25]]))
        out2 = model.segment(img, dep)
        assert np.allclose(out1.scores, out2.scores, atol=1e-6)
        assert np.array_equal(out1.labels, out2.labels)

    def test_external_embeddings(self):
        emb = np.random.default_rng(1).normal(size=(2, 32))
        model = AffordanceModel(
            small_cfg(classifier_source="external"), external_embeddings=emb
        ).eval()
        assert not model.class_embeddings.requires_grad
        with pytest.raises(ValueError):
            AffordanceModel(
                small_cfg(classifier_source="external"),
                external_embeddings=np.zeros((2, 32)),
            )


class TestTrainability:
    def test_frozen_backbone_after_steps(self):
        model = AffordanceModel(small_cfg())
        before = backbone_state(model)
        opt = torch.optim.AdamW(trainable_parameters(model), lr=1e-2)
        target = torch.rand(1, 2, 32, 32)
        for _ in range(3):
            opt.zero_grad()
            scores = model.score_maps(torch.randn(1, 3, 32, 32), torch.rand(1, 1, 32, 32))
            probs = (scores + 1) / 2
            total_loss(probs, target, LossConfig()).backward()
            opt.step()
        after = backbone_state(model)
        for k in before:
            assert torch.equal(before[k], after[k]), k

    def test_trainable_set(self):
        model = AffordanceModel(small_cfg())
        names = {n for n, p in model.named_parameters() if p.requires_grad}
        for n in names:
            assert any(tag in n for tag in
                       ("lora", "dfi", "depth_stem", "embedder", "class_embeddings")), n


class TestGradients:
    def test_finite_differences_full_model(self):
        torch.manual_seed(1)
        cfg = ModelConfig(input_size=16, patch_size=8, channels=8, encoder_depth=4,
                          encoder_heads=1, num_blocks=4, lora_rank=2, num_labels=2)
        model = AffordanceModel(cfg).double().train()
        img = torch.randn(1, 3, 16, 16, dtype=torch.float64)
        dep = torch.rand(1, 1, 16, 16, dtype=torch.float64)
        target = (torch.rand(1, 2, 16, 16, dtype=torch.float64) > 0.5).double()

        def loss_fn():
            probs = (model.score_maps(img, dep) + 1) / 2
            return total_loss(probs, target, LossConfig())

        loss = loss_fn()
        params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
        grads = torch.autograd.grad(loss, [p for _, p in params])

        rng = np.random.default_rng(0)
        eps = 1e-6
        for (name, p), g in zip(params, grads):
            flat = p.data.view(-1)
            for idx in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                hi = loss_fn().item()
                flat[idx] = orig - eps
                lo = loss_fn().item()
                flat[idx] = orig
                fd = (hi - lo) / (2 * eps)
                an = g.view(-1)[idx].item()
                denom = max(abs(fd), abs(an), 1e-4)
                assert abs(fd - an) / denom < 1e-4, f"{name}[{idx}]: fd={fd} an={an}"


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        model = AffordanceModel(small_cfg()).eval()
        path = tmp_path / "model.npz"
        save_checkpoint(model, ["cut", "grasp"], path)
        loaded, vocab = load_checkpoint(path)
        assert vocab == ["cut", "grasp"]
        img, dep = torch.randn(1, 3, 32, 32), torch.rand(1, 1, 32, 32)
        with torch.no_grad():
            assert torch.equal(model.score_maps(img, dep), loaded.score_maps(img, dep))

    def test_byte_deterministic(self, tmp_path):
        model = AffordanceModel(small_cfg()).eval()
        p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
        save_checkpoint(model, ["cut", "grasp"], p1)
        save_checkpoint(model, ["cut", "grasp"], p2)
        assert p1.read_bytes() == p2.read_bytes()
