"""Hypernetwork: weight counting, shape soundness, determinism, gradients."""

import pytest
import torch

from pointfield.hypernet import (ConfigurationError, FieldArchitecture,
                                 FieldWeights, HyperNetwork, HypernetConfig,
                                 flatten_layers, generate_weights, weight_count)


class TestWeightCount:
    def test_tiny_arch_hand_count(self):
        # layers 3 -> 2, 2 -> 4: (3*2+2) + (2*4+4) = 20
        arch = FieldArchitecture(hidden=2, depth=2, pe_bands=0)
        assert weight_count(arch) == 20

    def test_default_depth_four(self):
        arch = FieldArchitecture(hidden=64, depth=4, pe_bands=0)
        assert weight_count(arch) == 8836

    def test_matches_shape_enumeration(self):
        arch = FieldArchitecture(hidden=48, depth=5, pe_bands=6)
        total = sum(fi * fo + fo for fi, fo in arch.layer_shapes())
        assert weight_count(arch) == total

    def test_doubling_hidden_roughly_quadruples_hidden_term(self):
        small = FieldArchitecture(hidden=32, depth=6, pe_bands=0)
        big = FieldArchitecture(hidden=64, depth=6, pe_bands=0)
        hidden_small = 4 * (32 * 32 + 32)
        hidden_big = 4 * (64 * 64 + 64)
        assert (weight_count(big) - weight_count(small)) > 0
        assert hidden_big / hidden_small == pytest.approx(4.0, rel=0.1)

    def test_pe_bands_grow_input_dim(self):
        assert FieldArchitecture(pe_bands=0).in_dim == 3
        assert FieldArchitecture(pe_bands=6).in_dim == 39
        assert FieldArchitecture(pe_bands=6, feature_dim=8).in_dim == 47

    def test_depth_validation(self):
        with pytest.raises(ValueError):
            FieldArchitecture(depth=1)


class TestFieldWeights:
    def test_length_validation(self):
        arch = FieldArchitecture(hidden=2, depth=2, pe_bands=0)
        with pytest.raises(ValueError):
            FieldWeights(torch.zeros(19), arch)

    def test_unflatten_reflatten_identity(self):
        arch = FieldArchitecture(hidden=8, depth=3, pe_bands=2)
        flat = torch.randn(weight_count(arch))
        fw = FieldWeights(flat, arch)
        rebuilt = flatten_layers(fw.layers(), arch)
        assert torch.equal(rebuilt.flat, flat)

    def test_layer_shapes(self):
        arch = FieldArchitecture(hidden=8, depth=3, pe_bands=0)
        fw = FieldWeights(torch.zeros(weight_count(arch)), arch)
        shapes = [(w.shape, b.shape) for w, b in fw.layers()]
        assert shapes == [((8, 3), (8,)), ((8, 8), (8,)), ((4, 8), (4,))]


class TestGenerateWeights:
    @pytest.fixture()
    def hyper(self):
        torch.manual_seed(0)
        arch = FieldArchitecture(hidden=8, depth=3, pe_bands=2)
        return HyperNetwork(16, arch, HypernetConfig(trunk_widths=(32, 32)))

    def test_deterministic(self, hyper):
        z = torch.randn(16, generator=torch.Generator().manual_seed(1))
        a = generate_weights(hyper, z)
        b = generate_weights(hyper, z)
        assert torch.equal(a.flat, b.flat)

    def test_output_length(self, hyper):
        z = torch.zeros(16)
        fw = generate_weights(hyper, z)
        assert fw.flat.shape == (weight_count(hyper.arch),)

    def test_arch_mismatch_raises(self, hyper):
        other = FieldArchitecture(hidden=16, depth=3, pe_bands=2)
        with pytest.raises(ConfigurationError):
            generate_weights(hyper, torch.zeros(16), arch=other)

    def test_latent_dim_mismatch_raises(self, hyper):
        with pytest.raises(ConfigurationError):
            generate_weights(hyper, torch.zeros(8))

    def test_non_finite_latent_rejected(self, hyper):
        z = torch.zeros(16)
        z[0] = float("inf")
        with pytest.raises(ValueError):
            generate_weights(hyper, z)

    def test_gradient_matches_finite_differences(self):
        # Tiny config: latent D = 4, target MLP P = 20.
        torch.manual_seed(2)
        arch = FieldArchitecture(hidden=2, depth=2, pe_bands=0)
        hyper = HyperNetwork(4, arch, HypernetConfig(trunk_widths=(8,))).double()
        z = torch.randn(4, dtype=torch.float64, requires_grad=True)
        probe = torch.randn(20, dtype=torch.float64,
                            generator=torch.Generator().manual_seed(3))

        out = (hyper(z) * probe).sum()
        out.backward()
        grad = z.grad.clone()
        eps = 1e-6
        for i in range(4):
            shift = torch.zeros(4, dtype=torch.float64)
            shift[i] = eps
            with torch.no_grad():
                fd = ((hyper(z + shift) * probe).sum()
                      - (hyper(z - shift) * probe).sum()) / (2 * eps)
            rel = abs(float(fd) - float(grad[i])) / max(abs(float(fd)), 1e-8)
            assert rel < 1e-3

    def test_lipschitz_sanity_at_init(self, hyper):
        """No blowups: bounded output change for unit-ball latent moves."""
        gen = torch.Generator().manual_seed(4)
        base = torch.randn(16, generator=gen)
        with torch.no_grad():
            w0 = generate_weights(hyper, base).flat
            ratios = []
            for _ in range(16):
                delta = torch.randn(16, generator=gen)
                delta = delta / delta.norm()
                w1 = generate_weights(hyper, base + delta).flat
                assert torch.isfinite(w1).all()
                ratios.append(float((w1 - w0).norm()))
        assert max(ratios) < 1e3

    def test_init_statistics_match_fan_in(self, hyper):
        """Emitted weights at init resemble a conventionally initialized MLP."""
        z = torch.randn(16, generator=torch.Generator().manual_seed(5))
        for (w, b), (fan_in, _) in zip(generate_weights(hyper, z).layers(),
                                       hyper.arch.layer_shapes()):
            bound = 1.0 / fan_in ** 0.5
            assert float(w.abs().max()) < 2.0 * bound
            assert float(w.std()) > 0.1 * bound
