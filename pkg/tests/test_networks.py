import pytest
import torch

from conftest import autodiff_gradients, fd_gradients, max_rel_error, param_count

from coopdiff.errors import ConfigError, ContractViolationError
from coopdiff.networks import (
    DiscriminatorSpec,
    EmaState,
    FrozenFeatureExtractor,
    GeneratorSpec,
    MLPGenerator,
    UNetGenerator,
    discriminate,
    ema_update,
    extract_features,
    generate,
    half_discriminator_from_generator,
)
from coopdiff.schedules import ScheduleConfig, build_schedule


class TestGenerator:
    def test_zero_init_head_outputs_zero(self):
        G = GeneratorSpec(data_shape=(2,)).build()
        x = torch.randn(8, 2, dtype=torch.float64)
        table = build_schedule(ScheduleConfig(num_steps=10))
        pred = generate(G, x, 3, table)
        assert torch.equal(pred.value, torch.zeros(8, 2, dtype=torch.float64))
        assert pred.kind == "x0"

    def test_output_shape_matches_data_shape(self):
        G = GeneratorSpec(data_shape=(5,), hidden_width=16, num_blocks=2).build()
        x = torch.randn(7, 5, dtype=torch.float64)
        assert G(x, 9).shape == (7, 5)

    def test_time_sensitivity(self):
        G = GeneratorSpec(data_shape=(2,), zero_init_head=False).build()
        x = torch.randn(4, 2, dtype=torch.float64)
        assert not torch.allclose(G(x, 1), G(x, 900))

    def test_class_conditioning(self):
        G = GeneratorSpec(data_shape=(2,), conditioning="class", num_classes=4,
                          zero_init_head=False).build()
        x = torch.randn(4, 2, dtype=torch.float64)
        out_a = G(x, 1, torch.tensor([0, 1, 2, 3]))
        out_b = G(x, 1, torch.tensor([3, 2, 1, 0]))
        assert not torch.allclose(out_a, out_b)
        with pytest.raises(ConfigError):
            G(x, 1)  # condition required

    def test_embedding_conditioning(self):
        G = GeneratorSpec(data_shape=(2,), conditioning="embedding", cond_dim=3,
                          zero_init_head=False).build()
        x = torch.randn(4, 2, dtype=torch.float64)
        c = torch.randn(4, 3, dtype=torch.float64)
        assert G(x, 1, c).shape == (4, 2)

    def test_unconditional_rejects_condition(self):
        G = GeneratorSpec(data_shape=(2,)).build()
        x = torch.randn(4, 2, dtype=torch.float64)
        with pytest.raises(ConfigError):
            G(x, 1, torch.zeros(4, 2, dtype=torch.float64))

    def test_differentiability_fd_probe(self):
        G = GeneratorSpec(data_shape=(2,), hidden_width=3, num_blocks=1, embed_dim=3,
                          zero_init_head=False).build()
        x = torch.randn(5, 2, dtype=torch.float64)
        w = torch.randn(5, 2, dtype=torch.float64)

        def loss_fn():
            return (G(x, 7) * w).sum()

        fd = fd_gradients(loss_fn, list(G.parameters()))
        ad = autodiff_gradients(loss_fn, list(G.parameters()))
        assert max_rel_error(fd, ad) < 1e-4


class TestDiscriminator:
    def test_zero_init_head_gives_zero_logit(self):
        D = DiscriminatorSpec(data_shape=(2,)).build()
        x = torch.randn(6, 2, dtype=torch.float64)
        logits = discriminate(D, x, 5)
        assert logits.shape == (6,)
        assert torch.equal(logits, torch.zeros(6, dtype=torch.float64))

    def test_time_conditioning_live(self):
        D = DiscriminatorSpec(data_shape=(2,)).build()
        for p in D.head.parameters():
            torch.nn.init.normal_(p, std=0.5)
        D.double()
        x = torch.randn(6, 2, dtype=torch.float64)
        assert not torch.allclose(discriminate(D, x, 1), discriminate(D, x, 900))

    def test_non_finite_input_rejected(self):
        D = DiscriminatorSpec(data_shape=(2,)).build()
        x = torch.randn(4, 2, dtype=torch.float64)
        x[0, 0] = float("nan")
        with pytest.raises(ValueError):
            discriminate(D, x, 1)


class TestHalfBackbone:
    def test_mlp_half_reuses_first_half_parameters(self):
        G = GeneratorSpec(data_shape=(2,), hidden_width=64, num_blocks=3).build()
        D = half_discriminator_from_generator(G)
        assert D.reused_parameters >= 0.5 * param_count(G)
        assert torch.equal(D.in_proj.weight, G.in_proj.weight)
        assert torch.equal(D.blocks[0].lin1.weight, G.blocks[0].lin1.weight)
        # fresh zero head on top
        x = torch.randn(4, 2, dtype=torch.float64)
        assert torch.equal(discriminate(D, x, 3), torch.zeros(4, dtype=torch.float64))

    def test_unet_half_reuses_down_path(self):
        G = GeneratorSpec(data_shape=(1, 16, 16), hidden_width=32, embed_dim=16).build()
        D = half_discriminator_from_generator(G)
        assert D.reused_parameters >= 0.5 * param_count(G)
        x = torch.randn(2, 1, 16, 16, dtype=torch.float64)
        assert discriminate(D, x, 3).shape == (2,)

    def test_spec_build_requires_generator(self):
        spec = DiscriminatorSpec(backbone="half_generator", data_shape=(2,))
        with pytest.raises(ConfigError):
            spec.build()


class TestUNet:
    def test_shape_contract(self):
        G = GeneratorSpec(data_shape=(3, 16, 16), hidden_width=32, embed_dim=16).build()
        assert isinstance(G, UNetGenerator)
        x = torch.randn(2, 3, 16, 16, dtype=torch.float64)
        assert G(x, 5).shape == (2, 3, 16, 16)
        feats = G.features(x, 5)
        assert feats.shape[0] == 2 and feats.dim() == 4

    def test_zero_init_head(self):
        G = GeneratorSpec(data_shape=(1, 16, 16), hidden_width=32, embed_dim=16).build()
        x = torch.randn(2, 1, 16, 16, dtype=torch.float64)
        assert torch.equal(G(x, 5), torch.zeros(2, 1, 16, 16, dtype=torch.float64))


class TestFeatureExtractor:
    def test_deterministic_and_distinguishing(self):
        net = GeneratorSpec(data_shape=(4,), hidden_width=16, num_blocks=2,
                            zero_init_head=False).build()
        F = FrozenFeatureExtractor(net)
        z = torch.randn(4, 4, dtype=torch.float64)
        a = extract_features(F, z)
        b = extract_features(F, z)
        assert torch.equal(a, b)
        far = extract_features(F, z + 10.0)
        assert (a - far).abs().max().item() > 1e-3

    def test_unfrozen_net_rejected(self):
        net = GeneratorSpec(data_shape=(4,), hidden_width=16, num_blocks=2).build()
        with pytest.raises(ContractViolationError):
            extract_features(net, torch.randn(2, 4, dtype=torch.float64))

    def test_freezing_copy_leaves_original_trainable(self):
        net = GeneratorSpec(data_shape=(4,), hidden_width=16, num_blocks=2).build()
        FrozenFeatureExtractor(net)
        assert all(p.requires_grad for p in net.parameters())

    def test_gradients_flow_through_inputs(self):
        net = GeneratorSpec(data_shape=(4,), hidden_width=16, num_blocks=2,
                            zero_init_head=False).build()
        F = FrozenFeatureExtractor(net)
        z = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
        out = extract_features(F, z).sum()
        (grad,) = torch.autograd.grad(out, z)
        assert grad.abs().max().item() > 0


class TestEma:
    def test_decay_zero_tracks_live(self):
        G = MLPGenerator(GeneratorSpec(data_shape=(2,), hidden_width=4, num_blocks=1,
                                       embed_dim=4, zero_init_head=False))
        ema = EmaState.from_module(G, decay=0.0)
        with torch.no_grad():
            for p in G.parameters():
                p.add_(1.0)
        ema_update(ema, G)
        for name, value in G.state_dict().items():
            assert torch.equal(ema.shadow[name], value)

    def test_decay_one_freezes_shadow(self):
        G = MLPGenerator(GeneratorSpec(data_shape=(2,), hidden_width=4, num_blocks=1,
                                       embed_dim=4, zero_init_head=False))
        ema = EmaState.from_module(G, decay=1.0)
        before = {k: v.clone() for k, v in ema.shadow.items()}
        with torch.no_grad():
            for p in G.parameters():
                p.add_(1.0)
        ema_update(ema, G)
        for name in before:
            assert torch.equal(ema.shadow[name], before[name])

    def test_half_decay_hand_value(self):
        lin = torch.nn.Linear(1, 1).double()
        with torch.no_grad():
            lin.weight.zero_()
            lin.bias.zero_()
        ema = EmaState.from_module(lin, decay=0.5)
        with torch.no_grad():
            lin.weight.fill_(2.0)
            lin.bias.fill_(2.0)
        ema_update(ema, lin)
        assert ema.shadow["weight"].item() == pytest.approx(1.0)

    def test_mismatched_module_rejected(self):
        lin = torch.nn.Linear(1, 1).double()
        other = torch.nn.Linear(2, 1).double()
        ema = EmaState.from_module(lin, decay=0.9)
        with pytest.raises(ConfigError):
            ema_update(ema, other)

    def test_bad_decay_rejected(self):
        lin = torch.nn.Linear(1, 1).double()
        with pytest.raises(ConfigError):
            EmaState.from_module(lin, decay=1.5)
