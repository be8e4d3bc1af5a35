from __future__ import annotations

import pytest
import torch

from core.config import InjectorConfig
from core.errors import ConfigError, ContractError
from core.latent_injector import (
    IDENTITY_NOISE,
    BitMessage,
    NoiseLayer,
    apply_noise,
    bit_accuracy,
    bits_per_index,
    deserialize_indices,
    evaluate_injector,
    extract,
    gaussian_kernel,
    inject,
    injector_loss,
    new_injector,
    random_messages,
    robustness_sweep,
    serialize_indices,
    train_injector,
)
from core.residual_codec import IndexMap

SMALL = InjectorConfig(hidden_channels=16, batch_size=16)


def _latents(count: int, seed: int = 0) -> torch.Tensor:
    return torch.randn(count, 2, 4, 4, generator=torch.Generator().manual_seed(seed))


def test_serialize_hand_example() -> None:
    message = serialize_indices(IndexMap(torch.tensor([[0, 15], [3, 8]])), 16)
    assert message.to_text() == "0000111100111000"


def test_deserialize_hand_example() -> None:
    message = BitMessage.from_text("0000 1111 0011 1000")
    assert deserialize_indices(message, 16, 2, 2).tolist() == [[0, 15], [3, 8]]


def test_all_zero_map_gives_all_zero_message() -> None:
    message = serialize_indices(IndexMap(torch.zeros(4, 4, dtype=torch.long)), 16)
    assert message.to_text() == "0" * 64


def test_all_ones_message_gives_max_indices() -> None:
    m_r = deserialize_indices(BitMessage.from_text("1" * 64), 16, 4, 4)
    assert m_r.tolist() == [[15] * 4] * 4


@pytest.mark.parametrize("K", [2, 4, 16, 256])
def test_serialization_round_trips(K: int) -> None:
    generator = torch.Generator().manual_seed(K)
    for _ in range(20):
        m_r = IndexMap(torch.randint(0, K, (3, 5), generator=generator))
        message = serialize_indices(m_r, K)
        assert len(message) == 15 * bits_per_index(K)
        assert deserialize_indices(message, K, 3, 5) == m_r


def test_codebook_size_must_be_power_of_two() -> None:
    with pytest.raises(ConfigError):
        serialize_indices(IndexMap(torch.zeros(2, 2, dtype=torch.long)), 12)
    with pytest.raises(ConfigError):
        bits_per_index(1)


def test_deserialize_length_mismatch_raises() -> None:
    with pytest.raises(ContractError):
        deserialize_indices(BitMessage.from_text("0" * 63), 16, 4, 4)


def test_serialize_rejects_out_of_range_index() -> None:
    with pytest.raises(ContractError):
        serialize_indices(IndexMap(torch.tensor([[0, 16]])), 16)


def test_bit_message_validation() -> None:
    with pytest.raises(ContractError):
        BitMessage.from_text("0102")
    with pytest.raises(ContractError):
        BitMessage(torch.tensor([0, 2]))
    assert BitMessage.from_text("0101") == BitMessage(torch.tensor([0, 1, 0, 1]))


def test_identity_noise_layer_returns_input() -> None:
    z = _latents(1)[0]
    assert torch.equal(apply_noise(z, IDENTITY_NOISE, seed=3), z)


def test_gaussian_noise_variance() -> None:
    z = torch.zeros(4, 32, 32, dtype=torch.float64)
    noised = apply_noise(z, NoiseLayer(0.05, 1), seed=0)
    assert float(noised.var()) == pytest.approx(0.0025, rel=0.1)


def test_blur_preserves_constants() -> None:
    z = torch.full((2, 9, 9), 3.0)
    assert torch.allclose(apply_noise(z, NoiseLayer(0.0, 7)), z, atol=1e-6)


def test_noise_is_deterministic_given_seed() -> None:
    z = _latents(2)
    layer = NoiseLayer()
    assert torch.equal(apply_noise(z, layer, seed=5), apply_noise(z, layer, seed=5))
    assert not torch.equal(apply_noise(z, layer, seed=5), apply_noise(z, layer, seed=6))


def test_gaussian_kernel_is_normalized() -> None:
    kernel = gaussian_kernel(7, NoiseLayer().kernel_sigma)
    assert NoiseLayer().kernel_sigma == pytest.approx(1.4)
    assert float(kernel.sum()) == pytest.approx(1.0)
    assert torch.equal(kernel, kernel.t())


def test_noise_layer_validation() -> None:
    with pytest.raises(ContractError):
        NoiseLayer(-0.1)
    with pytest.raises(ContractError):
        NoiseLayer(0.05, 4)


def test_untrained_injector_is_shape_preserving_and_finite() -> None:
    injector = new_injector((2, 4, 4), 8, SMALL)
    z = _latents(1)[0]
    z_m = inject(z, BitMessage.from_text("10110010"), injector)
    assert z_m.shape == z.shape
    assert torch.isfinite(z_m).all()
    assert torch.equal(z_m, z)


def test_inject_rejects_wrong_message_length() -> None:
    injector = new_injector((2, 4, 4), 8, SMALL)
    with pytest.raises(ContractError):
        inject(_latents(1)[0], BitMessage.from_text("101"), injector)


def test_inject_rejects_wrong_latent_shape() -> None:
    injector = new_injector((2, 4, 4), 8, SMALL)
    with pytest.raises(ContractError):
        inject(torch.zeros(3, 4, 4), BitMessage.from_text("10110010"), injector)


def test_untrained_extraction_is_chance_level() -> None:
    injector = new_injector((2, 4, 4), 8, SMALL)
    z = _latents(1)[0]
    generator = torch.Generator().manual_seed(1)
    accuracies = []
    for bits in random_messages(1000, 8, generator):
        message = BitMessage(bits.to(torch.uint8))
        recovered = extract(inject(z, message, injector), injector)
        accuracies.append(bit_accuracy(recovered, message))
    assert sum(accuracies) / len(accuracies) == pytest.approx(0.5, abs=0.1)


def test_loss_without_injection_weight_is_index_loss() -> None:
    injector = new_injector((2, 4, 4), 8, SMALL)
    messages = random_messages(4, 8, torch.Generator().manual_seed(0))
    loss = injector_loss(_latents(4), messages, injector, NoiseLayer(), weight=0.0)
    assert torch.equal(loss.total, loss.index_loss)


def test_untouched_latent_has_no_injection_loss() -> None:
    injector = new_injector((2, 4, 4), 8, SMALL)
    messages = random_messages(4, 8, torch.Generator().manual_seed(0))
    loss = injector_loss(_latents(4), messages, injector, NoiseLayer())
    assert float(loss.injec_loss) == 0.0


def test_loss_matches_straight_line_recomputation() -> None:
    injector = new_injector((2, 4, 4), 8, SMALL, seed=2)
    with torch.no_grad():
        injector.to_residual.weight.normal_(std=0.1)
    z = _latents(4)
    messages = random_messages(4, 8, torch.Generator().manual_seed(0))
    layer = NoiseLayer(0.1, 1)

    loss = injector_loss(
        z, messages, injector, layer, generator=torch.Generator().manual_seed(9)
    )

    with torch.no_grad():
        z_m = injector.embed(z, messages)
        generator = torch.Generator().manual_seed(9)
        noised = z_m + 0.1 * torch.randn(z_m.shape, generator=generator)
        scores = torch.sigmoid(injector.scores(noised))
        index_loss = ((scores - messages) ** 2).mean()
        injec_loss = ((z_m - z) ** 2).mean()
        total = index_loss + 0.1 * injec_loss
    assert float(loss.total) == pytest.approx(float(total), rel=1e-6)
    assert float(loss.injec_loss) > 0


def test_loss_gradient_matches_finite_differences() -> None:
    injector = new_injector((2, 4, 4), 8, SMALL, seed=3).double()
    with torch.no_grad():
        injector.to_residual.weight.normal_(std=0.1)
    z = _latents(4).double()
    messages = random_messages(4, 8, torch.Generator().manual_seed(0)).double()
    layer = NoiseLayer(0.05, 3)

    def loss_value() -> torch.Tensor:
        generator = torch.Generator().manual_seed(4)
        return injector_loss(z, messages, injector, layer, generator=generator).total

    injector.zero_grad()
    loss_value().backward()
    weight = injector.message_plane.weight
    analytic = float(weight.grad[3, 1])  # type: ignore[index]

    h = 1e-6
    with torch.no_grad():
        weight[3, 1] += h
        upper = float(loss_value())
        weight[3, 1] -= 2 * h
        lower = float(loss_value())
        weight[3, 1] += h
    numeric = (upper - lower) / (2 * h)

    assert analytic == pytest.approx(numeric, rel=1e-3, abs=1e-9)


def test_zero_steps_give_chance_accuracy() -> None:
    result = train_injector(_latents(64), 8, InjectorConfig(steps=0), IDENTITY_NOISE)
    held_out = _latents(256, seed=1)
    evaluation = evaluate_injector(result.injector, held_out, IDENTITY_NOISE)
    assert result.losses == []
    assert evaluation.bit_accuracy == pytest.approx(0.5, abs=0.1)
    assert evaluation.injection_mse == 0.0


def test_training_learns_to_carry_messages() -> None:
    cfg = InjectorConfig(
        hidden_channels=16, learning_rate=3e-3, steps=400, batch_size=32
    )

    result = train_injector(_latents(256), 8, cfg, IDENTITY_NOISE, seed=0)

    held_out = _latents(512, seed=1)
    evaluation = evaluate_injector(result.injector, held_out, IDENTITY_NOISE, seed=2)
    assert len(result.losses) == 400
    assert evaluation.bit_accuracy >= 0.9
    assert evaluation.injection_mse > 0

    sweep = robustness_sweep(result.injector, held_out, seed=2)
    assert [sigma for sigma, _ in sweep] == [0.0, 0.05, 0.1, 0.2]
    assert all(0.0 <= accuracy <= 1.0 for _, accuracy in sweep)

    sigmas = (0.0, 0.05, 0.2, 1.0)
    accuracies = [
        accuracy
        for _, accuracy in robustness_sweep(
            result.injector, held_out, sigmas, filter_kernel=1, seed=2
        )
    ]
    assert accuracies[0] == evaluation.bit_accuracy
    # 4096 bits per level; allow for sampling noise between neighbouring levels.
    for weaker, stronger in zip(accuracies, accuracies[1:]):
        assert stronger <= weaker + 0.02
    assert accuracies[-1] < accuracies[0]


def test_empty_latents_raise() -> None:
    with pytest.raises(ContractError):
        train_injector(torch.zeros(0, 2, 4, 4), 8, SMALL, IDENTITY_NOISE)


def test_bit_accuracy_length_mismatch_raises() -> None:
    with pytest.raises(ContractError):
        bit_accuracy(BitMessage.from_text("01"), BitMessage.from_text("011"))
