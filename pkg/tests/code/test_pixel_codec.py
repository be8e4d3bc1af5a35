from __future__ import annotations

import math

import pytest
import torch
from doubles import IdentityPixelCodec

from core.config import LatentOptConfig, PixelCodecConfig
from core.dataset import make_dataset
from core.errors import ContractError, OptimizationError
from core.pixel_codec import (
    PixelCodec,
    decode,
    encode,
    latent_opt_loss,
    new_pixel_codec,
    optimize_latent,
    pixel_codec_loss,
    quantize_image,
    reconstruction_mse,
    to_uint8,
    train_pixel_codec,
)

SMALL = PixelCodecConfig(hidden_channels=16, batch_size=8)


class SqrtPixelCodec(IdentityPixelCodec):
    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        return z.sqrt()


def _random(shape: tuple[int, ...], seed: int = 0) -> torch.Tensor:
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed))


def test_identity_codec_round_trip() -> None:
    codec = IdentityPixelCodec()
    z = _random((3, 4, 4))
    assert torch.equal(decode(z, codec), z)
    assert torch.equal(encode(decode(z, codec), codec), z)


def test_geometry_mismatch_raises() -> None:
    codec = new_pixel_codec((4, 8, 8), 16, SMALL)
    with pytest.raises(ContractError):
        decode(torch.zeros(4, 4, 4), codec)
    with pytest.raises(ContractError):
        encode(torch.zeros(3, 8, 8), codec)


def test_decode_is_in_range_and_deterministic() -> None:
    codec = new_pixel_codec((4, 8, 8), 16, SMALL)
    codec.eval()
    z = _random((4, 8, 8)) * 3

    first = decode(z, codec)
    second = decode(z, codec)

    assert first.shape == (3, 16, 16)
    assert torch.equal(first, second)
    assert float(first.min()) >= 0.0
    assert float(first.max()) <= 1.0


def test_encode_accepts_batches() -> None:
    codec = new_pixel_codec((4, 8, 8), 16, SMALL)
    codec.eval()
    images = torch.rand(2, 3, 16, 16, generator=torch.Generator().manual_seed(0))
    batched = encode(images, codec)
    assert batched.shape == (2, 4, 8, 8)
    assert torch.allclose(batched[1], encode(images[1], codec), atol=1e-6)


def test_zero_steps_return_initial_latent() -> None:
    codec = IdentityPixelCodec()
    z_init, target = _random((3, 4, 4), 0), _random((3, 4, 4), 1)

    result = optimize_latent(z_init, target, codec, LatentOptConfig(steps=0))

    assert torch.equal(result.latent, z_init)
    assert result.loss_history == [float(latent_opt_loss(z_init, target, codec))]


def test_quadratic_bowl_converges_to_target() -> None:
    codec = IdentityPixelCodec()
    target = _random((3, 4, 4), 2)
    z_init = target + 0.5 * _random((3, 4, 4), 3)

    result = optimize_latent(z_init, target, codec, LatentOptConfig(steps=20))

    assert len(result.loss_history) == 21
    assert result.loss_history[-1] < 1e-3 * result.loss_history[0]
    assert all(b < a for a, b in zip(result.loss_history, result.loss_history[1:]))


def test_half_step_lands_on_the_minimum() -> None:
    codec = IdentityPixelCodec()
    target = _random((3, 4, 4), 2).double()
    z_init = target + _random((3, 4, 4), 3).double()

    result = optimize_latent(
        z_init, target, codec, LatentOptConfig(steps=1, step_size=0.5)
    )

    assert torch.allclose(result.latent, target, atol=1e-12)
    assert result.loss_history[-1] == pytest.approx(0.0, abs=1e-20)


def test_backtracking_keeps_history_non_increasing() -> None:
    codec = new_pixel_codec((4, 8, 8), 16, SMALL, seed=1)
    codec.eval()
    target = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(4))
    z_init = _random((4, 8, 8), 5)

    result = optimize_latent(
        z_init, target, codec, LatentOptConfig(steps=10, step_size=50.0)
    )

    history = result.loss_history
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert history[-1] < history[0]


def test_optimization_does_not_mutate_inputs_and_repeats_exactly() -> None:
    codec = new_pixel_codec((4, 8, 8), 16, SMALL, seed=1)
    codec.eval()
    target = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(4))
    z_init = _random((4, 8, 8), 5)
    z_copy, target_copy = z_init.clone(), target.clone()

    first = optimize_latent(z_init, target, codec, LatentOptConfig(steps=5))
    second = optimize_latent(z_init, target, codec, LatentOptConfig(steps=5))

    assert torch.equal(z_init, z_copy)
    assert torch.equal(target, target_copy)
    assert torch.equal(first.latent, second.latent)
    assert first.loss_history == second.loss_history


def test_latent_gradient_matches_finite_differences() -> None:
    codec = PixelCodec(latent_size=8, image_size=16, hidden_channels=16).double().eval()
    target = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(6)).double()
    z = _random((4, 8, 8), 7).double().requires_grad_(True)

    (grad,) = torch.autograd.grad(latent_opt_loss(z, target, codec), z)

    generator = torch.Generator().manual_seed(8)
    coordinates = torch.randint(0, z.numel(), (10,), generator=generator)
    h = 1e-6
    for flat in coordinates.tolist():
        offset = torch.zeros(z.numel(), dtype=torch.float64)
        offset[flat] = h
        offset = offset.reshape(z.shape)
        with torch.no_grad():
            upper = float(latent_opt_loss(z + offset, target, codec))
            lower = float(latent_opt_loss(z - offset, target, codec))
        numeric = (upper - lower) / (2 * h)
        analytic = float(grad.reshape(-1)[flat])
        assert analytic == pytest.approx(numeric, rel=1e-3, abs=1e-8)


def test_non_finite_gradient_raises() -> None:
    codec = SqrtPixelCodec()
    z_init = -torch.ones(3, 4, 4)
    with pytest.raises(OptimizationError) as excinfo:
        optimize_latent(z_init, torch.zeros(3, 4, 4), codec, LatentOptConfig(steps=3))
    assert excinfo.value.step == 0


def test_zero_training_steps_leave_codec_unchanged() -> None:
    images = make_dataset(4, 2, image_size=16).images
    codec = new_pixel_codec((4, 8, 8), 16, SMALL)
    before = {k: v.clone() for k, v in codec.state_dict().items()}

    cfg = PixelCodecConfig(steps=0)
    result = train_pixel_codec(images, (4, 8, 8), cfg, codec=codec)

    assert result.codec is codec
    for name, value in codec.state_dict().items():
        assert torch.equal(value, before[name])


def test_training_reduces_reconstruction_error_and_calibrates_scale() -> None:
    images = make_dataset(8, 4, seed=1, image_size=16).images
    cfg = PixelCodecConfig(
        hidden_channels=16, learning_rate=3e-3, steps=300, batch_size=8
    )
    untrained = new_pixel_codec((4, 8, 8), 16, cfg, seed=0).eval()
    before = reconstruction_mse(untrained, images)

    result = train_pixel_codec(images, (4, 8, 8), cfg, seed=0)

    assert len(result.losses) == 300
    assert reconstruction_mse(result.codec, images) < 0.5 * before
    latents = encode(images, result.codec)
    assert float(latents.std()) == pytest.approx(1.0, rel=1e-3)


def test_training_loss_gradient_matches_finite_differences() -> None:
    codec = new_pixel_codec((4, 8, 8), 16, SMALL, seed=3).double()
    images = make_dataset(2, 2, seed=2, image_size=16).images.double()

    def loss_value() -> float:
        with torch.no_grad():
            return float(pixel_codec_loss(images, codec, kl_weight=1e-2)[0])

    decoder_weight: torch.Tensor = codec.decoder[0].weight  # type: ignore[assignment]
    for parameter in (codec.to_moments.weight, decoder_weight):
        codec.zero_grad()
        pixel_codec_loss(images, codec, kl_weight=1e-2)[0].backward()
        grad = parameter.grad.detach().clone()  # type: ignore[union-attr]

        generator = torch.Generator().manual_seed(4)
        coordinates = torch.randint(0, parameter.numel(), (10,), generator=generator)
        h = 1e-6
        for flat in coordinates.tolist():
            with torch.no_grad():
                parameter.view(-1)[flat] += h
                upper = loss_value()
                parameter.view(-1)[flat] -= 2 * h
                lower = loss_value()
                parameter.view(-1)[flat] += h
            numeric = (upper - lower) / (2 * h)
            analytic = float(grad.reshape(-1)[flat])
            assert analytic == pytest.approx(numeric, rel=1e-3, abs=1e-9)


def test_training_overfits_a_handful_of_images() -> None:
    images = make_dataset(8, 4, seed=5, image_size=16).images
    cfg = PixelCodecConfig(
        hidden_channels=32, kl_weight=0.0, learning_rate=3e-3, steps=4000, batch_size=8
    )

    result = train_pixel_codec(images, (4, 8, 8), cfg, seed=0)

    assert all(math.isfinite(loss) for loss in result.losses)
    assert reconstruction_mse(result.codec, images) < 1e-3


def test_empty_image_set_raises() -> None:
    with pytest.raises(ContractError):
        train_pixel_codec(torch.zeros(0, 3, 16, 16), (4, 8, 8), SMALL)


def test_pixel_quantization() -> None:
    x = torch.tensor([0.0, 0.5, 1.0, 1.2, -0.1])
    assert to_uint8(x).tolist() == [0, 128, 255, 255, 0]
    assert torch.equal(quantize_image(x), torch.tensor([0, 128, 255, 255, 0]) / 255.0)
