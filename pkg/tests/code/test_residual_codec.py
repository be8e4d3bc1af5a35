from __future__ import annotations

from dataclasses import replace
from typing import Callable
from unittest.mock import patch

import pytest
import torch
import torch.nn.functional as F
from torch import nn

from core.config import CodecConfig
from core.errors import ConfigError, ContractError, TrainingDivergedError
from core.residual_codec import (
    IndexMap,
    ResidualCodec,
    codec_loss,
    compress,
    nearest_codewords,
    new_residual_codec,
    quantize,
    reconstruct,
    reconstruction_mse,
    train_codec,
)

SMALL = CodecConfig(codebook_size=8, code_dim=8, index_size=2, hidden_channels=16)


def _codec(seed: int = 0, cfg: CodecConfig = SMALL) -> ResidualCodec:
    return new_residual_codec((2, 8, 8), cfg, seed)


def _residuals(count: int, seed: int = 0) -> torch.Tensor:
    return torch.randn(count, 2, 8, 8, generator=torch.Generator().manual_seed(seed))


def test_quantize_picks_nearest_codeword() -> None:
    codebook = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
    index, codeword = quantize(torch.tensor([0.4, 0.4]), codebook)
    assert index == 0
    assert torch.equal(codeword, codebook[0])


def test_quantize_ties_go_to_lowest_index() -> None:
    codebook = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
    assert quantize(torch.tensor([0.5, 0.5]), codebook)[0] == 0


def test_quantize_exact_codeword() -> None:
    codebook = torch.randn(5, 3, generator=torch.Generator().manual_seed(0))
    index, codeword = quantize(codebook[3].clone(), codebook)
    assert index == 3
    assert float((codeword - codebook[3]).pow(2).sum()) == 0.0


def test_empty_codebook_raises() -> None:
    with pytest.raises(ConfigError):
        nearest_codewords(torch.zeros(1, 2), torch.zeros(0, 2))
    with pytest.raises(ConfigError):
        ResidualCodec(codebook_size=0)


def test_geometry_that_does_not_halve_cleanly_raises() -> None:
    with pytest.raises(ConfigError):
        ResidualCodec(latent_size=16, index_size=3)


def test_single_codeword_maps_everything_to_zero() -> None:
    cfg = CodecConfig(codebook_size=1, code_dim=4, index_size=2, hidden_channels=8)
    codec = new_residual_codec((2, 8, 8), cfg)
    m_r = compress(_residuals(1)[0], codec)
    assert m_r.tolist() == [[0, 0], [0, 0]]


def test_compress_is_deterministic() -> None:
    codec = _codec()
    z_r = torch.zeros(2, 8, 8)
    assert compress(z_r, codec) == compress(z_r, codec)


def test_compress_matches_brute_force_argmin() -> None:
    codec = _codec(seed=1)
    z_r = _residuals(1, seed=2)[0]

    m_r = compress(z_r, codec)

    features = codec.encode_features(z_r)[0].detach()
    assert m_r.shape == codec.index_shape
    for i in range(2):
        for j in range(2):
            distances = [
                float((features[:, i, j] - codeword).pow(2).sum())
                for codeword in codec.codebook
            ]
            assert m_r.indices[i, j] == distances.index(min(distances))


def test_compress_rejects_wrong_geometry() -> None:
    codec = _codec()
    with pytest.raises(ContractError):
        compress(torch.zeros(2, 4, 4), codec)
    with pytest.raises(ContractError):
        compress(torch.zeros(1, 2, 8, 8), codec)


def test_reconstruct_checks_index_range_and_shape() -> None:
    codec = _codec()
    with pytest.raises(ContractError):
        reconstruct(IndexMap(torch.tensor([[0, 8], [0, 0]])), codec)
    with pytest.raises(ContractError):
        reconstruct(IndexMap(torch.zeros(3, 3, dtype=torch.long)), codec)


@pytest.mark.parametrize(
    ("codebook_size", "dtype"),
    [
        (16, torch.uint8),
        (256, torch.uint8),
        (512, torch.float32),
        (2**16, torch.float32),
    ],
)
def test_storage_tensor_keeps_every_index(
    codebook_size: int, dtype: torch.dtype
) -> None:
    indices = torch.tensor([[0, 1], [codebook_size - 2, codebook_size - 1]])

    stored = IndexMap(indices).storage_tensor(codebook_size)

    assert stored.dtype == dtype
    assert IndexMap(stored) == IndexMap(indices)


def test_storage_tensor_rejects_unrepresentable_codebooks() -> None:
    with pytest.raises(ContractError):
        IndexMap(torch.zeros(2, 2, dtype=torch.long)).storage_tensor(2**25)


def test_identical_index_maps_reconstruct_identically() -> None:
    codec = _codec()
    a = IndexMap(torch.tensor([[1, 2], [3, 4]]))
    b = IndexMap(torch.tensor([[1, 2], [3, 4]]))
    assert a == b
    assert torch.equal(reconstruct(a, codec), reconstruct(b, codec))
    assert reconstruct(a, codec).shape == (2, 8, 8)


def test_loss_is_zero_for_exact_codewords_and_identity_networks() -> None:
    codec = ResidualCodec(latent_channels=2, latent_size=2, index_size=2, code_dim=2)
    codec.encoder = nn.Identity()
    codec.decoder = nn.Identity()
    codec.codebook.copy_(torch.randn(16, 2, generator=torch.Generator().manual_seed(0)))
    picks = torch.tensor([[3, 7], [0, 15]])
    z_r = codec.lookup(picks.unsqueeze(0))[0]

    loss = codec_loss(z_r, codec)

    assert float(loss.recon) == 0.0
    assert float(loss.quanti) == 0.0
    assert float(loss.total) == 0.0


def test_loss_without_commitment_is_reconstruction() -> None:
    codec = _codec(cfg=CodecConfig(codebook_size=8, code_dim=8, index_size=2, beta=0.0))
    loss = codec_loss(_residuals(2), codec)
    assert torch.equal(loss.total, loss.recon)


def test_loss_matches_straight_line_recomputation() -> None:
    codec = _codec(seed=3)
    z_r = _residuals(2, seed=4)

    loss = codec_loss(z_r, codec)

    with torch.no_grad():
        z_e = codec.encoder(z_r)
        z_q = codec.lookup(codec.assign(z_e))
        recon = ((codec.decoder(z_q) - z_r) ** 2).mean()
        quanti = ((z_e - z_q) ** 2).mean()
    assert float(loss.recon) == pytest.approx(float(recon), rel=1e-5)
    assert float(loss.quanti) == pytest.approx(float(quanti), rel=1e-5)
    assert float(loss.total) == pytest.approx(float(recon + quanti), rel=1e-5)


def test_straight_through_passes_reconstruction_gradient_to_encoder() -> None:
    codec = _codec(cfg=replace(SMALL, beta=0.0))
    for parameter in codec.decoder.parameters():
        parameter.requires_grad_(False)
    x = _residuals(2)

    codec_loss(x, codec).total.backward()
    encoder_grads = [
        p.grad.clone() for p in codec.encoder.parameters()  # type: ignore[union-attr]
    ]
    codec.zero_grad()

    z_e = codec.encoder(x)
    z_q = codec.lookup(codec.assign(z_e.detach())).detach().requires_grad_(True)
    (grad_z_q,) = torch.autograd.grad(F.mse_loss(codec.decoder(z_q), x), z_q)
    z_e.backward(grad_z_q)

    assert any(float(g.abs().sum()) > 0 for g in encoder_grads)
    for parameter, expected in zip(codec.encoder.parameters(), encoder_grads):
        assert parameter.grad is not None
        assert torch.allclose(parameter.grad, expected, rtol=1e-4, atol=1e-7)


def _check_finite_differences(
    codec: ResidualCodec,
    parameter: nn.Parameter,
    loss_value: Callable[[], torch.Tensor],
    seed: int,
) -> None:
    codec.zero_grad()
    loss_value().backward()
    grad = parameter.grad.reshape(-1).clone()  # type: ignore[union-attr]

    flat = parameter.data.view(-1)
    generator = torch.Generator().manual_seed(seed)
    coordinates = torch.randint(0, flat.numel(), (10,), generator=generator)
    h = 1e-6
    for i in coordinates.tolist():
        with torch.no_grad():
            flat[i] += h
            upper = float(loss_value())
            flat[i] -= 2 * h
            lower = float(loss_value())
            flat[i] += h
        numeric = (upper - lower) / (2 * h)
        assert float(grad[i]) == pytest.approx(numeric, rel=1e-3, abs=1e-9)


def test_loss_gradient_matches_finite_differences() -> None:
    codec = _codec(seed=2).double()
    z = _residuals(2, seed=3).double()

    # Indices do not depend on the decoder, so the full loss is smooth in it.
    _check_finite_differences(
        codec,
        codec.decoder[0].weight,  # type: ignore[index]
        lambda: codec_loss(z, codec).total, seed=0
    )
    # Through the encoder only the commitment term is a true derivative.
    _check_finite_differences(
        codec,
        codec.encoder[-1].weight,  # type: ignore[index]
        lambda: codec_loss(z, codec).quanti, seed=1
    )


def test_reconstruction_ignores_perturbations_that_keep_the_indices() -> None:
    codec = _codec(seed=4)
    z = _residuals(1, seed=5)[0]
    noise = torch.randn(z.shape, generator=torch.Generator().manual_seed(6))
    perturbed = z + 1e-4 * noise

    m_r = compress(z, codec)
    assert not torch.equal(perturbed, z)
    assert compress(perturbed, codec) == m_r
    assert torch.equal(
        reconstruct(compress(perturbed, codec), codec), reconstruct(m_r, codec)
    )



def test_first_codebook_update_seeds_from_features() -> None:
    codec = ResidualCodec(
        latent_channels=2, latent_size=2, index_size=2, code_dim=2, codebook_size=2
    )
    z_e = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]]])

    codec.update_codebook(z_e, codec.assign(z_e))

    assert codec.codebook.tolist() == [[1.0, 5.0], [2.0, 6.0]]
    assert bool(codec.initialized)


def test_codebook_update_moves_codewords_to_cluster_means() -> None:
    codec = ResidualCodec(
        latent_channels=2,
        latent_size=2,
        index_size=2,
        code_dim=2,
        codebook_size=2,
        ema_decay=0.0,
    )
    codec.initialized.fill_(1.0)
    codec.codebook.copy_(torch.tensor([[0.0, 0.0], [10.0, 10.0]]))
    z_e = torch.tensor([[[[0.0, 1.0], [9.0, 11.0]], [[1.0, 0.0], [9.0, 11.0]]]])

    codec.update_codebook(z_e, codec.assign(z_e))

    expected = torch.tensor([[0.5, 0.5], [10.0, 10.0]])
    assert torch.allclose(codec.codebook, expected, atol=1e-4)


def test_zero_steps_leave_codec_unchanged() -> None:
    codec = _codec()
    before = {k: v.clone() for k, v in codec.state_dict().items()}

    result = train_codec(_residuals(4), CodecConfig(steps=0), codec=codec)

    assert result.codec is codec
    for name, value in codec.state_dict().items():
        assert torch.equal(value, before[name])


def test_empty_samples_raise() -> None:
    with pytest.raises(ContractError):
        train_codec(torch.zeros(0, 2, 8, 8), SMALL)


def test_training_reduces_reconstruction_error() -> None:
    levels = torch.tensor([-2.0, -1.0, 1.0, 2.0])
    patterns = levels[:, None, None, None] * torch.ones(1, 2, 8, 8)
    samples = patterns.repeat(16, 1, 1, 1)
    cfg = CodecConfig(
        codebook_size=8,
        code_dim=8,
        index_size=2,
        hidden_channels=16,
        learning_rate=3e-3,
        steps=400,
        batch_size=16,
    )
    untrained = reconstruction_mse(new_residual_codec((2, 8, 8), cfg, seed=0), patterns)

    result = train_codec(samples, cfg, seed=0)

    assert len(result.losses) == 400
    assert reconstruction_mse(result.codec, patterns) < 0.2 * untrained


def test_nan_loss_raises_training_error() -> None:
    nan = torch.tensor(float("nan"), requires_grad=True)
    with (
        patch("core.residual_codec.F.mse_loss", return_value=nan),
        pytest.raises(TrainingDivergedError),
    ):
        train_codec(_residuals(4), SMALL)
