"""
Deterministic DDIM sampling with classifier-free guidance, DDIM inversion,
and the per-step split of the inversion error into condition drift and
estimation error.

A schedule stores the cumulative alpha of every training step plus the
training step each sampling sub-step maps to. Sub-step 0 is clean data.
"""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import torch

from .errors import ContractError, TimestepRangeError

if TYPE_CHECKING:
    from .config import ScheduleConfig
    from .denoiser import NoisePredictor


@dataclass(frozen=True)
class Condition:
    """A class label standing in for a prompt; ``id=None`` is the null condition."""

    id: int | None = None

    @property
    def is_null(self) -> bool:
        return self.id is None

    def embedding_index(self, num_classes: int) -> int:
        if self.id is None:
            return num_classes
        if not 0 <= self.id < num_classes:
            raise ContractError(f"Condition {self.id} outside [0, {num_classes})")
        return self.id


NULL_CONDITION = Condition(None)


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 7.5

    def __post_init__(self) -> None:
        if not self.scale >= 0:
            raise ContractError(f"Guidance scale must be >= 0, got {self.scale}")


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_table: tuple[float, ...]
    train_steps: tuple[int, ...]

    def __post_init__(self) -> None:
        table = self.alpha_table
        if not table or table[0] != 1.0:
            raise ContractError("alpha_table[0] must be 1.0 (clean data)")
        for previous, current in zip(table, table[1:]):
            if not 0.0 < current <= previous:
                raise ContractError("alphas must lie in (0, 1] and never increase")

        steps = self.train_steps
        if not steps or steps[0] != 0:
            raise ContractError("train_steps[0] must be 0")
        for previous, current in zip(steps, steps[1:]):
            if current <= previous:
                raise ContractError("train_steps must be strictly increasing")
        if steps[-1] >= len(table):
            raise ContractError("train_steps reference steps beyond alpha_table")

    @classmethod
    def from_alphas(cls, alphas: Sequence[float]) -> "NoiseSchedule":
        """Schedule whose sub-steps are the training steps themselves."""
        table = tuple(float(a) for a in alphas)
        return cls(alpha_table=table, train_steps=tuple(range(len(table))))

    @classmethod
    def linear(
        cls,
        train_steps: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        num_steps: int = 50,
    ) -> "NoiseSchedule":
        betas = torch.linspace(beta_start, beta_end, train_steps, dtype=torch.float64)
        cumulative = torch.cumprod(1.0 - betas, dim=0)
        table = (1.0, *(float(a) for a in cumulative))

        if num_steps == 0:
            return cls(alpha_table=table, train_steps=(0,))
        stride = train_steps // num_steps
        return cls(
            alpha_table=table,
            train_steps=tuple(s * stride for s in range(num_steps + 1)),
        )

    @classmethod
    def from_config(
        cls, cfg: "ScheduleConfig", num_steps: int | None = None
    ) -> "NoiseSchedule":
        return cls.linear(
            cfg.train_steps,
            cfg.beta_start,
            cfg.beta_end,
            cfg.num_steps if num_steps is None else num_steps,
        )

    @property
    def num_steps(self) -> int:
        return len(self.train_steps) - 1

    @property
    def num_train_steps(self) -> int:
        return len(self.alpha_table) - 1

    @property
    def alphas(self) -> tuple[float, ...]:
        return tuple(self.alpha_table[step] for step in self.train_steps)

    def alpha(self, t: int) -> float:
        return self.alpha_table[self.train_steps[t]]

    def train_step(self, t: int) -> int:
        return self.train_steps[t]


@dataclass(frozen=True)
class StepErrorReport:
    """Both bracketed inversion-error terms, each already scaled by phi/gamma."""

    t: int
    condition_drift: torch.Tensor
    estimation_error: torch.Tensor
    total: torch.Tensor

    def rms(self) -> dict[str, float]:
        return {
            "condition_drift": _rms(self.condition_drift),
            "estimation_error": _rms(self.estimation_error),
            "total": _rms(self.total),
        }


def _rms(x: torch.Tensor) -> float:
    return float(torch.sqrt(torch.mean(x.double() ** 2)))


def coefficients(alpha_prev: float, alpha_t: float) -> tuple[float, float]:
    gamma = math.sqrt(alpha_prev / alpha_t)
    phi = -math.sqrt(alpha_prev * (1.0 - alpha_t) / alpha_t) + math.sqrt(1.0 - alpha_prev)
    return gamma, phi


def step_coefficients(schedule: NoiseSchedule, t: int) -> tuple[float, float]:
    if not 1 <= t <= schedule.num_steps:
        raise TimestepRangeError(f"Timestep {t} outside [1, {schedule.num_steps}]")
    return coefficients(schedule.alpha(t - 1), schedule.alpha(t))


def _predict(
    denoiser: "NoisePredictor", x: torch.Tensor, train_step: int, cond: Condition
) -> torch.Tensor:
    eps = denoiser.predict_noise(x, train_step, cond)
    if eps.shape != x.shape:
        raise ContractError(
            f"Noise prediction shape {tuple(eps.shape)} != latent {tuple(x.shape)}"
        )
    return eps


def _check_latent(x: torch.Tensor, denoiser: "NoisePredictor") -> None:
    if x.dim() < 3:
        raise ContractError(f"Latent must be [C, H, W], got {tuple(x.shape)}")
    expected = getattr(denoiser, "latent_shape", None)
    if expected is not None and tuple(x.shape[-3:]) != tuple(expected):
        raise ContractError(
            f"Latent shape {tuple(x.shape[-3:])} does not match {tuple(expected)}"
        )


def _guided_noise(
    x_t: torch.Tensor,
    train_step: int,
    denoiser: "NoisePredictor",
    cond: Condition,
    guidance: GuidanceConfig,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (guided eps, unconditional eps) at x_t."""
    eps_null = _predict(denoiser, x_t, train_step, NULL_CONDITION)
    if guidance.scale == 0:
        return eps_null, eps_null
    eps_cond = _predict(denoiser, x_t, train_step, cond)
    return eps_null + guidance.scale * (eps_cond - eps_null), eps_null


@torch.no_grad()
def ddim_step(
    x_t: torch.Tensor,
    t: int,
    denoiser: "NoisePredictor",
    cond: Condition,
    guidance: GuidanceConfig,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    gamma, phi = step_coefficients(schedule, t)
    _check_latent(x_t, denoiser)
    eps, _ = _guided_noise(x_t, schedule.train_step(t), denoiser, cond, guidance)
    return gamma * x_t + phi * eps


@torch.no_grad()
def invert_step(
    x_prev: torch.Tensor,
    t: int,
    denoiser: "NoisePredictor",
    schedule: NoiseSchedule,
) -> torch.Tensor:
    # Prompt and guidance of the generation are unknown at edit time.
    gamma, phi = step_coefficients(schedule, t)
    _check_latent(x_prev, denoiser)
    eps = _predict(denoiser, x_prev, schedule.train_step(t), NULL_CONDITION)
    return x_prev / gamma - (phi / gamma) * eps


@torch.no_grad()
def sample_trajectory(
    z_T: torch.Tensor,
    denoiser: "NoisePredictor",
    cond: Condition,
    guidance: GuidanceConfig,
    schedule: NoiseSchedule,
) -> tuple[torch.Tensor, list[torch.Tensor]]:
    _check_latent(z_T, denoiser)
    x = z_T
    trajectory = [z_T.clone()]
    for t in range(schedule.num_steps, 0, -1):
        x = ddim_step(x, t, denoiser, cond, guidance, schedule)
        trajectory.append(x.clone())
    return x, trajectory


@torch.no_grad()
def invert_trajectory(
    z_0: torch.Tensor,
    denoiser: "NoisePredictor",
    schedule: NoiseSchedule,
) -> tuple[torch.Tensor, list[torch.Tensor]]:
    _check_latent(z_0, denoiser)
    x = z_0
    trajectory = [z_0.clone()]
    for t in range(1, schedule.num_steps + 1):
        x = invert_step(x, t, denoiser, schedule)
        trajectory.append(x.clone())
    return x, trajectory


@torch.no_grad()
def decompose_step_error(
    x_t: torch.Tensor,
    t: int,
    denoiser: "NoisePredictor",
    cond: Condition,
    guidance: GuidanceConfig,
    schedule: NoiseSchedule,
) -> StepErrorReport:
    gamma, phi = step_coefficients(schedule, t)
    _check_latent(x_t, denoiser)
    train_step = schedule.train_step(t)

    eps_guided, eps_null = _guided_noise(x_t, train_step, denoiser, cond, guidance)
    x_prev = gamma * x_t + phi * eps_guided
    eps_null_prev = _predict(denoiser, x_prev, train_step, NULL_CONDITION)
    x_inverted = x_prev / gamma - (phi / gamma) * eps_null_prev

    scale = phi / gamma
    if guidance.scale == 0:
        drift = torch.zeros_like(x_t)
    else:
        drift = scale * (eps_guided - eps_null)
    estimation = scale * (eps_null - eps_null_prev)

    return StepErrorReport(
        t=t,
        condition_drift=drift,
        estimation_error=estimation,
        total=x_inverted - x_t,
    )


@torch.no_grad()
def trajectory_errors(
    z_T: torch.Tensor,
    denoiser: "NoisePredictor",
    cond: Condition,
    guidance: GuidanceConfig,
    schedule: NoiseSchedule,
) -> list[StepErrorReport]:
    """Decompose the inversion error at every step of a sampling run, t = T..1."""
    _, trajectory = sample_trajectory(z_T, denoiser, cond, guidance, schedule)
    reports: list[StepErrorReport] = []
    for position, t in enumerate(range(schedule.num_steps, 0, -1)):
        reports.append(
            decompose_step_error(
                trajectory[position], t, denoiser, cond, guidance, schedule
            )
        )
    return reports


def schedule_table(schedule: NoiseSchedule) -> list[tuple[int, float, float, float]]:
    rows: list[tuple[int, float, float, float]] = []
    for t in range(1, schedule.num_steps + 1):
        gamma, phi = step_coefficients(schedule, t)
        rows.append((t, schedule.alpha(t), gamma, phi))
    return rows


def schedule_table_tsv(schedule: NoiseSchedule) -> str:
    lines = ["t\talpha\tgamma\tphi", f"0\t{schedule.alpha(0):.9g}\t\t"]
    for t, alpha, gamma, phi in schedule_table(schedule):
        lines.append(f"{t}\t{alpha:.9g}\t{gamma:.9g}\t{phi:.9g}")
    return "\n".join(lines) + "\n"
