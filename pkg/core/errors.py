"""
Exception types raised by the core modules.

The CLI maps these onto exit codes: contract, configuration and format
problems exit with 1, diverging optimizations exit with 2.
"""


class ContractError(ValueError):
    """An argument violates a shape, length or range contract."""


class TimestepRangeError(ContractError, IndexError):
    """A timestep lies outside ``1..T`` of the schedule."""


class ConfigError(ValueError):
    """Invalid configuration value, key or model kind."""


class FormatError(ValueError):
    """A tensor file, checkpoint or manifest could not be decoded."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float) -> None:
        super().__init__(f"Training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


class OptimizationError(RuntimeError):
    def __init__(self, step: int) -> None:
        super().__init__(f"Non-finite latent gradient at step {step}")
        self.step = step
