from __future__ import annotations

from dataclasses import asdict, dataclass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FunctionConfig:
    """Resources of one cloud function: memory (MB), timeout (s), ephemeral storage (MB)."""

    memory: int = 1024
    timeout: int = 10
    ephemeral_storage: int = 512

    def __post_init__(self):
        for name in ("memory", "timeout", "ephemeral_storage"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.memory < 128:
            raise ConfigError(f"memory must be >= 128 MB, got {self.memory}")
        if self.timeout < 1:
            raise ConfigError(f"timeout must be >= 1 s, got {self.timeout}")
        if self.ephemeral_storage < 0:
            raise ConfigError(f"ephemeral_storage must be >= 0, got {self.ephemeral_storage}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> FunctionConfig:
        unknown = set(data) - {"memory", "timeout", "ephemeral_storage"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)


# Framework default when a task omits its config; mirrors the sample manifest values.
DEFAULT_FUNCTION_CONFIG = FunctionConfig(memory=1024, timeout=10, ephemeral_storage=512)
