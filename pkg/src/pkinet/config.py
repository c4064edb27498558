"""Model configuration: the two published variants as data."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

CAA_SCHEDULES = ("depth", "stage", "fixed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Backbone description.

    ``pki_kernels[0]`` is the local depthwise kernel; the rest are the
    parallel context kernels. ``dilations`` lines up with ``pki_kernels``.
    The CAA strip kernel is ``caa_kernel + caa_growth * n`` for block depth
    ``n`` ("depth"), ``caa_kernel + caa_growth * l`` for 1-based stage ``l``
    ("stage"), or ``caa_kernel`` everywhere ("fixed"). ``norm_act=False``
    drops batch norm and SiLU from every conv unit, leaving bare convs.
    """

    variant: str = "S"
    in_channels: int = 3
    stem_channels: int = 64
    stem_hidden: Optional[tuple[int, int]] = None
    stage_channels: tuple[int, ...] = (64, 128, 256, 512)
    blocks: tuple[int, ...] = (4, 12, 20, 4)
    pki_kernels: tuple[int, ...] = (3, 5, 7, 9, 11)
    dilations: tuple[int, ...] = (1, 1, 1, 1, 1)
    caa_schedule: str = "depth"
    caa_kernel: int = 11
    caa_growth: int = 2
    caa_pool: int = 7
    caa_stages: tuple[bool, ...] = (True, True, True, True)
    ffn_ratio: float = 26.0
    csp: bool = True
    block_residual: bool = False
    norm_act: bool = True

    def __post_init__(self):
        validate(self)

    @property
    def stem_widths(self) -> tuple[int, int, int]:
        hidden = self.stem_hidden or (self.stem_channels, self.stem_channels)
        return hidden[0], hidden[1], self.stem_channels

    def stage_input_channels(self, stage: int) -> int:
        return self.stem_channels if stage == 0 else self.stage_channels[stage - 1]

    def block_width(self, stage: int) -> int:
        c = self.stage_channels[stage]
        return c // 2 if self.csp else c

    def ffn_width(self, stage: int) -> int:
        return int(round(self.ffn_ratio * self.stage_channels[stage] / 2))

    def caa_kernel_size(self, stage: int, depth: int) -> int:
        if self.caa_schedule == "depth":
            return self.caa_kernel + self.caa_growth * depth
        if self.caa_schedule == "stage":
            return self.caa_kernel + self.caa_growth * (stage + 1)
        return self.caa_kernel

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


def validate(cfg: ModelConfig) -> None:
    def fail(msg):
        raise ConfigError(msg)

    if len(cfg.stage_channels) != 4:
        fail(f"stage_channels must have 4 entries, got {len(cfg.stage_channels)}")
    if len(cfg.blocks) != 4:
        fail(f"blocks must have 4 entries, got {len(cfg.blocks)}")
    if len(cfg.caa_stages) != 4:
        fail(f"caa_stages must have 4 entries, got {len(cfg.caa_stages)}")
    if any(n < 1 for n in cfg.blocks):
        fail(f"every stage needs at least one block, got {cfg.blocks}")
    if cfg.in_channels < 1 or cfg.stem_channels < 1 or any(c < 1 for c in cfg.stage_channels):
        fail("channel counts must be positive")
    if cfg.csp and any(c % 2 for c in cfg.stage_channels):
        fail(f"cross-stage split needs even stage widths, got {cfg.stage_channels}")
    if cfg.stem_hidden is not None and (len(cfg.stem_hidden) != 2 or min(cfg.stem_hidden) < 1):
        fail(f"stem_hidden must be two positive widths, got {cfg.stem_hidden}")
    if len(cfg.pki_kernels) < 1:
        fail("pki_kernels must not be empty")
    if len(cfg.dilations) != len(cfg.pki_kernels):
        fail(f"dilations ({len(cfg.dilations)}) must match pki_kernels ({len(cfg.pki_kernels)})")
    for k in (*cfg.pki_kernels, cfg.caa_kernel, cfg.caa_pool):
        if k < 1 or k % 2 == 0:
            fail(f"kernel sizes must be odd and positive, got {k}")
    if cfg.caa_growth % 2:
        fail(f"caa_growth must be even to keep strip kernels odd, got {cfg.caa_growth}")
    if any(d < 1 for d in cfg.dilations):
        fail(f"dilations must be >= 1, got {cfg.dilations}")
    if cfg.caa_schedule not in CAA_SCHEDULES:
        fail(f"caa_schedule must be one of {CAA_SCHEDULES}, got {cfg.caa_schedule!r}")
    if cfg.ffn_ratio <= 0:
        fail(f"ffn_ratio must be positive, got {cfg.ffn_ratio}")


PKINET_T = ModelConfig(
    variant="T",
    stem_channels=32,
    stage_channels=(32, 64, 128, 256),
    blocks=(4, 14, 22, 4),
)

PKINET_S = ModelConfig()

VARIANTS = {"T": PKINET_T, "S": PKINET_S}


def variant(name: str) -> ModelConfig:
    key = name.strip().upper().removeprefix("PKINET-").removeprefix("PKINET_")
    if key not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of T, S")
    return VARIANTS[key]


def toy_config(**changes) -> ModelConfig:
    """A shrunken config that trains in minutes on 32x32 inputs."""
    base = ModelConfig(
        variant="toy",
        stem_channels=8,
        stage_channels=(8, 16, 32, 64),
        blocks=(2, 2, 2, 2),
        ffn_ratio=2.0,
    )
    return replace(base, **changes)
