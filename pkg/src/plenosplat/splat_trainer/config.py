from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    lr_position: float = 5e-4
    lr_scale: float = 1e-2
    lr_rotation: float = 1e-3
    lr_opacity: float = 1e-1
    lr_sh: float = 2e-2
    # higher-order SH coefficients train at lr_sh * sh_rest_lr_scale
    sh_rest_lr_scale: float = 0.05
    loss_lambda: float = 0.2
    densify: bool = True
    densify_interval: int = 100
    densify_until: int | None = None
    # compared against the mean NDC-space gradient norm of the projected center
    densify_grad_threshold: float = 2e-4
    prune_opacity_threshold: float = 0.005
    split_scale_threshold: float = 0.04
    seed: int = 0
    sh_degree: int = 3
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_sh", "sh_rest_lr_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ValueError("loss_lambda must be in [0, 1]")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be >= 1")
        if not 0 <= self.sh_degree <= 3:
            raise ValueError("sh_degree must be in 0..3")
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)
