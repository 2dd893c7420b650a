"""Training configuration and its flat ``key = value`` text format."""

from dataclasses import dataclass, fields

from .losses import VARIANTS, LossConfig

ABLATION_MODES = ("full", "dda_only", "focal_only", "two_net_focal")


@dataclass
class TrainConfig:
    variant: str = "csda_delta"
    d_cs: int = 4
    lambda_P: float = 1.3
    lambda_F: float = 0.5
    epsilon: float = 1e-8
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 30
    patience: int = 3
    lr_factor: float = 0.5
    min_lr: float = 1e-6
    seed: int = 0
    image_size: int = 64
    ablation: str = "full"
    depth: int = 3
    base_width: int = 8
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    augment: bool = True
    swap_classes: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.ablation not in ABLATION_MODES:
            raise ValueError(f"unknown ablation mode {self.ablation!r}; expected one of {ABLATION_MODES}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")
        if self.image_size % 2**self.depth:
            raise ValueError(f"image_size {self.image_size} is not divisible by 2**depth = {2**self.depth}")
        if self.learning_rate <= 0 or self.min_lr < 0 or not 0 < self.lr_factor <= 1:
            raise ValueError("invalid learning-rate schedule settings")

    @property
    def effective_d_cs(self):
        """The discriminant-only baseline always maps to a single channel."""
        return 1 if self.ablation == "dda_only" else self.d_cs

    def loss_config(self):
        return LossConfig(
            variant=self.variant,
            d_cs=self.effective_d_cs,
            epsilon=self.epsilon,
            lambda_F=self.lambda_F,
            lambda_P=self.lambda_P,
            focal_gamma=self.focal_gamma,
            focal_alpha=self.focal_alpha,
            swap_classes=self.swap_classes,
        )

    def to_lines(self):
        return [f"{f.name} = {getattr(self, f.name)!r}".replace("'", "") for f in fields(self)]

    def dumps(self):
        return "\n".join(self.to_lines()) + "\n"

    @classmethod
    def from_lines(cls, lines):
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for raw in lines:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise ValueError(f"config line without '=': {raw!r}")
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            kind = kinds[key]
            if kind in (bool, "bool"):
                if value not in ("True", "False", "true", "false", "1", "0"):
                    raise ValueError(f"{key}: expected a boolean, got {value!r}")
                kw[key] = value in ("True", "true", "1")
            elif kind in (int, "int"):
                kw[key] = int(value)
            elif kind in (float, "float"):
                kw[key] = float(value)
            else:
                kw[key] = value
        return cls(**kw)

    @classmethod
    def loads(cls, text):
        return cls.from_lines(text.splitlines())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())
