"""Pipeline configuration: nested dataclasses addressed as ``section.key``."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..errors import ConfigError


@dataclass
class DiffusionConfig:
    schedule: str = "cosine"
    T: int = 64
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_mode: str = "beta"
    cosine_offset: float = 0.008
    noise_scale: float = 1.0       # input scaling b applied to x_0 before noising
    clip: float = 1.0              # x0-prediction clamp in samplers; <= 0 disables


@dataclass
class DataConfig:
    n_items: int = 30
    resolution: int = 64
    points: int = 256
    shapes: str = "cube,cylinder,torus,icosphere"
    families: str = "chart_constant,gradient,stripes,checker"
    family_weights: str = "1,3,3,3"
    palette_probs: str = "0.7,0.2,0.1"
    subdiv: int = 4
    oversample: int = 8
    n_views: int = 4
    img_res: int = 128
    seed: int = 2                  # palette-aligned style clusters on the 30-item default set


@dataclass
class StyleConfig:
    enabled: bool = True
    n_components: int = 5
    k_clusters: int = 0            # 0 -> min(40, n_items // 10)
    seed: int = 0
    max_iters: int = 100


@dataclass
class CoarseConfig:
    hidden: int = 64
    emb_dim: int = 64
    encoder_width: int = 16
    steps: int = 2000
    batch: int = 8
    lr: float = 1e-3


@dataclass
class FineConfig:
    channels: str = "16,32,32"
    emb_dim: int = 64
    steps: int = 4000
    batch: int = 2
    lr: float = 2e-3
    p_hybrid: float = 0.3
    use_coarse: bool = True
    use_smooth: bool = True
    render_weight: float = 1.0
    crop: int = 64
    coarse_variants: int = 4


@dataclass
class SampleConfig:
    t_c: float = 0.4
    fine_stage: bool = True


@dataclass
class TrainConfig:
    seed: int = 0
    weight_decay: float = 0.01
    ema_decay: float = 0.9995
    ema_warmup: bool = True
    lr_floor: float = 0.01
    lr_cycle: int = 0              # 0 -> one cycle over the whole run
    grad_clip: float = 1.0         # global gradient-norm bound; <= 0 disables
    diverge_factor: float = 10.0
    diverge_patience: int = 100
    threads: int = 1


@dataclass
class PipelineConfig:
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    data: DataConfig = field(default_factory=DataConfig)
    style: StyleConfig = field(default_factory=StyleConfig)
    coarse: CoarseConfig = field(default_factory=CoarseConfig)
    fine: FineConfig = field(default_factory=FineConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.fine.p_hybrid <= 1.0:
            raise ConfigError(f"fine.p_hybrid must lie in [0, 1], got {self.fine.p_hybrid}")
        if not 0.0 <= self.sample.t_c <= 1.0:
            raise ConfigError(f"sample.t_c must lie in [0, 1], got {self.sample.t_c}")
        if self.diffusion.T < 1:
            raise ConfigError("diffusion.T must be positive")
        if self.data.points < 1 or self.data.resolution < 1:
            raise ConfigError("data.points and data.resolution must be positive")
        if self.fine.crop > self.data.img_res:
            raise ConfigError(f"fine.crop {self.fine.crop} exceeds data.img_res {self.data.img_res}")

    @property
    def fine_channels(self) -> tuple:
        return parse_ints(self.fine.channels, "fine.channels")

    def flat(self) -> dict:
        """``{"section.key": value}`` for every field, in declaration order."""
        out = {}
        for sec in dataclasses.fields(self):
            for f in dataclasses.fields(getattr(self, sec.name)):
                out[f"{sec.name}.{f.name}"] = getattr(getattr(self, sec.name), f.name)
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.flat().items())

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Copy with ``section.key`` overrides applied (values may be strings)."""
        new = dataclasses.replace(self, **{s.name: dataclasses.replace(getattr(self, s.name))
                                           for s in dataclasses.fields(self)})
        for key, raw in overrides.items():
            if key.count(".") != 1:
                raise ConfigError(f"config key {key!r} must look like section.key")
            sec_name, name = key.split(".")
            sec = getattr(new, sec_name, None)
            if sec is None or not dataclasses.is_dataclass(sec):
                raise ConfigError(f"unknown config section {sec_name!r} in {key!r}")
            kinds = {f.name: f.type for f in dataclasses.fields(sec)}
            if name not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(sec, name, _coerce(raw, kinds[name], key))
        new.validate()
        return new


def parse_ints(text: str, key: str = "value") -> tuple:
    try:
        return tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None


def parse_floats(text: str, key: str = "value") -> tuple:
    try:
        return tuple(float(s) for s in str(text).split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(raw, kind, key):
    if not isinstance(raw, str):
        return raw
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw.strip()


# Named ablation configurations.  Each maps to overrides of the default config.
PRESETS = {
    "full": {},
    # fine stage sees neither the smooth nor the coarse map
    "no_coarse_stage": {"fine.use_coarse": "false", "fine.use_smooth": "false"},
    # the coarse texture image is the final output
    "no_fine_stage": {"sample.fine_stage": "false"},
    # plain coarse-conditioned fine stage: always present, never truncated
    "coarse_condition": {"fine.p_hybrid": "1", "sample.t_c": "1"},
    "no_style": {"style.enabled": "false"},
}


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then a preset, then the config file, then explicit overrides."""
    from ..io import read_config
    cfg = PipelineConfig()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        cfg = cfg.with_overrides(PRESETS[preset])
    if path is not None:
        cfg = cfg.with_overrides(read_config(path))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
