import json
import os
from typing import Any, Dict, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

load_dotenv()

ENV_PREFIX = 'CAFORGE_'

Setting = Literal['A', 'B', 'C']
MechanismKind = Literal['canet', 'caformer', 'vcg', 'ama', 'vvca', 'local_ama']
NEURAL_MECHANISMS = ('canet', 'caformer')


def env(name: str, default: Optional[str] = None) -> Optional[str]:
    """Read a CAFORGE_-prefixed environment variable"""
    return os.getenv(f'{ENV_PREFIX}{name.upper().replace("-", "_")}', default)


class Config:
    # Logging Configuration
    LOG_LEVEL = env('LOG_LEVEL', 'INFO')
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    # Run defaults
    SEED = int(env('SEED', '0'))
    OUTPUT_DIR = env('OUTPUT_DIR', 'runs')
    WORKERS = int(env('WORKERS', '1'))

    # Auction guards
    MAX_ITEMS = 12
    MAX_ENUM_BIDDERS = 4
    MAX_ENUM_ITEMS = 6

    # Feasibility layer
    SENTINEL = 1e9
    FEASIBILITY_TOL = 1e-6

    # Default dataset sizes
    TRAIN_PROFILES = 640_000
    TEST_PROFILES = 10_000
    BASELINE_EVAL_PROFILES = 1_000_000
    BASELINE_TRAIN_PROFILES = 100

    # Results CSV schema
    RESULTS_SCHEMA_VERSION = 1
    RESULTS_COLUMNS = ['mechanism', 'setting', 'n', 'm', 'revenue', 'regret', 'samples', 'seed']

    @classmethod
    def results_header(cls) -> str:
        return f'# caforge-results v{cls.RESULTS_SCHEMA_VERSION}'


class TrainConfig(BaseModel):
    """Hyperparameters of the adversarial training loop"""

    model_config = ConfigDict(extra='forbid')

    iterations: int = Field(50_000, ge=1)
    batch_size: int = Field(128, ge=1)
    inner_steps: int = Field(50, ge=0)
    validation_inner_steps: int = Field(1_000, ge=0)
    lr: float = Field(0.0007, gt=0)
    misreport_lr: float = Field(0.1, gt=0)
    misreport_noise: float = Field(0.1, ge=0)
    weight_lr: float = Field(0.01, gt=0)
    rho: float = Field(2.0, gt=0)
    theta: float = Field(10.0, gt=0)
    alpha: float = Field(0.5, ge=0)
    rgt_start: float = Field(0.05, gt=0)
    rgt_end: float = Field(0.001, gt=0)
    w_rgt_init: float = Field(1.0, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    seed: int = Field(Config.SEED, ge=0)

    dataset_size: int = Field(Config.TRAIN_PROFILES, ge=1)
    on_the_fly: bool = False
    validation_interval: int = Field(1_000, ge=0)
    validation_samples: int = Field(1_000, ge=1)
    checkpoint_interval: int = Field(5_000, ge=0)
    log_interval: int = Field(100, ge=1)
    parallel_validation: bool = False

    hidden_layers: int = Field(3, ge=1)
    hidden_units: int = Field(100, ge=1)
    d_model: int = Field(64, ge=1)
    heads: int = Field(2, ge=1)
    positional_mode: Optional[Literal['none', 'agent_bundle']] = None
    normalize_item_projection: bool = False
    mask_mode: Literal['masked', 'unmasked'] = 'masked'
    misreport_domain: Literal['support', 'nonnegative'] = 'support'
    regret_aggregation: Literal['mean', 'max'] = 'mean'

    @model_validator(mode='after')
    def _check_heads(self) -> 'TrainConfig':
        if self.d_model % self.heads != 0:
            raise ValueError(f'd_model={self.d_model} is not divisible by heads={self.heads}')
        return self

    @classmethod
    def from_file(cls, path: str, **overrides: Any) -> 'TrainConfig':
        """Load a JSON or TOML config file; keyword overrides win over file values"""
        data: Dict[str, Any]
        if path.endswith('.toml'):
            import tomllib
            with open(path, 'rb') as f:
                data = tomllib.load(f)
        else:
            with open(path) as f:
                data = json.load(f)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.model_validate(data)


class ExperimentSpec(BaseModel):
    """One CLI invocation: which auction, which mechanism, where to write"""

    model_config = ConfigDict(extra='forbid')

    setting: Setting = 'A'
    n: int = Field(2, ge=1)
    m: int = Field(2, ge=1, le=Config.MAX_ITEMS)
    mechanism: MechanismKind = 'canet'
    output_dir: str = Config.OUTPUT_DIR
    seed: int = Field(Config.SEED, ge=0)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @field_validator('setting', mode='before')
    @classmethod
    def _upper_setting(cls, value: Any) -> Any:
        return value.upper() if isinstance(value, str) else value

    @model_validator(mode='after')
    def _check_dims(self) -> 'ExperimentSpec':
        if self.setting == 'C' and self.n != 2:
            raise ValueError(f'setting C is defined for exactly 2 bidders, got n={self.n}')
        if self.mechanism not in NEURAL_MECHANISMS and (
                self.n > Config.MAX_ENUM_BIDDERS or self.m > Config.MAX_ENUM_ITEMS):
            raise ValueError(
                f'{self.mechanism} needs brute-force winner determination; '
                f'n<={Config.MAX_ENUM_BIDDERS} and m<={Config.MAX_ENUM_ITEMS} required')
        return self

    @property
    def is_neural(self) -> bool:
        return self.mechanism in NEURAL_MECHANISMS

    @property
    def scale(self) -> str:
        return f'{self.n}x{self.m}'

    def resolved_positional_mode(self) -> str:
        """Positional encodings default on for the asymmetric setting only"""
        if self.train.positional_mode is not None:
            return self.train.positional_mode
        return 'agent_bundle' if self.setting == 'C' else 'none'


def format_validation_error(error: ValidationError) -> str:
    """Flatten a pydantic error into one line"""
    parts = []
    for item in error.errors():
        location = '.'.join(str(p) for p in item.get('loc', ())) or 'config'
        parts.append(f'{location}: {item.get("msg")}')
    return '; '.join(parts)
