# app/models/specs.py
import hashlib
from enum import Enum
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class KernelFamily(str, Enum):
    LINEAR = "linear"
    SQUARED_EXPONENTIAL = "squared_exponential"
    ARCCOS_RELU = "arccos_relu"


class ReluScale(str, Enum):
    EXPECTATION = "expectation"
    DOUBLED = "doubled"


class Likelihood(str, Enum):
    GAUSSIAN = "gaussian"
    CATEGORICAL = "categorical"


class Propagation(str, Enum):
    PER_POINT = "per_point"
    JOINT = "joint"


class KernelSpec(BaseModel):
    """Kernel K(G) aplicado a una matriz de Gram"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: KernelFamily = Field(KernelFamily.ARCCOS_RELU, description="Familia del kernel")
    bandwidth: float = Field(1.0, gt=0, description="Ancho de banda (solo squared_exponential)")
    relu_scale: ReluScale = Field(ReluScale.EXPECTATION, description="Convención de escala arccos")


class ModelSpec(BaseModel):
    """Arquitectura del proceso de Wishart inverso profundo"""
    model_config = ConfigDict(extra="forbid")

    layer_count: int = Field(3, ge=1, description="Número L de matrices de Gram (incluye la capa Ω)")
    inducing_count: int = Field(100, ge=1, description="Puntos inducidos P_i")
    input_dim: int = Field(..., ge=1, description="Características de entrada N_0")
    output_dim: int = Field(1, ge=1, description="Salidas N_{L+1}")
    kernels: List[KernelSpec] = Field(..., description="Kernel aplicado a G_ℓ, ℓ=1..L")
    likelihood: Likelihood = Likelihood.GAUSSIAN
    nngp_limit: List[bool] = Field(..., description="Capa determinista (límite δ→∞) por capa")
    learn_input_transform: bool = Field(True, description="Sesgo y escala aprendidos por característica")
    propagation: Propagation = Propagation.PER_POINT
    delta_init: Optional[float] = Field(None, gt=0, description="δ inicial común (None: N_0 / P_i)")

    @model_validator(mode="after")
    def _check_lengths(self) -> "ModelSpec":
        if len(self.kernels) != self.layer_count:
            raise ValueError(f"kernels debe tener {self.layer_count} entradas, tiene {len(self.kernels)}")
        if len(self.nngp_limit) != self.layer_count:
            raise ValueError(f"nngp_limit debe tener {self.layer_count} entradas, tiene {len(self.nngp_limit)}")
        if self.likelihood == Likelihood.CATEGORICAL and self.output_dim < 2:
            raise ValueError("La verosimilitud categórica requiere output_dim >= 2")
        return self

    @classmethod
    def uniform(cls, input_dim: int, output_dim: int = 1, layer_count: int = 3, inducing_count: int = 100,
                kernel: Optional[KernelSpec] = None, likelihood: Likelihood = Likelihood.GAUSSIAN,
                nngp_limit: bool = False, **kwargs) -> "ModelSpec":
        """Misma configuración de kernel y de límite NNGP en todas las capas"""
        return cls(
            layer_count=layer_count,
            inducing_count=inducing_count,
            input_dim=input_dim,
            output_dim=output_dim,
            kernels=[kernel or KernelSpec()] * layer_count,
            likelihood=likelihood,
            nngp_limit=[nngp_limit] * layer_count,
            **kwargs,
        )


class LearningRateSegment(BaseModel):
    start: int = Field(..., ge=1)
    end: int = Field(..., ge=1)
    lr: float = Field(..., ge=0)


class Schedule(BaseModel):
    """Pasos totales y tasas de aprendizaje por tramos"""
    total_steps: int = Field(8000, ge=1)
    segments: List[LearningRateSegment] = Field(default_factory=list)

    @model_validator(mode="after")
    def _cover_steps(self) -> "Schedule":
        if not self.segments:
            half = max(self.total_steps // 2, 1)
            self.segments = [LearningRateSegment(start=1, end=half, lr=1e-2)]
            if self.total_steps > half:
                self.segments.append(LearningRateSegment(start=half + 1, end=self.total_steps, lr=1e-3))
        expected = 1
        for seg in self.segments:
            if seg.start != expected or seg.end < seg.start:
                raise ValueError(f"Los tramos deben cubrir [1, {self.total_steps}] sin huecos")
            expected = seg.end + 1
        if expected != self.total_steps + 1:
            raise ValueError(f"Los tramos deben cubrir [1, {self.total_steps}] sin huecos")
        return self

    @classmethod
    def two_phase(cls, total_steps: int, lr_high: float = 1e-2, lr_low: float = 1e-3) -> "Schedule":
        half = max(total_steps // 2, 1)
        segments = [LearningRateSegment(start=1, end=half, lr=lr_high)]
        if total_steps > half:
            segments.append(LearningRateSegment(start=half + 1, end=total_steps, lr=lr_low))
        return cls(total_steps=total_steps, segments=segments)

    @classmethod
    def constant(cls, total_steps: int, lr: float) -> "Schedule":
        return cls(total_steps=total_steps, segments=[LearningRateSegment(start=1, end=total_steps, lr=lr)])

    def lr_at(self, step: int) -> float:
        for seg in self.segments:
            if seg.start <= step <= seg.end:
                return seg.lr
        raise ValueError(f"Paso {step} fuera del calendario [1, {self.total_steps}]")


class SplitSpec(BaseModel):
    split_index: int = Field(0, ge=0)
    split_count: int = Field(20, ge=1)
    test_fraction: float = Field(0.1, gt=0, lt=1)
    seed: int = 0

    @model_validator(mode="after")
    def _index_in_range(self) -> "SplitSpec":
        if self.split_index >= self.split_count:
            raise ValueError(f"split_index {self.split_index} >= split_count {self.split_count}")
        return self


class RunConfig(BaseModel):
    """Configuración plana de una ejecución del CLI (claves desconocidas se rechazan)"""
    model_config = ConfigDict(extra="forbid")

    command: Literal["train", "evaluate", "sample-prior", "sample-posterior", "eigen-hist", "complexity-probe",
                     "serve"] = "train"
    seed: int = 0
    out_dir: str = "runs/default"

    # datos
    dataset: Optional[str] = None
    target_col: int = -1
    delimiter: str = ","
    header: bool = False
    task: Literal["regression", "classification"] = "regression"
    split_index: int = Field(0, ge=0)
    split_count: int = Field(20, ge=1)
    test_fraction: float = Field(0.1, gt=0, lt=1)
    split_manifest: Optional[str] = None

    # modelo
    layers: int = Field(3, ge=1)
    kernel: KernelFamily = KernelFamily.ARCCOS_RELU
    bandwidth: float = Field(1.0, gt=0)
    relu_scale: ReluScale = ReluScale.EXPECTATION
    inducing: int = Field(100, ge=1)
    delta_init: Optional[float] = Field(None, gt=0)
    nngp_limit: bool = False
    propagation: Propagation = Propagation.PER_POINT
    learn_input_transform: bool = True

    # entrenamiento
    steps: int = Field(8000, ge=1)
    lr_high: float = Field(1e-2, ge=0)
    lr_low: float = Field(1e-3, ge=0)
    batch: Optional[int] = Field(None, ge=1)
    samples_train: Optional[int] = Field(None, ge=1)
    samples_eval: int = Field(100, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    checkpoint: Optional[str] = None
    resume: bool = False

    # sample-prior
    prior_family: Literal["invwishart", "wishart"] = "invwishart"
    prior_layers: int = Field(1, ge=1)
    prior_delta: float = Field(1.0, gt=0)
    prior_width: Optional[int] = Field(None, ge=1)
    grid_points: int = Field(100, ge=2)
    grid_min: float = -5.0
    grid_max: float = 5.0
    panels: int = Field(4, ge=1)
    functions_per_panel: int = Field(5, ge=1)

    # eigen-hist
    eig_distribution: Literal["wishart", "invwishart", "resw"] = "wishart"
    eig_size: int = Field(200, ge=2)
    eig_draws: int = Field(50, ge=1)
    eig_n: Optional[int] = Field(None, ge=1)
    eig_nu: Optional[float] = Field(None, gt=0)
    eig_alpha: float = Field(1.0, ge=0)

    # complexity-probe
    probe_inducing: List[int] = Field(default_factory=lambda: [16, 32, 64])
    probe_points: List[int] = Field(default_factory=lambda: [64, 128, 256])
    probe_repeats: int = Field(3, ge=1)

    @field_validator("probe_inducing", "probe_points")
    @classmethod
    def _positive_grid(cls, values: List[int]) -> List[int]:
        if not values or any(v < 1 for v in values):
            raise ValueError("las rejillas del probe deben contener enteros positivos")
        return values

    def config_hash(self) -> str:
        """Hash del contenido de la ejecución; las rutas de salida y la reanudación no cuentan"""
        payload = self.model_dump_json(exclude={"out_dir", "checkpoint", "resume"})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(family=self.kernel, bandwidth=self.bandwidth, relu_scale=self.relu_scale)

    def model_spec(self, input_dim: int, output_dim: int) -> ModelSpec:
        likelihood = Likelihood.GAUSSIAN if self.task == "regression" else Likelihood.CATEGORICAL
        return ModelSpec.uniform(
            input_dim=input_dim,
            output_dim=output_dim,
            layer_count=self.layers,
            inducing_count=self.inducing,
            kernel=self.kernel_spec(),
            likelihood=likelihood,
            nngp_limit=self.nngp_limit,
            learn_input_transform=self.learn_input_transform,
            propagation=self.propagation,
            delta_init=self.delta_init,
        )

    def schedule(self) -> Schedule:
        return Schedule.two_phase(self.steps, self.lr_high, self.lr_low)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(split_index=self.split_index, split_count=self.split_count,
                         test_fraction=self.test_fraction, seed=self.seed)
