from pydantic import BaseModel, Field, model_validator
from typing import List, Optional, Dict, Any, Literal

SCHEMA_VERSION = "1.0"


# ---------------------------------------------------------------- run config

class GridSpec(BaseModel):
    """Dense periodic grid: inline row-major values with a shape, or a CSV / .npy path."""
    shape: Optional[List[int]] = None
    values: Optional[List[float]] = None
    path: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.values is None) == (self.path is None):
            raise ValueError("give exactly one of 'values' or 'path'")
        if self.values is not None:
            if not self.shape or len(self.shape) != 2:
                raise ValueError("inline grids need a two-entry 'shape'")
            if self.shape[0] * self.shape[1] != len(self.values):
                raise ValueError(f"shape {self.shape} does not match {len(self.values)} values")
        return self


class SurfaceConfig(BaseModel):
    kind: Literal["flat_torus", "round_sphere", "conformal_torus"] = "flat_torus"
    lattice: List[List[float]] = Field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    radius: float = Field(default=1.0, gt=0)
    conformal_factor: Optional[GridSpec] = None


class PsiConfig(BaseModel):
    variant: Literal["zero", "kirchhoff_routh", "log_k", "two_log_k"] = "kirchhoff_routh"
    K: Optional[GridSpec] = None
    K2: Optional[GridSpec] = None
    m: int = Field(default=0, ge=0)
    weights: List[float] = Field(default_factory=lambda: [1.0, 1.0], min_length=2, max_length=2)
    self_energy_sign: Literal[-1, 1] = -1


class GreenTestOptions(BaseModel):
    n_pairs: int = Field(default=100, ge=1)
    quadrature_grid: int = Field(default=256, ge=8)
    fd_step: float = Field(default=1e-6, gt=0)
    tol_symmetry: float = Field(default=1e-10, gt=0)
    tol_mean: float = Field(default=1e-6, gt=0)
    tol_slope: float = Field(default=1e-4, gt=0)
    tol_gradient: float = Field(default=1e-5, gt=0)
    grid: int = Field(default=64, ge=2)
    source: Optional[List[float]] = None


class SinhPoissonOptions(BaseModel):
    m: int = Field(ge=0)
    n: int = Field(ge=2)
    tau: float = Field(gt=0)


class CheckGammaOptions(BaseModel):
    tol: float = Field(default=1e-12, gt=0)
    sinh_poisson: Optional[SinhPoissonOptions] = None


class FlowOptions(BaseModel):
    max_steps: int = Field(default=2000, ge=1)
    step0: float = Field(default=1e-2, gt=0)
    grad_tol: float = Field(default=1e-8, gt=0)
    collision_dist: float = Field(default=1e-3, gt=0)


class SearchOptions(BaseModel):
    grid: Optional[int] = Field(default=None, ge=2)
    latitudes: Optional[List[float]] = None
    sweeps: int = Field(default=40, ge=1)
    steps_per_sweep: int = Field(default=25, ge=1)
    tol_grad: float = Field(default=1e-8, gt=0)
    barrier_samples: int = Field(default=256, ge=0)
    flow: FlowOptions = Field(default_factory=FlowOptions)
    multistart: int = Field(default=0, ge=0)
    # members this far above the current family minimum stop moving
    stop_margin: float = Field(default=0.5, gt=0)


class ClassifyOptions(BaseModel):
    tol_grad: float = Field(default=1e-6, gt=0)


class SymmetricOptions(BaseModel):
    mode: Literal["fixed_circle", "reflection"] = "reflection"
    axis: Literal["x", "y"] = "x"
    offset: float = 0.0
    nodes: int = Field(default=200, ge=8)
    n_starts: int = Field(default=8, ge=1)
    tol_grad: float = Field(default=1e-8, gt=0)


class DynamicsOptions(BaseModel):
    T: float = Field(default=10.0, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    collision_dist: float = Field(default=1e-3, gt=0)
    record_every: int = Field(default=10, ge=1)


class MorseOptions(BaseModel):
    tol_grad: float = Field(default=1e-6, gt=0)
    zero_rel: float = Field(default=1e-4, gt=0)
    refine: bool = True


class RunConfig(BaseModel):
    surface: SurfaceConfig = Field(default_factory=SurfaceConfig)
    gammas: List[float] = Field(default_factory=lambda: [1.0, -1.0], min_length=2)
    points: Optional[List[List[float]]] = None
    psi: PsiConfig = Field(default_factory=PsiConfig)
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    green_test: GreenTestOptions = Field(default_factory=GreenTestOptions)
    check_gamma: CheckGammaOptions = Field(default_factory=CheckGammaOptions)
    search: SearchOptions = Field(default_factory=SearchOptions)
    classify: ClassifyOptions = Field(default_factory=ClassifyOptions)
    symmetric: SymmetricOptions = Field(default_factory=SymmetricOptions)
    dynamics: DynamicsOptions = Field(default_factory=DynamicsOptions)
    morse: MorseOptions = Field(default_factory=MorseOptions)


# ---------------------------------------------------------------- results

class EquilibriumReport(BaseModel):
    point: List[List[float]]
    gammas: List[float]
    h_value: float
    grad_norm: float = Field(ge=0.0)
    hessian_eigenvalues: List[float] = Field(default_factory=list)
    morse_index: int = Field(default=0, ge=0)
    zero_modes: int = Field(default=0, ge=0)
    positive_count: int = Field(default=0, ge=0)
    symmetry_modes: int = Field(default=0, ge=0)
    transverse_eigenvalues: List[float] = Field(default_factory=list)
    nondegenerate: bool = False
    status: Literal["Converged", "NonConvergence"] = "Converged"
    iterations: int = 0


class GammaCheck(BaseModel):
    passed: bool
    worst_subset: List[int]
    worst_value: float
    margin: float = Field(ge=0.0)
    tolerance: float
    resonant_taus: List[float] = Field(default_factory=list)


class CollisionReport(BaseModel):
    slope: float
    intercept: float
    cluster: List[int]
    condition_holds: bool
    subset_value: float
    bound_satisfied: bool
    n_samples: int
    flags: List[str] = Field(default_factory=list)


class FlowSummary(BaseModel):
    termination: str
    steps: int
    h_start: float
    h_end: float
    grad_norm_end: float
    min_pair_dist_end: float


class MinimaxResult(BaseModel):
    termination: Literal["Converged", "NonConvergence"]
    c_star_lower: float
    c_star_history: List[float]
    barrier_max: Optional[float] = None
    degree_history: List[int] = Field(default_factory=list)
    witness: EquilibriumReport
    grid: int
    latitudes: List[float]
    sweeps: int
    collided: int
    family_trace: Dict[str, Any] = Field(default_factory=dict)


class SphereTripleSolution(BaseModel):
    points: List[List[float]]
    residual: float
    angles: List[float]
    cos_theta: Optional[float] = None
    grad_norm: float


class SphereClassification(BaseModel):
    gammas: List[float]
    exists: bool
    symmetric_case: bool
    criterion: Optional[float] = None
    solutions: List[SphereTripleSolution] = Field(default_factory=list)


class SymmetricSearchResult(BaseModel):
    mode: Literal["fixed_circle", "reflection"]
    report: EquilibriumReport
    restricted_grad_norm: float
    full_grad_norm: float
    pass_level: Optional[float] = None
    alpha_est: Optional[float] = None
    barrier_consistent: Optional[bool] = None
    candidates: int = 1


class TrajectorySummary(BaseModel):
    termination: Literal["Completed", "CollisionApproach"]
    steps: int
    final_time: float
    h_start: float
    h_drift: float
    max_displacement: float
    min_pair_dist: float


class GreenTestReport(BaseModel):
    surface: str
    measurements: Dict[str, float]
    checks: Dict[str, bool]
    all_passed: bool


class RunReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    command: str
    run_id: str
    created_at: str
    exit_code: int
    config: Dict[str, Any]
    result: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None
