"""Instance-level sampling-schedule learning.

Dirichlet schedule policies, leave-one-out and James-Stein reward
baselines for score-function gradients, a synthetic estimator-variance
benchmark, and a toy probability-flow sampler environment.
"""

from .baselines import (
    DegenerateWeightsError,
    InsufficientContextsError,
    InsufficientRolloutsError,
    VarianceComponents,
    estimate_variance_components,
    js_baseline,
    optimal_baseline_oracle,
    rloo_baseline,
    shrinkage_coefficients,
    xctx_baseline,
)
from .bench import (
    SpikyRewardModel,
    SweepConfig,
    VarianceReport,
    measure_estimator_variance,
    run_sweep,
    sample_spiky_rewards,
)
from .policy import (
    DirichletPolicy,
    FeaturePolicy,
    Schedule,
    allocation_to_schedule,
    dirichlet_log_prob,
    load_policy,
    save_policy,
    score_wrt_alpha,
    uniform_allocation,
)
from .rng import RandomStream
from .sampler import (
    GaussianMixture,
    RewardSpec,
    SamplerConfig,
    SamplerContext,
    ToySamplerEnv,
    integrate,
    marginal_velocity,
    terminal_reward,
    uniform_schedule,
)
from .special import digamma, log_gamma, sample_dirichlet, sample_gamma
from .trainer import (
    GradientEstimate,
    RolloutError,
    TrainerConfig,
    clip_gradient,
    estimate_gradient,
    optimizer_step,
    train,
)

__version__ = "0.1.0"
