"""guardsim: a deterministic simulator of the inter-operator on-guard
energy-saving negotiation game, with cooperation metrics, scripted and
learned policies, an experiment harness and a JSON-lines wire protocol.
"""

from .env import EnvConfig, NegotiationEnv, check_agreement
from .errors import (
    CheckpointError,
    DegenerateEpisodeError,
    EpisodeDoneError,
    GuardsimError,
    MalformedActionError,
    MetricUndefinedError,
    TrainingDivergedError,
)
from .ledger import EnergyModel, LedgerEntry, LedgerState, accrue_savings, report_consumption
from .metrics import (
    AggregateCell,
    Baselines,
    EpisodeMetrics,
    PayoffMatrix,
    aggregate_cells,
    baselines,
    efficiency,
    episode_return,
    incentive_compatibility,
    jain,
    payoff_matrix,
    safety,
)
from .policies import (
    CooperatePolicy,
    DefectPolicy,
    LearnerParams,
    LearnerPolicy,
    Policy,
    RandomPolicy,
    cooperate_act,
    defect_act,
    learner_act,
    learner_update,
    load_checkpoint,
    random_act,
    round_robin_designation,
    save_checkpoint,
)
from .regulator import (
    BlacklistConfig,
    RegulatorState,
    filter_actions,
    recommend,
    update_after_episode,
)
from .types import (
    AgentAction,
    EpisodeOutcome,
    JointAction,
    Mode,
    Observation,
    OutcomeKind,
    RewardSchedule,
    StepResult,
)

__version__ = "0.1.0"
