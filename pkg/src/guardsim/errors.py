"""Exception types shared across the simulator."""


class GuardsimError(Exception):
    """Base class for all simulator errors."""


class MalformedActionError(GuardsimError):
    """Caller submitted an invalid action (self-bit set, wrong length,
    missing or extra agent, or an action for a blacklisted agent)."""


class EpisodeDoneError(GuardsimError):
    """step() was called on a finished (or never reset) episode."""


class DegenerateEpisodeError(GuardsimError):
    """Fewer than two active agents remain; no negotiation is possible."""


class CheckpointError(GuardsimError):
    """Checkpoint file is unreadable, corrupt, or incompatible."""


class TrainingDivergedError(GuardsimError):
    """Learner produced non-finite parameters or gradients."""


class MetricUndefinedError(GuardsimError):
    """A metric denominator collapsed to zero for this configuration."""
