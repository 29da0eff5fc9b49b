"""Client adapter for the guardsim negotiation environment wire protocol."""

from .client import (
    PROTOCOL_VERSION,
    ActionRejectedError,
    ClientError,
    EnvClientConfig,
    EpisodeDoneError,
    GuardEnv,
    ProtocolError,
    TransportError,
    VersionMismatchError,
    decode_action,
    default_server_command,
    encode_action,
    flatten_observation,
    unflatten_observation,
)

__version__ = "0.1.0"
