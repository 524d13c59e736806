from .base import OP, FP, EngineParams, SyncReply, SyncRequest, leader_of
from .certified import CertifiedEngine, NoVote
from .uncertified import LeaderStatus, TO_COMMIT, TO_SKIP, UncertifiedEngine, VertexMsg, classify_pattern

__all__ = [
    "OP",
    "FP",
    "CertifiedEngine",
    "EngineParams",
    "LeaderStatus",
    "NoVote",
    "SyncReply",
    "SyncRequest",
    "TO_COMMIT",
    "TO_SKIP",
    "UncertifiedEngine",
    "VertexMsg",
    "classify_pattern",
    "leader_of",
]
