from .crypto import (
    CertificateError,
    KeyChain,
    QuorumCertificate,
    Signature,
    SCHEME,
)
from .dag import (
    ACCEPTED,
    DUPLICATE,
    EQUIVOCATION,
    INSUFFICIENT_REFERENCES,
    MALFORMED,
    DagStore,
    InsertResult,
    MissingHistory,
    structurally_valid,
)
from .vertex import (
    GENESIS_ROUND,
    NoVoteCertificate,
    Vertex,
    VertexRef,
    encode_vertex,
    genesis_vertex,
    genesis_vertices,
    no_vote_digest,
    vertex_header_bytes,
)

__all__ = [
    "ACCEPTED",
    "DUPLICATE",
    "EQUIVOCATION",
    "GENESIS_ROUND",
    "INSUFFICIENT_REFERENCES",
    "MALFORMED",
    "SCHEME",
    "CertificateError",
    "DagStore",
    "InsertResult",
    "KeyChain",
    "MissingHistory",
    "NoVoteCertificate",
    "QuorumCertificate",
    "Signature",
    "Vertex",
    "VertexRef",
    "encode_vertex",
    "genesis_vertex",
    "genesis_vertices",
    "no_vote_digest",
    "structurally_valid",
    "vertex_header_bytes",
]
