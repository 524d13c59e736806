"""DAG vertices, references and their canonical binary encoding.

The canonical encoding (length-prefixed fields, little-endian integers,
fixed field order: round, creator, payload, sorted references, aux) is the
single source of truth for both vertex digests and byte-size accounting.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .crypto import Signature

GENESIS_ROUND = 1

_U32 = struct.Struct("<I")


def _u32(x: int) -> bytes:
    return _U32.pack(x)


@dataclass(frozen=True, slots=True)
class VertexRef:
    round: int
    creator: int
    digest: bytes

    def encode(self) -> bytes:
        return _u32(self.round) + _u32(self.creator) + self.digest


REF_WIRE_BYTES = 4 + 4 + 32


@dataclass(frozen=True)
class NoVoteCertificate:
    """2f+1 signed statements that round `round`'s leader vertex was not referenced."""

    round: int
    signatures: tuple[Signature, ...]

    @property
    def signers(self) -> tuple[int, ...]:
        return tuple(s.signer for s in self.signatures)

    def encode(self) -> bytes:
        parts = [_u32(self.round), _u32(len(self.signatures))]
        for sig in sorted(self.signatures, key=lambda s: s.signer):
            parts.append(_u32(sig.signer))
            parts.append(sig.digest)
            parts.append(sig.mac)
        return b"".join(parts)


def no_vote_digest(round_: int, leader: int) -> bytes:
    """Message digest a no-vote signature covers."""
    return hashlib.sha256(b"no-vote|" + _u32(round_) + _u32(leader)).digest()


@dataclass(frozen=True, eq=False)
class Vertex:
    """One DAG node: (round, creator, payload, references into earlier rounds).

    `aux` carries a no-vote certificate when a certified-engine leader could
    not reference its predecessor leader.  Digest and byte size are computed
    once from the canonical encoding; equality is digest equality.
    """

    round: int
    creator: int
    payload: bytes
    references: tuple[VertexRef, ...]
    aux: NoVoteCertificate | None = None
    digest: bytes = field(init=False, repr=False)
    byte_size: int = field(init=False, repr=False)

    def __post_init__(self):
        refs = tuple(sorted(self.references, key=lambda r: (r.round, r.creator, r.digest)))
        object.__setattr__(self, "references", refs)
        enc = encode_vertex(self)
        object.__setattr__(self, "digest", hashlib.sha256(b"vertex|" + enc).digest())
        object.__setattr__(self, "byte_size", len(enc))

    def __eq__(self, other):
        return isinstance(other, Vertex) and self.digest == other.digest

    def __hash__(self):
        return hash(self.digest)

    @property
    def ref(self) -> VertexRef:
        return VertexRef(self.round, self.creator, self.digest)

    def references_vertex(self, ref: VertexRef) -> bool:
        return any(r.digest == ref.digest for r in self.references)

    def max_reference_round(self) -> int:
        return max((r.round for r in self.references), default=0)


def encode_vertex(v: Vertex) -> bytes:
    parts = [
        _u32(v.round),
        _u32(v.creator),
        _u32(len(v.payload)),
        v.payload,
        _u32(len(v.references)),
    ]
    for ref in v.references:
        parts.append(ref.encode())
    if v.aux is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(v.aux.encode())
    return b"".join(parts)


def genesis_vertex(creator: int) -> Vertex:
    return Vertex(GENESIS_ROUND, creator, b"", ())


def genesis_vertices(n: int) -> list[Vertex]:
    return [genesis_vertex(i) for i in range(n)]


def vertex_header_bytes(n_refs: int, aux: NoVoteCertificate | None = None) -> int:
    """Size of everything except the payload; convenient for rate estimates."""
    base = 4 + 4 + 4 + 4 + n_refs * REF_WIRE_BYTES + 1
    if aux is not None:
        base += 8 + len(aux.signatures) * (4 + 64)
    return base
