"""Deterministic test-scheme signatures and quorum certificates.

The scheme is a keyed digest: every node owns a secret derived from the run
seed, and a signature over a message digest is sha256(secret || digest).
The simulator hands each node a signer bound to its own key, so a Byzantine
strategy cannot produce another node's signature by construction.  The
scheme tag is carried so a real scheme can be swapped in behind the same
interface.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

SCHEME = "keyed-sha256"

SIGNATURE_WIRE_BYTES = 4 + 32 + 32  # signer id + digest + mac


class CertificateError(ValueError):
    """Raised by form_certificate; .reason is a stable machine-readable tag."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Signature:
    signer: int
    digest: bytes
    mac: bytes

    @property
    def wire_size(self) -> int:
        return SIGNATURE_WIRE_BYTES


@dataclass(frozen=True)
class QuorumCertificate:
    """At least 2f+1 distinct-signer signatures over one digest."""

    digest: bytes
    signatures: tuple[Signature, ...]
    scheme: str = SCHEME

    @property
    def signers(self) -> tuple[int, ...]:
        return tuple(sig.signer for sig in self.signatures)

    @property
    def wire_size(self) -> int:
        return 8 + sum(sig.wire_size for sig in self.signatures)


class KeyChain:
    """Per-run key material for all n nodes."""

    def __init__(self, seed: int, n: int):
        self.n = n
        self._secrets = [
            hashlib.sha256(b"key|%d|%d" % (seed, i)).digest() for i in range(n)
        ]

    def sign(self, signer: int, digest: bytes) -> Signature:
        mac = hashlib.sha256(self._secrets[signer] + digest).digest()
        return Signature(signer, digest, mac)

    def signer_for(self, node: int):
        """A signing capability bound to one node; hand this to node code."""
        return lambda digest: self.sign(node, digest)

    def verify(self, sig: Signature) -> bool:
        if not 0 <= sig.signer < self.n:
            return False
        expect = hashlib.sha256(self._secrets[sig.signer] + sig.digest).digest()
        return expect == sig.mac

    def form_certificate(
        self, sigs: list[Signature] | tuple[Signature, ...], quorum: int
    ) -> QuorumCertificate:
        """Combine signatures into a certificate or raise CertificateError.

        Reasons: too_few_signers, duplicate_signer, digest_mismatch,
        bad_signature.
        """
        sigs = sorted(sigs, key=lambda s: s.signer)
        if len(sigs) < quorum:
            raise CertificateError("too_few_signers")
        signers = [s.signer for s in sigs]
        if len(set(signers)) != len(signers):
            raise CertificateError("duplicate_signer")
        digests = {s.digest for s in sigs}
        if len(digests) != 1:
            raise CertificateError("digest_mismatch")
        for s in sigs:
            if not self.verify(s):
                raise CertificateError("bad_signature")
        return QuorumCertificate(sigs[0].digest, tuple(sigs))

    def verify_certificate(
        self, cert: QuorumCertificate, digest: bytes, quorum: int
    ) -> bool:
        if cert.digest != digest:
            return False
        signers = set()
        for sig in cert.signatures:
            if sig.digest != digest or not self.verify(sig):
                return False
            signers.add(sig.signer)
        return len(signers) >= quorum
