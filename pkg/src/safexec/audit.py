"""Hash-chained execution transcript, compliance circuit, and audit artifacts.

Each per-venue, per-step record is serialized canonically (fixed field order,
signed 64-bit little-endian integers, length-prefixed sections) and chained:
``h_0 = H(header)``, ``h_k = H(h_{k-1} || record_k)`` with H = SHA-256.

Proof generation is emulated. A MOCK artifact carries the statement
commitment, the final digest and the circuit bit; its integrity rests on a
trusted prover and it offers no zero-knowledge soundness. An OPEN artifact
additionally embeds the transcript so a verifier can recompute the chain and
re-run the circuit.

Artifact byte layout (all integers little-endian)::

    magic        4s   b"ZKCA"
    version      u16
    mode         u8   0 = MOCK, 1 = OPEN
    bit          u8
    episode_id   u64
    alpha_ppm    u32
    beta_ppm     u32
    n_records    u32
    commitment   32s  SHA-256 of the canonical public-input series
    digest       32s  final chain digest h_T
    note_len     u16, note bytes (ASCII)
    [OPEN only]  text_len u32, transcript text (UTF-8)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .shield import PPM, PRICE, SELF_TRADE, VOLUME, ConstraintSet, price_floor, volume_cap

MAGIC = b"ZKCA"
VERSION = 1
MOCK = "MOCK"
OPEN = "OPEN"
MOCK_NOTE = b"MOCK: trusted-prover emulation; not a zero-knowledge proof"
KIND_CODES = {VOLUME: 1, PRICE: 2, SELF_TRADE: 3}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}
NO_BID = -1


class AuditError(Exception):
    pass


class OutOfOrder(AuditError):
    pass


class MalformedTranscript(AuditError):
    pass


class MalformedArtifact(AuditError):
    pass


def _q(*vals: int) -> bytes:
    return struct.pack(f"<{len(vals)}q", *vals)


def _section(body: bytes) -> bytes:
    return struct.pack("<q", len(body)) + body


def H(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class EpisodeHeader:
    episode_id: int
    alpha_ppm: int
    beta_ppm: int
    seed: int
    n_venues: int
    self_trade_guard: bool = True

    def canonical(self) -> bytes:
        return b"HDR" + _section(_q(self.episode_id, self.alpha_ppm, self.beta_ppm, self.seed, self.n_venues,
                                     int(self.self_trade_guard)))

    def line(self) -> str:
        return (f"episode_id={self.episode_id},alpha_ppm={self.alpha_ppm},beta_ppm={self.beta_ppm},"
                f"seed={self.seed},n_venues={self.n_venues},guard={int(self.self_trade_guard)}")

    @classmethod
    def parse(cls, line: str) -> "EpisodeHeader":
        try:
            kv = dict(item.split("=", 1) for item in line.strip().split(","))
            if kv["guard"] not in ("0", "1"):
                raise ValueError("guard must be 0 or 1")
            return cls(int(kv["episode_id"]), int(kv["alpha_ppm"]), int(kv["beta_ppm"]), int(kv["seed"]),
                       int(kv["n_venues"]), bool(int(kv["guard"])))
        except (KeyError, ValueError) as exc:
            raise MalformedTranscript(f"bad header line: {line!r}") from exc


@dataclass(frozen=True)
class ReportEntry:
    kind: int
    raw: int
    limit: int
    magnitude: int


@dataclass(frozen=True)
class TranscriptRecord:
    step: int
    venue: int
    raw_v: int
    raw_p: int
    exec_v: int
    exec_p: int
    v_hat: int
    best_bid: int  # NO_BID when the venue had no bid
    fill_qty: int
    fill_notional: int  # sum of qty * price_ticks over the step's fills
    self_cross: int
    reports: tuple[ReportEntry, ...] = ()

    FIELDS = ("step", "venue", "raw_v", "raw_p", "exec_v", "exec_p", "v_hat", "best_bid", "fill_qty",
              "fill_notional", "self_cross")

    def canonical(self) -> bytes:
        fixed = _q(*(getattr(self, f) for f in self.FIELDS))
        reps = _q(len(self.reports)) + b"".join(_q(r.kind, r.raw, r.limit, r.magnitude) for r in self.reports)
        return b"REC" + _section(fixed) + _section(reps)

    @property
    def avg_price(self) -> Optional[float]:
        return self.fill_notional / self.fill_qty if self.fill_qty else None

    def fields_line(self) -> str:
        vals = [str(getattr(self, f)) for f in self.FIELDS]
        vals.append(str(len(self.reports)))
        for r in self.reports:
            vals += [str(r.kind), str(r.raw), str(r.limit), str(r.magnitude)]
        return ",".join(vals)

    @classmethod
    def parse_fields(cls, parts: Sequence[str]) -> "TranscriptRecord":
        try:
            ints = [int(x) for x in parts]
            base = ints[: len(cls.FIELDS)]
            n = ints[len(cls.FIELDS)]
            rest = ints[len(cls.FIELDS) + 1:]
            if n < 0 or len(rest) != 4 * n:
                raise MalformedTranscript("report section length mismatch")
            reps = tuple(ReportEntry(*rest[4 * j: 4 * j + 4]) for j in range(n))
            return cls(*base, reports=reps)
        except (ValueError, IndexError, TypeError) as exc:
            raise MalformedTranscript(f"bad record fields: {parts!r}") from exc


@dataclass
class Transcript:
    """Append-only, hash-chained record of one episode."""

    header: EpisodeHeader
    records: list[TranscriptRecord] = field(default_factory=list)
    digests: list[bytes] = field(default_factory=list)

    def __post_init__(self):
        self.h0 = H(self.header.canonical())
        if not self.digests:
            chain = self.h0
            for rec in self.records:
                chain = H(chain + rec.canonical())
                self.digests.append(chain)

    @property
    def digest(self) -> bytes:
        return self.digests[-1] if self.digests else self.h0

    def record(self, rec: TranscriptRecord) -> bytes:
        if self.records:
            last = self.records[-1]
            if (rec.step, rec.venue) <= (last.step, last.venue):
                raise OutOfOrder(f"record ({rec.step},{rec.venue}) after ({last.step},{last.venue})")
        h = H(self.digest + rec.canonical())
        self.records.append(rec)
        self.digests.append(h)
        return h

    def public_inputs(self) -> list[tuple[int, int, int, int]]:
        return [(r.step, r.venue, r.v_hat, r.best_bid) for r in self.records]

    def to_text(self) -> str:
        lines = [self.header.line()]
        for rec, h in zip(self.records, self.digests):
            lines.append(rec.fields_line() + "," + h.hex())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, check_chain: bool = False) -> "Transcript":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise MalformedTranscript("empty transcript")
        header = EpisodeHeader.parse(lines[0])
        records, stored = [], []
        for ln in lines[1:]:
            parts = ln.strip().split(",")
            records.append(TranscriptRecord.parse_fields(parts[:-1]))
            try:
                stored.append(bytes.fromhex(parts[-1]))
            except ValueError as exc:
                raise MalformedTranscript(f"bad digest in line {ln!r}") from exc
        return cls(header, records, stored)

    def recompute_digests(self) -> list[bytes]:
        out, chain = [], self.h0
        for rec in self.records:
            chain = H(chain + rec.canonical())
            out.append(chain)
        return out


def public_input_commitment(public_inputs: Iterable[tuple[int, int, int, int]]) -> bytes:
    body = b"".join(_q(*row) for row in public_inputs)
    return H(b"PUB" + _section(body))


def record_compliant(r: TranscriptRecord, alpha_ppm: int, beta_ppm: int) -> bool:
    """The per-record predicate the circuit conjoins over the episode."""
    if r.exec_v < 0 or r.v_hat < 0 or r.fill_qty < 0 or r.self_cross not in (0, 1):
        raise MalformedTranscript(f"invalid values in record ({r.step},{r.venue})")
    if r.exec_v == 0:
        return True
    if r.best_bid == NO_BID or r.best_bid < 1:
        return False
    return (r.exec_v <= volume_cap(alpha_ppm, r.v_hat)
            and r.exec_p >= price_floor(beta_ppm, r.best_bid)
            and not r.self_cross)


def circuit_eval(records: Sequence[TranscriptRecord], alpha_ppm: int, beta_ppm: int) -> int:
    """1 iff every executed order met the volume cap, price floor and self-cross rule."""
    ok = 1
    for r in records:
        # keep scanning after a failure so malformed records are always reported
        if not record_compliant(r, alpha_ppm, beta_ppm):
            ok = 0
    return ok


@dataclass(frozen=True)
class ComplianceStatement:
    episode_id: int
    alpha_ppm: int
    beta_ppm: int
    public_inputs: tuple[tuple[int, int, int, int], ...]
    final_digest: bytes

    def serialize(self) -> bytes:
        rows = ";".join(f"{t},{i},{v},{p}" for t, i, v, p in self.public_inputs)
        return (f"episode_id={self.episode_id}\nalpha_ppm={self.alpha_ppm}\nbeta_ppm={self.beta_ppm}\n"
                f"public_inputs={rows}\nfinal_digest={self.final_digest.hex()}\n").encode()

    @property
    def commitment(self) -> bytes:
        return public_input_commitment(self.public_inputs)


@dataclass(frozen=True)
class AuditArtifact:
    mode: str
    bit: int
    episode_id: int
    alpha_ppm: int
    beta_ppm: int
    n_records: int
    commitment: bytes
    digest: bytes
    note: bytes = MOCK_NOTE
    transcript_text: Optional[str] = None

    def to_bytes(self) -> bytes:
        head = struct.pack("<4sHBBQIII32s32s", MAGIC, VERSION, 0 if self.mode == MOCK else 1, self.bit,
                           self.episode_id, self.alpha_ppm, self.beta_ppm, self.n_records, self.commitment,
                           self.digest)
        out = head + struct.pack("<H", len(self.note)) + self.note
        if self.mode == OPEN:
            text = (self.transcript_text or "").encode()
            out += struct.pack("<I", len(text)) + text
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuditArtifact":
        fmt = "<4sHBBQIII32s32s"
        n = struct.calcsize(fmt)
        try:
            magic, ver, mode, bit, eid, a, b, nrec, com, dig = struct.unpack_from(fmt, data, 0)
            (nlen,) = struct.unpack_from("<H", data, n)
            note = data[n + 2: n + 2 + nlen]
            pos = n + 2 + nlen
            if len(note) != nlen:
                raise MalformedArtifact("truncated note")
            text = None
            if mode == 1:
                (tlen,) = struct.unpack_from("<I", data, pos)
                raw = data[pos + 4: pos + 4 + tlen]
                if len(raw) != tlen:
                    raise MalformedArtifact("truncated transcript")
                text = raw.decode()
                pos += 4 + tlen
        except (struct.error, UnicodeDecodeError) as exc:
            raise MalformedArtifact(str(exc)) from exc
        if magic != MAGIC:
            raise MalformedArtifact("bad magic")
        if ver != VERSION:
            raise MalformedArtifact(f"unsupported version {ver}")
        if mode not in (0, 1):
            raise MalformedArtifact(f"bad mode byte {mode}")
        if pos != len(data):
            raise MalformedArtifact("trailing bytes")
        return cls(MOCK if mode == 0 else OPEN, bit, eid, a, b, nrec, com, dig, note, text)


@dataclass(frozen=True)
class Verdict:
    accept: bool
    reason: str

    def __bool__(self) -> bool:
        return self.accept


def statement_for(transcript: Transcript) -> ComplianceStatement:
    h = transcript.header
    return ComplianceStatement(h.episode_id, h.alpha_ppm, h.beta_ppm, tuple(transcript.public_inputs()),
                               transcript.digest)


def prove(transcript: Transcript, constraints: Optional[ConstraintSet] = None, mode: str = MOCK,
          claim: Optional[int] = None) -> AuditArtifact:
    """Evaluate the circuit and package the result.

    ``claim`` overrides the circuit bit, emulating a prover that asserts a
    result it did not compute; verifiers must catch this in OPEN mode.
    """
    h = transcript.header
    if constraints is not None and (constraints.alpha_ppm, constraints.beta_ppm) != (h.alpha_ppm, h.beta_ppm):
        raise AuditError("constraints differ from the transcript header")
    if mode not in (MOCK, OPEN):
        raise ValueError(f"unknown mode {mode!r}")
    bit = circuit_eval(transcript.records, h.alpha_ppm, h.beta_ppm) if claim is None else int(claim)
    stmt = statement_for(transcript)
    return AuditArtifact(mode, bit, h.episode_id, h.alpha_ppm, h.beta_ppm, len(transcript.records),
                         stmt.commitment, transcript.digest,
                         transcript_text=transcript.to_text() if mode == OPEN else None)


def verify(artifact: AuditArtifact, public_inputs: Optional[Sequence[tuple[int, int, int, int]]] = None
           ) -> Verdict:
    if len(artifact.digest) != 32 or len(artifact.commitment) != 32:
        return Verdict(False, "digest format")
    if not (0 < artifact.alpha_ppm <= PPM) or not (0 <= artifact.beta_ppm < PPM):
        return Verdict(False, "constraint parameters out of range")
    if artifact.bit not in (0, 1):
        return Verdict(False, "bad circuit bit")
    if public_inputs is not None:
        rows = [tuple(int(x) for x in row) for row in public_inputs]
        if len(rows) != artifact.n_records or public_input_commitment(rows) != artifact.commitment:
            return Verdict(False, "public input mismatch")
    if artifact.mode == MOCK:
        if artifact.bit != 1:
            return Verdict(False, "non-compliant")
        return Verdict(True, "accept (MOCK: integrity rests on the trusted prover)")

    if artifact.transcript_text is None:
        return Verdict(False, "OPEN artifact without transcript")
    try:
        tr = Transcript.from_text(artifact.transcript_text)
    except MalformedTranscript as exc:
        return Verdict(False, f"malformed transcript: {exc}")
    hdr = tr.header
    if (hdr.episode_id, hdr.alpha_ppm, hdr.beta_ppm) != (artifact.episode_id, artifact.alpha_ppm, artifact.beta_ppm):
        return Verdict(False, "statement mismatch")
    if len(tr.records) != artifact.n_records:
        return Verdict(False, "chain mismatch")
    recomputed = tr.recompute_digests()
    if recomputed != tr.digests:
        return Verdict(False, "chain mismatch")
    final = recomputed[-1] if recomputed else tr.h0
    if final != artifact.digest:
        return Verdict(False, "chain mismatch")
    if public_input_commitment(tr.public_inputs()) != artifact.commitment:
        return Verdict(False, "public input mismatch")
    try:
        bit = circuit_eval(tr.records, hdr.alpha_ppm, hdr.beta_ppm)
    except MalformedTranscript as exc:
        return Verdict(False, f"malformed transcript: {exc}")
    if bit != artifact.bit:
        return Verdict(False, "circuit mismatch")
    if bit != 1:
        return Verdict(False, "non-compliant")
    return Verdict(True, "accept")
