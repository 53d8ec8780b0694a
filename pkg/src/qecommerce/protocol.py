"""Merchant / Client / TP signing protocol over simulated authenticated links.

One run:

1. Merchant signs the contract with ``k1M ^ k2M`` and sends ``{C, Sig}``
   to Client.
2. If Client agrees, it sends ``{C, Sig, k1C}`` to TP.
3. TP answers with ``{C, k2T}``.
4. Client and TP each check ``Hash(C, k1C ^ k2T) == Sig``.  Client pays
   TP only after its own check passes; TP passes the money on to Merchant
   if its check passes and refunds Client otherwise.

Messages are length-prefixed binary frames.  Adversaries act by rewriting
designated frames before delivery.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import bits as _bits
from . import rng as _rng
from .gf2 import gen_irreducible_batch
from .otuh import (KeyReuseError, SignatureKeys, SignatureTag, lfsr_hash_batch, sign,
                   verify)

FRAME_VERSION = 1
ADVERSARIES = ("none", "forge_client", "forge_tp", "repudiate_merchant")
MERCHANT, CLIENT, TP = "Merchant", "Client", "TP"


class ProtocolAbort(Exception):
    """A run stopped early; the transcript records why."""


class FrameError(ValueError):
    """A frame or contract encoding could not be parsed."""


class InsufficientKeyError(ValueError):
    """Not enough key material for one signing block."""


# --- canonical encodings ------------------------------------------------

@dataclass(frozen=True)
class Contract:
    payload: bytes
    timestamp: int
    merchant_id: str
    client_id: str
    price: int

    _MAGIC = b"QEC\x01"

    def to_bytes(self) -> bytes:
        """Magic, then each field as a 4-byte big-endian length and its bytes."""
        fields = (
            self.merchant_id.encode("utf-8"),
            self.client_id.encode("utf-8"),
            struct.pack(">q", self.timestamp),
            struct.pack(">q", self.price),
            bytes(self.payload),
        )
        return self._MAGIC + b"".join(struct.pack(">I", len(f)) + f for f in fields)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Contract":
        if not data.startswith(cls._MAGIC):
            raise FrameError("not a contract encoding")
        pos, parts = len(cls._MAGIC), []
        for _ in range(5):
            if pos + 4 > len(data):
                raise FrameError("truncated contract")
            (k,) = struct.unpack_from(">I", data, pos)
            pos += 4
            if pos + k > len(data):
                raise FrameError("truncated contract field")
            parts.append(data[pos:pos + k])
            pos += k
        if pos != len(data):
            raise FrameError("trailing bytes after contract")
        if len(parts[2]) != 8 or len(parts[3]) != 8:
            raise FrameError("bad integer field")
        return cls(payload=parts[4], timestamp=struct.unpack(">q", parts[2])[0],
                   merchant_id=parts[0].decode("utf-8"), client_id=parts[1].decode("utf-8"),
                   price=struct.unpack(">q", parts[3])[0])

    @property
    def bits(self) -> np.ndarray:
        return _bits.bytes_to_bits(self.to_bytes())

    @property
    def m(self) -> int:
        return 8 * len(self.to_bytes())

    def to_json(self) -> dict:
        out = {"timestamp": self.timestamp, "merchant_id": self.merchant_id,
               "client_id": self.client_id, "price": self.price}
        try:
            out["payload"] = self.payload.decode("utf-8")
        except UnicodeDecodeError:
            out["payload_hex"] = self.payload.hex()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Contract":
        # binary payloads travel as hex
        payload = bytes.fromhex(obj["payload_hex"]) if "payload_hex" in obj else obj["payload"].encode("utf-8")
        return cls(payload=payload, timestamp=int(obj["timestamp"]),
                   merchant_id=obj["merchant_id"], client_id=obj["client_id"], price=int(obj["price"]))


def _ascii(name: str) -> bytes:
    try:
        return name.encode("ascii")
    except UnicodeEncodeError:
        raise FrameError(f"names must be ASCII: {name!r}") from None


def _unascii(raw: bytes) -> str:
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError:
        raise FrameError("non-ASCII name in frame") from None


def encode_fields(fields: dict) -> bytes:
    out = []
    for k, v in fields.items():
        kb = _ascii(k)
        out.append(struct.pack(">H", len(kb)) + kb + struct.pack(">I", len(v)) + bytes(v))
    return b"".join(out)


def decode_fields(data: bytes) -> dict:
    pos, out = 0, {}
    while pos < len(data):
        if pos + 2 > len(data):
            raise FrameError("truncated field name length")
        (kl,) = struct.unpack_from(">H", data, pos)
        pos += 2
        if pos + kl > len(data):
            raise FrameError("truncated field name")
        key = _unascii(data[pos:pos + kl])
        pos += kl
        if pos + 4 > len(data):
            raise FrameError("truncated field length")
        (vl,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + vl > len(data):
            raise FrameError(f"truncated field {key!r}")
        out[key] = data[pos:pos + vl]
        pos += vl
    return out


def encode_frame(kind: str, body: bytes) -> bytes:
    """``version:u8 | len(kind):u8 | kind | len(body):u32 | body``, big-endian."""
    kb = _ascii(kind)
    if len(kb) > 255:
        raise FrameError("frame kind too long")
    return struct.pack(">BB", FRAME_VERSION, len(kb)) + kb + struct.pack(">I", len(body)) + body


def decode_frame(frame: bytes) -> tuple[str, bytes]:
    if len(frame) < 2:
        raise FrameError("short frame")
    version, kl = struct.unpack_from(">BB", frame, 0)
    if version != FRAME_VERSION:
        raise FrameError(f"unsupported frame version {version}")
    if len(frame) < 2 + kl + 4:
        raise FrameError("truncated frame header")
    kind = _unascii(frame[2:2 + kl])
    (bl,) = struct.unpack_from(">I", frame, 2 + kl)
    body = frame[6 + kl:]
    if len(body) != bl:
        raise FrameError("frame length mismatch")
    return kind, body


def _key_bytes(keys: SignatureKeys) -> bytes:
    return struct.pack(">I", keys.n) + _bits.bits_to_bytes(keys.to_block())


def _key_from_bytes(data: bytes) -> SignatureKeys:
    if len(data) < 4:
        raise FrameError("truncated key")
    (n,) = struct.unpack_from(">I", data, 0)
    raw = _bits.bytes_to_bits(data[4:])
    if n < 1 or raw.size < 3 * n:
        raise FrameError("key block too short")
    return SignatureKeys.from_block(raw[:3 * n])


def _tag_bytes(tag: SignatureTag) -> bytes:
    return struct.pack(">I", tag.n) + _bits.bits_to_bytes(tag.bits)


def _tag_from_bytes(data: bytes) -> SignatureTag:
    if len(data) < 4:
        raise FrameError("truncated tag")
    (n,) = struct.unpack_from(">I", data, 0)
    raw = _bits.bytes_to_bits(data[4:])
    if raw.size < n:
        raise FrameError("tag too short")
    return SignatureTag(raw[:n].copy())


# --- parties, money and transcripts -------------------------------------

class Ledger:
    """Integer balances moved only by transfers, so totals are conserved."""

    def __init__(self, balances: dict):
        self.opening = dict(balances)
        self.balances = dict(balances)
        self.events: list = []

    def transfer(self, payer: str, payee: str, amount: int, memo: str):
        if amount < 0:
            raise ValueError("amount must be >= 0")
        self.balances[payer] -= amount
        self.balances[payee] += amount
        self.events.append({"from": payer, "to": payee, "amount": amount, "memo": memo})

    def deltas(self) -> dict:
        return {k: self.balances[k] - self.opening[k] for k in self.balances}


@dataclass
class PartyState:
    role: str
    key_store: dict
    decision: str = "pending"
    used: set = field(default_factory=set)

    def take(self, channel: str, index: int) -> SignatureKeys:
        if (channel, index) in self.used:
            raise KeyReuseError(f"{self.role} already used block {index} of {channel}")
        blocks = self.key_store.get(channel, [])
        if index >= len(blocks):
            raise InsufficientKeyError(f"{self.role} has no block {index} on {channel}")
        self.used.add((channel, index))
        return blocks[index].copy()

    def decide(self, verdict: str):
        if verdict not in ("accept", "reject"):
            raise ValueError("verdict must be accept or reject")
        if self.decision != "pending" and self.decision != verdict:
            raise RuntimeError(f"{self.role} decision is final")
        self.decision = verdict


@dataclass
class Message:
    seq: int
    sender: str
    receiver: str
    kind: str
    frame: bytes
    tampered: bool = False

    def to_json(self) -> dict:
        return {"seq": self.seq, "sender": self.sender, "receiver": self.receiver,
                "kind": self.kind, "frame": self.frame.hex(), "tampered": self.tampered}


@dataclass
class Transcript:
    messages: list = field(default_factory=list)
    outcome: str = "aborted"
    reason: str = ""
    verdicts: dict = field(default_factory=dict)
    disputes: list = field(default_factory=list)
    ledger_events: list = field(default_factory=list)
    balances: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)
    key_audit: list = field(default_factory=list)
    adversary: str = "none"
    forgery_accepted: bool | None = None

    @property
    def money_conserved(self) -> bool:
        return sum(self.deltas.values()) == 0

    def audit_keys(self) -> bool:
        """True if no party touched the same key block twice."""
        seen = set()
        for entry in self.key_audit:
            key = (entry["party"], entry["channel"], entry["block"])
            if key in seen:
                return False
            seen.add(key)
        return True

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome, "reason": self.reason, "adversary": self.adversary,
            "verdicts": self.verdicts, "disputes": self.disputes,
            "forgery_accepted": self.forgery_accepted,
            "ledger": self.ledger_events, "balances": self.balances, "deltas": self.deltas,
            "key_audit": self.key_audit,
            "messages": [m.to_json() for m in self.messages],
        }


# --- key distillation ---------------------------------------------------

def distill_signing_blocks(corrected_key, n: int, order_seed: int) -> list:
    """Shuffle a reconciled key with the announced order and cut it into
    ``3n``-bit signing blocks; a short tail is dropped."""
    key = _bits.as_bits(corrected_key)
    if n < 1:
        raise ValueError("n must be >= 1")
    if key.size < 3 * n:
        raise InsufficientKeyError(f"need at least {3 * n} bits, have {key.size}")
    order = _rng.stream(order_seed, "distill").permutation(key.size)
    shuffled = key[order]
    count = key.size // (3 * n)
    return [SignatureKeys.from_block(shuffled[i * 3 * n:(i + 1) * 3 * n]) for i in range(count)]


# --- arbitration --------------------------------------------------------

@dataclass(frozen=True)
class Arbitration:
    outcome: str
    pay_merchant: bool
    refund_client: bool
    dispute: str | None


def arbitrate(client_verdict: str | None, tp_verdict: str | None) -> Arbitration:
    """Settle a run from the two verdicts.

    The contract stands only if TP accepts; Client pays only after
    accepting.  ``None`` means the party never reached a verdict.
    """
    if client_verdict != "accept":
        dispute = "Client rejected; payment withheld" if client_verdict == "reject" else None
        if client_verdict == "reject" and tp_verdict == "accept":
            dispute = "Client rejected while TP accepted; payment withheld"
        return Arbitration("aborted", False, False, dispute)
    if tp_verdict == "accept":
        return Arbitration("completed", True, False, None)
    return Arbitration("aborted", False, True, "TP rejected after Client accepted; refunded")


# --- end-to-end run -----------------------------------------------------

@dataclass
class Scenario:
    """Inputs of one protocol run.

    ``merchant_client_keys`` and ``merchant_tp_keys`` are the reconciled
    key pairs of the two channels as ``(merchant_side, peer_side)``.
    """

    merchant_client_keys: tuple
    merchant_tp_keys: tuple
    n: int
    contract: Contract
    adversary: str = "none"
    seed: int = 0
    client_agrees: bool = True
    block: int = 0
    channel_failure: float = 0.0
    opening_balances: dict = field(default_factory=lambda: {MERCHANT: 0, CLIENT: 10**6, TP: 0})

    def __post_init__(self):
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"adversary must be one of {ADVERSARIES}")


def ideal_scenario(seed: int, n: int = 64, contract: Contract | None = None,
                   blocks: int = 1, **kw) -> Scenario:
    """Scenario whose two channels share uniformly random identical keys."""
    length = 3 * n * blocks
    k1 = _rng.stream(seed, "keys", "merchant-client").integers(0, 2, length, dtype=np.uint8)
    k2 = _rng.stream(seed, "keys", "merchant-tp").integers(0, 2, length, dtype=np.uint8)
    if contract is None:
        contract = Contract(payload=f"order #{seed}: 1 unit".encode(), timestamp=1_700_000_000 + seed,
                            merchant_id="merchant", client_id="client", price=100)
    return Scenario((k1, k1.copy()), (k2, k2.copy()), n, contract, seed=seed, **kw)


def _flip_bit(data: bytes, position: int) -> bytes:
    buf = bytearray(data)
    buf[position // 8] ^= 0x80 >> (position % 8)
    return bytes(buf)


def run_e2e(scenario: Scenario) -> Transcript:
    """Execute one run and return its transcript; never raises on protocol
    failure, which is reported as an aborted outcome instead."""
    sc = scenario
    tr = Transcript(adversary=sc.adversary)
    ledger = Ledger(sc.opening_balances)
    adv_rng = _rng.stream(sc.seed, "adversary")
    net_rng = _rng.stream(sc.seed, "network")
    seq = iter(range(1 << 30))

    def send(sender, receiver, kind, fields, tamper=None):
        frame = encode_frame(kind, encode_fields(fields))
        tampered = False
        if tamper is not None:
            new = tamper(frame)
            tampered = new != frame
            frame = new
        tr.messages.append(Message(next(seq), sender, receiver, kind, frame, tampered))
        if sc.channel_failure and net_rng.random() < sc.channel_failure:
            raise ProtocolAbort(f"channel failure on {kind}")
        got_kind, body = decode_frame(frame)
        if got_kind != kind:
            raise FrameError("unexpected frame kind")
        return decode_fields(body)

    def audit(party, channel, op):
        tr.key_audit.append({"party": party, "channel": channel, "block": sc.block, "op": op})

    client_verdict = tp_verdict = None
    try:
        mc_m, mc_c = sc.merchant_client_keys
        mt_m, mt_t = sc.merchant_tp_keys
        order_1 = _rng.derive_seed(sc.seed, "order", "merchant-client")
        order_2 = _rng.derive_seed(sc.seed, "order", "merchant-tp")
        merchant = PartyState(MERCHANT, {
            "client": distill_signing_blocks(mc_m, sc.n, order_1),
            "tp": distill_signing_blocks(mt_m, sc.n, order_2)})
        client = PartyState(CLIENT, {"client": distill_signing_blocks(mc_c, sc.n, order_1)})
        tp = PartyState(TP, {"tp": distill_signing_blocks(mt_t, sc.n, order_2)})

        # signature
        k_sign = merchant.take("client", sc.block) ^ merchant.take("tp", sc.block)
        audit(MERCHANT, "client", "sign")
        audit(MERCHANT, "tp", "sign")
        c_bytes = sc.contract.to_bytes()
        sig = sign(c_bytes, k_sign)

        sig_tamper = None
        if sc.adversary == "repudiate_merchant" and adv_rng.random() < 0.5:
            pos = int(adv_rng.integers(0, sig.n))
            sig_tamper = lambda f: f[:-((sig.n + 7) // 8)] + _flip_bit(f[-((sig.n + 7) // 8):], pos)  # noqa: E731
        offer = send(MERCHANT, CLIENT, "offer", {"contract": c_bytes, "sig": _tag_bytes(sig)}, sig_tamper)
        c_at_client = offer["contract"]
        sig_at_client = _tag_from_bytes(offer["sig"])
        Contract.from_bytes(c_at_client)

        # transference
        if not sc.client_agrees:
            tr.reason = "Client declined the contract"
            raise ProtocolAbort(tr.reason)
        k1c = client.take("client", sc.block)
        audit(CLIENT, "client", "forward")

        fwd_tamper = None
        if sc.adversary == "forge_client":
            pos = 8 * len(Contract._MAGIC) + int(adv_rng.integers(0, 8 * (len(c_at_client) - 4)))
            fwd_tamper = lambda f, p=pos: _forge_contract_field(f, p)  # noqa: E731
        fwd = send(CLIENT, TP, "forward",
                   {"contract": c_at_client, "sig": _tag_bytes(sig_at_client), "key": _key_bytes(k1c)},
                   fwd_tamper)
        c_at_tp = fwd["contract"]
        sig_at_tp = _tag_from_bytes(fwd["sig"])
        k1c_at_tp = _key_from_bytes(fwd["key"])

        k2t = tp.take("tp", sc.block)
        audit(TP, "tp", "reply")
        reply_tamper = None
        if sc.adversary == "forge_tp":
            pos = 8 * len(Contract._MAGIC) + int(adv_rng.integers(0, 8 * (len(c_at_tp) - 4)))
            reply_tamper = lambda f, p=pos: _forge_contract_field(f, p)  # noqa: E731
        reply = send(TP, CLIENT, "reply", {"contract": c_at_tp, "key": _key_bytes(k2t)}, reply_tamper)
        c_announced = reply["contract"]
        k2t_at_client = _key_from_bytes(reply["key"])

        # verification
        k_client = k1c ^ k2t_at_client
        audit(CLIENT, "tp", "verify")
        ok_client = c_announced == c_at_client and verify(c_at_client, sig_at_client, k_client)
        if c_announced != c_at_client:
            # the client judges the contract TP claims to hold
            ok_client = verify(c_announced, sig_at_client, k_client)
        client_verdict = "accept" if ok_client else "reject"
        client.decide(client_verdict)

        if client_verdict == "accept":
            ledger.transfer(CLIENT, TP, sc.contract.price, "payment held by TP")

        k_tp = k1c_at_tp ^ k2t
        audit(TP, "client", "verify")
        tp_verdict = "accept" if verify(c_at_tp, sig_at_tp, k_tp) else "reject"
        tp.decide(tp_verdict)

        if sc.adversary == "forge_client":
            tr.forgery_accepted = tp_verdict == "accept" and c_at_tp != c_bytes
        elif sc.adversary == "forge_tp":
            tr.forgery_accepted = client_verdict == "accept" and c_announced != c_bytes
        if sc.adversary == "repudiate_merchant":
            tr.disputes.append("Merchant denies the signature")

        ruling = arbitrate(client_verdict, tp_verdict)
        if ruling.pay_merchant:
            ledger.transfer(TP, MERCHANT, sc.contract.price, "payment released")
        if ruling.refund_client:
            ledger.transfer(TP, CLIENT, sc.contract.price, "refund, contract aborted")
        if ruling.dispute:
            tr.disputes.append(ruling.dispute)
        tr.outcome = ruling.outcome
        tr.reason = tr.reason or ("signature accepted" if ruling.outcome == "completed" else ruling.dispute or "")
    except (ProtocolAbort, FrameError, InsufficientKeyError, KeyReuseError, ValueError) as exc:
        tr.outcome = "aborted"
        tr.reason = tr.reason or f"{type(exc).__name__}: {exc}"
        # a payment already held by TP goes back to Client
        held = sum(e["amount"] for e in ledger.events if e["to"] == TP) - \
            sum(e["amount"] for e in ledger.events if e["from"] == TP)
        if held:
            ledger.transfer(TP, CLIENT, held, "refund after abort")

    tr.verdicts = {CLIENT: client_verdict, TP: tp_verdict}
    tr.ledger_events = list(ledger.events)
    tr.balances = dict(ledger.balances)
    tr.deltas = ledger.deltas()
    return tr


def _forge_contract_field(frame: bytes, bit: int) -> bytes:
    """Flip one bit inside the ``contract`` field of a frame."""
    kind, body = decode_frame(frame)
    fields = decode_fields(body)
    fields["contract"] = _flip_bit(fields["contract"], bit)
    return encode_frame(kind, encode_fields(fields))


# --- Monte-Carlo attacks ------------------------------------------------

@dataclass(frozen=True)
class AttackStats:
    kind: str
    trials: int
    successes: int
    n: int
    m: int
    bound: float

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def sigma(self) -> float:
        p = self.bound
        return math.sqrt(p * (1 - p) / self.trials) if self.trials else 0.0

    @property
    def within_bound(self) -> bool:
        return self.rate <= self.bound + 3 * self.sigma

    def to_json(self) -> dict:
        return {"kind": self.kind, "trials": self.trials, "successes": self.successes,
                "rate": self.rate, "bound": self.bound, "sigma": self.sigma, "n": self.n, "m": self.m,
                "within_bound": self.within_bound}


def worst_case_difference(n: int, m: int) -> np.ndarray:
    """An m-bit message difference divisible by as many distinct degree-n
    irreducibles as fit; bit j is the coefficient of x^j."""
    count = (m - 1) // n
    if count == 0:
        d = np.zeros(m, dtype=np.uint8)
        d[0] = 1
        return d
    factors = []
    for p in gen_irreducible_batch(n, np.arange(1, min(1 << n, 64 * count + 2))).tolist():
        if p not in factors:
            factors.append(p)
        if len(factors) == count:
            break
    prod = 1
    from .gf2 import clmul

    for p in factors:
        prod = clmul(prod, int(p))
    return np.array([(prod >> j) & 1 for j in range(m)], dtype=np.uint8)


def forgery_trials(trials: int, n: int = 16, m: int = 64, seed: int = 0,
                   difference: str = "worst", chunk: int = 1 << 18) -> AttackStats:
    """Rate at which a tampered message passes verification under fresh,
    uniformly random keys.

    A forged message passes iff the hash of its difference from the signed
    message vanishes, so only the difference is hashed.  Degenerate key
    parts (an all-zero polynomial seed or LFSR state) count as successful
    forgeries.
    """
    if not 1 <= n <= 20:
        raise ValueError("forgery trials support 1 <= n <= 20")
    if difference == "worst":
        diff = worst_case_difference(n, m)
    elif difference == "single":
        diff = np.zeros(m, dtype=np.uint8)
        diff[m // 2] = 1
    else:
        raise ValueError("difference must be 'worst' or 'single'")
    table = np.zeros(1 << n, dtype=np.uint64)
    table[1:] = gen_irreducible_batch(n, np.arange(1, 1 << n))
    gen = _rng.stream(seed, "forgery", n, m)
    successes = 0
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        x2 = gen.integers(0, 1 << n, t, dtype=np.uint64)
        x3 = gen.integers(0, 1 << n, t, dtype=np.uint64)
        tags = lfsr_hash_batch(diff, table[x2], x3, n)
        successes += int(np.count_nonzero((tags == 0) | (x2 == 0)))
        done += t
    return AttackStats(f"forge/{difference}", trials, successes, n, m, m * 2.0 ** (1 - n))


def repudiation_trials(trials: int, n: int = 32, seed: int = 0) -> tuple[int, int]:
    """Run the repudiation scenario; return (runs, runs with equal verdicts)."""
    same = 0
    for i in range(trials):
        tr = run_e2e(ideal_scenario(_rng.derive_seed(seed, "repudiate", i), n=n,
                                    adversary="repudiate_merchant"))
        same += tr.verdicts[CLIENT] == tr.verdicts[TP]
    return trials, same
