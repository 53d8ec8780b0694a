"""End-to-end run: detection counts -> reconciliation -> security -> signing.

The three-party system needs two key channels, Merchant-Client and
Merchant-TP.  Each channel is replayed from a measured table or
simulated, then its rate is budgeted; the slower channel sets the
signature rate.  A final protocol run signs a contract with keys that went
through simulated reconciliation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import charize, data
from . import rng as _rng
from .cascade import CascadeConfig, reconcile
from .kgp import KgpConfig, estimate, load_table, replay, simulate
from .protocol import Contract, Scenario, run_e2e
from .security import (SecurityBudget, SourceFlaws, binary_entropy, coin_imbalance,
                       optimize_n)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A stage failed; the message starts with the stage name."""


LEAK_SOURCES = ("published", "cascade")
EP_SOURCES = ("published", "flaws")


@dataclass
class ChannelSpec:
    """Where one channel's counts come from.

    ``pair`` picks a shipped table row; ``table`` is a detection table
    dict; ``kgp`` simulates instead.
    """

    pair: str | None = None
    table: dict | None = None
    kgp: KgpConfig | None = None
    flaws: SourceFlaws | None = None
    E_p: float | None = None
    leak_EC: float | None = None
    intensity: float | None = None

    def label(self) -> str:
        return self.pair or ("simulated" if self.kgp else "table")


@dataclass
class PipelineConfig:
    mode: str = "replay"
    client: ChannelSpec = field(default_factory=lambda: ChannelSpec(pair="C1"))
    tp: ChannelSpec = field(default_factory=lambda: ChannelSpec(pair="TP1"))
    budget: SecurityBudget = field(default_factory=SecurityBudget)
    m: int = 428072
    leak_source: str = "published"
    ep_source: str = "published"
    coin_reference: str = "absolute"
    cascade_bits: int = 200_000
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    seed: int = 0
    contract_payload: bytes = b"1 unit at list price"
    price: int = 100

    def __post_init__(self):
        if self.mode not in ("replay", "simulate"):
            raise ValueError("mode must be 'replay' or 'simulate'")
        if self.mode == "simulate" and any(c.kgp is None for c in (self.client, self.tp)):
            raise ValueError("simulate mode needs a kgp config for both channels")
        if self.leak_source not in LEAK_SOURCES:
            raise ValueError(f"leak_source must be one of {LEAK_SOURCES}")
        if self.ep_source not in EP_SOURCES:
            raise ValueError(f"ep_source must be one of {EP_SOURCES}")
        if self.cascade_bits < self.cascade.segment_bits:
            raise ValueError("cascade_bits must cover at least one segment")


@dataclass
class ChannelReport:
    label: str
    summary: dict
    rates: dict
    cascade: dict
    security: dict
    keys: tuple = field(default=(), repr=False)


@dataclass
class PipelineReport:
    channels: dict
    SR_per_second: float
    n_star: int
    protocol: dict
    outcome: str

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome,
            "SR_per_second": self.SR_per_second,
            "n_star": self.n_star,
            "channels": {k: {"label": c.label, "summary": c.summary, "rates": c.rates,
                             "cascade": c.cascade, "security": c.security}
                         for k, c in self.channels.items()},
            "protocol": self.protocol,
        }


def _reconcile_sample(e_b_x: float, cfg: PipelineConfig, label: str):
    """Run Cascade on a simulated key pair with the channel's error rate."""
    gen = _rng.stream(cfg.seed, "pipeline", label)
    size = cfg.cascade_bits
    a = gen.integers(0, 2, size, dtype=np.uint8)
    flips = (gen.random(size) < e_b_x).astype(np.uint8)
    res = reconcile(a, a ^ flips, CascadeConfig(
        block_bits=min(cfg.cascade.block_bits, size), segment_bits=cfg.cascade.segment_bits,
        max_passes=cfg.cascade.max_passes, permutation_seed=_rng.derive_seed(cfg.seed, label)))
    return a, res, int(flips.sum())


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise PipelineError(f"{name}: {exc}") from exc


def _channel(spec: ChannelSpec, cfg: PipelineConfig, label: str) -> ChannelReport:
    published = data.summary_row(spec.pair) if spec.pair else {}
    summary, rates, intensity = _stage("kgp", _counts, spec, cfg, published)
    e_b_x = rates.E_b_x if rates.E_b_x is not None else published.get("E_b_x", 0.0)
    a, res, flipped = _stage("cascade", _reconcile_sample, e_b_x, cfg, label)
    f = res.leaked_bits / (res.corrected_peer_key.size * binary_entropy(e_b_x)) if 0 < e_b_x < 1 else math.nan
    sec = _stage("security", _budget, spec, cfg, published, summary, e_b_x, f, intensity, label)
    return ChannelReport(
        label=spec.label(),
        summary={"n": summary.n, "n_x": summary.n_x, "n_y": summary.n_y, "m_y": summary.m_y,
                 "duration_s": summary.duration_s, "N": summary.N},
        rates={"mu": intensity, "E_b_x": e_b_x, "E_b_y": rates.E_b_y, "x_source": rates.x_source},
        cascade={"bits": int(res.corrected_peer_key.size), "flipped": flipped,
                 "leaked_bits": res.leaked_bits, "leak_ec": res.leak_ec,
                 "passes_used": res.passes_used, "residual_mismatch": res.residual_mismatch,
                 "f": f},
        security=sec.to_json(),
        keys=(a, res.corrected_peer_key),
    )


def _counts(spec: ChannelSpec, cfg: PipelineConfig, published: dict):
    if spec.kgp is not None:
        summary, sifted = simulate(spec.kgp)
        rates = estimate(summary, sifted)
        intensity = spec.kgp.intensity
    else:
        table = spec.table if spec.table is not None else data.detection_table(spec.pair)
        summary = replay(table, float(table.get("duration_s", 100.0)))
        rates = estimate(summary)
        intensity = spec.intensity or published.get("mu")
    return summary, rates, intensity


def _budget(spec, cfg, published, summary, e_b_x, f, intensity, label):
    if cfg.leak_source == "published" and (spec.leak_EC or published.get("leak_EC")):
        leak = float(spec.leak_EC or published["leak_EC"])
    else:
        leak = (f if math.isfinite(f) else 1.0) * summary.n_x * binary_entropy(max(e_b_x, 1e-12)) + 64

    Delta = E_p = None
    if cfg.ep_source == "published" and (spec.E_p is not None or "E_p" in published):
        E_p = spec.E_p if spec.E_p is not None else published["E_p"]
    else:
        flaws = spec.flaws
        if flaws is None and spec.pair:
            row = data.flaw_row(spec.pair)
            flaws = SourceFlaws(row["xi"], row["delta"], 10 ** row["tan_theta_exp"],
                                math.asin(row["sin_psi"]))
        if flaws is None or intensity is None:
            raise ValueError(f"channel {label}: need flaws and intensity to derive E_p")
        Q = summary.n / summary.N if summary.N else summary.n / 1e10
        Delta = coin_imbalance(flaws, intensity, Q, reference=cfg.coin_reference)
    return optimize_n(summary, leak, cfg.budget, cfg.m, Delta=Delta, E_p=E_p)


def run_pipeline(cfg: PipelineConfig | None = None) -> PipelineReport:
    cfg = cfg or PipelineConfig()
    channels = {"merchant_client": _channel(cfg.client, cfg, "client"),
                "merchant_tp": _channel(cfg.tp, cfg, "tp")}
    n_star = max(c.security["n_star"] for c in channels.values())
    sr = min(c.security["SR_per_second"] for c in channels.values())
    log.info("SR %.3f/s at n=%d", sr, n_star)

    contract = Contract(payload=cfg.contract_payload, timestamp=0, merchant_id="merchant",
                        client_id="client", price=cfg.price)
    mc, mt = channels["merchant_client"].keys, channels["merchant_tp"].keys
    if min(mc[0].size, mt[0].size) < 3 * n_star:
        tr = None
        protocol = {"outcome": "aborted", "reason": f"reconciled sample shorter than {3 * n_star} bits"}
    else:
        tr = _stage("protocol", run_e2e, Scenario(mc, mt, n_star, contract, seed=cfg.seed))
        protocol = tr.to_json()
        protocol.pop("messages")
    outcome = protocol["outcome"]
    return PipelineReport(channels, sr, n_star, protocol, outcome)


def _channel_from_json(obj: dict, base: Path) -> ChannelSpec:
    table = obj.get("table")
    if table is not None:
        table = load_table(base / table)
    kgp = KgpConfig.from_json(obj["kgp"]) if "kgp" in obj else None
    flaws = None
    if "flaws" in obj:
        flaws = SourceFlaws.from_json(obj["flaws"])
    elif "charize" in obj:
        flaws = flaws_from_files({k: base / v for k, v in obj["charize"].items()})
    return ChannelSpec(pair=obj.get("pair"), table=table, kgp=kgp, flaws=flaws, E_p=obj.get("E_p"),
                       leak_EC=obj.get("leak_EC"), intensity=obj.get("intensity"))


def flaws_from_files(paths: dict) -> SourceFlaws:
    """Characterise a source from whichever of ``power``, ``phase``,
    ``polarization`` and ``pattern`` CSV files are given."""
    kw = {}
    if "power" in paths:
        kw["xi"] = charize.power_fluctuation(charize.read_power_series(paths["power"]))
    if "phase" in paths:
        kw["delta"] = max(charize.phase_shift_table(charize.read_phase_table(paths["phase"]),
                                                    efficiency="self").values())
    if "polarization" in paths:
        kw["tan_theta"] = charize.polarization_ratio(*charize.read_polarization(paths["polarization"]))[0]
    if "pattern" in paths:
        kw["psi"] = charize.pattern_deviation(charize.read_pattern_table(paths["pattern"])).psi
    return charize.flaws_from_records(**kw)


def config_from_json(obj: dict, base=".") -> PipelineConfig:
    """Build a :class:`PipelineConfig` from parsed JSON; relative paths are
    resolved against ``base``."""
    base = Path(base)
    mode = obj.get("mode", "replay")
    if mode == "simulate" and "seed" not in obj:
        raise ValueError("simulate mode needs an explicit seed")
    kw = {}
    for name in ("m", "leak_source", "ep_source", "coin_reference", "cascade_bits", "seed", "price"):
        if name in obj:
            kw[name] = obj[name]
    if "budget" in obj:
        kw["budget"] = SecurityBudget(**obj["budget"])
    if "contract" in obj:
        kw["contract_payload"] = (base / obj["contract"]).read_bytes()
    kw["client"] = _channel_from_json(obj.get("client", {"pair": "C1"}), base)
    kw["tp"] = _channel_from_json(obj.get("tp", {"pair": "TP1"}), base)
    if mode == "simulate":
        for spec in (kw["client"], kw["tp"]):
            if spec.kgp is not None and "seed" in obj:
                spec.kgp = replace(spec.kgp, seed=_rng.derive_seed(int(obj["seed"]), spec.kgp.seed))
    return PipelineConfig(mode=mode, **kw)
