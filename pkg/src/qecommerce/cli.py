"""Command-line entry point ``qecommerce``.

Exit codes: 0 success (or signature accepted), 1 error (or signature
rejected), 2 protocol aborted.  ``QECOMMERCE_LOG_LEVEL`` sets the log
level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bits as _bits
from . import charize, data
from .cascade import CascadeConfig, reconcile
from .gf2 import Gf2Poly, gen_irreducible
from .kgp import KgpConfig, estimate, load_table, replay, simulate
from .otuh import SignatureKeys, SignatureTag, sign, verify
from .protocol import ADVERSARIES, Contract, forgery_trials, ideal_scenario, repudiation_trials, run_e2e
from .security import SecurityBudget, SourceFlaws, coin_imbalance, optimize_n

log = logging.getLogger("qecommerce")


def _dump(obj) -> None:
    from .report import _jsonable

    print(json.dumps(obj, indent=2, default=_jsonable))


def _read_bits(path) -> np.ndarray:
    return _bits.as_bits("".join(Path(path).read_text().split()))


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# --- handlers -----------------------------------------------------------

def cmd_gen_irreducible(a) -> int:
    seed_bits = _bits.hex_to_bits(a.seed, a.n) if a.seed_format == "hex" else _bits.as_bits(a.seed)
    f = Gf2Poly.from_hex(a.f) if a.f else None
    p = gen_irreducible(a.n, seed_bits, f)
    _dump({"n": a.n, "poly_hex": p.to_hex(), "poly_bits": p.to_bits(), "poly": str(p)})
    return 0


def cmd_sign(a) -> int:
    keys = SignatureKeys.from_json(_read_json(a.keys))
    tag = sign(Path(a.contract).read_bytes(), keys)
    Path(a.out).write_text(json.dumps({"n": tag.n, "tag": tag.to_hex()}) + "\n")
    return 0


def cmd_verify(a) -> int:
    keys = SignatureKeys.from_json(_read_json(a.keys))
    t = _read_json(a.tag)
    ok = verify(Path(a.contract).read_bytes(), SignatureTag.from_hex(t["tag"], int(t["n"])), keys)
    print("accept" if ok else "reject")
    return 0 if ok else 1


def cmd_cascade(a) -> int:
    cfg = CascadeConfig(block_bits=a.block_bits, segment_bits=a.segment_bits,
                        max_passes=a.max_passes, permutation_seed=a.seed)
    res = reconcile(_read_bits(a.a), _read_bits(a.b), cfg)
    if a.out:
        Path(a.out).write_text(_bits.bits_to_str(res.corrected_peer_key) + "\n")
    out = {"leaked_bits": res.leaked_bits, "leak_ec": res.leak_ec, "passes_used": res.passes_used,
           "corrections": res.corrections, "residual_mismatch": res.residual_mismatch}
    if a.transcript:
        out["transcript"] = [d._asdict() for d in res.transcript]
    _dump(out)
    return 0


def cmd_kgp_simulate(a) -> int:
    cfg = KgpConfig.from_json(_read_json(a.config)) if a.config else KgpConfig()
    summary, sifted = simulate(cfg)
    rates = estimate(summary, sifted)
    _dump({"summary": summary.to_json(), "E_b_x": rates.E_b_x, "E_b_y": rates.E_b_y})
    return 0


def cmd_kgp_replay(a) -> int:
    table = data.detection_table(a.pair) if a.pair else load_table(a.table)
    if "rows" in table:
        raise ValueError("file holds several rows; use --pair with the shipped table")
    summary = replay(table, a.duration if a.duration else float(table.get("duration_s", 100.0)))
    rates = estimate(summary, e_b_x=a.e_b_x)
    _dump({"summary": summary.to_json(), "E_b_x": rates.E_b_x, "E_b_y": rates.E_b_y,
           "x_source": rates.x_source})
    return 0


def cmd_security_plan(a) -> int:
    """Input JSON: {summary: {n_x, n_y, m_y, duration_s, [n, N]}, leak_EC,
    E_p | (flaws, intensity), [budget], [m], [duration_s]}."""
    obj = _read_json(a.input)
    s = obj["summary"]
    summary = argparse.Namespace(n_x=int(s["n_x"]), n_y=int(s["n_y"]), m_y=float(s["m_y"]),
                                 duration_s=float(obj.get("duration_s", s.get("duration_s", 100.0))))
    budget = SecurityBudget(**obj["budget"]) if "budget" in obj else SecurityBudget()
    Delta = None
    if "E_p" not in obj:
        Q = s["n"] / s.get("N", 1e10)
        Delta = coin_imbalance(SourceFlaws.from_json(obj["flaws"]), float(obj["intensity"]), Q,
                               reference=obj.get("coin_reference", "absolute"))
    res = optimize_n(summary, float(obj["leak_EC"]), budget, int(obj.get("m", 428072)),
                     Delta=Delta, E_p=obj.get("E_p"), inject=obj.get("inject", "upper"))
    _dump(res.to_json())
    return 0


def cmd_charize(a) -> int:
    if a.kind == "power":
        out = {"xi": charize.power_fluctuation(charize.read_power_series(a.input))}
    elif a.kind == "phase":
        bounds = charize.phase_shift_table(charize.read_phase_table(a.input), efficiency=a.efficiency)
        out = {"phase_shift": {f"{k:.6f}": v for k, v in bounds.items()}, "delta": max(bounds.values())}
    elif a.kind == "polarization":
        ratio, db = charize.polarization_ratio(*charize.read_polarization(a.input))
        out = {"tan_theta": ratio, "extinction_db": db}
    else:
        res = charize.pattern_deviation(charize.read_pattern_table(a.input))
        out = {"groups": res.groups, "sin_psi": res.sin_psi, "psi": res.psi}
    _dump(out)
    return 0


def cmd_run_e2e(a) -> int:
    """``--scenario`` JSON: {seed, n, adversary, client_agrees, channel_failure,
    contract: {payload, timestamp, merchant_id, client_id, price}}; flags
    fill in what the file leaves out."""
    obj = _read_json(a.scenario) if a.scenario else {}
    kw = {"n": int(obj.get("n", a.n)), "adversary": obj.get("adversary", a.adversary),
          "client_agrees": bool(obj.get("client_agrees", not a.decline)),
          "channel_failure": float(obj.get("channel_failure", a.channel_failure))}
    if "contract" in obj:
        kw["contract"] = Contract.from_json(obj["contract"])
    tr = run_e2e(ideal_scenario(int(obj.get("seed", a.seed)), **kw))
    out = tr.to_json()
    if not a.messages:
        out.pop("messages")
    _dump(out)
    return 0 if tr.outcome == "completed" else 2


def cmd_attack(a) -> int:
    if a.kind == "repudiate":
        runs, same = repudiation_trials(a.trials, n=a.n, seed=a.seed)
        _dump({"kind": "repudiate", "trials": runs, "identical_verdicts": same})
        return 0 if same == runs else 1
    stats = forgery_trials(a.trials, n=a.n, m=a.m, seed=a.seed, difference=a.difference)
    _dump({**stats.to_json(), "kind": a.kind, "difference": a.difference})
    return 0 if stats.within_bound else 1


def cmd_pipeline(a) -> int:
    from .pipeline import ChannelSpec, PipelineConfig, config_from_json, run_pipeline
    from .report import render

    if a.config:
        obj = _read_json(a.config)
        if a.mode:
            obj["mode"] = a.mode
        if a.seed is not None:
            obj["seed"] = a.seed
        cfg = config_from_json(obj, Path(a.config).parent)
    else:
        if a.mode == "simulate":
            raise ValueError("simulate mode needs --config with kgp settings for both channels")
        cfg = PipelineConfig(client=ChannelSpec(pair=a.client), tp=ChannelSpec(pair=a.tp),
                             leak_source=a.leak_source, ep_source=a.ep_source,
                             seed=a.seed or 0, m=a.m)
    rep = run_pipeline(cfg)
    body = rep.to_json()
    paths = render(body, a.out)
    _dump({"outcome": rep.outcome, "SR_per_second": rep.SR_per_second, "n_star": rep.n_star,
           "files": paths})
    return 0 if rep.outcome == "completed" else 2


# --- parser -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qecommerce")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gf2").add_subparsers(dest="gf2_command", required=True)
    gi = g.add_parser("gen-irreducible")
    gi.add_argument("--n", type=int, required=True)
    gi.add_argument("--seed", required=True, help="n-bit seed, hex (default) or a 0/1 string")
    gi.add_argument("--seed-format", choices=("hex", "bits"), default="hex")
    gi.add_argument("--f", help="degree-n irreducible in hex; defaults to the preset")
    gi.set_defaults(func=cmd_gen_irreducible)

    s = sub.add_parser("sign")
    s.add_argument("--contract", required=True)
    s.add_argument("--keys", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sign)

    v = sub.add_parser("verify")
    v.add_argument("--contract", required=True)
    v.add_argument("--tag", required=True)
    v.add_argument("--keys", required=True)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("cascade")
    c.add_argument("--a", required=True, help="file of 0/1 characters")
    c.add_argument("--b", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--block-bits", type=int, default=2**20)
    c.add_argument("--segment-bits", type=int, default=600)
    c.add_argument("--max-passes", type=int, default=3)
    c.add_argument("--out")
    c.add_argument("--transcript", action="store_true")
    c.set_defaults(func=cmd_cascade)

    k = sub.add_parser("kgp").add_subparsers(dest="kgp_command", required=True)
    ks = k.add_parser("simulate")
    ks.add_argument("--config")
    ks.set_defaults(func=cmd_kgp_simulate)
    kr = k.add_parser("replay")
    src = kr.add_mutually_exclusive_group(required=True)
    src.add_argument("--table")
    src.add_argument("--pair", choices=data.PAIRS)
    kr.add_argument("--duration", type=float)
    kr.add_argument("--e-b-x", type=float)
    kr.set_defaults(func=cmd_kgp_replay)

    sec = sub.add_parser("security").add_subparsers(dest="security_command", required=True)
    sp = sec.add_parser("plan")
    sp.add_argument("--input", required=True)
    sp.set_defaults(func=cmd_security_plan)

    ch = sub.add_parser("charize")
    ch.add_argument("--kind", choices=("power", "phase", "polarization", "pattern"), required=True)
    ch.add_argument("--input", required=True)
    ch.add_argument("--efficiency", choices=("nameplate", "self"), default="self")
    ch.set_defaults(func=cmd_charize)

    e = sub.add_parser("run-e2e")
    e.add_argument("--scenario", help="scenario JSON")
    e.add_argument("--n", type=int, default=64)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--adversary", choices=ADVERSARIES, default="none")
    e.add_argument("--decline", action="store_true", help="Client refuses the contract")
    e.add_argument("--channel-failure", type=float, default=0.0)
    e.add_argument("--messages", action="store_true", help="include raw frames")
    e.set_defaults(func=cmd_run_e2e)

    at = sub.add_parser("attack")
    at.add_argument("--kind", choices=("forge-client", "forge-tp", "repudiate"), required=True)
    at.add_argument("--trials", type=int, default=100_000)
    at.add_argument("--n", type=int, default=16)
    at.add_argument("--m", type=int, default=64)
    at.add_argument("--difference", choices=("worst", "single"), default="worst")
    at.add_argument("--seed", type=int, default=0)
    at.set_defaults(func=cmd_attack)

    pl = sub.add_parser("pipeline")
    pl.add_argument("--out", default="report")
    pl.add_argument("--config", help="pipeline JSON")
    pl.add_argument("--mode", choices=("replay", "simulate"))
    pl.add_argument("--client", choices=data.PAIRS, default="C1")
    pl.add_argument("--tp", choices=data.PAIRS, default="TP1")
    pl.add_argument("--leak-source", choices=("published", "cascade"), default="published")
    pl.add_argument("--ep-source", choices=("published", "flaws"), default="published")
    pl.add_argument("--m", type=int, default=428072)
    pl.add_argument("--seed", type=int)
    pl.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = "INFO" if args.verbose else os.environ.get("QECOMMERCE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
