"""Published measurement tables shipped as package data.

Row keys: ``TP1``, ``C1``, ``TP2``, ``C2`` for the Merchant pairings with
TP1, Client1, TP2 and Client2.  ``MANIFEST.json`` pins a sha256 per file.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources

PAIRS = ("TP1", "C1", "TP2", "C2")
FILES = ("source_flaws.json", "summary.json", "phase_shift.json", "pattern_effect.json", "detection_counts.json")


class FixtureIntegrityError(RuntimeError):
    pass


def _raw(name: str) -> bytes:
    return resources.files("qecommerce").joinpath("fixtures", name).read_bytes()


def manifest() -> dict:
    return json.loads(_raw("MANIFEST.json"))


def load(name: str, check: bool = True) -> dict:
    raw = _raw(name)
    if check:
        want = manifest().get(name)
        got = hashlib.sha256(raw).hexdigest()
        if want != got:
            raise FixtureIntegrityError(f"{name}: sha256 {got} does not match manifest")
    return json.loads(raw)


def detection_table(pair: str) -> dict:
    """One column pair of the detection-count table, ready for ``kgp.replay``."""
    return load("detection_counts.json")["rows"][pair]


def summary_row(pair: str) -> dict:
    """Published ``mu, E_b_x, E_b_y, E_p, leak_EC, SR`` for one pairing."""
    return load("summary.json")["rows"][pair]


def phase_rows(pair: str) -> dict:
    return load("phase_shift.json")["rows"][pair]


def pattern_rows(pair: str) -> dict:
    """``(previous, current) -> count``."""
    return {(r["previous"], r["current"]): r["count"] for r in load("pattern_effect.json")["rows"][pair]}


def flaw_row(pair: str) -> dict:
    return load("source_flaws.json")["rows"][pair]


def write_manifest(directory) -> dict:
    """Recompute hashes for the files in ``directory`` (maintenance helper)."""
    from pathlib import Path

    d = Path(directory)
    out = {name: hashlib.sha256((d / name).read_bytes()).hexdigest() for name in FILES}
    (d / "MANIFEST.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    return out
