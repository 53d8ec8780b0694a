"""Report rendering: JSON, CSV and matplotlib figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import data
from .kgp import replay
from .security import SecurityBudget, max_message_bits, optimize_n, security_tradeoff

CSV_FIELDS = ("pair", "channel_loss_db", "fiber_spools", "n_x", "n_y", "m_y", "E_p", "leak_EC",
              "n_star", "H_n", "eps_for", "SR_per_second", "SR_published", "SR_rel_dev")


def replay_rows(budget: SecurityBudget | None = None, m: int | None = None) -> list[dict]:
    """Signature rate of every shipped row, replayed with its published
    ``E_p`` and ``leak_EC``."""
    budget = budget or SecurityBudget()
    t2 = data.load("summary.json")
    m = m or t2["m"]
    out = []
    for pair in data.PAIRS:
        table = data.detection_table(pair)
        pub = t2["rows"][pair]
        s = replay(table, table["duration_s"])
        r = optimize_n(s, pub["leak_EC"], budget, m, E_p=pub["E_p"])
        out.append({
            "pair": pair, "channel_loss_db": table["channel_loss_db"],
            "fiber_spools": table["fiber_spools"], "n_x": s.n_x, "n_y": s.n_y, "m_y": s.m_y,
            "E_p": pub["E_p"], "leak_EC": pub["leak_EC"], "n_star": r.n_star, "H_n": r.H_n,
            "eps_for": r.eps_for, "SR_per_second": r.SR_per_second, "SR_published": pub["SR"],
            "SR_rel_dev": r.SR_per_second / pub["SR"] - 1.0,
        })
    return out


def write_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in CSV_FIELDS})
    return path


def write_json(obj: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, bytes):
        return x.hex()
    raise TypeError(f"not serialisable: {type(x).__name__}")


def plot_rate_vs_loss(rows: list[dict], path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.6))
    plain = [r for r in rows if not r["fiber_spools"]]
    spool = [r for r in rows if r["fiber_spools"]]
    ax.semilogy([r["channel_loss_db"] for r in plain], [r["SR_per_second"] for r in plain], "o-",
                label="replayed")
    ax.semilogy([r["channel_loss_db"] for r in plain], [r["SR_published"] for r in plain], "x--",
                color="grey", label="published")
    if spool:
        ax.semilogy([r["channel_loss_db"] for r in spool], [r["SR_per_second"] for r in spool], "s",
                    label="replayed, fiber spools")
    ax.set_xlabel("channel loss (dB)")
    ax.set_ylabel("signatures per second")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_security_vs_size(H_n: float, path, target: float = 5e-10) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sizes = np.unique(np.logspace(3, 13, 60).astype(np.int64))
    eps = security_tradeoff(H_n, sizes)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.loglog(sizes, eps, "-")
    ax.axhline(target, color="grey", ls="--", lw=0.8)
    ax.axvline(max(1, max_message_bits(H_n, target)), color="grey", ls=":", lw=0.8)
    ax.set_xlabel("file size (bits)")
    ax.set_ylabel("forgery probability")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render(report: dict, out_dir, rows: list[dict] | None = None) -> dict:
    """Write ``report.json``, ``rates.csv`` and two figures to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = rows if rows is not None else replay_rows()
    H_n = min(c["security"]["H_n"] for c in report["channels"].values()) if "channels" in report \
        else rows[0]["H_n"]
    return {
        "json": str(write_json(report, out / "report.json")),
        "csv": str(write_csv(rows, out / "rates.csv")),
        "rate_vs_loss": str(plot_rate_vs_loss(rows, out / "rate_vs_loss.png")),
        "security_vs_size": str(plot_security_vs_size(H_n, out / "security_vs_size.png")),
    }
