import json
import subprocess
import sys

import numpy as np
import pytest

from qecommerce import data
from qecommerce.cli import main
from qecommerce.otuh import SignatureKeys


def run(capsys, *args):
    code = main([str(a) for a in args])
    out = capsys.readouterr().out
    return code, out


def js(out):
    return json.loads(out)


def test_gen_irreducible(capsys):
    code, out = run(capsys, "gf2", "gen-irreducible", "--n", 8, "--seed", "01111100", "--seed-format", "bits")
    assert code == 0
    assert js(out)["poly_bits"] == "101111011"
    code, out = run(capsys, "gf2", "gen-irreducible", "--n", 8, "--seed", "7c")
    assert js(out)["poly_hex"] == js(run(capsys, "gf2", "gen-irreducible", "--n", 8, "--seed", "7c")[1])["poly_hex"]


def test_bad_seed_exits_one(capsys):
    assert main(["gf2", "gen-irreducible", "--n", "8", "--seed", "00"]) == 1


def test_sign_verify_exit_codes(tmp_path, capsys):
    block = np.random.default_rng(0).integers(0, 2, 96, dtype=np.uint8)
    block[0] = block[32] = 1
    (tmp_path / "k.json").write_text(json.dumps(SignatureKeys.from_block(block).to_json()))
    (tmp_path / "c.txt").write_bytes(b"one crate of apples")
    assert run(capsys, "sign", "--contract", tmp_path / "c.txt", "--keys", tmp_path / "k.json",
               "--out", tmp_path / "t.json")[0] == 0
    code, out = run(capsys, "verify", "--contract", tmp_path / "c.txt", "--tag", tmp_path / "t.json",
                    "--keys", tmp_path / "k.json")
    assert (code, out.strip()) == (0, "accept")
    (tmp_path / "c.txt").write_bytes(b"two crates of apples")
    code, out = run(capsys, "verify", "--contract", tmp_path / "c.txt", "--tag", tmp_path / "t.json",
                    "--keys", tmp_path / "k.json")
    assert (code, out.strip()) == (1, "reject")


def test_cascade_command(tmp_path, capsys):
    rng = np.random.default_rng(2)
    a = rng.integers(0, 2, 6000, dtype=np.uint8)
    b = a.copy()
    b[rng.choice(6000, 12, replace=False)] ^= 1
    (tmp_path / "a.txt").write_text("".join(map(str, a)))
    (tmp_path / "b.txt").write_text("".join(map(str, b)))
    code, out = run(capsys, "cascade", "--a", tmp_path / "a.txt", "--b", tmp_path / "b.txt",
                    "--out", tmp_path / "fixed.txt", "--transcript")
    res = js(out)
    assert code == 0 and res["residual_mismatch"] is False
    assert res["leak_ec"] == res["leaked_bits"] + 64
    assert (tmp_path / "fixed.txt").read_text().strip() == "".join(map(str, a))
    assert len(res["transcript"]) == res["leaked_bits"]


def test_kgp_replay_and_simulate(tmp_path, capsys):
    code, out = run(capsys, "kgp", "replay", "--pair", "TP2")
    assert code == 0 and js(out)["E_b_y"] == pytest.approx(0.001, abs=5e-5)
    (tmp_path / "k.json").write_text(json.dumps({"N": 10**7, "seed": 4}))
    code, out = run(capsys, "kgp", "simulate", "--config", tmp_path / "k.json")
    assert code == 0 and js(out)["summary"]["n"] >= 0


def test_security_plan(tmp_path, capsys):
    t = data.detection_table("C1")
    from qecommerce.kgp import replay

    s = replay(t, 100.0)
    plan = {"summary": {"n_x": s.n_x, "n_y": s.n_y, "m_y": s.m_y, "duration_s": 100.0},
            "leak_EC": 59209, "E_p": 0.28}
    (tmp_path / "p.json").write_text(json.dumps(plan))
    code, out = run(capsys, "security", "plan", "--input", tmp_path / "p.json")
    assert code == 0 and js(out)["SR_per_second"] == pytest.approx(11.83, rel=0.10)


def test_charize_pattern_and_phase(tmp_path, capsys):
    rows = data.pattern_rows("TP1")
    (tmp_path / "pa.csv").write_text("previous,current,count\n" + "".join(
        f"{p},{c},{n}\n" for (p, c), n in rows.items()))
    code, out = run(capsys, "charize", "--kind", "pattern", "--input", tmp_path / "pa.csv")
    assert code == 0 and round(js(out)["sin_psi"], 5) == 5.58e-3
    (tmp_path / "ph.csv").write_text("phi,D1,D2\n" + "".join(
        f"{k},{v[0]},{v[1]}\n" for k, v in data.phase_rows("TP1").items()), encoding="utf-8")
    code, out = run(capsys, "charize", "--kind", "phase", "--input", tmp_path / "ph.csv")
    assert code == 0 and js(out)["delta"] == pytest.approx(0.038, abs=0.005)


def test_run_e2e_exit_codes(capsys):
    code, out = run(capsys, "run-e2e", "--seed", 3)
    assert code == 0 and js(out)["outcome"] == "completed"
    code, out = run(capsys, "run-e2e", "--seed", 3, "--decline")
    assert code == 2 and js(out)["outcome"] == "aborted"
    code, out = run(capsys, "run-e2e", "--seed", 3, "--adversary", "forge_client", "--messages")
    res = js(out)
    assert code == 2 and res["forgery_accepted"] is False and len(res["messages"]) == 3


def test_run_e2e_scenario_file(tmp_path, capsys):
    sc = {"seed": 9, "n": 32, "contract": {"payload": "lamp", "timestamp": 5, "merchant_id": "m",
                                          "client_id": "c", "price": 7}}
    (tmp_path / "s.json").write_text(json.dumps(sc))
    code, out = run(capsys, "run-e2e", "--scenario", tmp_path / "s.json")
    assert code == 0 and js(out)["deltas"]["Merchant"] == 7


def test_attack_commands(capsys):
    code, out = run(capsys, "attack", "--kind", "forge-tp", "--trials", 20000, "--n", 10, "--m", 40)
    assert code == 0 and js(out)["within_bound"]
    code, out = run(capsys, "attack", "--kind", "repudiate", "--trials", 5, "--n", 16)
    assert code == 0 and js(out)["identical_verdicts"] == 5


def test_pipeline_command_writes_outputs(tmp_path, capsys):
    code, out = run(capsys, "pipeline", "--out", tmp_path)
    res = js(out)
    assert code == 0 and res["outcome"] == "completed"
    for name in ("report.json", "rates.csv", "rate_vs_loss.png", "security_vs_size.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_pipeline_simulate_without_config_fails(tmp_path, capsys):
    assert main(["pipeline", "--mode", "simulate", "--out", str(tmp_path)]) == 1


def test_console_script_runs():
    proc = subprocess.run([sys.executable, "-m", "qecommerce.cli", "run-e2e", "--seed", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["outcome"] == "completed"
