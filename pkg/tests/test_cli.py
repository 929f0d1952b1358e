import csv
import json
import os
import subprocess
import sys
from importlib.resources import files

import pytest

from aclsim.acltext import parse_acl
from aclsim.cli import acl_check_report, main

SHIPPED = str(files("aclsim") / "scenarios" / "loss-sweep.scenario")

SMALL = """\
[topology]
preset line3

[generators]
m 1 3 load 100 size 512
x 2 3 load 7 size 1000 measured no

[schedule]
start 0.1
duration 0.2
drain 0.1
"""


def _write(tmp_path, text, name="s.scenario"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_dir(d):
    return {n: open(os.path.join(d, n), "rb").read() for n in sorted(os.listdir(d))}


def test_missing_scenario(tmp_path, capsys):
    rc = main(["run", str(tmp_path / "missing.scenario")])
    assert rc != 0
    assert "file not found" in capsys.readouterr().err


def test_parse_error_reported_with_location(tmp_path, capsys):
    p = _write(tmp_path, "[topology]\npreset line3\n[generators]\nm 1 3 load x\n")
    assert main(["run", p, "--out", str(tmp_path / "o")]) != 0
    assert "s.scenario:4:12:" in capsys.readouterr().err


def test_single_trial_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["run", _write(tmp_path, SMALL), "--out", str(out)]) == 0
    got = _read_dir(out)
    assert set(got) == {"flows.csv", "alerts.jsonl", "reroutes.jsonl"}
    rows = list(csv.DictReader(got["flows.csv"].decode().splitlines()))
    assert [r["name"] for r in rows] == ["m", "x"]
    m = rows[0]
    assert int(m["tx_frames"]) == int(m["rx_frames"]) + int(m["frames_lost"]) + int(m["filtered"])
    assert int(m["frames_lost"]) > 0


def test_json_format_and_guard_flag(tmp_path):
    out = tmp_path / "o"
    assert main(["run", _write(tmp_path, SMALL), "--out", str(out), "--format", "json", "--guard", "off"]) == 0
    doc = json.loads((out / "trial.json").read_text())
    assert doc["seed"] == 0 and {f["name"] for f in doc["flows"]} == {"m", "x"}


def test_same_seed_byte_identical(tmp_path):
    p = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", p, "--seed", "7", "--out", str(a)]) == 0
    assert main(["run", p, "--seed", "7", "--out", str(b)]) == 0
    assert _read_dir(a) == _read_dir(b)


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ACLSIM_OUT", str(tmp_path / "env"))
    assert main(["run", _write(tmp_path, SMALL)]) == 0
    assert (tmp_path / "env" / "flows.csv").exists()


def test_bad_duration_scale(tmp_path):
    assert main(["run", _write(tmp_path, SMALL), "--duration-scale", "0", "--out", str(tmp_path)]) != 0


def test_shipped_loss_sweep_has_eight_rows(tmp_path):
    out = tmp_path / "o"
    assert main(["run", SHIPPED, "--out", str(out), "--duration-scale", "0.002"]) == 0
    rows = list(csv.DictReader((out / "frame_loss.csv").read_text().splitlines()))
    assert len(rows) == 8
    assert [(r["frame_size_bytes"], r["load_pct"]) for r in rows[:2]] == [("512", "95"), ("512", "85")]
    assert {r["nodes"] for r in rows} == {"10"} and {r["links"] for r in rows} == {"18"}
    trials = list(csv.DictReader((out / "trials_load95.csv").read_text().splitlines()))
    assert len(trials) == 16


def test_throughput_and_compare_modes(tmp_path):
    base = SMALL.replace("[schedule]", "[sweep]\nmode throughput\nloads 100 90\nsizes 512\ntrials 1\n\n[schedule]")
    out = tmp_path / "t"
    assert main(["run", _write(tmp_path, base), "--out", str(out)]) == 0
    assert (out / "throughput.csv").read_text() == "frame_size_bytes,max_zero_loss_load_pct\n512,90\n"

    cmp = (
        "[topology]\npreset twopath\n[generators]\nm 1 4 load 60 ip.src_addr=10.0.0.1\n"
        "x 5 4 load 60 size 1000 measured no\n[acl]\nrule 4:1 10 guard srcip 10.0.0.1/32 threshold 0.9 action reroute\n"
        "rule 4:1 20 permit\n[schedule]\nstart 0.1\nduration 0.3\ndrain 0.1\n"
        "[sweep]\nmode compare\nloads 60\nsizes 512\ntrials 1\n"
    )
    out = tmp_path / "c"
    assert main(["run", _write(tmp_path, cmp, "c.scenario"), "--out", str(out)]) == 0
    assert {"baseline.csv", "guarded.csv", "delta.csv"} <= set(os.listdir(out))
    reroutes = [json.loads(l) for l in (out / "reroutes.jsonl").read_text().splitlines()]
    assert reroutes and all(r["run"] == "guarded" for r in reroutes)


def test_acl_check_shadow_warning(tmp_path, capsys):
    p = _write(tmp_path, "10 permit\n20 deny proto 6\n", "a.acl")
    assert main(["acl-check", p]) == 0
    out = capsys.readouterr().out
    assert out.count("warning:") == 1
    assert "seq 20 shadowed by seq 10" in out
    assert "2 rules" in out


def test_acl_check_empty_file(tmp_path, capsys):
    assert main(["acl-check", _write(tmp_path, "", "e.acl")]) == 0
    out = capsys.readouterr().out
    assert "0 rules" in out and "empty stack" in out


def test_acl_check_syntax_error(tmp_path, capsys):
    assert main(["acl-check", _write(tmp_path, "10 permit\n20 frob\n", "b.acl")]) != 0
    assert ":2:" in capsys.readouterr().err


def test_acl_check_missing(tmp_path, capsys):
    assert main(["acl-check", str(tmp_path / "none.acl")]) != 0
    assert "file not found" in capsys.readouterr().err


def test_acl_check_round_trip():
    text = (
        "10 deny srcip 10.1.0.0/16 proto 6 dport 22\n"
        "20 permit dscp 40 police cir 1000000 nb 8000 eb 16000\n"
        "30 guard dstip 10.0.0.4/32 threshold 0.9 action prio-drop 5\n"
        "40 permit\n"
    )
    report = acl_check_report(text)
    canonical = "".join(l + "\n" for l in report.splitlines() if l[:1].isdigit() and " rule" not in l)
    assert parse_acl(canonical) == parse_acl(text)


def test_module_entry_point(tmp_path):
    p = _write(tmp_path, "10 permit\n", "a.acl")
    r = subprocess.run([sys.executable, "-m", "aclsim.cli", "acl-check", p], capture_output=True, text=True)
    assert r.returncode == 0 and "1 rule" in r.stdout
