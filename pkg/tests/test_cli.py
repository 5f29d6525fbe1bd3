"""Command-line interface, driven in-process through cli_main."""

import json
import shutil
import subprocess
import sys

import pytest

from iotfence import __version__
from iotfence.cli import SEED_ENV, cli_main
from iotfence.enforce import IsolationLevel, load_rules, make_rule, save_rules
from iotfence.fingerprint import load_fingerprints

import oracles
from oracles import eth, ipv4, udp

DEV_A = "02-AA-00-00-00-01"
DEV_B = "02-AA-00-00-00-02"


def _dhcp_frames(mac, base_ts, n=14):
    out = []
    for i in range(n):
        frame = eth(mac, "FF-FF-FF-FF-FF-FF", 0x0800,
                    ipv4(17, udp(68, 67, bytes(200 + i)), dst="255.255.255.255"))
        out.append((base_ts, i * 1000, frame))
    return out


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A corpus and trained model shared by the read-only CLI tests."""
    d = tmp_path_factory.mktemp("cli")
    assert cli_main(["gen-corpus", "--out", str(d / "db.json"),
                     "--types", "12", "--per-type", "6",
                     "--drop-prob", "0.05", "--seed", "7"]) == 0
    assert cli_main(["train", "--fingerprints", str(d / "db.json"),
                     "--out", str(d / "model.json"),
                     "--trees", "25", "--seed", "5"]) == 0
    return d


def test_gen_corpus_output(workdir):
    db = load_fingerprints(workdir / "db.json")
    assert len(db) == 72
    assert len({fp.label for fp in db}) == 12


def test_evaluate_json_report(workdir, capsys):
    assert cli_main(["evaluate", "--fingerprints", str(workdir / "db.json"),
                     "--folds", "3", "--repeats", "1", "--trees", "25",
                     "--seed", "11", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert 0.0 <= doc["global_accuracy"] <= 1.0
    assert "timing" not in doc


def test_evaluate_shuffled_labels_scores_low(workdir, capsys):
    args = ["evaluate", "--fingerprints", str(workdir / "db.json"),
            "--folds", "3", "--repeats", "1", "--trees", "25",
            "--seed", "11", "--json"]
    assert cli_main(args) == 0
    honest = json.loads(capsys.readouterr().out)["global_accuracy"]
    assert cli_main(args + ["--shuffle-labels"]) == 0
    shuffled = json.loads(capsys.readouterr().out)["global_accuracy"]
    assert shuffled < honest

    assert cli_main(args + ["--timing"]) == 0
    assert "timing" in json.loads(capsys.readouterr().out)


def test_gen_corpus_spec_file(workdir, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "n_types": 3, "fingerprints_per_type": 2,
        "noise": {"size_jitter": 1},
        "duplicated_type_pairs": [[0, 1]],
    }))
    out = tmp_path / "db.json"
    assert cli_main(["gen-corpus", "--out", str(out), "--spec", str(spec),
                     "--seed", "2"]) == 0
    db = load_fingerprints(out)
    assert len(db) == 6
    assert len({fp.label for fp in db}) == 3

    spec.write_text(json.dumps({"n_types": 3, "bogus_knob": 1}))
    assert cli_main(["gen-corpus", "--out", str(out), "--spec", str(spec)]) == 2
    spec.write_text("{not json")
    assert cli_main(["gen-corpus", "--out", str(out), "--spec", str(spec)]) == 2


def test_extract_features_and_fingerprints(tmp_path):
    pcap = tmp_path / "setup.pcap"
    frames = sorted(_dhcp_frames(DEV_A, 10, 6) + _dhcp_frames(DEV_B, 11, 4),
                    key=lambda r: (r[0], r[1]))
    frames.append((12, 0, frames[-1][2]))  # retransmit of B's last frame
    oracles.write_pcap(pcap, frames)

    csv_out = tmp_path / "features.csv"
    db_out = tmp_path / "fps.json"
    fixed_out = tmp_path / "fixed.csv"
    assert cli_main(["extract", "--pcap", str(pcap), "--out", str(csv_out),
                     "--fingerprints-out", str(db_out), "--label", "camera",
                     "--fixed-csv", str(fixed_out)]) == 0

    lines = csv_out.read_text().splitlines()
    assert lines[0].startswith("mac,packet_index,")
    assert len(lines) == 1 + 11

    db = load_fingerprints(db_out)
    assert {fp.device_mac for fp in db} == {DEV_A, DEV_B}
    assert all(fp.label == "camera" for fp in db)
    # frame sizes all differ, so nothing collapses but the retransmit
    counts = {fp.device_mac: len(fp.columns) for fp in db}
    assert counts == {DEV_A: 6, DEV_B: 4}

    assert fixed_out.read_text().splitlines()[0].startswith("label,v0,")


def test_extract_session_config(tmp_path):
    pcap = tmp_path / "setup.pcap"
    frames = [(10 + i, 0,
               eth(DEV_A, "FF-FF-FF-FF-FF-FF", 0x0800,
                   ipv4(17, udp(68, 67, bytes(i)), dst="255.255.255.255")))
              for i in range(15)]
    oracles.write_pcap(pcap, frames)

    conf = tmp_path / "session.conf"
    conf.write_text("max_packets = 12  # cut the tail of the burst\n")
    db_out = tmp_path / "fps.json"
    assert cli_main(["extract", "--pcap", str(pcap),
                     "--out", str(tmp_path / "f.csv"),
                     "--fingerprints-out", str(db_out),
                     "--session-config", str(conf)]) == 0
    db = load_fingerprints(db_out)
    assert len(db) == 1 and len(db[0].columns) == 12

    conf.write_text("idle_timeout = fast\n")
    assert cli_main(["extract", "--pcap", str(pcap),
                     "--out", str(tmp_path / "f.csv"),
                     "--session-config", str(conf)]) == 2
    conf.write_text("wrong_knob = 1\n")
    assert cli_main(["extract", "--pcap", str(pcap),
                     "--out", str(tmp_path / "f.csv"),
                     "--session-config", str(conf)]) == 2


def test_identify_command(workdir, tmp_path, capsys):
    pcap = tmp_path / "new-device.pcap"
    oracles.write_pcap(pcap, _dhcp_frames("02-AA-00-00-00-99", 50))

    out = tmp_path / "results.json"
    rules_out = tmp_path / "rules.json"
    assert cli_main(["identify", "--pcap", str(pcap),
                     "--model", str(workdir / "model.json"),
                     "--fingerprints", str(workdir / "db.json"),
                     "--out", str(out), "--rules-out", str(rules_out)]) == 0
    stdout = capsys.readouterr().out
    # dhcp-only traffic matches no synthetic type: strict isolation
    assert "UNKNOWN" in stdout and "isolation=strict" in stdout

    doc = json.loads(out.read_text())
    assert len(doc["results"]) == 1
    assert doc["results"][0]["assignment"]["isolation"] == "strict"

    rules = load_rules(rules_out)
    assert len(rules) == 1
    assert rules[0].level is IsolationLevel.STRICT
    assert rules[0].source_mac == ("02-AA-00-00-00-99",)

    assert cli_main(["identify", "--pcap", str(pcap),
                     "--model", str(workdir / "model.json"),
                     "--fingerprints", str(workdir / "db.json"),
                     "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["results"][0]["device_type"] is None


def test_enforce_simulate(tmp_path, capsys):
    rules_path = tmp_path / "rules.json"
    save_rules([
        make_rule(DEV_A, IsolationLevel.STRICT, rule_id=1),
        make_rule(DEV_B, IsolationLevel.RESTRICTED,
                  permitted_ip=("198.51.100.7",), rule_id=2),
    ], rules_path)
    flows = tmp_path / "flows.csv"
    flows.write_text(
        "src_mac,dst_kind,dst_value,dst_overlay\n"
        f"{DEV_A},device,{DEV_B},untrusted\n"
        f"{DEV_A},internet,198.51.100.7,\n"
        f"{DEV_B},internet,198.51.100.7,\n"
        f"{DEV_B},internet,203.0.113.5,\n")

    assert cli_main(["enforce", "simulate", "--rules", str(rules_path),
                     "--flows", str(flows), "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["permit"] for r in rows] == [True, False, True, False]

    assert cli_main(["enforce", "simulate", "--rules", str(rules_path),
                     "--flows", str(flows)]) == 0
    verdicts = [line.split()[0] for line in
                capsys.readouterr().out.splitlines()]
    assert verdicts == ["permit", "deny", "permit", "deny"]

    flows.write_text("src_mac,dst_kind\nx,y\n")
    assert cli_main(["enforce", "simulate", "--rules", str(rules_path),
                     "--flows", str(flows)]) == 2


@pytest.mark.parametrize("argv", [
    [],
    ["bogus-command"],
    ["evaluate"],
    ["evaluate", "--fingerprints", "x", "--refs-per-type", "9"],
    ["enforce"],
])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as err:
        cli_main(argv)
    assert err.value.code == 1


def test_data_errors_exit_2(tmp_path, workdir):
    assert cli_main(["train", "--fingerprints", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path / "m.json")]) == 2
    assert cli_main(["gen-corpus", "--out", str(tmp_path / "db.json"),
                     "--duplicate-pair", "zero,one"]) == 2
    garbage = tmp_path / "garbage.pcap"
    garbage.write_bytes(b"this is not a capture")
    assert cli_main(["extract", "--pcap", str(garbage),
                     "--out", str(tmp_path / "f.csv")]) == 2
    # 3 types cannot supply the tenfold negative pool
    small = tmp_path / "small.json"
    assert cli_main(["gen-corpus", "--out", str(small), "--types", "3",
                     "--per-type", "6", "--seed", "1"]) == 0
    assert cli_main(["train", "--fingerprints", str(small),
                     "--out", str(tmp_path / "m.json")]) == 2


def test_seed_env_variable(tmp_path, monkeypatch):
    by_env = tmp_path / "env.json"
    by_flag = tmp_path / "flag.json"
    other = tmp_path / "other.json"
    monkeypatch.setenv(SEED_ENV, "3")
    assert cli_main(["gen-corpus", "--out", str(by_env), "--types", "2",
                     "--per-type", "2"]) == 0
    assert cli_main(["gen-corpus", "--out", str(by_flag), "--types", "2",
                     "--per-type", "2", "--seed", "3"]) == 0
    # explicit flag wins over the environment
    assert cli_main(["gen-corpus", "--out", str(other), "--types", "2",
                     "--per-type", "2", "--seed", "4"]) == 0
    assert by_env.read_bytes() == by_flag.read_bytes()
    assert other.read_bytes() != by_env.read_bytes()

    monkeypatch.setenv(SEED_ENV, "not-a-number")
    assert cli_main(["gen-corpus", "--out", str(other), "--types", "2",
                     "--per-type", "2"]) == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as err:
        cli_main(["--version"])
    assert err.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("iotfence")
    assert exe, "console script should be installed with the package"
    done = subprocess.run([exe, "gen-corpus", "--out", str(tmp_path / "db.json"),
                           "--types", "2", "--per-type", "2", "--seed", "1"],
                          capture_output=True, text=True)
    assert done.returncode == 0
    assert "4 fingerprints" in done.stdout
