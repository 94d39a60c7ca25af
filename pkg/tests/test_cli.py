import json

import pytest

from mimnet.cli import DEFAULTS, config_hash, load_config, main

SMALL = {
    "train": {"optimizer": {"steps": 20, "log_interval": 10}, "train": {"m": 8, "N": 64}},
    "verify-derivatives": {"verify_derivatives": {"k": [2], "d": [1, 2], "points": 5}},
    "verify-coercivity": {"verify_coercivity": {"n": [1], "d": [1], "kinds": ["R"], "trials": 5}},
    "verify-approximation": {"verify_approximation": {"m": [16, 32, 64], "k1": [1], "b_phase": [0]}},
    "estimate-rademacher": {"estimate_rademacher": {"d": [2], "N": [64, 256, 1024], "gap": {"resamples": 32, "d": 1}}},
    "check-inequalities": {"check_inequalities": {"delta": [0.5], "grid_stop": 1.0}},
    "study-convergence": {"study_convergence": {"mode": "approximation", "m": [4, 16], "seeds": 2, "u": {"d": 1, "modes": [{"k": [1], "coeff": 1.0}]}}},
}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def csvs(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


@pytest.mark.parametrize("command", sorted(SMALL))
def test_commands_run_and_reproduce(tmp_path, command):
    cfg = write(tmp_path, SMALL[command])
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([command, "--config", cfg, "--out", str(a)]) == 0
    assert main([command, "--config", cfg, "--out", str(b)]) == 0
    first = csvs(a)
    assert first and first == csvs(b)
    report = json.loads((a / "report.json").read_text())
    assert report["command"] == command
    for text in first.values():
        assert text.startswith(f"# config_hash={report['config_hash']}".encode())


@pytest.mark.parametrize(
    "doc",
    ["{not json", json.dumps([1, 2]), json.dumps({"bogus": 1}), json.dumps({"train": {"m": 8, "typo": 1}})],
)
def test_malformed_config(tmp_path, capsys, doc):
    p = tmp_path / "bad.json"
    p.write_text(doc)
    out = tmp_path / "out"
    assert main(["train", "--config", str(p), "--out", str(out)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config"
    assert not out.exists() or not list(out.glob("*.csv"))


def test_invalid_values(tmp_path, capsys):
    bad = [
        {"problem": {"n": 0}},
        {"optimizer": {"method": "lbfgs"}},
        {"study_convergence": {"m": [32, 8]}},
        {"verify_coercivity": {"kinds": []}},
    ]
    for i, doc in enumerate(bad):
        out = tmp_path / f"o{i}"
        cmd = "verify-coercivity" if "verify_coercivity" in doc else "study-convergence" if "study_convergence" in doc else "train"
        assert main([cmd, "--config", write(tmp_path, doc, f"b{i}.json"), "--out", str(out)]) == 2
        assert not out.exists() or not list(out.glob("*.csv"))
    assert main(["train", "--jobs", "0", "--out", str(tmp_path / "j")]) == 2
    capsys.readouterr()


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2


def test_failed_check_exit_code(tmp_path, capsys):
    # a negative tolerance cannot be met
    doc = {"verify_derivatives": {"k": [2], "d": [1], "points": 3, "tol": -1.0}}
    out = tmp_path / "o"
    assert main(["verify-derivatives", "--config", write(tmp_path, doc), "--out", str(out)]) == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "check_failed"
    assert (out / "derivatives.csv").exists()


def test_seed_override_and_hash():
    a = load_config(None, seed=5)
    assert a["seed"] == 5
    assert config_hash(a) != config_hash(load_config(None))
    assert config_hash(load_config(None)) == config_hash(json.loads(json.dumps(DEFAULTS)))


def test_jobs_do_not_change_output(tmp_path):
    cfg = write(tmp_path, SMALL["study-convergence"])
    main(["study-convergence", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["study-convergence", "--config", cfg, "--out", str(tmp_path / "b"), "--jobs", "2"])
    assert csvs(tmp_path / "a") == csvs(tmp_path / "b")
