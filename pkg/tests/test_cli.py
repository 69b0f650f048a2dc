import json
from types import SimpleNamespace

import numpy as np
import pytest

from cknn import CKNN, build_protocol, load_bundle, read_dataset, run_protocol
from cknn.cli import SETTINGS, UsageError, main, parse_sweep, resolve_settings


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rc = main(["synth", str(d / "tr.bin"), str(d / "te.jsonl"), "--truth-out", str(d / "t.json"),
               "--n-train-videos", "4", "--n-test-videos", "3", "--frames-per-video", "80", "--seed", "2"])
    assert rc == 0
    return d


def args_with(**flags):
    base = {name: None for name in SETTINGS}
    base["config"] = None
    base.update(flags)
    return SimpleNamespace(**base)


def test_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\ntau = 15\nk = 3\nn-components = 5\n")
    settings, sources = resolve_settings(args_with(config=str(cfg), k=2), environ={"CKNN_TAU": "12"})
    assert (settings["k"], settings["tau"], settings["n_components"], settings["p"]) == (2, 12.0, 5, 1.0)
    assert sources == {**{n: "default" for n in SETTINGS}, "k": "flag", "tau": "env", "n_components": "file"}


def test_bad_settings(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("alpha = 1\n")
    with pytest.raises(UsageError):
        resolve_settings(args_with(config=str(cfg)), environ={})
    with pytest.raises(UsageError):
        resolve_settings(args_with(), environ={"CKNN_TAU": "lots"})
    with pytest.raises(UsageError):
        resolve_settings(args_with(), environ={"CKNN_MODE": "both"})
    with pytest.raises(UsageError):
        resolve_settings(args_with(), environ={"CKNN_CORESET": "maybe"})
    assert resolve_settings(args_with(), environ={"CKNN_CORESET": "yes"})[0]["coreset"] is True


def test_parse_sweep():
    assert parse_sweep(["tau=0,5", "k=1"]) == {"tau": [0.0, 5.0], "k": [1]}
    for bad in (["tau"], ["seed=1"], ["k=x"], ["p="]):
        with pytest.raises(UsageError):
            parse_sweep(bad)


def test_fit_is_byte_identical_and_reports_counts(data, tmp_path, capsys):
    assert main(["fit", str(data / "tr.bin"), "--out", str(tmp_path / "a"), "--seed", "4"]) == 0
    out = capsys.readouterr().out
    assert main(["fit", str(data / "tr.bin"), "--out", str(tmp_path / "b"), "--seed", "4"]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    n = read_dataset(data / "tr.bin").n_objects
    kept = n - n * 25 // 100
    bundle = load_bundle(tmp_path / "a")
    assert f"training objects: {n}" in out
    assert f"app: removed {n * 25 // 100}, bank size {max(1, kept // 100)}" in out
    assert bundle.app_bank.size == max(1, kept // 100)


def test_fit_env_and_config(data, tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("tau = 5\np = 50\n")
    monkeypatch.setenv("CKNN_TAU", "10")
    assert main(["fit", str(data / "tr.bin"), "--out", str(tmp_path / "b"), "--config", str(cfg)]) == 0
    hp = load_bundle(tmp_path / "b").hyperparams
    assert (hp.tau, hp.p) == (10.0, 50.0)


def test_score_uses_bundle_sigma_unless_given(data, tmp_path):
    main(["fit", str(data / "tr.bin"), "--out", str(tmp_path / "b"), "--sigma", "2"])
    assert main(["score", str(tmp_path / "b"), str(data / "te.jsonl"), "--out", str(tmp_path / "s.tsv"),
                 "--detail", str(tmp_path / "d.tsv")]) == 0
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert json.loads(lines[0].split(" ", 2)[2])["effective_sigma"] == 2.0
    assert lines[1].startswith("# sources") and lines[2] == "video_id\tframe_idx\traw\tsmoothed"
    test = read_dataset(data / "te.jsonl")
    assert len(lines) - 3 == sum(v.frame_count for v in test.videos)
    series = CKNN.from_bundle(load_bundle(tmp_path / "b")).score_videos(test)
    vid, t, raw, smoothed = lines[3].split("\t")
    assert float(raw) == series[vid].raw[int(t)] and float(smoothed) == series[vid].smoothed[int(t)]
    detail = (tmp_path / "d.tsv").read_text().splitlines()
    assert len(detail) - 3 == test.n_objects
    main(["score", str(tmp_path / "b"), str(data / "te.jsonl"), "--out", str(tmp_path / "s1.tsv"), "--sigma", "1"])
    header = (tmp_path / "s1.tsv").read_text().splitlines()
    assert json.loads(header[0].split(" ", 2)[2])["effective_sigma"] == 1.0
    assert json.loads(header[1].split(" ", 2)[2]) == {"sigma": "flag"}


def test_eval_merge_matches_library(data, tmp_path, capsys):
    assert main(["eval", str(data / "tr.bin"), str(data / "te.jsonl"), "--p", "100", "--out",
                 str(tmp_path / "e.jsonl")]) == 0
    records = [json.loads(line) for line in (tmp_path / "e.jsonl").read_text().splitlines()]
    assert records[0]["type"] == "config" and records[0]["mode"] == "merge"
    summary = records[-1]
    plan = build_protocol(read_dataset(data / "tr.bin"), read_dataset(data / "te.jsonl"), "merge")
    ref = run_protocol(plan, lambda: CKNN(p=100))
    assert summary["mean_auroc"] == ref.mean and summary["fits"] == 1
    assert "mode: merge, fits executed: 1" in capsys.readouterr().out


def test_eval_merge_plus_audit(data, tmp_path, capsys):
    assert main(["eval", str(data / "tr.bin"), str(data / "te.jsonl"), "--mode", "merge_plus", "--out",
                 str(tmp_path / "e.jsonl")]) == 0
    assert "fits executed: 3" in capsys.readouterr().out
    audits = [r for r in map(json.loads, (tmp_path / "e.jsonl").read_text().splitlines()) if r["type"] == "audit"]
    assert len(audits) == 3 and all(a["leaked_rows"] == {"app": 0, "mot": 0} for a in audits)


def test_eval_sweep(data, tmp_path):
    assert main(["eval", str(data / "tr.bin"), str(data / "te.jsonl"), "--sweep", "tau=0,25", "--sweep", "p=100",
                 "--out", str(tmp_path / "e.jsonl")]) == 0
    cells = [r for r in map(json.loads, (tmp_path / "e.jsonl").read_text().splitlines()) if r["type"] == "cell"]
    assert [(c["tau"], c["p"]) for c in cells] == [(0.0, 100.0), (25.0, 100.0)]
    assert cells[1]["mean_auroc"] > cells[0]["mean_auroc"]


def test_exit_codes(data, tmp_path):
    assert main(["fit", str(data / "tr.bin"), "--out", str(tmp_path / "b"), "--tau", "100"]) == 4
    assert main(["eval", str(data / "tr.bin"), str(data / "tr.bin")]) == 3
    assert main(["fit", str(tmp_path / "missing.bin"), "--out", str(tmp_path / "c")]) == 3
    assert main(["score", str(tmp_path / "nothing"), str(data / "te.jsonl"), "--out", str(tmp_path / "s")]) == 3
    assert main(["eval", str(data / "tr.bin"), str(data / "te.jsonl"), "--sweep", "seed=1"]) == 2
    assert main(["fit"]) == 2
    assert main(["fit", str(data / "tr.bin"), "--out", str(tmp_path / "d"), "--scorer-app", "ae"]) == 2


def test_bench_and_suggest_tau(data, tmp_path, capsys):
    assert main(["bench", "--bank-size", "500", "--dim", "4", "--bench-duration", "0.05", "--out",
                 str(tmp_path / "b.txt")]) == 0
    lines = (tmp_path / "b.txt").read_text().splitlines()
    assert lines[0].startswith("# config") and len(lines) == 4
    reports = [dict(kv.split("=") for kv in line.split()) for line in lines[2:]]
    assert [int(r["bank_size"]) for r in reports] == [500, 5]
    assert "FPS" in capsys.readouterr().out
    assert main(["suggest-tau", str(data / "tr.bin"), "--scorer-app", "knn", "--out", str(tmp_path / "s.json")]) == 0
    payload = json.loads((tmp_path / "s.json").read_text().splitlines()[-1])
    assert 0 <= payload["tau_star"] <= 100 and len(payload["counts"]) == 100
    assert np.isclose(sum(payload["counts"]), read_dataset(data / "tr.bin").n_objects)
