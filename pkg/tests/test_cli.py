import csv
import json
from pathlib import Path

import numpy as np
import pytest

from avtrack.blockchecks import REGISTRY
from avtrack.checkpoint import load_checkpoint
from avtrack.cli import main
from avtrack.model import ModelConfig, TrackerNet
from avtrack.encoder import EncoderConfig
from avtrack.synthworld import WorldConfig, generate_sequence, save_sequence

TINY = {
    "model": {"frame_side": 24, "patch": 8, "channels": 16, "layers": 1,
              "train_frames": 2, "heads": 2, "ffn_ratio": 1,
              "decoder_depth": 1},
    "train": {"steps": 4, "lr": 1e-3, "sequence_pool": 2},
    "world": {"length": 8, "object_count": 2, "target_size": 8},
    "eval": {"episodes": 1, "seed_offset": 500},
    "gradcheck": {"seeds": 2, "eps": 1e-5, "tol": 1e-4},
}


def write_cfg(tmp_path, extra=None):
    cfg = json.loads(json.dumps(TINY))
    for section, vals in (extra or {}).items():
        cfg.setdefault(section, {})
        if isinstance(vals, dict):
            cfg[section].update(vals)
        else:
            cfg[section] = vals
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def seq_dir(tmp_path, length=8, seed=4):
    cfg = WorldConfig(frame_side=24, length=length, object_count=2, target_size=8)
    seq = generate_sequence(cfg, seed=seed)
    d = tmp_path / f"seq{seed}"
    save_sequence(seq, d, config=cfg)
    return d


def test_train_writes_artifacts(tmp_path):
    cfg = write_cfg(tmp_path)
    rc = main(["--mode", "train", "--config", str(cfg), "--seed", "3",
               "--out", str(tmp_path / "run")])
    assert rc == 0
    out = tmp_path / "run"
    assert (out / "checkpoint.avmp").exists()
    assert (out / "loss_log.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["mode"] == "train"
    assert set(manifest["artifacts"]) == {"checkpoint.avmp", "loss_log.csv"}


def test_train_zero_steps_equals_initialization(tmp_path):
    cfg = write_cfg(tmp_path, {"train": {"steps": 0}})
    rc = main(["--mode", "train", "--config", str(cfg), "--seed", "7",
               "--out", str(tmp_path / "run")])
    assert rc == 0
    saved = load_checkpoint(tmp_path / "run" / "checkpoint.avmp")
    fresh = TrackerNet(ModelConfig(
        encoder=EncoderConfig(frame_side=24, patch=8, channels=16, layers=1,
                              train_frames=2, heads=2, ffn_ratio=1),
        decoder_depth=1), seed=7)
    for name, arr in fresh.state_items():
        assert np.array_equal(saved[name], arr)


def test_train_same_seed_identical_logs(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["--mode", "train", "--config", str(cfg), "--seed", "5",
          "--out", str(tmp_path / "a")])
    main(["--mode", "train", "--config", str(cfg), "--seed", "5",
          "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "loss_log.csv").read_bytes() == \
        (tmp_path / "b" / "loss_log.csv").read_bytes()


def test_train_rejects_ablation_switches(tmp_path):
    cfg = write_cfg(tmp_path)
    rc = main(["--mode", "train", "--config", str(cfg), "--seed", "1",
               "--out", str(tmp_path / "run"), "--disable-jse"])
    assert rc == 2


def test_track_oracle_stub_perfect(tmp_path):
    cfg = write_cfg(tmp_path)
    seq = seq_dir(tmp_path)
    rc = main(["--mode", "track", "--config", str(cfg), "--seed", "1",
               "--out", str(tmp_path / "run"), "--sequence", str(seq),
               "--oracle-stub"])
    assert rc == 0
    metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert metrics["success_auc"] == 1.0
    assert metrics["failures"] == 0.0
    lines = (tmp_path / "run" / "diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == 8
    rec = json.loads(lines[1])
    assert set(rec) == {"frame", "score", "backtrack_fired", "corrected",
                        "template2_updated", "template1_updated"}


def test_track_missing_sequence_exit_2(tmp_path):
    cfg = write_cfg(tmp_path)
    rc = main(["--mode", "track", "--config", str(cfg), "--seed", "1",
               "--out", str(tmp_path / "run"),
               "--sequence", str(tmp_path / "missing"), "--oracle-stub"])
    assert rc == 2


def test_track_corrupt_checkpoint_exit_2(tmp_path):
    cfg = write_cfg(tmp_path)
    seq = seq_dir(tmp_path)
    bad = tmp_path / "bad.avmp"
    bad.write_bytes(b"HAHA" + b"\x00" * 32)
    rc = main(["--mode", "track", "--config", str(cfg), "--seed", "1",
               "--out", str(tmp_path / "run"), "--sequence", str(seq),
               "--checkpoint", str(bad)])
    assert rc == 2


def test_track_with_trained_checkpoint(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["--mode", "train", "--config", str(cfg), "--seed", "2",
          "--out", str(tmp_path / "train")])
    seq = seq_dir(tmp_path)
    rc = main(["--mode", "track", "--config", str(cfg), "--seed", "2",
               "--out", str(tmp_path / "track"), "--sequence", str(seq),
               "--checkpoint", str(tmp_path / "train" / "checkpoint.avmp")])
    assert rc == 0
    metrics = json.loads((tmp_path / "track" / "metrics.json").read_text())
    assert 0.0 <= metrics["success_auc"] <= 1.0
    assert (tmp_path / "track" / "boxes.csv").exists()


def test_cycletrack_switch_diff_oracle(tmp_path):
    """Runs with and without backtracking agree up to the first corrected
    frame; with no corrections they agree everywhere."""
    cfg = write_cfg(tmp_path)
    main(["--mode", "train", "--config", str(cfg), "--seed", "2",
          "--out", str(tmp_path / "train")])
    seq = seq_dir(tmp_path, length=10)
    ck = str(tmp_path / "train" / "checkpoint.avmp")
    main(["--mode", "track", "--config", str(cfg), "--seed", "2",
          "--out", str(tmp_path / "on"), "--sequence", str(seq),
          "--checkpoint", ck])
    main(["--mode", "track", "--config", str(cfg), "--seed", "2",
          "--out", str(tmp_path / "off"), "--sequence", str(seq),
          "--checkpoint", ck, "--disable-cycletrack"])
    on = [json.loads(l) for l in
          (tmp_path / "on" / "diagnostics.jsonl").read_text().splitlines()]
    off = [json.loads(l) for l in
           (tmp_path / "off" / "diagnostics.jsonl").read_text().splitlines()]
    corrected = [r["frame"] for r in on if r["corrected"]]
    first = corrected[0] if corrected else len(on)
    for a, b in zip(on[:first], off[:first]):
        a2, b2 = dict(a), dict(b)
        a2.pop("backtrack_fired"), b2.pop("backtrack_fired")
        assert a2 == b2
    assert not any(r["backtrack_fired"] for r in off)


def test_gradcheck_cli(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    rc = main(["--mode", "gradcheck", "--config", str(cfg), "--seed", "0",
               "--out", str(tmp_path / "gc")])
    assert rc == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert len(lines) == len(REGISTRY)  # every block exactly once
    report = json.loads((tmp_path / "gc" / "gradcheck.json").read_text())
    assert set(report) == set(REGISTRY)
    assert all(v["passed"] for v in report.values())


def test_gradcheck_inject_bug_exit_1(tmp_path):
    cfg = write_cfg(tmp_path)
    rc = main(["--mode", "gradcheck", "--config", str(cfg), "--seed", "0",
               "--out", str(tmp_path / "gc"), "--inject-bug"])
    assert rc == 1


def test_ablate_single_variant(tmp_path):
    cfg = write_cfg(tmp_path, {"ablate": {"variants": [{"name": "solo"}]}})
    rc = main(["--mode", "ablate", "--config", str(cfg), "--seed", "1",
               "--out", str(tmp_path / "ab")])
    assert rc == 0
    rows = list(csv.reader((tmp_path / "ab" / "ablation.csv").open()))
    assert rows[0] == ["variant", "success_auc", "failures", "steps_per_s"]
    assert len(rows) == 2 and rows[1][0] == "solo"


def test_ablate_variant_order_deterministic(tmp_path):
    cfg = write_cfg(tmp_path)
    rc = main(["--mode", "ablate", "--config", str(cfg), "--seed", "1",
               "--out", str(tmp_path / "ab")])
    assert rc == 0
    rows = list(csv.reader((tmp_path / "ab" / "ablation.csv").open()))
    assert [r[0] for r in rows[1:]] == ["base", "+jse", "+adaptor", "+both"]


def test_manifest_replay_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["--mode", "train", "--config", str(cfg), "--seed", "11",
          "--out", str(tmp_path / "one")])
    rc = main(["--from-manifest", str(tmp_path / "one" / "manifest.json"),
               "--out", str(tmp_path / "two")])
    assert rc == 0
    for name in ("checkpoint.avmp", "loss_log.csv", "manifest.json"):
        assert (tmp_path / "one" / name).read_bytes() == \
            (tmp_path / "two" / name).read_bytes(), name


def test_unknown_config_key_exit_2(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"train": {"step": 5}}))
    rc = main(["--mode", "train", "--config", str(path), "--seed", "0",
               "--out", str(tmp_path / "run")])
    assert rc == 2


def test_missing_mode_exit_2(tmp_path):
    assert main(["--out", str(tmp_path / "x")]) == 2
