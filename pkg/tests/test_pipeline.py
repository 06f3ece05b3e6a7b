import shutil
from pathlib import Path

import numpy as np
import pytest

from curionav import checkpoint, pipeline
from curionav.cli import main
from curionav.config import RunConfig, parse_config
from curionav.episodelog import read_log
from curionav.errors import CheckpointVersionError, ContractError, DependencyError
from curionav.speaker import SpeakerKind, SpeakerPolicy
from helpers import build, tree

DATA = Path(__file__).parent / "data"

@pytest.fixture(scope="module")
def built(tmp_path_factory):
    return build(tmp_path_factory.mktemp("a"))


def test_stages_write_artifacts(built):
    names = set(tree(built))
    for f in ("explorer.ckpt", "captioner.ckpt", "vocab.tsv", "metrics.txt", "metrics.jsonl",
              "logs/object_0_ep0000.log", "logs/object_0_ep0001.log", "maps/object_0_ep0000.pgm"):
        assert f in names


def test_zero_object_threshold_forces_speech(built):
    for p in sorted((built / "logs").glob("*.log")):
        log = read_log(p)
        assert len(log.steps) == 60
        # "at least 0 objects" holds on every step
        every = [s.t for s in log.steps]
        assert [s.t for s in log.speaks] == every
        assert [c.t for c in log.captions] == every
        assert all(c.tokens[-1] == 2 or len(c.tokens) == 19 for c in log.captions)


def test_single_worker_runs_are_byte_identical(built, tmp_path):
    assert tree(build(tmp_path)) == tree(built)


def test_two_workers_match_one(built, tmp_path):
    again = build(tmp_path, workers=2)
    a, b = tree(again), tree(built)
    assert {k: v for k, v in a.items() if k.startswith(("logs", "maps"))} == \
           {k: v for k, v in b.items() if k.startswith(("logs", "maps"))}


def test_eval_is_idempotent(built, tmp_path):
    before = (built / "metrics.txt").read_bytes()
    assert main(["eval", "--config", str(built.parent / "tiny.toml"), "--out", str(built)]) == 0
    assert (built / "metrics.txt").read_bytes() == before
    assert "loquacity" in before.decode() or "loq" in before.decode()


def test_explorer_reload_reproduces_episode(built):
    cfg = parse_config(built.parent / "tiny.toml")
    agent, net = pipeline.load_explorer(built / pipeline.EXPLORER_FILE, cfg)
    model, vocab = pipeline.load_captioner(built, cfg)
    log = pipeline.logged_episode(cfg, 0, agent, net, model, vocab, cfg.speaker.policy())
    assert read_log(built / "logs/object_0_ep0000.log") == log
    # frozen perception weights are stored with the frozen flag
    _, frozen = checkpoint.load(built / pipeline.EXPLORER_FILE)
    assert frozen == set(net.state())


def test_missing_and_bad_artifacts(built, tmp_path):
    cfg = parse_config(built.parent / "tiny.toml")
    out = tmp_path / "copy"
    shutil.copytree(built, out)
    (out / pipeline.VOCAB_FILE).unlink()
    with pytest.raises(DependencyError):
        pipeline.run_episodes(cfg, out)
    assert main(["run", "--config", str(built.parent / "tiny.toml"), "--out", str(out)]) == 2
    blob = bytearray((built / pipeline.EXPLORER_FILE).read_bytes())
    blob[4:6] = (2).to_bytes(2, "little")
    (out / pipeline.EXPLORER_FILE).write_bytes(bytes(blob))
    with pytest.raises(CheckpointVersionError):
        pipeline.load_explorer(out / pipeline.EXPLORER_FILE, cfg)
    (out / pipeline.EXPLORER_FILE).unlink()
    with pytest.raises(DependencyError):
        pipeline.load_explorer(out / pipeline.EXPLORER_FILE, cfg)


def test_eval_on_empty_directory(tmp_path, capsys):
    with pytest.raises(ContractError):
        pipeline.load_logs(tmp_path)
    (tmp_path / pipeline.LOG_DIR).mkdir()
    assert main(["render-map", "--out", str(tmp_path)]) == 2
    assert "ContractError" in capsys.readouterr().err


def test_bad_config_exits_with_code_2(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[curiosity]\nbeta = 1.5\n")
    assert main(["eval", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_golden_map(tmp_path):
    logs = tmp_path / "logs"
    logs.mkdir()
    shutil.copy(DATA / "golden.log", logs / "golden.log")
    [path] = pipeline.render_maps(RunConfig(), logs, tmp_path / "maps")
    assert Path(path).read_bytes() == (DATA / "golden.pgm").read_bytes()


def test_replay_matches_logged_speech(built):
    logs = [l for _, l in pipeline.load_logs(built / "logs")]
    pol = SpeakerPolicy(SpeakerKind.OBJECT, 0.0, 20, 0.01, 0)
    assert pipeline.replay_loquacity(logs, pol) == np.mean([len(l.speaks) for l in logs])
