"""Shared helpers: a tiny end-to-end run through every CLI stage."""
from pathlib import Path

from curionav.cli import main

TINY = """\
seed = 3
train_worlds = [0, 1]
test_worlds = [100, 101]
episodes = 2

[perception]
feature_dim = 32

[curiosity]
hidden = 16

[ppo]
updates = 2
rollout = 32
minibatches = 2
hidden = 16
episode_length = 60

[captioner]
d = 16
heads = 2
layers = 1
ff = 32
epochs = 1
dataset_size = 150

[speaker]
kind = "object"
threshold = 0.0
"""


def build(root: Path, workers: int = 1) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "tiny.toml"
    cfg.write_text(TINY)
    out = root / "out"
    for cmd in ("explore-train", "caption-train", "run", "eval", "render-map"):
        argv = [cmd, "--config", str(cfg), "--out", str(out)]
        if cmd == "run":
            argv += ["--workers", str(workers)]
        assert main(argv) == 0, cmd
    return out


def tree(out: Path) -> dict[str, bytes]:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
