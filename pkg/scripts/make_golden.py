"""Rewrite the golden files under tests/golden from the current implementation.

Only run this after a change that is meant to alter the outputs, and review
the diff of the golden files before committing them.
"""

import shutil
import tempfile
from pathlib import Path

from partial_reid import toy
from partial_reid.cli import main as prid

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"


def gen_crops(work: Path) -> Path:
    out = work / "crops"
    prid(["gen-crops", "--input-manifest", str(ROOT / "data" / "toy" / "frames.jsonl"),
          "--s", "0.25", "--o-min", "0.5", "--seed", "42", "--out", str(out)])
    return out / "manifest.jsonl"


def protocol_chain(work: Path) -> Path:
    """4-identity toy set: aligned camera-0 views against a resampled crop gallery."""
    paths = toy.write_toy_dataset(work / "toy4", seed=0, n_identities=4)
    steps = [
        ["gen-crops", "--input-manifest", str(paths["frames"]), "--s", "0.5", "--o-min", "0.25",
         "--seed", "3", "--out", str(work / "crops")],
        ["embed", "--manifest", str(work / "crops" / "manifest.jsonl"), "--out", str(work / "gallery.bin")],
        ["align", "--joints", str(paths["view_joints"]), "--reference-joints", str(paths["train_joints"]),
         "--ref-width", "32", "--ref-height", "96", "--out", str(work / "align")],
        ["hallucinate", "--manifest", str(work / "align" / "manifest.jsonl"), "--mode", "baseline",
         "--out", str(work / "hall")],
        ["embed", "--manifest", str(work / "hall" / "manifest.jsonl"), "--camera", "0",
         "--out", str(work / "query.bin")],
        ["eval", "--query", str(work / "query.bin"), "--gallery", str(work / "gallery.bin"),
         "--protocol", "partial-reid-single-shot", "--trials", "10", "--seed", "5",
         "--out", str(work / "report.json")],
    ]
    for argv in steps:
        if prid(argv) != 0:
            raise SystemExit(f"step failed: {argv}")
    return work / "report.json"


def main():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        shutil.copy(gen_crops(work / "a"), GOLDEN / "gen_crops_s0.25_o0.5_seed42.jsonl")
        shutil.copy(protocol_chain(work / "b"), GOLDEN / "protocol_toy4_trials10_seed5.json")
    print(f"golden files written to {GOLDEN}")


if __name__ == "__main__":
    main()
