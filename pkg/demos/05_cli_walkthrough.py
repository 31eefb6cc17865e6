"""Drive the command-line pipeline end to end in a scratch directory.

gen -> train -> infer -> eval -> bench, all with a tiny configuration so the
whole walk finishes in about a minute. Every subcommand writes a resolved
config.json next to its outputs, so a run directory is self-describing.
"""

import json
import os
import subprocess
import sys
import tempfile

from tabmark import synth

CONFIG = {
    "seed": 1,
    "model": {
        "image_side": 32,
        "d": 16,
        "heads": 2,
        "html_blocks": 1,
        "cell_blocks": 1,
        "refiner_blocks": 1,
        "ffn_mult": 2,
        "enc_channels": [4, 8, 16],
        "struct_cap": 50,
        "content_cap": 80,
        "seed": 1,
    },
    "train": {"epochs": 2, "batch_size": 4, "seed": 1},
    "gen": {
        "count": 20,
        "spec": {
            "rows": [1, 2],
            "cols": [2, 2],
            "content_len": [1, 3],
            "glyph_scale": 2,
            "image_side": 32,
            "margin": 2,
        },
    },
}


def run(*args: str) -> None:
    cmd = [sys.executable, "-m", "tabmark", *args]
    print(f"\n$ {' '.join(cmd[2:])}", flush=True)
    subprocess.run(cmd, check=True)


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "config.json")
        with open(cfg, "w") as fh:
            json.dump(CONFIG, fh)

        corpus = os.path.join(tmp, "corpus")
        rundir = os.path.join(tmp, "run")
        preds = os.path.join(tmp, "preds")
        report = os.path.join(tmp, "eval")
        bench = os.path.join(tmp, "bench")

        run("gen", "--config", cfg, "--out", corpus)
        run("train", "--config", cfg, "--corpus", corpus, "--out", rundir)
        run("infer", "--config", cfg, "--model", os.path.join(rundir, "model.ckpt"),
            "--corpus", corpus, "--out", preds)

        # Score predictions against the corpus ground truth.
        truth = os.path.join(tmp, "truth.jsonl")
        with open(truth, "w") as out:
            for rid, rec in synth.load_corpus(corpus):
                out.write(json.dumps({"id": rid, "html": rec.html()}) + "\n")
        run("eval", "--config", cfg, "--truth", truth,
            "--pred", os.path.join(preds, "predictions.jsonl"), "--out", report)

        run("bench", "--config", cfg, "--corpus", corpus,
            "--model", os.path.join(rundir, "model.ckpt"), "--out", bench)

        print("\nartifacts:")
        for root, _, files in sorted(os.walk(tmp)):
            for name in sorted(files):
                rel = os.path.relpath(os.path.join(root, name), tmp)
                print("   ", rel)


if __name__ == "__main__":
    main()
