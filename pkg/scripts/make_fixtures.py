"""Regenerate the bundled bandwidth traces.

``eval/``: 20 random walks around 5 Mbps (seeds 0-19) used by the scenarios.
``train/``: 20 random walks whose means span 0.6-6 Mbps (seeds 1000-1019),
used only to fit the bitrate surrogates.
"""

from pathlib import Path

import numpy as np

from cascade_qoe.traces import save_trace, synth_trace

ROOT = Path(__file__).resolve().parents[1] / "src" / "cascade_qoe" / "data" / "traces"


def main():
    (ROOT / "eval").mkdir(parents=True, exist_ok=True)
    (ROOT / "train").mkdir(parents=True, exist_ok=True)
    for i in range(20):
        save_trace(synth_trace("random_walk", {}, i, name=f"rw_{i:02d}"), ROOT / "eval" / f"rw_{i:02d}.txt")
    for i, mean in enumerate(np.geomspace(600.0, 6000.0, 20)):
        tr = synth_trace("random_walk", {"mean_kbps": float(mean)}, 1000 + i, name=f"train_{i:02d}")
        save_trace(tr, ROOT / "train" / f"train_{i:02d}.txt")


if __name__ == "__main__":
    main()
