"""Build a small listening-test fixture for the frontend integration tests.

Writes clean speech, ground-truth and system RIRs, a session manifest, and a
serve config into the given directory.
"""

import json
import sys
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from rirbench.audio import AudioBuffer, ImpulseResponse, write_wav


def speech(seed, rate=16000, seconds=0.5):
    rng = np.random.default_rng(seed)
    n = int(rate * seconds)
    carrier = lfilter([1.0], [1.0, -0.9], rng.standard_normal(n))
    env = 0.3 + np.abs(lfilter([1.0], [1.0, -0.999], rng.standard_normal(n)))
    sig = carrier * env / np.max(np.abs(carrier * env))
    return AudioBuffer(0.9 * sig, rate)


def decay_rir(t60, seed, rate=16000, seconds=0.3):
    rng = np.random.default_rng(seed)
    n = int(rate * seconds)
    t = np.arange(n) / rate
    return ImpulseResponse(rng.standard_normal(n) * 10.0 ** (-3.0 * t / t60), rate)


def main(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    items = []
    for i in range(2):
        write_wav(out_dir / f"clean{i}.wav", speech(50 + i), "float32")
        write_wav(out_dir / f"gt{i}.wav", decay_rir(0.25, 60 + i), "float32")
        write_wav(out_dir / f"ours{i}.wav", decay_rir(0.3, 70 + i), "float32")
        items.append(
            {
                "id": f"item{i}",
                "prompt": f"integration room {i}",
                "image_ref": None,
                "clean_wav": str(out_dir / f"clean{i}.wav"),
                "gt_rir": str(out_dir / f"gt{i}.wav"),
                "systems": {"ours": str(out_dir / f"ours{i}.wav")},
            }
        )
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"items": items, "primary_system": "ours"}))
    config = {
        "data_dir": str(out_dir / "data"),
        "manifest": str(manifest),
        "seed": 17,
        "trials_per_listener": 2,
        "session_name": "integration",
    }
    (out_dir / "serve.json").write_text(json.dumps(config))
    print(json.dumps({"fixture": str(out_dir)}))


if __name__ == "__main__":
    main(Path(sys.argv[1]))
