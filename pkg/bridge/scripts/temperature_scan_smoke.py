#!/usr/bin/env python3
"""Optional real-model smoke run: temperature scan of a small checkpoint.

Not part of CI: it downloads a real checkpoint (network required) and takes
minutes on CPU.  Start a bridge first, for instance

    transition-bridge serve --model EleutherAI/pythia-70m --port 8100

then run

    python scripts/temperature_scan_smoke.py --bridge http://127.0.0.1:8100

The run scans temperatures in [1e-4, 2] with L=5 and reduced sampling (512
samples per grid point, 10 generated tokens), prints the detected peaks and
checks two qualitative expectations: every estimate is finite, and at least
one peak sits below T=0.2 (the near-deterministic regime ends early).  No
peak-location tolerance is asserted.
"""

import argparse
import sys

import numpy as np

import phasescan as ps
from phasescan.models import AxisKind, ModelEndpoint, RemoteModel


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--bridge", default="http://127.0.0.1:8100")
    parser.add_argument("--model-id", default="EleutherAI/pythia-70m")
    parser.add_argument(
        "--prompt",
        default="There's measuring the drapes, and then there's measuring the "
        "drapes on a house you haven't bought, a",
    )
    parser.add_argument("--n-points", type=int, default=41)
    parser.add_argument("--n-samples", type=int, default=512)
    parser.add_argument("--n-tokens", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--cache-dir", default=".phasescan-cache")
    args = parser.parse_args()

    endpoint = ModelEndpoint(base_url=args.bridge, model_id=args.model_id)
    model = RemoteModel(endpoint, base_prompt=args.prompt, cache_dir=args.cache_dir)
    grid = ps.build_grid(AxisKind.TEMPERATURE, 1e-4, 2.0, args.n_points, 5)
    curve = ps.run_scan(
        model,
        grid,
        ps.GSpec.linear(),
        n_samples=args.n_samples,
        n_tokens=args.n_tokens,
        seed=args.seed,
        n_batches=4,
    )
    report = ps.detect_peaks(curve, 5.0)
    for tv, est, se in zip(curve.trial_values, curve.estimates, curve.stderr):
        print(f"T*={tv:8.5f}  D={est:8.5f} +- {se:.5f}")
    print("peaks:", [(round(p.trial_value, 4), round(p.estimate, 4)) for p in report.peaks])

    ok = all(np.isfinite(curve.estimates)) and any(
        p.trial_value < 0.2 for p in report.peaks
    )
    print("smoke:", "PASS" if ok else "FAIL (qualitative expectations not met)")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
