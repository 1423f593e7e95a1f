"""Jigsaw attack score against codec quality for V1 and V2 ciphertext.

    python scripts/attack_sweep.py [--keys 3] [--qualities 5 10 25 50 90]
"""
import argparse
from pathlib import Path

import numpy as np

from cfevid.attack import attack_clip, chance_level
from cfevid.cipher import encrypt, grid_for
from cfevid.codec import decode_intra, encode_intra
from cfevid.geometry import read_cfvr
from cfevid.keyschedule import KeyMaterial, Mode, plan_for

FRAMES = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "attack_frames.cfvr"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--in", dest="src", default=FRAMES)
    ap.add_argument("--keys", type=int, default=3)
    ap.add_argument("--qualities", type=int, nargs="+", default=[5, 10, 25, 50, 90])
    args = ap.parse_args()
    clip = read_cfvr(args.src)
    grid = grid_for(clip)
    print(f"chance {chance_level(grid.grid_rows, grid.grid_cols):.4f}")
    print("mode  quality  strict  aligned")
    for mode in (Mode.V1, Mode.V2):
        for q in [None] + args.qualities:
            strict, aligned = [], []
            for seed in range(1, args.keys + 1):
                plan = plan_for(KeyMaterial.generate(mode, seed), clip.height, clip.width)
                enc = encrypt(clip, plan)
                if q is not None:
                    enc = decode_intra(encode_intra(enc, q))
                r = attack_clip(enc, grid)
                strict.append(r.score(plan.mb_perm))
                aligned.append(r.aligned_score(plan.mb_perm))
            print(f"{mode.value:4}  {'raw' if q is None else q:>7}  "
                  f"{np.mean(strict):.4f}  {np.mean(aligned):.4f}")


if __name__ == "__main__":
    main()
