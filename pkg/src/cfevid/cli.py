"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 missing external tool.
"""
from __future__ import annotations

from pathlib import Path
import argparse
import json
import logging
import math
import sys

import numpy as np

from . import codec as codec_mod
from .adaptation import adapt_model
from .attack import attack_clip, attack_score, chance_level
from .cipher import decrypt, encrypt, grid_for, pixel_shuffle, pixel_unshuffle
from .geometry import (read_cfvr, read_ppm_sequence, write_cfvr, write_ppm_sequence)
from .grid import ConfigError, prepare_clip, report_render, run_grid
from .keyschedule import KeyMaterial, Mode, load_key, plan_for, save_key
from .metrics import psnr
from .vtcore import VtConfig, forward, init_weights, load_weights, save_weights

EXIT_USAGE, EXIT_DATA, EXIT_MISSING = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _num(v: float):
    return "inf" if isinstance(v, float) and math.isinf(v) else v


# -- subcommands ------------------------------------------------------------------

def cmd_keygen(a):
    keys = KeyMaterial.generate(Mode(a.mode), a.seed)
    save_key(keys, a.out, a.mb, a.sb)
    print(f"wrote {a.mode} key to {a.out}")


def _key_plan(a, clip):
    keys, mb, sb = load_key(a.key)
    return keys, plan_for(keys, clip.height, clip.width, mb, sb)


def cmd_encrypt(a):
    clip = read_cfvr(a.inp)
    if a.baseline == "pixel-shuffle":
        keys, _, _ = load_key(a.key)
        out = pixel_shuffle(clip, keys.k_st)
    else:
        out = encrypt(clip, _key_plan(a, clip)[1])
    write_cfvr(out, a.out)


def cmd_decrypt(a):
    clip = read_cfvr(a.inp)
    if a.baseline == "pixel-shuffle":
        keys, _, _ = load_key(a.key)
        out = pixel_unshuffle(clip, keys.k_st)
    else:
        out = decrypt(clip, _key_plan(a, clip)[1])
    write_cfvr(out, a.out)


def cmd_init_model(a):
    cfg = VtConfig(frames=a.frames, height=a.height, width=a.width, T=a.T, mb=a.mb,
                   embed_dim=a.embed_dim, n_layers=a.layers, n_heads=a.heads,
                   n_classes=a.classes, seed=a.seed)
    save_weights(init_weights(cfg), a.out)


def cmd_adapt(a):
    w = load_weights(a.weights)
    keys, mb, sb = load_key(a.key)
    if mb != w.config.mb:
        raise ValueError(f"key MB size {mb} differs from model cube size {w.config.mb}")
    plan = plan_for(keys, w.config.height, w.config.width, mb, sb)
    save_weights(adapt_model(w, plan), a.out)


def cmd_infer(a):
    w = load_weights(a.weights)
    logits = forward(read_cfvr(a.inp), w)
    top = int(np.argmax(logits))
    if a.json:
        print(json.dumps({"logits": [float(v) for v in logits], "argmax": top}))
    else:
        print(" ".join(f"{v:.6f}" for v in logits))
        print(f"argmax {top}")


def cmd_compress(a):
    clip = read_cfvr(a.inp)
    if a.codec == "external":
        if not a.cmd:
            raise ValueError("--codec external needs --cmd")
        q = a.q if a.q is not None else 75
        r = codec_mod.external_codec(clip, a.cmd.replace("{quality}", str(q)))
        write_cfvr(r.clip, a.out)
        print(f"bpp {r.bpp:.6f}")
        return
    if a.target_bpp is not None:
        rr = codec_mod.rate_search(clip, a.target_bpp)
        q = rr.quality
    else:
        q = a.q if a.q is not None else 75
    s = codec_mod.encode_intra(clip, q)
    codec_mod.write_stream(s, a.out)
    print(f"quality {q} bpp {s.bpp:.6f}")


def cmd_decompress(a):
    write_cfvr(codec_mod.decode_intra(codec_mod.read_stream(a.inp)), a.out)


def cmd_psnr(a):
    v = psnr(read_cfvr(a.ref), read_cfvr(a.test))
    print(json.dumps({"psnr": _num(v)}) if a.json else ("inf" if math.isinf(v) else f"{v:.4f}"))


def cmd_bpp(a):
    s = codec_mod.read_stream(a.inp)
    print(f"{s.bpp:.6f}")


def cmd_attack(a):
    clip = read_cfvr(a.inp)
    grid = grid_for(clip, a.grid, a.sb)
    res = attack_clip(clip, grid, learn=not a.raw_borders)
    doc = {"grid": [grid.grid_rows, grid.grid_cols], "mb": a.grid,
           "chance": chance_level(grid.grid_rows, grid.grid_cols),
           "placements": res.placements.tolist(), "score": None, "aligned_score": None}
    if a.key:
        keys, mb, sb = load_key(a.key)
        if mb != a.grid:
            raise ValueError(f"key MB size {mb} differs from --grid {a.grid}")
        perm = plan_for(keys, clip.height, clip.width, mb, sb).mb_perm
        doc["score"] = res.score(perm)
        doc["aligned_score"] = res.aligned_score(perm)
    elif a.original:
        doc["score"] = attack_score(read_cfvr(a.original), res.reconstructed, grid)
    if a.dump:
        write_cfvr(res.reconstructed, a.dump)
    text = json.dumps(doc)
    if a.report:
        Path(a.report).write_text(text + "\n")
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    print(f"neighbour accuracy {fmt(doc['score'])}, aligned {fmt(doc['aligned_score'])} "
          f"(chance {doc['chance']:.4f})")


def cmd_grid(a):
    csv_path, json_path = run_grid(a.config, jobs=a.jobs)
    print(f"wrote {csv_path} and {json_path}")


def cmd_report(a):
    text = report_render(Path(a.csv).read_text())
    if a.out:
        Path(a.out).write_text(text + "\n")
    else:
        print(text)


def cmd_prepare(a):
    clip = read_cfvr(a.inp)
    write_cfvr(prepare_clip(clip, a.frames, a.height, a.width, a.order), a.out)


def cmd_import_ppm(a):
    write_cfvr(read_ppm_sequence(a.dir), a.out)


def cmd_export_ppm(a):
    paths = write_ppm_sequence(read_cfvr(a.inp), a.dir)
    print(f"wrote {len(paths)} frames to {a.dir}")


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfevid", description="Compression-friendly video encryption toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("keygen", cmd_keygen, "create a key file")
    sp.add_argument("--mode", choices=["V1", "V2"], default="V1")
    sp.add_argument("--seed", type=int, help="reproducible keys (default: OS entropy)")
    sp.add_argument("--mb", type=int, default=16)
    sp.add_argument("--sb", type=int, default=8)
    sp.add_argument("--out", required=True)

    for name, fn in (("encrypt", cmd_encrypt), ("decrypt", cmd_decrypt)):
        sp = add(name, fn, f"{name} a .cfvr clip")
        sp.add_argument("--in", dest="inp", required=True)
        sp.add_argument("--key", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--baseline", choices=["pixel-shuffle"],
                        help="use the pixel-shuffle baseline instead")

    sp = add("init-model", cmd_init_model, "write a randomly initialised model")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--frames", type=int, default=8)
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--T", type=int, default=2)
    sp.add_argument("--mb", type=int, default=16)
    sp.add_argument("--embed-dim", type=int, default=32)
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--classes", type=int, default=10)

    sp = add("adapt", cmd_adapt, "adapt model weights to a key")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--key", required=True)
    sp.add_argument("--out", required=True)

    sp = add("infer", cmd_infer, "print class logits for a clip")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--json", action="store_true")

    sp = add("compress", cmd_compress, "code a clip with the toy or an external codec")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True,
                    help=".cfcs stream (toy) or decoded .cfvr (external)")
    rate = sp.add_mutually_exclusive_group()
    rate.add_argument("--q", type=int, choices=range(1, 101), metavar="1..100")
    rate.add_argument("--target-bpp", type=float)
    sp.add_argument("--codec", choices=["toy", "external"], default="toy")
    sp.add_argument("--cmd", help="external codec command template")

    sp = add("decompress", cmd_decompress, "decode a .cfcs stream")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)

    sp = add("psnr", cmd_psnr, "PSNR between two clips")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--json", action="store_true")

    sp = add("bpp", cmd_bpp, "bits per pixel of a .cfcs stream")
    sp.add_argument("--in", dest="inp", required=True)

    sp = add("attack", cmd_attack, "greedy MB reassembly attack")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--grid", type=int, default=16, help="MB size in pixels")
    sp.add_argument("--sb", type=int, default=8, help="SB size in pixels")
    sp.add_argument("--raw-borders", action="store_true",
                    help="compare raw MB borders instead of learned SB edge pairings")
    sp.add_argument("--report", help="JSON report path")
    sp.add_argument("--dump", help="write reassembled frames to this .cfvr")
    sp.add_argument("--key", help="score against the true MB permutation")
    sp.add_argument("--original", help="score an unencrypted clip by content matching")

    sp = add("grid", cmd_grid, "run an experiment grid from a TOML config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--jobs", type=int)

    sp = add("report", cmd_report, "render grid CSV as markdown tables")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--out")

    sp = add("prepare", cmd_prepare, "sample frames and resize a clip")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--frames", type=int, default=8)
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--order", choices=["sample-resize", "resize-sample"],
                    default="sample-resize")

    sp = add("import-ppm", cmd_import_ppm, "pack a directory of PPM frames into .cfvr")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--out", required=True)

    sp = add("export-ppm", cmd_export_ppm, "unpack a .cfvr into PPM frames")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--dir", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except codec_mod.ExternalCodecUnavailable as exc:
        print(f"cfevid: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"cfevid: config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"cfevid: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
