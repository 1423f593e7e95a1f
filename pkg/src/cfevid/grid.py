"""Experiment grid: encrypt -> compress -> decompress -> decrypt/infer, one row per cell.

Config is a TOML document::

    seed = 1                      # master seed for keys and shuffle seeds
    model_seed = 0                # seed of the random test model
    clips = ["a.cfvr", "b.cfvr"]  # relative to the config file (or $CFEVID_CLIP_DIR)
    methods = ["plain", "cfe-v1", "cfe-v2", "pixel-shuffle"]
    codecs = ["none", "toy"]      # plus "external:<name>" entries, see [external]
    qualities = [100, 50]         # fixed-quality cells
    target_bpp = [0.8, 0.6, 0.4]  # rate-matched cells (quality searched on the plain clip)
    frames = 8                    # model input; clips are sampled/resized to fit
    height = 64
    width = 64
    order = "sample-resize"       # or "resize-sample"
    out_dir = "results"           # relative to the config file (or $CFEVID_OUT_DIR)
    jobs = 1

    [model]                       # optional VtConfig overrides
    embed_dim = 32

    [external.mjpeg]              # optional; template gets {quality} as well
    cmd = "sh -c 'ffmpeg ... {coded} ...'"

The logit columns compare the adapted model on the decompressed ciphertext
with the plain model on the plain clip.  They stand in for task accuracy,
which cannot be measured at this scale.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import codec as codec_mod
from .adaptation import adapt_model
from .cipher import decrypt, encrypt, pixel_shuffle, pixel_unshuffle
from .geometry import Clip, read_cfvr, resize_bicubic, sample_frames_uniform
from .keyschedule import KeyMaterial, Mode, SplitMix64, plan_for
from .metrics import psnr
from .vtcore import VtConfig, forward, init_weights

log = logging.getLogger(__name__)

METHODS = ("plain", "cfe-v1", "cfe-v2", "pixel-shuffle")
COLUMNS = ("clip", "method", "codec", "quality", "target_bpp", "bpp", "psnr_decrypted",
           "psnr_compressed", "logit_delta", "argmax_agree", "status")
LOGIT_TOL = 1e-4


class ConfigError(ValueError):
    pass


class ReportError(ValueError):
    pass


@dataclass
class GridConfig:
    clips: list[Path]
    methods: list[str]
    codecs: list[str] = field(default_factory=lambda: ["none", "toy"])
    qualities: list[int] = field(default_factory=list)
    target_bpp: list[float] = field(default_factory=list)
    seed: int = 1
    model_seed: int = 0
    frames: int = 8
    height: int = 64
    width: int = 64
    order: str = "sample-resize"
    out_dir: Path = Path("results")
    jobs: int = 1
    model: dict = field(default_factory=dict)
    external: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("method list is empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if not self.clips:
            raise ConfigError("clip list is empty")
        if not self.codecs:
            raise ConfigError("codec list is empty")
        for c in self.codecs:
            if c in ("none", "toy"):
                continue
            if not c.startswith("external:") or c.split(":", 1)[1] not in self.external:
                raise ConfigError(f"codec {c!r} needs an [external.<name>] cmd entry")
        if any(c != "none" for c in self.codecs) and not (self.qualities or self.target_bpp):
            raise ConfigError("lossy codecs need qualities or target_bpp")
        if self.order not in ("sample-resize", "resize-sample"):
            raise ConfigError(f"order must be sample-resize or resize-sample, not {self.order!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def vt_config(self) -> VtConfig:
        return VtConfig(frames=self.frames, height=self.height, width=self.width,
                        seed=self.model_seed, **self.model)


def load_config(path) -> GridConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    clip_base = Path(os.environ.get("CFEVID_CLIP_DIR", path.parent))
    out_dir = Path(os.environ.get("CFEVID_OUT_DIR", path.parent / doc.get("out_dir", "results")))
    known = {"clips", "methods", "codecs", "qualities", "target_bpp", "seed", "model_seed",
             "frames", "height", "width", "order", "out_dir", "jobs", "model", "external"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"{path}: unknown keys {sorted(extra)}")
    try:
        cfg = GridConfig(
            clips=[clip_base / c for c in doc.get("clips", [])],
            methods=list(doc.get("methods", [])),
            codecs=list(doc.get("codecs", ["none", "toy"])),
            qualities=[int(q) for q in doc.get("qualities", [])],
            target_bpp=[float(t) for t in doc.get("target_bpp", [])],
            seed=int(doc.get("seed", 1)),
            model_seed=int(doc.get("model_seed", 0)),
            frames=int(doc.get("frames", 8)),
            height=int(doc.get("height", 64)),
            width=int(doc.get("width", 64)),
            order=str(doc.get("order", "sample-resize")),
            out_dir=out_dir,
            jobs=int(doc.get("jobs", 1)),
            model=dict(doc.get("model", {})),
            external={k: v["cmd"] for k, v in doc.get("external", {}).items()},
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg.validate()
    return cfg


def derive_seed(seed: int, *labels: int) -> int:
    s = seed
    for label in labels:
        s = SplitMix64(s ^ label).next_u64()
    return s


def prepare_clip(clip: Clip, frames: int, height: int, width: int,
                 order: str = "sample-resize") -> Clip:
    if order == "sample-resize":
        return resize_bicubic(sample_frames_uniform(clip, frames), height, width)
    return sample_frames_uniform(resize_bicubic(clip, height, width), frames)


@dataclass(frozen=True)
class Cell:
    clip_idx: int
    method: str
    codec: str
    quality: int | None
    target_bpp: float | None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return str(v)


class GridRunner:
    def __init__(self, cfg: GridConfig):
        cfg.validate()
        self.cfg = cfg
        self.vt = cfg.vt_config()
        self.weights = init_weights(self.vt)
        self.clips = [prepare_clip(read_cfvr(p), cfg.frames, cfg.height, cfg.width, cfg.order)
                      for p in cfg.clips]
        self.plain_logits = [forward(c, self.weights) for c in self.clips]
        self._target_q: dict[tuple[int, float], int] = {}

    def cells(self) -> list[Cell]:
        out = []
        for ci in range(len(self.clips)):
            for m in self.cfg.methods:
                for c in self.cfg.codecs:
                    if c == "none":
                        out.append(Cell(ci, m, c, None, None))
                        continue
                    out.extend(Cell(ci, m, c, q, None) for q in self.cfg.qualities)
                    out.extend(Cell(ci, m, c, None, t) for t in self.cfg.target_bpp)
        return out

    def _quality_for_target(self, ci: int, target: float) -> int:
        key = (ci, target)
        if key not in self._target_q:
            self._target_q[key] = codec_mod.rate_search(self.clips[ci], target).quality
        return self._target_q[key]

    def _protect(self, ci: int, method: str):
        """Return ``(ciphertext, decrypt_fn, weights_or_None)`` for a method."""
        clip = self.clips[ci]
        mi = METHODS.index(method)
        if method == "plain":
            return clip, (lambda c: c), self.weights
        if method == "pixel-shuffle":
            seed = derive_seed(self.cfg.seed, ci, mi)
            return pixel_shuffle(clip, seed), (lambda c: pixel_unshuffle(c, seed)), None
        mode = Mode.V1 if method == "cfe-v1" else Mode.V2
        keys = KeyMaterial(mode, derive_seed(self.cfg.seed, ci, mi, 1),
                           derive_seed(self.cfg.seed, ci, mi, 2))
        plan = plan_for(keys, clip.height, clip.width, self.vt.mb)
        return encrypt(clip, plan), (lambda c: decrypt(c, plan)), adapt_model(self.weights, plan)

    def _compress(self, enc: Clip, cell: Cell, quality: int | None):
        if cell.codec == "none":
            return enc, 24.0
        if cell.codec == "toy":
            s = codec_mod.encode_intra(enc, quality)
            return codec_mod.decode_intra(s), s.bpp
        name = cell.codec.split(":", 1)[1]
        template = self.cfg.external[name].replace("{quality}", str(quality))
        r = codec_mod.external_codec(enc, template)
        return r.clip, r.bpp

    def run_cell(self, cell: Cell) -> dict:
        row = {k: None for k in COLUMNS}
        row.update(clip=self.cfg.clips[cell.clip_idx].name, method=cell.method,
                   codec=cell.codec, target_bpp=cell.target_bpp)
        try:
            quality = cell.quality
            if cell.target_bpp is not None:
                quality = self._quality_for_target(cell.clip_idx, cell.target_bpp)
            row["quality"] = quality
            enc, dec_fn, weights = self._protect(cell.clip_idx, cell.method)
            received, bpp = self._compress(enc, cell, quality)
            row["bpp"] = float(bpp)
            row["psnr_compressed"] = psnr(enc, received)
            row["psnr_decrypted"] = psnr(self.clips[cell.clip_idx], dec_fn(received))
            if weights is not None:
                logits = forward(received, weights)
                ref = self.plain_logits[cell.clip_idx]
                row["logit_delta"] = float(np.max(np.abs(logits - ref)))
                row["argmax_agree"] = bool(np.argmax(logits) == np.argmax(ref))
            row["status"] = "ok"
        except Exception as exc:  # recorded per row; the grid keeps going
            log.warning("cell %s failed: %s", cell, exc)
            row["status"] = f"error: {type(exc).__name__}: {exc}"
        return row

    def run(self) -> list[dict]:
        cells = self.cells()
        # rate search is cached per clip; resolve serially so threads never race on it
        for c in cells:
            if c.target_bpp is not None and c.codec != "none":
                self._quality_for_target(c.clip_idx, c.target_bpp)
        if self.cfg.jobs == 1:
            return [self.run_cell(c) for c in cells]
        with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
            return list(pool.map(self.run_cell, cells))


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in COLUMNS])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def run_grid(config_path, jobs: int | None = None) -> tuple[Path, Path]:
    """Run every cell of the grid and write ``grid.csv`` and ``grid.json``."""
    cfg = load_config(config_path)
    if jobs is not None:
        cfg.jobs = jobs
        cfg.validate()
    rows = GridRunner(cfg).run()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = cfg.out_dir / "grid.csv"
    json_path = cfg.out_dir / "grid.json"
    csv_path.write_text(rows_to_csv(rows))
    doc = {
        "config": {
            "clips": [p.name for p in cfg.clips], "methods": cfg.methods, "codecs": cfg.codecs,
            "qualities": cfg.qualities, "target_bpp": cfg.target_bpp, "seed": cfg.seed,
            "model_seed": cfg.model_seed, "frames": cfg.frames, "height": cfg.height,
            "width": cfg.width, "order": cfg.order, "external": cfg.external,
        },
        "rows": [{k: _json_value(r[k]) for k in COLUMNS} for r in rows],
    }
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return csv_path, json_path


# -- report rendering -------------------------------------------------------------

REQUIRED = ("method", "codec", "psnr_decrypted")


def parse_report_csv(text: str) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ReportError("line 1: empty CSV") from None
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise ReportError(f"line 1: missing column(s) {', '.join(missing)}")
    rows = []
    for fields in reader:
        line = reader.line_num
        if not fields:
            continue
        if len(fields) != len(header):
            raise ReportError(f"line {line}: expected {len(header)} fields, got {len(fields)}")
        row = dict(zip(header, fields))
        for col in ("bpp", "psnr_decrypted", "psnr_compressed", "logit_delta", "target_bpp"):
            v = row.get(col, "")
            if v == "":
                row[col] = None
                continue
            try:
                row[col] = float(v)
            except ValueError:
                raise ReportError(f"line {line}: column {col!r} is not a number: {v!r}") from None
        rows.append(row)
    return rows


def _setting(row: dict) -> str:
    if row["codec"] == "none":
        return "uncomp"
    if row.get("target_bpp") is not None:
        return f"{row['target_bpp']:.2f}bpp"
    return f"q{row.get('quality', '')}"


def _table(title: str, methods, columns, cells: dict, fmt) -> list[str]:
    lines = [f"### {title}", "", "| Method | " + " | ".join(columns) + " |",
             "|---" * (len(columns) + 1) + "|"]
    for m in methods:
        vals = [fmt(cells.get((m, c))) for c in columns]
        lines.append(f"| {m} | " + " | ".join(vals) + " |")
    lines.append("")
    return lines


def report_render(csv_text: str) -> str:
    """Method x (codec, bitrate) tables of logit pass rate, argmax agreement and PSNR."""
    rows = [r for r in parse_report_csv(csv_text) if r.get("status", "ok") == "ok"]
    methods = list(dict.fromkeys(r["method"] for r in rows))
    columns = list(dict.fromkeys(f"{r['codec']} {_setting(r)}" for r in rows))
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], f"{r['codec']} {_setting(r)}"), []).append(r)

    def rate(pred):
        out = {}
        for k, rs in groups.items():
            vals = [pred(r) for r in rs if r.get("logit_delta") is not None]
            out[k] = 100.0 * sum(vals) / len(vals) if vals else None
        return out

    passed = rate(lambda r: r["logit_delta"] <= LOGIT_TOL)
    agree = rate(lambda r: r.get("argmax_agree") == "1")
    mean_psnr = {}
    for k, rs in groups.items():
        vals = [r["psnr_decrypted"] for r in rs if r["psnr_decrypted"] is not None]
        finite = [v for v in vals if math.isfinite(v)]
        mean_psnr[k] = (float(np.mean(finite)) if finite else math.inf) if vals else None

    pct = lambda v: "N/A" if v is None else f"{v:.2f}"  # noqa: E731
    db = lambda v: "N/A" if v is None else ("inf" if math.isinf(v) else f"{v:.2f}")  # noqa: E731
    lines = ["## Grid summary", "",
             "Accuracy proxies: share of clips whose adapted-model logits on the received",
             f"ciphertext match the plain model within {LOGIT_TOL:g} (pass), and share with the",
             "same top class (agree).  Not dataset accuracy.", ""]
    lines += _table("Logit-equivalence pass rate (%)", methods, columns, passed, pct)
    lines += _table("Argmax agreement (%)", methods, columns, agree, pct)
    lines += _table("Mean decrypted PSNR (dB)", methods, columns, mean_psnr, db)
    return "\n".join(lines)
