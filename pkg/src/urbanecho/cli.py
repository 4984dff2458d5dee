"""Command line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import __version__
from .dataset import DatasetWriter, SampleRecord, make_split, read_manifest, soundmap_name
from .errors import UrbanEchoError, ValidationError
from .geometry import BUILDING, LOS, visibility_mask
from .ingest import (DEFAULT_ENDPOINT, SelectionRule, fetch_osm, load_geojson_scene, location_ok,
                     parse_buildings, rasterize_scene, scene_to_geojson)
from .metrics import aggregate, evaluate, format_table
from .propagation import Variant, find_paths, path_attenuation, simulate
from .raster import SoundMap, interpolate, read_gray, write_sound_map
from .receivers import build_grid
from .scenario import ScenarioSettings, make_task, task_echo, tomllib
from .scene import GeoLocation, Scene

log = logging.getLogger("urbanecho")

RESOLUTIONS = (256, 512)
TASKS = tuple(v.value for v in Variant)
MAX_FAILURE_RATE = 0.01


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "baseline"
    resolution: int = 256
    workers: int = 1
    seed: int = 0
    input: Optional[str] = None
    out: str = "dataset"
    reflection_order: Optional[int] = None
    endpoint: str = DEFAULT_ENDPOINT
    offline: bool = False
    select: bool = True
    spacing: float = 5.0
    settings: ScenarioSettings = field(default_factory=ScenarioSettings)

    def __post_init__(self):
        if self.task not in TASKS:
            raise UsageError(f"unknown task {self.task!r} (choose from {', '.join(TASKS)})")
        if self.resolution not in RESOLUTIONS:
            raise UsageError(f"resolution must be one of {RESOLUTIONS}, got {self.resolution}")
        if self.workers < 1:
            raise UsageError(f"workers must be >= 1, got {self.workers}")
        if self.reflection_order is not None and self.reflection_order < 1:
            raise UsageError("reflection order must be >= 1")


# --- scene sources ----------------------------------------------------------

def scene_to_local(scene: Scene) -> dict:
    """Scene in local meters, exactly as simulated (no reprojection)."""
    doc = {"extent": scene.extent, "source": list(scene.source),
           "buildings": [[list(v) for v in p.vertices] for p in scene.buildings]}
    if scene.origin is not None:
        o = scene.origin
        doc["origin"] = {"lat": o.latitude, "lon": o.longitude, "city": o.city_tag}
    return doc


def scene_from_local(doc: dict) -> Scene:
    o = doc.get("origin")
    origin = GeoLocation(o["lat"], o["lon"], o.get("city", "")) if o else None
    return Scene(tuple(tuple(map(tuple, b)) for b in doc["buildings"]), extent=doc["extent"],
                 source=tuple(doc["source"]), origin=origin)


def read_candidates(path) -> list[GeoLocation]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        lon_col = "lon" if "lon" in cols else "long"
        if "lat" not in cols or lon_col not in cols:
            raise ValidationError(f"{path}: candidate CSV needs lat and lon columns")
        return [GeoLocation(float(r["lat"]), float(r[lon_col]), r.get("city", "") or "")
                for r in reader]


def scene_sources(cfg: RunConfig) -> list[tuple]:
    """(kind, payload) per sample, ordered; sample ids are list positions."""
    if cfg.input is None:
        raise UsageError("--input is required")
    path = Path(cfg.input)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".geojson", ".json"))
        if not files:
            raise UsageError(f"{path}: no .geojson files")
        return [("geojson", str(p)) for p in files]
    if path.suffix == ".csv":
        return [("overpass", loc) for loc in read_candidates(path)]
    if path.suffix in (".geojson", ".json"):
        return [("geojson", str(path))]
    raise UsageError(f"{path}: expected a GeoJSON directory or a candidate CSV")


def load_scene(source, cfg: RunConfig) -> Scene:
    kind, payload = source
    if kind == "geojson":
        return load_geojson_scene(payload)
    raw = fetch_osm(payload, cfg.endpoint, offline=cfg.offline)
    return parse_buildings(raw, payload)


# --- generate ---------------------------------------------------------------

def _run_sample(args):
    """Worker: everything but the writes. Returns a plain dict (picklable)."""
    sample_id, source, cfg, task = args
    t0 = time.perf_counter()
    try:
        scene = load_scene(source, cfg)
        if cfg.select and not location_ok(scene, SelectionRule()):
            return {"id": sample_id, "status": "rejected"}
        tc = make_task(task, sample_id, cfg.seed, cfg.settings, cfg.reflection_order)
        grid = simulate(scene, build_grid(scene, cfg.spacing), tc)
        meta = {"sample_id": sample_id, "task": task_echo(tc), "n_receivers": len(grid),
                "n_silent": int(np.isnan(grid.levels).sum())}
        sm = interpolate(grid, scene, cfg.resolution, meta)
        osm = rasterize_scene(scene, cfg.resolution)
    except Exception as exc:  # noqa: BLE001 - reported per sample
        return {"id": sample_id, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return {"id": sample_id, "status": "ok", "seconds": time.perf_counter() - t0,
            "record": _record(sample_id, scene, tc), "scene": scene_to_local(scene),
            "osm": osm.pixels, "gray": sm.gray, "sidecar": sm.sidecar()}


def _record(sample_id: int, scene: Scene, tc) -> SampleRecord:
    o = scene.origin or GeoLocation(0.0, 0.0, "")
    combined = tc.variant is Variant.COMBINED
    echo = task_echo(tc)
    extra = {"task": tc.variant.value, "frequency_hz": repr(float(tc.source.frequency_hz)),
             "reflection_order": str(tc.max_reflection_order), "alpha_vert": repr(float(tc.alpha_vert)),
             "diffraction": str(int(echo["enable_diffraction"])),
             "atmosphere": str(int(echo["enable_atmosphere"]))}
    return SampleRecord(sample_id, o.city_tag, o.latitude, o.longitude, "", "",
                        tc.source.level_db,
                        tc.env.temperature_c if combined else None,
                        tc.env.humidity_pct if combined else None, extra)


def generate_task(cfg: RunConfig, task: str) -> int:
    sources = scene_sources(cfg)
    writer = DatasetWriter(cfg.out, task)
    todo = [(i, s, cfg, task) for i, s in enumerate(sources) if not writer.has(i)]
    if len(todo) < len(sources):
        log.info("%s: %d samples already present, resuming", task, len(sources) - len(todo))
    times, failed, rejected = [], [], 0
    if cfg.workers > 1 and len(todo) > 1:
        pool = ProcessPoolExecutor(max_workers=cfg.workers)
        results = pool.map(_run_sample, todo, chunksize=1)
    else:
        pool, results = None, map(_run_sample, todo)
    try:
        for res in results:  # input order, so the coordinator writes deterministically
            sid = res["id"]
            if res["status"] == "rejected":
                rejected += 1
                log.info("%s sample %d: location rejected by the selection rule", task, sid)
                continue
            if res["status"] == "failed":
                failed.append(sid)
                log.error("%s sample %d failed: %s", task, sid, res["error"])
                continue
            writer.write_sample(res["record"], res["osm"], res["gray"], res["scene"], res["sidecar"])
            times.append(res["seconds"])
            log.info("%s sample %d: %.3f s", task, sid, res["seconds"])
    finally:
        if pool is not None:
            pool.shutdown()
    writer.finalize(cfg.seed)
    if times:
        sd = statistics.stdev(times) if len(times) > 1 else 0.0
        print(f"{task}: runtime per sample {statistics.fmean(times):.4f} ± {sd:.4f} s "
              f"over {len(times)} samples")
    print(f"{task}: {len(writer.records)} samples in {writer.manifest_path}, "
          f"{rejected} rejected, {len(failed)} failed")
    attempted = len(todo) - rejected
    if failed and len(failed) > MAX_FAILURE_RATE * attempted:
        log.error("%s: %d of %d samples failed: %s", task, len(failed), attempted, failed)
        return 1
    return 0


def cmd_generate(cfg: RunConfig, tasks) -> int:
    status = 0
    for task in tasks:
        status = max(status, generate_task(cfg, task))
    return status


# --- other commands ---------------------------------------------------------

def cmd_fetch(cfg: RunConfig) -> int:
    if cfg.input is None or not cfg.input.endswith(".csv"):
        raise UsageError("fetch needs --input with a candidate CSV (lat,lon[,city])")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    kept = 0
    for i, loc in enumerate(read_candidates(cfg.input)):
        scene = parse_buildings(fetch_osm(loc, cfg.endpoint, offline=cfg.offline), loc)
        if cfg.select and not location_ok(scene):
            log.info("candidate %d (%s): rejected", i, loc.city_tag)
            continue
        name = f"scene_{i:05d}.geojson"
        (out / name).write_text(json.dumps(scene_to_geojson(scene), indent=1) + "\n")
        kept += 1
    print(f"wrote {kept} scenes to {out}")
    return 0


def _single_scene(cfg: RunConfig):
    sources = scene_sources(cfg)
    if len(sources) != 1:
        raise UsageError("--input must name a single scene")
    scene = load_scene(sources[0], cfg)
    task = make_task(cfg.task, 0, cfg.seed, cfg.settings, cfg.reflection_order)
    return scene, task


def cmd_simulate(cfg: RunConfig, receivers_csv: Optional[str]) -> int:
    scene, task = _single_scene(cfg)
    t0 = time.perf_counter()
    grid = simulate(scene, build_grid(scene, cfg.spacing), task, workers=cfg.workers)
    sm = interpolate(grid, scene, cfg.resolution, {"task": task_echo(task), "n_receivers": len(grid)})
    out = Path(cfg.out)
    if out.suffix.lower() not in (".png", ".pgm"):
        out = out / soundmap_name(cfg.task, 0)
    write_sound_map(out, sm)
    if receivers_csv:
        grid.to_csv(receivers_csv)
    print(f"{out}: {len(grid)} receivers in {time.perf_counter() - t0:.3f} s")
    return 0


def cmd_paths(cfg: RunConfig, at, out_path: Optional[str]) -> int:
    """Paths per ``--at`` receiver as JSON lines, or the whole receiver grid as CSV."""
    scene, task = _single_scene(cfg)
    out = open(out_path, "w", newline="") if out_path else sys.stdout
    try:
        if not at:
            grid = simulate(scene, build_grid(scene, cfg.spacing), task, workers=cfg.workers)
            grid.to_csv(out)
            return 0
        for x, y in at:
            paths = find_paths(scene, scene.source, (x, y), task)
            rows = []
            for p in paths:
                att = path_attenuation(p, task)
                rows.append({"kind": p.kind.value, "length_m": p.length_m,
                             "reflection_order": p.reflection_order, "detour_delta_m": p.detour_delta_m,
                             "vertices": [list(v) for v in p.vertices], "a_div_db": att.a_div_db,
                             "a_atm_db": att.a_atm_db, "a_dif_db": att.a_dif_db, "level_db": att.level_db})
            out.write(json.dumps({"receiver": [x, y], "paths": rows}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _truth_for(root: Path, rec: SampleRecord):
    gray = read_gray(root / rec.soundmap_path)
    mask = read_gray(root / rec.osm_path) == 0
    scene = scene_from_local(json.loads((root / "scenes" / f"scene_{rec.sample_id}.json").read_text()))
    return SoundMap.from_gray(gray, mask), scene


def _find_prediction(pred_dir: Path, rec: SampleRecord) -> Optional[Path]:
    for name in (f"{rec.sample_id}.png", Path(rec.soundmap_path).name):
        if (pred_dir / name).exists():
            return pred_dir / name
    return None


def cmd_evaluate(pred_dir, manifests, out_dir) -> int:
    pred_dir, out_dir = Path(pred_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, missing_all, status = {}, [], 0
    for manifest in manifests:
        manifest = Path(manifest)
        root = manifest.parent
        label = root.name
        reports = []
        for rec in read_manifest(manifest):
            label = rec.extra.get("task", label)
            pred_path = _find_prediction(pred_dir, rec)
            if pred_path is None:
                missing_all.append(f"{label}:{rec.sample_id}")
                continue
            truth, scene = _truth_for(root, rec)
            pred = read_gray(pred_path)
            if pred.shape != truth.gray.shape:
                raise ValidationError(f"{pred_path}: resolution {pred.shape} differs from truth "
                                      f"{truth.gray.shape}")
            rep = evaluate(pred, truth, scene)
            reports.append(rep)
            (out_dir / f"{label}_{rec.sample_id}.json").write_text(rep.to_json())
        rows[label] = aggregate(reports)
    table = format_table(rows)
    (out_dir / "aggregate.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    (out_dir / "table.txt").write_text(table)
    print(table, end="")
    if missing_all:
        print(f"missing predictions ({len(missing_all)}): {', '.join(missing_all)}", file=sys.stderr)
        status = 1
    return status


HEAT = np.array([[0, 0, 0], [128, 0, 0], [255, 64, 0], [255, 200, 0], [255, 255, 255]], dtype=float)


def heat(values: np.ndarray) -> np.ndarray:
    """0-255 magnitudes to an RGB black-red-yellow-white ramp."""
    t = np.clip(values / 255.0, 0.0, 1.0) * (len(HEAT) - 1)
    lo = np.floor(t).astype(int).clip(0, len(HEAT) - 2)
    f = (t - lo)[..., None]
    return np.round(HEAT[lo] * (1 - f) + HEAT[lo + 1] * f).astype(np.uint8)


def cmd_render(manifest, sample_id: int, pred: Optional[str], out) -> int:
    manifest = Path(manifest)
    recs = {r.sample_id: r for r in read_manifest(manifest)}
    if sample_id not in recs:
        raise ValidationError(f"sample {sample_id} not in {manifest}")
    rec = recs[sample_id]
    root = manifest.parent
    osm = read_gray(root / rec.osm_path)
    truth = read_gray(root / rec.soundmap_path)
    gray3 = lambda g: np.repeat(g[..., None], 3, axis=2)  # noqa: E731
    panels = [gray3(osm), gray3(truth)]
    if pred is not None:
        p = read_gray(pred)
        if p.shape != truth.shape:
            raise ValidationError(f"{pred}: resolution {p.shape} differs from truth {truth.shape}")
        diff = np.abs(p.astype(int) - truth.astype(int))
        panels += [gray3(p), heat(diff)]
    else:
        scene_path = root / "scenes" / f"scene_{sample_id}.json"
        scene = scene_from_local(json.loads(scene_path.read_text()))
        vis = visibility_mask(scene, scene.source, truth.shape[0])
        vis_img = np.where(vis == LOS, 255, np.where(vis == BUILDING, 0, 96)).astype(np.uint8)
        panels.append(gray3(vis_img))
    composite = np.concatenate(panels, axis=1)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(composite, mode="RGB").save(out, format="PNG")
    print(f"{out}: {len(panels)} panels, {composite.shape[1]}x{composite.shape[0]}")
    return 0


def cmd_split(manifest, seed: int) -> int:
    manifest = Path(manifest)
    ids = [r.sample_id for r in read_manifest(manifest)]
    split = make_split(ids, seed)
    (manifest.parent / "splits.json").write_text(json.dumps({"seed": seed, **split.to_dict()}, indent=1) + "\n")
    print("train/validation/test = %d/%d/%d" % split.sizes())
    return 0


# --- argument handling ------------------------------------------------------

def _common(p: argparse.ArgumentParser, *, task_all=False):
    p.add_argument("--config", help="TOML file with [run] and [scenario] tables")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--task", choices=TASKS + (("all",) if task_all else ()))
    p.add_argument("--resolution", type=int, choices=RESOLUTIONS)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--input", help="GeoJSON file/directory or candidate CSV (lat,lon,city)")
    p.add_argument("--out")
    p.add_argument("--reflection-order", type=int, dest="reflection_order")
    p.add_argument("--endpoint")
    p.add_argument("--offline", action="store_true", default=None)
    p.add_argument("--no-select", action="store_false", dest="select", default=None,
                   help="skip the location selection heuristic")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="urbanecho", description="Urban sound propagation benchmark toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("fetch", help="download and select candidate locations"))
    _common(sub.add_parser("generate", help="build a dataset"), task_all=True)
    p = sub.add_parser("simulate", help="simulate one scene to a sound map")
    _common(p)
    p.add_argument("--receivers-csv")
    p = sub.add_parser("paths", help="per-receiver propagation path dump")
    _common(p)
    p.add_argument("--at", nargs=2, type=float, action="append", metavar=("X", "Y"))
    p = sub.add_parser("render", help="side-by-side composite of one sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--id", type=int, required=True, dest="sample_id")
    p.add_argument("--pred")
    p.add_argument("--out", required=True)
    p = sub.add_parser("evaluate", help="score prediction images against a dataset")
    p.add_argument("--pred", required=True, help="directory of <id>.png predictions")
    p.add_argument("--manifest", required=True, action="append")
    p.add_argument("--out", default="evaluation")
    p = sub.add_parser("split", help="(re)write splits.json for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    return ap


RUN_KEYS = ("task", "resolution", "workers", "seed", "input", "out", "reflection_order",
            "endpoint", "offline", "select", "spacing")


def run_config(args) -> tuple[RunConfig, bool]:
    """Defaults < ``--config`` file < explicit flags; also says whether task is "all"."""
    values: dict = {}
    settings = ScenarioSettings()
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                doc = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        run = doc.get("run", {})
        unknown = set(run) - set(RUN_KEYS)
        if unknown:
            raise UsageError(f"unknown [run] keys: {sorted(unknown)}")
        values.update(run)
        try:
            settings = ScenarioSettings.from_mapping(doc.get("scenario", {}))
        except ValidationError as exc:
            raise UsageError(str(exc)) from exc
    for key in RUN_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    task = values.pop("task", "baseline")
    return RunConfig(task="baseline" if task == "all" else task, settings=settings, **values), task == "all"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "render":
            return cmd_render(args.manifest, args.sample_id, args.pred, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(args.pred, args.manifest, args.out)
        if args.command == "split":
            return cmd_split(args.manifest, args.seed)
        cfg, all_tasks = run_config(args)
        if all_tasks and args.command != "generate":
            raise UsageError("--task all is only valid for generate")
        if args.command == "generate":
            return cmd_generate(cfg, TASKS if all_tasks else (cfg.task,))
        if args.command == "fetch":
            return cmd_fetch(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.receivers_csv)
        if args.command == "paths":
            return cmd_paths(cfg, args.at, args.out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"urbanecho: error: {exc}", file=sys.stderr)
        return 2
    except (UrbanEchoError, OSError, ValueError) as exc:
        print(f"urbanecho: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
