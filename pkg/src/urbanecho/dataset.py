"""On-disk dataset layout: image pairs, CSV manifest and train/validation/test split.

Layout under ``<out>/<task>/``::

    osm/osm_<id>.png                 building mask (0 building, 255 open)
    soundmaps/<task>_<id>_LAEQ.png   gray sound map (+ .json sidecar)
    scenes/scene_<id>.json           building polygons used for LoS/NLoS
    manifest.csv                     one row per sample, paths relative to it
    splits.json
"""

from __future__ import annotations

import csv
import io
import json
import logging
import threading
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ManifestError, ParseError, ValidationError
from .raster import _atomic_write, png_bytes

MANIFEST_COLUMNS = ("sample_id", "city", "lat", "long", "osm_path", "soundmap_path",
                    "db", "temperature", "humidity")
SPLIT_PERCENT = (80, 15, 5)
SPLIT_NAMES = ("train", "validation", "test")

log = logging.getLogger(__name__)


@dataclass
class SampleRecord:
    sample_id: int
    city: str
    lat: float
    lon: float
    osm_path: str
    soundmap_path: str
    db: float
    temperature: Optional[float] = None
    humidity: Optional[float] = None
    extra: dict = field(default_factory=dict)  # further columns, kept as text

    def row(self) -> dict:
        def num(v):
            return "" if v is None else repr(float(v))

        out = {
            "sample_id": str(int(self.sample_id)), "city": self.city,
            "lat": num(self.lat), "long": num(self.lon),
            "osm_path": self.osm_path, "soundmap_path": self.soundmap_path,
            "db": num(self.db), "temperature": num(self.temperature), "humidity": num(self.humidity),
        }
        out.update({k: str(v) for k, v in self.extra.items()})
        return out


def osm_name(sample_id: int) -> str:
    return f"osm_{int(sample_id)}.png"


def soundmap_name(task: str, sample_id: int) -> str:
    return f"{task}_{int(sample_id)}_LAEQ.png"


def manifest_text(records) -> str:
    records = list(records)
    extra_cols: list[str] = []
    for r in records:
        extra_cols.extend(k for k in r.extra if k not in extra_cols and k not in MANIFEST_COLUMNS)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=[*MANIFEST_COLUMNS, *extra_cols], lineterminator="\n",
                       restval="")
    w.writeheader()
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def write_manifest(path, records):
    _atomic_write(path, manifest_text(records).encode("utf-8"))


def read_manifest(path) -> list[SampleRecord]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"{path}: missing column(s) {', '.join(missing)}")
        extra_cols = [c for c in header if c not in MANIFEST_COLUMNS]
        out = []
        for row in reader:
            line = reader.line_num
            if None in row or any(v is None for v in row.values()):
                raise ManifestError(f"{path}:{line}: wrong number of fields")

            def parse(col, conv, optional=False):
                text = row[col]
                if optional and text == "":
                    return None
                try:
                    return conv(text)
                except ValueError:
                    raise ManifestError(f"{path}:{line}: bad value {text!r} in column {col}") from None

            out.append(SampleRecord(
                sample_id=parse("sample_id", int),
                city=row["city"],
                lat=parse("lat", float),
                lon=parse("long", float),
                osm_path=row["osm_path"],
                soundmap_path=row["soundmap_path"],
                db=parse("db", float),
                temperature=parse("temperature", float, optional=True),
                humidity=parse("humidity", float, optional=True),
                extra={c: row[c] for c in extra_cols},
            ))
    return out


# --- splits -----------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    train: tuple
    validation: tuple
    test: tuple

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def to_dict(self) -> dict:
        return {name: list(getattr(self, name)) for name in SPLIT_NAMES}


def split_sizes(n: int) -> list[int]:
    """80/15/5 by largest remainder; ties go to the smaller partition.

    For n >= 3 every partition gets at least one id (taken from train).
    """
    quotas = [n * p for p in SPLIT_PERCENT]  # in hundredths
    sizes = [q // 100 for q in quotas]
    left = n - sum(sizes)
    # larger remainder first; on a tie the later (smaller) partition wins
    order = sorted(range(3), key=lambda i: (-(quotas[i] % 100), -i))
    for i in order[:left]:
        sizes[i] += 1
    if n >= 3:
        for i in (1, 2):
            if sizes[i] == 0:
                sizes[i] += 1
                sizes[0] -= 1
    return sizes


def make_split(ids, seed: int) -> SplitAssignment:
    ids = [int(i) for i in ids]
    if not ids:
        raise ValidationError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate sample ids")
    # sorting first makes the split independent of input order
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [sorted(ids)[k] for k in perm]
    n_train, n_val, _ = split_sizes(len(ids))
    return SplitAssignment(
        tuple(sorted(shuffled[:n_train])),
        tuple(sorted(shuffled[n_train:n_train + n_val])),
        tuple(sorted(shuffled[n_train + n_val:])),
    )


# --- writer -----------------------------------------------------------------

class DatasetWriter:
    """Writes samples of one task; safe to call from several threads.

    Image files are written atomically before the manifest row, and the
    manifest itself is replaced atomically, so a crash at any point leaves a
    consistent manifest and rewriting a sample converges.
    """

    def __init__(self, out_dir, task: str):
        self.task = str(task)
        self.root = Path(out_dir) / self.task
        self.manifest_path = self.root / "manifest.csv"
        self._lock = threading.Lock()
        for sub in ("osm", "soundmaps", "scenes"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.records: dict[int, SampleRecord] = {}
        if self.manifest_path.exists():
            for rec in read_manifest(self.manifest_path):
                if (self.root / rec.osm_path).exists() and (self.root / rec.soundmap_path).exists():
                    self.records[rec.sample_id] = rec
                else:
                    log.warning("sample %d: files missing, will be rewritten", rec.sample_id)

    def has(self, sample_id: int) -> bool:
        return int(sample_id) in self.records

    def write_sample(self, record: SampleRecord, osm_pixels, sound_map, scene_json: Optional[dict] = None,
                     sidecar: Optional[dict] = None) -> SampleRecord:
        """Write the image pair for ``record`` and add its manifest row.

        ``osm_pixels`` and ``sound_map`` are uint8 arrays (or objects with a
        ``pixels``/``gray`` attribute). File paths in ``record`` are filled in.
        """
        sid = int(record.sample_id)
        with self._lock:
            if sid in self.records:
                raise ValidationError(f"duplicate sample id {sid}")
        osm_rel = f"osm/{osm_name(sid)}"
        sm_rel = f"soundmaps/{soundmap_name(self.task, sid)}"
        osm = getattr(osm_pixels, "pixels", osm_pixels)
        gray = getattr(sound_map, "gray", sound_map)
        try:
            _atomic_write(self.root / osm_rel, png_bytes(osm))
            _atomic_write(self.root / sm_rel, png_bytes(gray))
            if sidecar is not None:
                _atomic_write((self.root / sm_rel).with_suffix(".json"),
                              (json.dumps(sidecar, indent=2, sort_keys=True) + "\n").encode())
            if scene_json is not None:
                _atomic_write(self.root / "scenes" / f"scene_{sid}.json",
                              (json.dumps(scene_json, sort_keys=True) + "\n").encode())
        except OSError as exc:
            raise OSError(exc.errno, f"writing sample {sid}: {exc.strerror}", exc.filename) from exc
        rec = SampleRecord(**{f.name: getattr(record, f.name) for f in fields(SampleRecord)})
        rec.sample_id, rec.osm_path, rec.soundmap_path = sid, osm_rel, sm_rel
        with self._lock:
            if sid in self.records:
                raise ValidationError(f"duplicate sample id {sid}")
            self.records[sid] = rec
            write_manifest(self.manifest_path, self.records.values())
        return rec

    def finalize(self, split_seed: int = 0) -> SplitAssignment | None:
        """Sort the manifest by sample id and write ``splits.json``."""
        with self._lock:
            ordered = [self.records[k] for k in sorted(self.records)]
            write_manifest(self.manifest_path, ordered)
            if not ordered:
                return None
            split = make_split([r.sample_id for r in ordered], split_seed)
            doc = {"seed": split_seed, **split.to_dict()}
            _atomic_write(self.root / "splits.json", (json.dumps(doc, indent=1) + "\n").encode())
            return split


def load_splits(path) -> SplitAssignment:
    try:
        doc = json.loads(Path(path).read_text())
        return SplitAssignment(*(tuple(doc[k]) for k in SPLIT_NAMES))
    except (json.JSONDecodeError, KeyError) as exc:
        raise ParseError(f"{path}: invalid splits file: {exc}") from exc
