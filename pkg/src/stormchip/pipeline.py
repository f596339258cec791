"""From raster strips and building coordinates to a split chip dataset.

A strip is one large geo-referenced raster: an ordinary image file plus
a sidecar text file holding the six affine coefficients that map pixel
(col, row) to (lon, lat).  Building coordinates become fixed-size chips
cropped around their pixel positions; duplicate captures of the same
coordinate are reduced to one usable chip; quality heuristics (or an
operator exclusion file) drop bad chips; and the survivors are dealt
into train / val / balanced-test / unbalanced-test splits.

Everything lands in a manifest CSV with these exact columns:

    id,lon,lat,label,chip_path,window_px,source,capture_epoch,
    black_fraction,cloud_score,excluded,exclude_reason,split

chip_path is relative to the manifest's directory.  Chips are stored as
8-bit RGB PNG.
"""

import csv
import os
import re
from dataclasses import dataclass, replace

import numpy as np

LABELS = ("damaged", "undamaged")
SPLIT_VALUES = ("train", "val", "test_balanced", "test_unbalanced", "test_both", "none")

MANIFEST_COLUMNS = ["id", "lon", "lat", "label", "chip_path", "window_px", "source",
                    "capture_epoch", "black_fraction", "cloud_score", "excluded",
                    "exclude_reason", "split"]

# A chip whose black fraction reaches this is treated as totally black.
TOTALLY_BLACK = 0.999


class DataError(Exception):
    """Unreadable or inconsistent pipeline input."""


class SplitSizingError(DataError):
    """A split request exceeds the available samples of some class."""


class WindowError(Exception):
    """A crop window cannot be taken; .reason says why."""

    def __init__(self, reason, message):
        super().__init__(message)
        self.reason = reason


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel->geo map: lon = a + b*col + c*row, lat = d + e*col + f*row."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        det = self.b * self.f - self.c * self.e
        if not np.isfinite(det) or det == 0.0:
            raise DataError("geo transform has a singular linear part")


def pixel_to_lonlat(gt, col, row):
    return gt.a + gt.b * col + gt.c * row, gt.d + gt.e * col + gt.f * row


def lonlat_to_pixel(gt, lon, lat):
    """Exact inverse of the affine map, as fractional (col, row)."""
    det = gt.b * gt.f - gt.c * gt.e
    dx, dy = lon - gt.a, lat - gt.d
    col = (gt.f * dx - gt.c * dy) / det
    row = (gt.b * dy - gt.e * dx) / det
    return col, row


@dataclass
class BuildingRecord:
    id: str
    lon: float
    lat: float
    label: str = ""
    source: str = ""


@dataclass
class ChipRecord:
    """One manifest row; field order matches MANIFEST_COLUMNS."""

    id: str
    lon: float
    lat: float
    label: str
    chip_path: str = ""
    window_px: int = 0
    source: str = ""
    capture_epoch: int = 0
    black_fraction: float = 0.0
    cloud_score: float = 0.0
    excluded: bool = False
    exclude_reason: str = ""
    split: str = "none"


@dataclass
class CandidateChip:
    """A successfully cropped chip from one strip, before dedup."""

    strip_id: str
    capture_epoch: int
    image: np.ndarray
    black_fraction: float
    cloud_score: float


@dataclass
class QualityThresholds:
    black_pixel: float = 0.02      # per-pixel: all channels below this count as black
    cloud_luma: float = 0.85       # per-pixel: luma above this is bright
    cloud_sat: float = 0.08        # per-pixel: channel spread below this is gray/white
    max_black_fraction: float = 0.05
    max_cloud_score: float = 0.30


@dataclass
class SplitSpec:
    """Requested split sizes; the unbalanced pair expresses the pos:neg ratio."""

    train_per_class: int = 5000
    val_per_class: int = 1000
    test_balanced_per_class: int = 1000
    test_unbalanced_pos: int = 8000
    test_unbalanced_neg: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("train_per_class", "val_per_class", "test_balanced_per_class",
                     "test_unbalanced_pos", "test_unbalanced_neg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def read_sidecar(path):
    """Six decimal coefficients, one per line (blank lines ignored)."""
    try:
        with open(path) as fh:
            values = [float(line.strip()) for line in fh if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read sidecar {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed sidecar {path}: {exc}") from exc
    if len(values) != 6:
        raise DataError(f"malformed sidecar {path}: expected 6 coefficients, got {len(values)}")
    return GeoTransform(*values)


def load_raster(image_path, sidecar_path):
    """Read a strip as (C x H x W float32 in [0, 1], GeoTransform)."""
    from PIL import Image

    gt = read_sidecar(sidecar_path)
    try:
        with Image.open(image_path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read raster {image_path}: {exc}") from exc
    raster = rgb.transpose(2, 0, 1).astype(np.float32) / 255.0
    return raster, gt


def crop_window(raster, gt, record, window_px):
    """Crop a window_px square centered at the building's pixel position.

    The fractional pixel center rounds to the nearest integer.  A center
    outside the raster raises WindowError("center_out_of_bounds"); a
    window that would cross the strip edge raises
    WindowError("edge_overflow").
    """
    if window_px < 1:
        raise ValueError("window_px must be >= 1")
    col, row = lonlat_to_pixel(gt, record.lon, record.lat)
    ci, ri = int(np.rint(col)), int(np.rint(row))
    _, h, w = raster.shape
    if not (0 <= ri < h and 0 <= ci < w):
        raise WindowError("center_out_of_bounds",
                          f"{record.id}: center pixel ({ci}, {ri}) outside {w}x{h} strip")
    half = window_px // 2
    r0, c0 = ri - half, ci - half
    r1, c1 = r0 + window_px, c0 + window_px
    if r0 < 0 or c0 < 0 or r1 > h or c1 > w:
        raise WindowError("edge_overflow",
                          f"{record.id}: {window_px}px window at ({ci}, {ri}) crosses the strip edge")
    return raster[:, r0:r1, c0:c1].copy()


def quality_metrics(chip, black_pixel=0.02, cloud_luma=0.85, cloud_sat=0.08):
    """(black_fraction, cloud_score) of a chip in [0, 1].

    A pixel is black when every channel sits below black_pixel.  A pixel
    is cloud-like when its luma exceeds cloud_luma while the channel
    spread stays below cloud_sat (bright and unsaturated).
    """
    chip = np.asarray(chip)
    black = np.all(chip < black_pixel, axis=0)
    if chip.shape[0] == 3:
        luma = 0.299 * chip[0] + 0.587 * chip[1] + 0.114 * chip[2]
    else:
        luma = chip.mean(axis=0)
    spread = chip.max(axis=0) - chip.min(axis=0)
    cloud = (luma > cloud_luma) & (spread < cloud_sat)
    return float(black.mean()), float(cloud.mean())


def first_usable(candidates):
    """First candidate (strip-scan order) that is not totally black."""
    for cand in candidates:
        if cand.black_fraction < TOTALLY_BLACK:
            return cand
    return None


def dedup_and_filter(records, candidates_by_id, thresholds=None, operator_excluded=None):
    """Reduce per-coordinate candidates to at most one usable chip each.

    Per building, the first not-totally-black candidate in strip-scan
    order survives.  If no exclusion file is given, the black/cloud
    heuristics then exclude chips above the thresholds; an operator
    exclusion file replaces that heuristic judgement entirely (listed
    ids excluded, everything else kept).  Returns ChipRecords ordered by
    building id; chip_path is set to the conventional chips/<id>.png for
    every chip that survived dedup.
    """
    thresholds = thresholds or QualityThresholds()
    out = []
    for rec in sorted(records, key=lambda r: r.id):
        cands = candidates_by_id.get(rec.id, [])
        chosen = first_usable(cands)
        row = ChipRecord(id=rec.id, lon=rec.lon, lat=rec.lat, label=rec.label)
        if chosen is None:
            row.excluded = True
            row.exclude_reason = "no_usable_image"
            out.append(row)
            continue
        row.chip_path = f"chips/{rec.id}.png"
        row.window_px = chosen.image.shape[-1]
        row.source = chosen.strip_id
        row.capture_epoch = chosen.capture_epoch
        row.black_fraction = chosen.black_fraction
        row.cloud_score = chosen.cloud_score
        if operator_excluded is not None:
            if rec.id in operator_excluded:
                row.excluded = True
                row.exclude_reason = "operator"
        elif chosen.black_fraction > thresholds.max_black_fraction:
            row.excluded = True
            row.exclude_reason = "black"
        elif chosen.cloud_score > thresholds.max_cloud_score:
            row.excluded = True
            row.exclude_reason = "cloud"
        out.append(row)
    return out


def _strip_epoch(strip_id):
    # A trailing _<digits> token in the strip id is its capture epoch.
    m = re.search(r"_(\d+)$", strip_id)
    return int(m.group(1)) if m else 0


def find_strips(strips_dir):
    """(strip_id, image_path, sidecar_path, epoch) for every raster+sidecar pair.

    Any non-.gt file with a matching <stem>.gt sidecar counts as a strip;
    a raster missing its sidecar is an error.  Strips scan in ascending
    (capture_epoch, strip_id) order.
    """
    strips = []
    try:
        names = sorted(os.listdir(strips_dir))
    except OSError as exc:
        raise DataError(f"cannot list strips dir {strips_dir}: {exc}") from exc
    for name in names:
        stem, ext = os.path.splitext(name)
        if ext == ".gt" or name.startswith("."):
            continue
        image_path = os.path.join(strips_dir, name)
        if not os.path.isfile(image_path):
            continue
        sidecar = os.path.join(strips_dir, stem + ".gt")
        if not os.path.isfile(sidecar):
            raise DataError(f"strip {name} has no sidecar {stem}.gt")
        strips.append((stem, image_path, sidecar, _strip_epoch(stem)))
    strips.sort(key=lambda s: (s[3], s[0]))
    return strips


def build_manifest(strips_dir, buildings, window_px, out_dir, thresholds=None,
                   operator_excluded=None):
    """Crop, deduplicate, filter, and write chips + manifest under out_dir.

    Strips load one at a time in scan order; every building whose window
    fits a strip yields a candidate.  Buildings with no croppable window
    anywhere are excluded (edge_overflow wins over out_of_bounds wins
    over no_coverage as the recorded reason).  Chips that survive dedup
    are written to out_dir/chips/<id>.png whether or not a quality flag
    excluded them, so an operator can review the flags.  Returns the
    ChipRecord list; the manifest lands at out_dir/manifest.csv.
    """
    thresholds = thresholds or QualityThresholds()
    ids = [b.id for b in buildings]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate building ids in input")
    for b in buildings:
        if b.label not in LABELS:
            raise DataError(f"building {b.id}: label must be one of {LABELS}, got {b.label!r}")

    candidates = {b.id: [] for b in buildings}
    geo_failures = {}
    for strip_id, image_path, sidecar_path, epoch in find_strips(strips_dir):
        raster, gt = load_raster(image_path, sidecar_path)
        for b in buildings:
            try:
                chip = crop_window(raster, gt, b, window_px)
            except WindowError as exc:
                prior = geo_failures.get(b.id)
                if exc.reason == "edge_overflow" or prior is None:
                    geo_failures[b.id] = exc.reason
                continue
            bf, cs = quality_metrics(chip, thresholds.black_pixel,
                                     thresholds.cloud_luma, thresholds.cloud_sat)
            candidates[b.id].append(CandidateChip(strip_id, epoch, chip, bf, cs))

    records = dedup_and_filter(buildings, candidates, thresholds, operator_excluded)
    for row in records:
        if row.excluded and not row.chip_path:
            if not candidates[row.id] and row.id in geo_failures:
                row.exclude_reason = geo_failures[row.id]
            elif not candidates[row.id]:
                row.exclude_reason = "no_coverage"

    os.makedirs(os.path.join(out_dir, "chips"), exist_ok=True)
    chosen = {row.id: first_usable(candidates[row.id]) for row in records if row.chip_path}
    for row in records:
        if row.chip_path:
            write_chip_png(chosen[row.id].image, os.path.join(out_dir, row.chip_path))
    write_manifest(records, os.path.join(out_dir, "manifest.csv"))
    return records


def write_chip_png(chip, path):
    """Store a C x H x W float chip in [0, 1] as 8-bit RGB PNG."""
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(chip) * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def load_chip_png(path):
    """Read a chip PNG back as C x H x W float32 in [0, 1]."""
    from PIL import Image

    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read chip {path}: {exc}") from exc
    return rgb.transpose(2, 0, 1).astype(np.float32) / 255.0


def make_splits(records, spec):
    """Assign split labels; returns new records, inputs untouched.

    Non-excluded chips of each class are shuffled by the split seed and
    dealt into train, val, and balanced test.  The unbalanced test view
    draws from the remaining pool first and, only when that pool runs
    dry, reuses balanced-test chips (marked test_both); the two test
    views may overlap, but train, val, and the test pool stay disjoint.
    Raises SplitSizingError naming the class that falls short.
    """
    records = [replace(r) for r in records]
    by_id = {}
    for label, tag in (("damaged", 0), ("undamaged", 1)):
        roster = sorted(r.id for r in records if not r.excluded and r.label == label)
        rng = np.random.default_rng([spec.seed, tag])
        order = [roster[i] for i in rng.permutation(len(roster))]
        base_need = spec.train_per_class + spec.val_per_class + spec.test_balanced_per_class
        if len(order) < base_need:
            raise SplitSizingError(
                f"class {label}: need {base_need} chips for train/val/balanced test, "
                f"have {len(order)}")
        train = order[:spec.train_per_class]
        val = order[spec.train_per_class:spec.train_per_class + spec.val_per_class]
        balanced = order[spec.train_per_class + spec.val_per_class:base_need]
        pool = order[base_need:]
        want = spec.test_unbalanced_pos if label == "damaged" else spec.test_unbalanced_neg
        unbalanced = pool[:want]
        reuse = want - len(unbalanced)
        if reuse > 0:
            if reuse > len(balanced):
                raise SplitSizingError(
                    f"class {label}: unbalanced test needs {want} chips, only "
                    f"{len(pool) + len(balanced)} available outside train/val")
            unbalanced = unbalanced + balanced[:reuse]
        both = set(balanced) & set(unbalanced)
        for cid in train:
            by_id[cid] = "train"
        for cid in val:
            by_id[cid] = "val"
        for cid in balanced:
            by_id[cid] = "test_both" if cid in both else "test_balanced"
        for cid in unbalanced:
            if cid not in both:
                by_id[cid] = "test_unbalanced"
    for r in records:
        r.split = by_id.get(r.id, "none") if not r.excluded else "none"
    return records


def rows_for_split(records, name):
    """Manifest rows belonging to a split; test views include shared chips."""
    if name in ("test_balanced", "test_unbalanced"):
        wanted = {name, "test_both"}
    else:
        wanted = {name}
    return [r for r in records if r.split in wanted]


def write_manifest(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([r.id, f"{r.lon:.9f}", f"{r.lat:.9f}", r.label, r.chip_path,
                             r.window_px, r.source, r.capture_epoch,
                             f"{r.black_fraction:.6f}", f"{r.cloud_score:.6f}",
                             "true" if r.excluded else "false", r.exclude_reason, r.split])


def read_manifest(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MANIFEST_COLUMNS:
                raise DataError(f"manifest {path}: unexpected header {header}")
            records = []
            for row in reader:
                records.append(ChipRecord(
                    id=row[0], lon=float(row[1]), lat=float(row[2]), label=row[3],
                    chip_path=row[4], window_px=int(row[5]), source=row[6],
                    capture_epoch=int(row[7]), black_fraction=float(row[8]),
                    cloud_score=float(row[9]), excluded=row[10] == "true",
                    exclude_reason=row[11], split=row[12]))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except (ValueError, IndexError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc
    return records


def read_exclusion_file(path):
    """One building id per line; # starts a comment."""
    ids = set()
    try:
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    ids.add(line)
    except OSError as exc:
        raise DataError(f"cannot read exclusion file {path}: {exc}") from exc
    return ids


def read_buildings_csv(path, require_label=True):
    """Building rows from a CSV with columns id,lon,lat[,label][,source]."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"id", "lon", "lat"} <= set(reader.fieldnames):
                raise DataError(f"buildings csv {path}: needs id,lon,lat columns")
            rows = []
            for row in reader:
                label = (row.get("label") or "").strip()
                if require_label and label not in LABELS:
                    raise DataError(f"buildings csv {path}: row {row.get('id')!r} needs a "
                                    f"label in {LABELS}")
                rows.append(BuildingRecord(id=row["id"].strip(), lon=float(row["lon"]),
                                           lat=float(row["lat"]), label=label,
                                           source=(row.get("source") or "").strip()))
    except OSError as exc:
        raise DataError(f"cannot read buildings csv {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed buildings csv {path}: {exc}") from exc
    if not rows:
        raise DataError(f"buildings csv {path}: no rows")
    return rows
