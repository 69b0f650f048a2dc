"""Dataset file formats and model-bundle persistence.

Binary dataset layout (all integers little-endian)::

    header   "CKNN" | u32 version=1 | u32 d_app | u32 d_mot | u64 record_count
    videos   u32 n_videos | u8 has_labels
             per video: u32 id_len | utf-8 id | u32 frame_count | [u8 * frame_count labels]
    records  per record: u32 video_idx | u32 frame_idx | u32 object_idx |
             f32 * 4 bbox (NaN when absent) | f32 * d_app | f32 * d_mot

The line-delimited text format carries the same content as JSON: a metadata
line followed by one object per record. See ``docs/formats.md`` for worked
hex examples and the bundle directory layout.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cleanse import FeatureBank, ScoreStats
from .core import DatasetManifest, Hyperparams, VideoInfo
from .exceptions import BundleError, InvalidInputError, ParseError
from .scorers import GmmModel, PseudoScorerConfig

MAGIC = b"CKNN"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")
TEXT_FORMAT = "cknn-jsonl"

BANK_MAGIC = b"CKNB"
GMM_MAGIC = b"CKNG"
BUNDLE_FORMAT = "cknn-bundle"
BUNDLE_TEXT = "bundle.txt"


def _record_dtype(d_app, d_mot):
    return np.dtype([
        ("video_idx", "<u4"),
        ("frame_idx", "<u4"),
        ("object_idx", "<u4"),
        ("bbox", "<f4", (4,)),
        ("app", "<f4", (d_app,)),
        ("mot", "<f4", (d_mot,)),
    ])


# --------------------------------------------------------------------------- datasets


def write_dataset(manifest: DatasetManifest, path, fmt: str | None = None) -> None:
    """Write ``manifest`` as binary (default) or ``jsonl`` text.

    The format is inferred from a ``.jsonl``/``.ndjson`` suffix when ``fmt`` is
    None. Binary files hold single-precision features.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix in (".jsonl", ".ndjson") else "binary"
    if fmt == "binary":
        path.write_bytes(dataset_to_bytes(manifest))
    elif fmt == "jsonl":
        path.write_text(dataset_to_text(manifest), encoding="utf-8")
    else:
        raise InvalidInputError(f"unknown dataset format {fmt!r}")


def dataset_to_bytes(manifest: DatasetManifest) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, manifest.d_app, manifest.d_mot, manifest.n_objects)]
    labelled = manifest.has_labels
    parts.append(struct.pack("<IB", len(manifest.videos), int(labelled)))
    for v in manifest.videos:
        vid = v.video_id.encode("utf-8")
        parts.append(struct.pack("<I", len(vid)) + vid + struct.pack("<I", v.frame_count))
        if labelled:
            parts.append(np.asarray(v.labels, dtype=np.uint8).tobytes())
    rec = np.zeros(manifest.n_objects, dtype=_record_dtype(manifest.d_app, manifest.d_mot))
    rec["video_idx"] = manifest.video_idx
    rec["frame_idx"] = manifest.frame_idx
    rec["object_idx"] = manifest.object_idx
    rec["bbox"] = manifest.bbox
    rec["app"] = manifest.app
    rec["mot"] = manifest.mot
    parts.append(rec.tobytes())
    return b"".join(parts)


def dataset_to_text(manifest: DatasetManifest) -> str:
    meta = {
        "format": TEXT_FORMAT,
        "version": VERSION,
        "d_app": manifest.d_app,
        "d_mot": manifest.d_mot,
        "videos": [
            {"video_id": v.video_id, "frame_count": v.frame_count,
             "labels": None if v.labels is None else v.labels.tolist()}
            for v in manifest.videos
        ],
    }
    lines = [json.dumps(meta, separators=(",", ":"))]
    ids = manifest.video_ids
    for i in range(manifest.n_objects):
        box = manifest.bbox[i]
        lines.append(json.dumps({
            "video_id": ids[manifest.video_idx[i]],
            "frame_idx": int(manifest.frame_idx[i]),
            "object_idx": int(manifest.object_idx[i]),
            "bbox": None if np.isnan(box).all() else box.tolist(),
            "app": manifest.app[i].tolist(),
            "mot": manifest.mot[i].tolist(),
        }, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def read_dataset(path) -> DatasetManifest:
    """Load a binary or text dataset file, validating every record."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    if data[:4] == MAGIC:
        return dataset_from_bytes(data)
    if data.lstrip()[:1] == b"{":
        return dataset_from_text(data.decode("utf-8"))
    raise ParseError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r} or a JSON metadata line")


def dataset_from_bytes(data: bytes) -> DatasetManifest:
    if len(data) < _HEADER.size:
        raise ParseError("file shorter than the header")
    magic, version, d_app, d_mot, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ParseError(f"unsupported version {version}")
    if d_app < 1 or d_mot < 1:
        raise ParseError("feature dimensions must be positive")
    pos = _HEADER.size
    try:
        n_videos, labelled = struct.unpack_from("<IB", data, pos)
        pos += 5
        videos = []
        for _ in range(n_videos):
            (id_len,) = struct.unpack_from("<I", data, pos)
            vid = data[pos + 4:pos + 4 + id_len].decode("utf-8")
            pos += 4 + id_len
            (frames,) = struct.unpack_from("<I", data, pos)
            pos += 4
            labels = None
            if labelled:
                labels = np.frombuffer(data, dtype=np.uint8, count=frames, offset=pos)
                pos += frames
            videos.append(VideoInfo(vid, frames, labels))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"corrupt video table: {exc}") from None
    dtype = _record_dtype(d_app, d_mot)
    body = len(data) - pos
    if body != count * dtype.itemsize:
        present = body // dtype.itemsize
        raise ParseError(
            f"header declares {count} records of {dtype.itemsize} bytes but {body} bytes follow",
            offset=min(present, count),
        )
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return _build_manifest(
        d_app, d_mot, videos,
        rec["video_idx"].astype(np.int64), rec["frame_idx"].astype(np.int64), rec["object_idx"].astype(np.int64),
        rec["bbox"].astype(np.float64), rec["app"].astype(np.float64), rec["mot"].astype(np.float64),
    )


def dataset_from_text(text: str) -> DatasetManifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty text dataset")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad metadata line: {exc}") from None
    if meta.get("format") != TEXT_FORMAT:
        raise ParseError(f"bad format tag {meta.get('format')!r}, expected {TEXT_FORMAT!r}")
    if meta.get("version") != VERSION:
        raise ParseError(f"unsupported version {meta.get('version')!r}")
    try:
        d_app, d_mot = int(meta["d_app"]), int(meta["d_mot"])
        videos = [VideoInfo(str(v["video_id"]), int(v["frame_count"]), v.get("labels")) for v in meta["videos"]]
    except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
        raise ParseError(f"bad metadata line: {exc}") from None
    pos = {v.video_id: i for i, v in enumerate(videos)}
    n = len(lines) - 1
    vidx = np.empty(n, np.int64)
    fidx = np.empty(n, np.int64)
    oidx = np.empty(n, np.int64)
    bbox = np.full((n, 4), np.nan)
    app = np.empty((n, d_app))
    mot = np.empty((n, d_mot))
    for i, line in enumerate(lines[1:]):
        try:
            r = json.loads(line)
            vidx[i] = pos[r["video_id"]]
            fidx[i], oidx[i] = int(r["frame_idx"]), int(r["object_idx"])
            a = np.asarray(r["app"], dtype=np.float64)
            m = np.asarray(r["mot"], dtype=np.float64)
            if r.get("bbox") is not None:
                bbox[i] = np.asarray(r["bbox"], dtype=np.float64).reshape(4)
        except KeyError as exc:
            raise ParseError(f"missing or unknown field {exc}", offset=i) from None
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed record: {exc}", offset=i) from None
        if a.shape != (d_app,):
            raise ParseError(f"appearance feature has {a.size} values, file declares d_app={d_app}", offset=i)
        if m.shape != (d_mot,):
            raise ParseError(f"motion feature has {m.size} values, file declares d_mot={d_mot}", offset=i)
        app[i], mot[i] = a, m
    return _build_manifest(d_app, d_mot, videos, vidx, fidx, oidx, bbox, app, mot)


def _build_manifest(d_app, d_mot, videos, vidx, fidx, oidx, bbox, app, mot):
    n = vidx.shape[0]
    if n:
        bad = np.flatnonzero(vidx >= len(videos))
        if bad.size:
            raise ParseError(f"video index {vidx[bad[0]]} outside the video table", offset=int(bad[0]))
        frames = np.array([v.frame_count for v in videos], dtype=np.int64)
        bad = np.flatnonzero(fidx >= frames[vidx])
        if bad.size:
            raise ParseError(f"frame {fidx[bad[0]]} beyond the video's frame count", offset=int(bad[0]))
        finite = np.isfinite(app).all(axis=1) & np.isfinite(mot).all(axis=1)
        if not finite.all():
            raise ParseError("non-finite feature value", offset=int(np.argmin(finite)))
        keys = np.stack([vidx, fidx, oidx], axis=1)
        order = np.lexsort(keys.T[::-1])
        same = (keys[order][1:] == keys[order][:-1]).all(axis=1)
        if same.any():
            dup = int(max(order[np.argmax(same)], order[np.argmax(same) + 1]))
            raise ParseError("duplicate (video, frame, object) key", offset=dup)
    try:
        return DatasetManifest(d_app=d_app, d_mot=d_mot, videos=videos, video_idx=vidx, frame_idx=fidx,
                               object_idx=oidx, bbox=bbox, app=app, mot=mot)
    except InvalidInputError as exc:
        raise ParseError(str(exc)) from None


# --------------------------------------------------------------------------- bundles


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """Everything inference needs: both banks, frozen normalisation statistics and settings."""

    hyperparams: Hyperparams
    app_bank: FeatureBank
    mot_bank: FeatureBank
    app_stats: ScoreStats
    mot_stats: ScoreStats
    app_scorer: PseudoScorerConfig = field(default_factory=PseudoScorerConfig)
    mot_scorer: PseudoScorerConfig = field(default_factory=PseudoScorerConfig)
    compression: str = "random"
    gmm_models: dict = field(default_factory=dict)
    n_train_objects: int = 0
    removed_app: int = 0
    removed_mot: int = 0

    def __post_init__(self):
        if self.app_bank.modality != "app" or self.mot_bank.modality != "mot":
            raise BundleError("bank modalities are swapped or wrong")
        for mod, model in self.gmm_models.items():
            bank = self.bank(mod)
            if model.dim != bank.dim:
                raise BundleError(f"{mod} GMM has dimension {model.dim}, bank has {bank.dim}")
        object.__setattr__(self, "gmm_models", dict(self.gmm_models))

    @property
    def d_app(self) -> int:
        return self.app_bank.dim

    @property
    def d_mot(self) -> int:
        return self.mot_bank.dim

    def bank(self, modality: str) -> FeatureBank:
        return {"app": self.app_bank, "mot": self.mot_bank}[modality]

    def stats(self, modality: str) -> ScoreStats:
        return {"app": self.app_stats, "mot": self.mot_stats}[modality]

    @property
    def degenerate(self) -> dict:
        return {"app": self.app_stats.degenerate, "mot": self.mot_stats.degenerate}

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return all(getattr(self, f) == getattr(other, f) for f in (
            "hyperparams", "app_bank", "mot_bank", "app_stats", "mot_stats", "app_scorer", "mot_scorer",
            "compression", "gmm_models", "n_train_objects", "removed_app", "removed_mot"))


def _bank_to_bytes(bank: FeatureBank) -> bytes:
    names = sorted(set(bank.video_ids.tolist()))
    lookup = {n: i for i, n in enumerate(names)}
    parts = [BANK_MAGIC, struct.pack("<IIQI", VERSION, bank.dim, bank.size, len(names))]
    for n in names:
        b = n.encode("utf-8")
        parts.append(struct.pack("<I", len(b)) + b)
    prov = np.empty((bank.size, 3), dtype="<u4")
    prov[:, 0] = [lookup[v] for v in bank.video_ids.tolist()]
    prov[:, 1] = bank.frame_idx
    prov[:, 2] = bank.object_idx
    parts.append(prov.tobytes())
    parts.append(np.ascontiguousarray(bank.matrix, dtype="<f8").tobytes())
    return b"".join(parts)


def _bank_from_bytes(data: bytes, modality: str, metadata: dict) -> FeatureBank:
    if data[:4] != BANK_MAGIC:
        raise BundleError(f"{modality} bank: bad magic {data[:4]!r}")
    try:
        version, dim, size, n_names = struct.unpack_from("<IIQI", data, 4)
        if version != VERSION:
            raise BundleError(f"{modality} bank: unsupported version {version}")
        pos, names = 24, []
        for _ in range(n_names):
            (ln,) = struct.unpack_from("<I", data, pos)
            names.append(data[pos + 4:pos + 4 + ln].decode("utf-8"))
            pos += 4 + ln
        if len(data) != pos + size * 12 + size * dim * 8:
            raise BundleError(f"{modality} bank: blob length does not match {size} x {dim}")
        prov = np.frombuffer(data, dtype="<u4", count=size * 3, offset=pos).reshape(size, 3)
        pos += size * 12
        matrix = np.frombuffer(data, dtype="<f8", count=size * dim, offset=pos).reshape(size, dim)
    except (struct.error, UnicodeDecodeError) as exc:
        raise BundleError(f"{modality} bank: corrupt blob ({exc})") from None
    if size and prov[:, 0].max() >= n_names:
        raise BundleError(f"{modality} bank: provenance refers to an unknown video")
    return FeatureBank(modality, matrix, [names[i] for i in prov[:, 0]], prov[:, 1], prov[:, 2], metadata)


def _gmm_to_bytes(model: GmmModel) -> bytes:
    head = struct.pack("<4sIIIIII", GMM_MAGIC, VERSION, model.n_components, model.dim, model.n_iter,
                       model.reseeds, model.ll_history.size)
    body = np.concatenate([
        [model.log_likelihood], model.weights, model.means.ravel(), model.covariances.ravel(), model.ll_history,
    ]).astype("<f8")
    return head + body.tobytes()


def _gmm_from_bytes(data: bytes, modality: str) -> GmmModel:
    try:
        magic, version, n, d, n_iter, reseeds, n_hist = struct.unpack_from("<4sIIIIII", data, 0)
    except struct.error:
        raise BundleError(f"{modality} GMM blob is truncated") from None
    if magic != GMM_MAGIC or version != VERSION:
        raise BundleError(f"{modality} GMM blob: bad magic or version")
    total = 1 + n + n * d + n * d * d + n_hist
    if len(data) != 28 + 8 * total:
        raise BundleError(f"{modality} GMM blob: length mismatch")
    v = np.frombuffer(data, dtype="<f8", offset=28)
    o = 1
    weights = v[o:o + n]
    o += n
    means = v[o:o + n * d].reshape(n, d)
    o += n * d
    covs = v[o:o + n * d * d].reshape(n, d, d)
    o += n * d * d
    return GmmModel(weights, means, covs, n_iter=n_iter, log_likelihood=float(v[0]),
                    ll_history=v[o:o + n_hist], reseeds=reseeds)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def bundle_text(bundle: ModelBundle) -> str:
    hp = bundle.hyperparams
    items = [("format", BUNDLE_FORMAT), ("version", VERSION)]
    items += [(f"hyperparams.{k}", v) for k, v in hp.as_dict().items()]
    items += [
        ("d_app", bundle.d_app),
        ("d_mot", bundle.d_mot),
        ("scorer_app", bundle.app_scorer.describe()),
        ("scorer_mot", bundle.mot_scorer.describe()),
        ("compression", bundle.compression),
        ("n_train_objects", bundle.n_train_objects),
        ("removed_app", bundle.removed_app),
        ("removed_mot", bundle.removed_mot),
    ]
    for mod in ("app", "mot"):
        stats, bank = bundle.stats(mod), bundle.bank(mod)
        items += [
            (f"{mod}_mean", float(stats.mean)),
            (f"{mod}_std", float(stats.std)),
            (f"{mod}_degenerate", stats.degenerate),
            (f"{mod}_bank_size", bank.size),
            (f"{mod}_bank_file", f"{mod}_bank.bin"),
        ]
        items += [(f"{mod}_bank.meta.{k}", json.dumps(v)) for k, v in sorted(bank.metadata.items())]
        if mod in bundle.gmm_models:
            items.append((f"{mod}_gmm_file", f"gmm_{mod}.bin"))
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items)


def save_bundle(bundle: ModelBundle, path) -> None:
    """Write ``bundle`` as a directory of a key-value text manifest plus binary blobs."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for stale in ("gmm_app.bin", "gmm_mot.bin"):
        mod = stale[4:7]
        if mod not in bundle.gmm_models and (path / stale).exists():
            os.remove(path / stale)
    for mod in ("app", "mot"):
        (path / f"{mod}_bank.bin").write_bytes(_bank_to_bytes(bundle.bank(mod)))
        if mod in bundle.gmm_models:
            (path / f"gmm_{mod}.bin").write_bytes(_gmm_to_bytes(bundle.gmm_models[mod]))
    (path / BUNDLE_TEXT).write_text(bundle_text(bundle), encoding="utf-8")


def _parse_kv(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise BundleError(f"{BUNDLE_TEXT} line {n}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    try:
        kv = _parse_kv((path / BUNDLE_TEXT).read_text(encoding="utf-8"))
    except OSError as exc:
        raise BundleError(f"cannot read bundle manifest: {exc}") from None
    if kv.get("format") != BUNDLE_FORMAT or kv.get("version") != str(VERSION):
        raise BundleError(f"{path}: not a version-{VERSION} {BUNDLE_FORMAT} directory")
    try:
        hp = Hyperparams(
            k=int(kv["hyperparams.k"]),
            n_components=int(kv["hyperparams.n_components"]),
            tau=float(kv["hyperparams.tau"]),
            p=float(kv["hyperparams.p"]),
            smoothing_sigma=float(kv["hyperparams.smoothing_sigma"]),
            seed=int(kv["hyperparams.seed"]),
        )
        banks, stats, gmms = {}, {}, {}
        for mod in ("app", "mot"):
            meta = {k.split(".meta.", 1)[1]: json.loads(v) for k, v in kv.items()
                    if k.startswith(f"{mod}_bank.meta.")}
            blob = path / kv[f"{mod}_bank_file"]
            if not blob.exists():
                raise BundleError(f"missing blob {blob.name}")
            banks[mod] = _bank_from_bytes(blob.read_bytes(), mod, meta)
            if banks[mod].dim != int(kv[f"d_{mod}"]):
                raise BundleError(f"{mod} bank dimension {banks[mod].dim} != declared d_{mod}={kv[f'd_{mod}']}")
            if banks[mod].size != int(kv[f"{mod}_bank_size"]):
                raise BundleError(f"{mod} bank has {banks[mod].size} rows, manifest declares {kv[f'{mod}_bank_size']}")
            stats[mod] = ScoreStats(float(kv[f"{mod}_mean"]), float(kv[f"{mod}_std"]))
            if stats[mod].degenerate != (kv[f"{mod}_degenerate"] == "true"):
                raise BundleError(f"{mod}_degenerate flag disagrees with {mod}_std")
            if f"{mod}_gmm_file" in kv:
                gblob = path / kv[f"{mod}_gmm_file"]
                if not gblob.exists():
                    raise BundleError(f"missing blob {gblob.name}")
                gmms[mod] = _gmm_from_bytes(gblob.read_bytes(), mod)
        return ModelBundle(
            hyperparams=hp,
            app_bank=banks["app"],
            mot_bank=banks["mot"],
            app_stats=stats["app"],
            mot_stats=stats["mot"],
            app_scorer=PseudoScorerConfig.parse(kv["scorer_app"]),
            mot_scorer=PseudoScorerConfig.parse(kv["scorer_mot"]),
            compression=kv["compression"],
            gmm_models=gmms,
            n_train_objects=int(kv["n_train_objects"]),
            removed_app=int(kv["removed_app"]),
            removed_mot=int(kv["removed_mot"]),
        )
    except KeyError as exc:
        raise BundleError(f"bundle manifest lacks key {exc}") from None
    except (ValueError, InvalidInputError) as exc:
        raise BundleError(f"inconsistent bundle: {exc}") from None
