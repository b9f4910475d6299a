"""Dataset synthesis, manifest files and the in-memory pair dataset."""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blur import Burst, make_pair, random_scene, render_burst
from .imaging import ColorSpace, load_image, save_image
from .noise import IspParams, NoiseConfig, params_from_dict, random_isp

MANIFEST_VERSION = 1
N_FRAMES_RANGE = (7, 13)


class ManifestError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_scenes: int = 200
    canvas: tuple = (96, 96)
    n_frames: int = 11
    space: str = "srgb"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    clamp: bool = False          # keep noisy targets unclamped (zero-mean noise)
    nb_sigma: float = 0.0
    static_prob: float = 0.3
    max_shake: float = 1.5

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseConfig(**self.noise)
        self.canvas = tuple(int(v) for v in self.canvas)
        if not N_FRAMES_RANGE[0] <= self.n_frames <= N_FRAMES_RANGE[1]:
            raise ValueError(f"n_frames must lie in {N_FRAMES_RANGE}")
        ColorSpace(self.space)
        if self.noise.model == "sensor" and self.space != "linear":
            raise ValueError("sensor noise needs space='linear'")


def _sample_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def synth_pair(cfg, index):
    """Deterministic pair number ``index``: randomness depends only on (seed, index)."""
    rng = _sample_rng(cfg.seed, index)
    scene = random_scene(rng, cfg.canvas, cfg.n_frames, static_prob=cfg.static_prob,
                         max_shake=cfg.max_shake)
    burst = render_burst(scene, cfg.n_frames, rng)
    noise = cfg.noise.sample(rng)
    isp = random_isp(rng) if cfg.space == "linear" else None
    return make_pair(burst, noise, cfg.space, isp, rng, clamp=cfg.clamp, nb_sigma=cfg.nb_sigma)


def _pick_format(cfg, fmt):
    if fmt is None:
        fmt = "sirt" if (cfg.space == "linear" or not cfg.clamp) else "png"
    if fmt not in ("png", "sirt"):
        raise ValueError("fmt must be 'png' or 'sirt'")
    return fmt


def _write_pair(out_dir, index, pair, fmt, **fields):
    paths = {}
    for key, img in (("clean", pair.clean), ("blur", pair.blurry), ("noisy", pair.noisy)):
        rel = f"pairs/{index:06d}_{key}.{fmt}"
        save_image(img, out_dir / rel)
        paths[key] = rel
    rec = {"id": index, "paths": paths, "noise": pair.noise.to_dict(), "space": pair.space.value,
           **fields}
    if pair.isp is not None:
        rec["isp"] = pair.isp.to_dict()
    return rec


def _write_manifest(out_dir, cfg, records, **extra):
    manifest = {
        "version": MANIFEST_VERSION,
        "synth": {
            "n_scenes": cfg.n_scenes, "canvas": list(cfg.canvas), "n_frames": cfg.n_frames,
            "space": cfg.space, "seed": cfg.seed, "clamp": cfg.clamp, "nb_sigma": cfg.nb_sigma,
            "static_prob": cfg.static_prob, "max_shake": cfg.max_shake,
            "noise": {"model": cfg.noise.model, "sigma_range": list(cfg.noise.sigma_range),
                      "lambda_range": list(cfg.noise.lambda_range), "seed": cfg.noise.seed,
                      "literal_read_mean": cfg.noise.literal_read_mean},
        },
        **extra,
        "records": records,
    }
    manifest["hash"] = manifest_hash(manifest)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def synth_dataset(out_dir, cfg, fmt=None):
    """Write pairs/{id}_{clean,blur,noisy}.{png|sirt} plus manifest.json."""
    out_dir = Path(out_dir)
    fmt = _pick_format(cfg, fmt)
    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    records = [_write_pair(out_dir, i, synth_pair(cfg, i), fmt, seed=cfg.seed, n_frames=cfg.n_frames)
               for i in range(cfg.n_scenes)]
    return _write_manifest(out_dir, cfg, records)


def dataset_from_bursts(out_dir, burst_root, cfg, fmt=None):
    """Like :func:`synth_dataset`, but the sharp bursts come from disk.

    ``burst_root`` holds one subdirectory of ordered PNG frames per burst;
    noise (and ISP) draws are seeded from (cfg.seed, burst index).
    """
    out_dir, burst_root = Path(out_dir), Path(burst_root)
    dirs = sorted(d for d in burst_root.iterdir() if d.is_dir()) if burst_root.is_dir() else []
    if not dirs:
        raise ValueError(f"{burst_root}: no burst subdirectories")
    fmt = _pick_format(cfg, fmt)
    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    records = []
    for i, d in enumerate(dirs):
        rng = _sample_rng(cfg.seed, i)
        burst = load_burst_dir(d)
        noise = cfg.noise.sample(rng)
        isp = random_isp(rng) if cfg.space == "linear" else None
        pair = make_pair(burst, noise, cfg.space, isp, rng, clamp=cfg.clamp, nb_sigma=cfg.nb_sigma)
        records.append(_write_pair(out_dir, i, pair, fmt, seed=cfg.seed,
                                   n_frames=len(burst.frames), source=d.name))
    return _write_manifest(out_dir, cfg, records, bursts=str(burst_root))


def manifest_hash(manifest):
    blob = json.dumps(manifest["records"], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def read_manifest(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if "records" not in manifest or not isinstance(manifest["records"], list):
        raise ManifestError(f"{path}: missing records list")
    for rec in manifest["records"]:
        if not {"id", "paths", "noise", "space"} <= rec.keys():
            raise ManifestError(f"{path}: malformed record {rec.get('id')}")
    manifest.setdefault("hash", manifest_hash(manifest))
    return manifest


def load_burst_dir(directory, colorspace=ColorSpace.SRGB):
    """Ordered sharp frames (sorted PNG filenames) as a Burst."""
    files = sorted(Path(directory).glob("*.png"))
    if len(files) < 2:
        raise ValueError(f"{directory}: need at least 2 PNG frames")
    return Burst([load_image(f, colorspace) for f in files])


# --------------------------------------------------------------------------
# in-memory dataset


class PairDataset:
    """Aligned (blurry, noisy[, clean]) arrays, HWC float32.

    Clean images are only reachable through :meth:`clean`, which counts
    reads so self-supervised runs can prove they never touched them.
    """

    def __init__(self, blurry, noisy, clean=None, noise=None, space="srgb", isps=None,
                 ids=None, manifest_hash=None):
        if len(blurry) != len(noisy):
            raise ValueError("blurry/noisy length mismatch")
        self.blurry = [np.asarray(b, dtype=np.float32) for b in blurry]
        self.noisy = [np.asarray(n, dtype=np.float32) for n in noisy]
        self._clean = None if clean is None else [np.asarray(c, dtype=np.float32) for c in clean]
        self.noise = list(noise) if noise is not None else [None] * len(self.blurry)
        self.space = ColorSpace(space)
        self.isps = list(isps) if isps is not None else [None] * len(self.blurry)
        self.ids = list(ids) if ids is not None else list(range(len(self.blurry)))
        self.manifest_hash = manifest_hash
        self.clean_reads = 0
        for b, n in zip(self.blurry, self.noisy):
            if b.shape != n.shape:
                raise ValueError("blurry/noisy shape mismatch")

    def __len__(self):
        return len(self.blurry)

    @property
    def has_clean(self):
        return self._clean is not None

    def clean(self, i):
        if self._clean is None:
            raise KeyError("dataset carries no clean images")
        self.clean_reads += 1
        return self._clean[i]

    @property
    def channels(self):
        return self.blurry[0].shape[2]

    @classmethod
    def from_pairs(cls, pairs, manifest_hash=None):
        return cls(
            [p.blurry.data for p in pairs], [p.noisy.data for p in pairs],
            None if any(p.clean is None for p in pairs) else [p.clean.data for p in pairs],
            [p.noise for p in pairs], pairs[0].space.value if pairs else "srgb",
            [p.isp for p in pairs], manifest_hash=manifest_hash)

    @classmethod
    def from_manifest(cls, path, require_clean=False):
        path = Path(path)
        manifest = read_manifest(path)
        root = path.parent
        recs = manifest["records"]
        if not recs:
            raise ManifestError(f"{path}: empty manifest")
        spaces = {r["space"] for r in recs}
        if len(spaces) != 1:
            raise ManifestError(f"{path}: mixed color spaces {sorted(spaces)}")
        space = ColorSpace(spaces.pop())
        blurry, noisy, clean = [], [], []
        for r in recs:
            blurry.append(load_image(root / r["paths"]["blur"], space).data)
            noisy.append(load_image(root / r["paths"]["noisy"], space).data)
            if "clean" in r["paths"]:
                clean.append(load_image(root / r["paths"]["clean"], space).data)
        if require_clean and len(clean) != len(recs):
            raise ManifestError(f"{path}: clean references missing")
        return cls(blurry, noisy, clean if len(clean) == len(recs) else None,
                   [params_from_dict(r["noise"]) for r in recs], space.value,
                   [IspParams.from_dict(r["isp"]) if "isp" in r else None for r in recs],
                   ids=[r["id"] for r in recs], manifest_hash=manifest["hash"])


def synth_in_memory(cfg, start=0):
    pairs = [synth_pair(cfg, start + i) for i in range(cfg.n_scenes)]
    blob = json.dumps({"synth": repr(cfg), "start": start}, sort_keys=True).encode()
    return PairDataset.from_pairs(pairs, manifest_hash=hashlib.sha256(blob).hexdigest()[:16])
