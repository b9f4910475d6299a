"""Dual-encoder U-Net restoration network and its checkpoint container."""
import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import decode_sirt, write_sirt

CKPT_FORMAT = "selfir-checkpoint"
CKPT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    pass


@dataclass
class NetworkConfig:
    n_levels: int = 5
    base_channels: int = 48
    dec_channels: int = 0          # 0 -> 2 * base_channels
    in_channels: int = 3           # per branch
    out_channels: int = 3
    variant: str = "dual"          # "dual" | "single"
    fusion: str = "concat_skips"
    residual: bool = False
    negative_slope: float = 0.1

    def __post_init__(self):
        if self.variant not in ("dual", "single"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.fusion != "concat_skips":
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.residual and self.in_channels != self.out_channels:
            raise ValueError("residual output needs in_channels == out_channels")

    @property
    def divisor(self):
        return 2 ** (self.n_levels - 1)

    @property
    def n_branches(self):
        return 2 if self.variant == "dual" else 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _conv(cin, cout, slope):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.LeakyReLU(slope))


class Encoder(nn.Module):
    def __init__(self, cin, width, n_levels, slope):
        super().__init__()
        self.levels = nn.ModuleList()
        for lvl in range(n_levels):
            self.levels.append(nn.Sequential(
                _conv(cin if lvl == 0 else width, width, slope),
                _conv(width, width, slope),
            ))

    def forward(self, x):
        skips = []
        for lvl, block in enumerate(self.levels):
            if lvl > 0:
                x = F.max_pool2d(x, 2)
            x = block(x)
            skips.append(x)
        return skips


class RestorationNet(nn.Module):
    """U-Net whose encoders (one per input) feed a shared decoder.

    At every decoder level the upsampled decoder features are concatenated
    with the same-level features of all encoders.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_channels
        d = cfg.dec_channels or 2 * w
        k = cfg.n_branches
        s = cfg.negative_slope
        self.encoders = nn.ModuleList(Encoder(cfg.in_channels, w, cfg.n_levels, s) for _ in range(k))
        self.bottom = _conv(k * w, d, s)
        self.up_blocks = nn.ModuleList(
            nn.Sequential(_conv(d + k * w, d, s), _conv(d, d, s)) for _ in range(cfg.n_levels - 1))
        self.head = nn.Conv2d(d, cfg.out_channels, 1)

    def forward(self, blurry, noisy=None):
        if self.cfg.variant == "dual":
            if noisy is None or blurry.shape != noisy.shape:
                raise ValueError("dual network needs two same-shaped inputs")
            inputs = (blurry, noisy)
        else:
            if noisy is not None:
                raise ValueError("single-input network takes one tensor")
            inputs = (blurry,)
        x0 = inputs[0]
        if x0.dim() != 4 or x0.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (N, {self.cfg.in_channels}, H, W) input, got {tuple(x0.shape)}")
        if x0.shape[2] % self.cfg.divisor or x0.shape[3] % self.cfg.divisor:
            raise ValueError(f"spatial size {tuple(x0.shape[2:])} not divisible by {self.cfg.divisor}")
        skips = [enc(x) for enc, x in zip(self.encoders, inputs)]
        x = self.bottom(torch.cat([s[-1] for s in skips], dim=1))
        for i, block in enumerate(self.up_blocks):
            lvl = self.cfg.n_levels - 2 - i
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat([x] + [s[lvl] for s in skips], dim=1))
        out = self.head(x)
        if self.cfg.residual:
            out = out + inputs[-1]
        return out


def build(cfg, seed=None, dtype=torch.float32):
    if seed is not None:
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
    net = RestorationNet(cfg).to(dtype)
    if seed is not None:
        torch.random.set_rng_state(gen_state)
    return net


def n_parameters(net_or_cfg):
    net = net_or_cfg if isinstance(net_or_cfg, nn.Module) else RestorationNet(net_or_cfg)
    return sum(p.numel() for p in net.parameters())


def forward(net, blurry, noisy=None):
    return net(blurry, noisy)


def forward_nograd(net, blurry, noisy=None):
    with torch.no_grad():
        return net(blurry, noisy)


def restore(net, blurry, noisy=None):
    """Full-resolution inference with replicate padding to the network divisor."""
    div = net.cfg.divisor
    h, w = blurry.shape[-2:]
    ph, pw = (-h) % div, (-w) % div
    pad = (0, pw, 0, ph)

    def _pad(x):
        return F.pad(x, pad, mode="replicate") if (ph or pw) else x

    out = forward_nograd(net, _pad(blurry), None if noisy is None else _pad(noisy))
    return out[..., :h, :w]


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    net_config: NetworkConfig
    state_dict: dict
    optimizer_state: dict
    epoch: int
    meta: dict

    @property
    def config_hash(self):
        return self.meta["config_hash"]


def _zip_write(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _tensor_bytes(t):
    buf = io.BytesIO()
    write_sirt(buf, t.detach().cpu().float().numpy())
    return buf.getvalue()


def save_checkpoint(path, net, optimizer=None, epoch=0, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = net.cfg
    meta = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "network": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "epoch": int(epoch),
        "parameters": [],
        "optimizer": None,
    }
    if extra:
        meta.update(extra)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        for name, t in net.state_dict().items():
            meta["parameters"].append({"name": name, "shape": list(t.shape)})
            _zip_write(zf, f"params/{name}.sirt", _tensor_bytes(t))
        if optimizer is not None:
            sd = optimizer.state_dict()
            opt_meta = {"param_groups": sd["param_groups"], "state": {}}
            # sorted so a resumed optimizer serializes identically
            for idx, st in sorted(sd["state"].items()):
                keys = {}
                for key, val in sorted(st.items()):
                    if torch.is_tensor(val):
                        _zip_write(zf, f"optim/{idx}/{key}.sirt", _tensor_bytes(val))
                        keys[key] = {"tensor": True, "shape": list(val.shape)}
                    else:
                        keys[key] = {"tensor": False, "value": val}
                opt_meta["state"][str(idx)] = keys
            meta["optimizer"] = opt_meta
        _zip_write(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True))
    tmp.replace(path)
    return path


def load_checkpoint(path, expected=None, force=False):
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != CKPT_FORMAT:
            raise CheckpointError(f"{path} is not a selfir checkpoint")
        cfg = NetworkConfig.from_dict(meta["network"])
        if expected is not None and expected.hash() != meta["config_hash"] and not force:
            raise CheckpointError(
                f"config hash mismatch: checkpoint {meta['config_hash']} vs expected {expected.hash()}")
        state = {}
        for p in meta["parameters"]:
            arr = decode_sirt(zf.read(f"params/{p['name']}.sirt"))
            state[p["name"]] = torch.from_numpy(arr.copy()).reshape(p["shape"])
        opt_state = None
        if meta.get("optimizer"):
            om = meta["optimizer"]
            st = {}
            for idx, keys in om["state"].items():
                entry = {}
                for key, info in keys.items():
                    if info["tensor"]:
                        arr = decode_sirt(zf.read(f"optim/{idx}/{key}.sirt"))
                        entry[key] = torch.from_numpy(arr.copy()).reshape(info["shape"])
                    else:
                        entry[key] = info["value"]
                st[int(idx)] = entry
            opt_state = {"state": st, "param_groups": om["param_groups"]}
    return Checkpoint(cfg, state, opt_state, int(meta["epoch"]), meta)


def network_from_checkpoint(ckpt):
    net = RestorationNet(ckpt.net_config)
    net.load_state_dict(ckpt.state_dict)
    net.eval()
    return net
