"""Full-resolution evaluation against clean references and run comparison."""
import csv
import io
import json
from pathlib import Path

import numpy as np
import torch

from .imaging import ColorSpace, psnr, ssim_tiled
from .model import load_checkpoint, network_from_checkpoint, restore
from .noise import process_array

REPORT_SCHEMA = 1
SSIM_TILE = 16


class ReportError(ValueError):
    pass


def network_restorer(net, inputs):
    """Wrap a network as ``restorer(blurry_hwc, noisy_hwc) -> restored_hwc``."""
    dtype = next(net.parameters()).dtype

    def run(blurry, noisy):
        def t(x):
            return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))[None].to(dtype)
        if inputs == "dual":
            out = restore(net, t(blurry), t(noisy))
        elif inputs == "blurry":
            out = restore(net, t(blurry))
        elif inputs == "noisy":
            out = restore(net, t(noisy))
        else:
            raise ValueError(f"unknown input kind {inputs!r}")
        return out[0].numpy().transpose(1, 2, 0).astype(np.float64)

    return run


def evaluate_restorer(restorer, dataset, clip_output=False, run_id="run", meta=None):
    if not dataset.has_clean:
        raise ReportError("evaluation needs clean references")
    per_image = []
    for i in range(len(dataset)):
        out = restorer(dataset.blurry[i], dataset.noisy[i])
        clean = dataset.clean(i).astype(np.float64)
        if out.shape != clean.shape:
            raise ReportError(f"restored shape {out.shape} != reference {clean.shape}")
        if dataset.space == ColorSpace.LINEAR:
            isp = dataset.isps[i]
            if isp is None:
                raise ReportError("linear-space pair without ISP parameters")
            out = process_array(out, isp)
            clean = process_array(clean, isp)
        if clip_output:
            out = np.clip(out, 0.0, 1.0)
        per_image.append({"id": dataset.ids[i], "psnr": psnr(out, clean),
                          "ssim": ssim_tiled(out, clean, SSIM_TILE)})
    agg = {
        "psnr": float(np.mean([r["psnr"] for r in per_image])),
        "ssim": float(np.mean([r["ssim"] for r in per_image])),
        "n": len(per_image),
    }
    report = {
        "schema_version": REPORT_SCHEMA,
        "run_id": run_id,
        "manifest_hash": dataset.manifest_hash,
        "space": dataset.space.value,
        "per_image": per_image,
        "aggregate": agg,
    }
    if meta:
        report.update(meta)
    return report


def evaluate(ckpt, dataset, clip_output=False, run_id=None):
    """Evaluate a checkpoint (path or Checkpoint) on a dataset with clean images."""
    if not hasattr(ckpt, "state_dict"):
        run_id = run_id or Path(ckpt).parent.parent.name
        ckpt = load_checkpoint(ckpt)
    net = network_from_checkpoint(ckpt)
    inputs = ckpt.meta.get("inputs", "dual" if ckpt.net_config.variant == "dual" else "noisy")
    meta = {"config_hash": ckpt.config_hash, "mode": ckpt.meta.get("mode"), "inputs": inputs}
    return evaluate_restorer(network_restorer(net, inputs), dataset, clip_output,
                             run_id or "run", meta)


def write_report(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True))
    return path


def read_report(path):
    report = json.loads(Path(path).read_text())
    if report.get("schema_version") != REPORT_SCHEMA:
        raise ReportError(f"{path}: unsupported report schema {report.get('schema_version')}")
    return report


def compare_runs(reports):
    """Rank reports by PSNR (desc), ties broken by run id; all must share a manifest."""
    if not reports:
        raise ReportError("nothing to compare")
    hashes = {r.get("manifest_hash") for r in reports}
    if len(hashes) != 1:
        raise ReportError(f"reports come from different manifests: {sorted(map(str, hashes))}")
    rows = [{"run_id": r["run_id"], "mode": r.get("mode"), "psnr": r["aggregate"]["psnr"],
             "ssim": r["aggregate"]["ssim"], "n": r["aggregate"]["n"]} for r in reports]
    rows.sort(key=lambda r: (-r["psnr"], str(r["run_id"])))
    for rank, row in enumerate(rows, 1):
        row["rank"] = rank
    return rows


def rows_to_csv(rows, columns=None):
    columns = columns or list(rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def rows_to_markdown(rows, columns=None):
    columns = columns or list(rows[0].keys())

    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join(fmt(r.get(c, "")) for c in columns) + " |" for r in rows]
    return "\n".join(lines) + "\n"
