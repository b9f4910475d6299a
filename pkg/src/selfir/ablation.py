"""Desk-scale analogs of the comparison and ablation tables."""
import json
import logging
from pathlib import Path

from .data import SynthConfig, synth_in_memory
from .evalreport import evaluate_restorer, network_restorer, rows_to_csv, rows_to_markdown
from .losses import LossWeights
from .noise import NoiseConfig
from .train import MODE_INPUTS, TrainConfig, train

log = logging.getLogger(__name__)

SWEEP = (0.0, 1.0, 2.0, 4.0, 8.0)
SUITES = ("table1", "table3", "table4", "reg_sweep", "aux_sweep")
TOY_TEST_OFFSET = 100_000


def toy_datasets(n_train=200, n_test=24, seed=0, noise="gaussian", canvas=(96, 96)):
    """Bundled synthetic train/test sets (test scenes use a disjoint index range)."""
    space = "linear" if noise == "sensor" else "srgb"
    cfg = SynthConfig(n_scenes=n_train, canvas=canvas, space=space,
                      noise=NoiseConfig(model=noise), seed=seed)
    train_set = synth_in_memory(cfg)
    test_cfg = SynthConfig(n_scenes=n_test, canvas=canvas, space=space,
                           noise=NoiseConfig(model=noise), seed=seed)
    test_set = synth_in_memory(test_cfg, start=TOY_TEST_OFFSET)
    return train_set, test_set


def toy_config(mode, seed=0, **overrides):
    cfg = TrainConfig(mode=mode, seed=seed, toy_profile=True)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return TrainConfig.from_dict(cfg.to_dict())


def _row_configs(suite, seed, steps):
    base = {"max_steps": steps} if steps else {}
    w = LossWeights
    if suite == "table1":
        return [(m.upper(), toy_config(m, seed, **base))
                for m in ("baseline_b", "baseline_n", "baseline_r", "nei2nei_style", "selfir")]
    if suite == "table3":
        return [("Clear Images", toy_config("baseline_b", seed, **base)),
                ("Noisy Images", toy_config("deblur_noisy_sup", seed, **base))]
    if suite == "table4":
        return [
            ("Neighbor2Neighbor w/o L_aux", toy_config("nei2nei_style", seed, **base)),
            ("Neighbor2Neighbor w/ L_aux", toy_config("nei2nei_style", seed, nei2nei_aux=True, **base)),
            ("SelfIR w/o L_aux", toy_config("selfir", seed, weights=w(2.0, 0.0), **base)),
            ("SelfIR w/ L_aux", toy_config("selfir", seed, weights=w(2.0, 2.0), **base)),
        ]
    if suite == "reg_sweep":
        return [(f"lambda_reg={v:g}", toy_config("selfir", seed, weights=w(v, 2.0), **base)) for v in SWEEP]
    if suite == "aux_sweep":
        return [(f"lambda_aux={v:g}", toy_config("selfir", seed, weights=w(2.0, v), **base)) for v in SWEEP]
    raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")


def run_config(cfg, train_set, test_set, out_dir=None):
    res = train(cfg, train_set, out_dir=out_dir)
    report = evaluate_restorer(network_restorer(res.net, MODE_INPUTS[cfg.mode]), test_set,
                               run_id=cfg.mode, meta={"mode": cfg.mode})
    return report, res


def run_ablation(suite, train_set, test_set, seeds=(0,), steps=None, out_dir=None):
    """Train each row of ``suite`` per seed and evaluate on ``test_set``.

    Returns a list of row dicts; when ``out_dir`` is given also writes
    ``<suite>.json``, ``<suite>.csv`` and ``<suite>.md``.
    """
    rows = []
    for seed in seeds:
        for label, cfg in _row_configs(suite, seed, steps):
            log.info("ablation %s: %s (seed %d)", suite, label, seed)
            report, _ = run_config(cfg, train_set, test_set)
            rows.append({
                "suite": suite, "label": label, "mode": cfg.mode, "seed": seed,
                "lambda_reg": cfg.weights.lambda_reg, "lambda_aux": cfg.weights.lambda_aux,
                "psnr": report["aggregate"]["psnr"], "ssim": report["aggregate"]["ssim"],
            })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{suite}.json").write_text(json.dumps(rows, indent=2))
        (out / f"{suite}.csv").write_text(rows_to_csv(rows))
        (out / f"{suite}.md").write_text(rows_to_markdown(rows))
    return rows
