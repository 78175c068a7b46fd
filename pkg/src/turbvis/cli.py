"""Single entry point exposing the pipeline as subcommands.

Subcommands: make-toy-dataset, simulate, pretrain, train, reconstruct,
evaluate, verify, fit-niqe, grid. Every run resolves its configuration from
``--preset`` / ``--config`` / ``-o key=value`` overrides (flags win) and
writes the resolved snapshot alongside its outputs, so reruns are fully
determined by the snapshot plus inputs. Exit codes: 0 success, 1 pipeline
error (with a machine-parseable ``error: ...`` line on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from turbvis import config as cfg_mod
from turbvis.backbones import IDENTITY, PERCEPTUAL, load_backbone, make_test_backbone
from turbvis.config import ExperimentConfig
from turbvis.data import SplitSpec, load_paired_dataset, split_subjects
from turbvis.generator import freeze, generate_modulated, load_pretrained
from turbvis.imageio import RGB, Image, load_image, save_image
from turbvis.metrics import METRIC_COLUMNS, MetricReport, deg, format_quality_table, lpips, psnr, ssim
from turbvis.niqe import fit_niqe, load_niqe_model, niqe, save_niqe_model
from turbvis.projection import load_projection, project
from turbvis.rng import make_rng
from turbvis.toyfaces import make_toy_dataset
from turbvis.trainer import pretrain_generator, train
from turbvis.turbulence import degrade, sample_params
from turbvis.verification import build_protocol, format_verification_table, verification_report


def _resolve_config(args) -> ExperimentConfig:
    cfg = cfg_mod.get_preset(args.preset)
    if getattr(args, "config", None):
        cfg = cfg_mod.load_config(args.config, base=cfg)
    for item in getattr(args, "override", None) or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        cfg = cfg_mod.apply_override(cfg, key.strip(), value.strip())
    if getattr(args, "seed", None) is not None:
        cfg = cfg_mod.apply_override(cfg, "seed", str(args.seed))
        cfg = cfg_mod.apply_override(cfg, "train.seed", str(args.seed))
    cfg.validate()
    return cfg


def _snapshot(cfg: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_mod.save_config(cfg, out_dir / "config_resolved.cfg")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", default="desk64", choices=sorted(cfg_mod.PRESETS),
                        help="configuration preset")
    parser.add_argument("--config", default=None, help="config file applied over the preset")
    parser.add_argument("-o", "--override", action="append", metavar="KEY=VALUE",
                        help="config override, repeatable")
    parser.add_argument("--seed", type=int, default=None, help="seed override")


def _split_part(args, ds):
    """Apply the optional --split counts and return the requested part."""
    if not getattr(args, "split", None):
        return ds
    counts = [int(x) for x in args.split.split(",")]
    if len(counts) != 3:
        raise ValueError("--split must be 'train,val,test' subject counts")
    spec = SplitSpec(*counts, seed=getattr(args, "split_seed", 0) or 0)
    parts = dict(zip(("train", "val", "test"), split_subjects(ds, spec)))
    return parts[args.split_part]


def _add_split_flags(parser, default_part: str) -> None:
    parser.add_argument("--split", default=None,
                        help="subject counts 'train,val,test' to split the manifest")
    parser.add_argument("--split-seed", type=int, default=0, dest="split_seed")
    parser.add_argument("--split-part", default=default_part, dest="split_part",
                        choices=("train", "val", "test"))


def cmd_make_toy_dataset(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    resolution = args.resolution or cfg.resolution
    ds = make_toy_dataset(out, args.subjects, args.variations, resolution,
                          make_rng(cfg.seed).fork("toydata"))
    _snapshot(cfg, out)
    print(f"wrote {len(ds)} paired records at {resolution}x{resolution} to {out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        ds = load_paired_dataset(args.manifest)
        sources = [(Path(r.thermal_path).name, Path(r.thermal_path)) for r in ds.records]
    else:
        in_dir = Path(args.input_dir)
        sources = sorted((p.name, p) for p in in_dir.glob("*.png"))
    if not sources:
        raise ValueError("no input images found")
    rng = make_rng(cfg.seed).fork("simulate")
    rows = []
    for name, path in sources:
        img = load_image(path)
        srng = rng.fork(name)
        params = sample_params(srng, cfg.degrade, img.height, img.width)
        degraded = degrade(img, params, srng.fork("noise"))
        save_image(degraded, out / name)
        rows.append({
            "file": name, "kernel_size": params.kernel.size,
            "sigma_x": f"{params.kernel.sigma_x:.6f}", "sigma_y": f"{params.kernel.sigma_y:.6f}",
            "theta": f"{params.kernel.theta:.6f}", "alpha": f"{params.field.alpha:.6f}",
            "beta": f"{params.field.beta:.6f}", "noise_sigma": f"{params.noise_sigma:.6f}",
            "seed_label": params.seed_label,
        })
    with open(out / "params.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    _snapshot(cfg, out)
    print(f"degraded {len(rows)} images into {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = _split_part(args, load_paired_dataset(args.manifest))
    ckpt_path = pretrain_generator(cfg, ds, out / "generator.ckpt",
                                   color_adjust_visible=args.color_adjust)
    _snapshot(cfg, out)
    print(f"pretrained generator saved to {ckpt_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    ds = _split_part(args, load_paired_dataset(args.manifest))
    phi = load_backbone(args.phi) if args.phi else None
    eta = load_backbone(args.eta) if args.eta else None
    result = train(cfg, ds, args.generator, out, resume_from=args.resume,
                   phi=phi, eta=eta, color_adjust_visible=args.color_adjust)
    _snapshot(cfg, out)
    print(f"training finished in {result['seconds']:.1f}s; "
          f"projection checkpoint at {result['projection']}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = freeze(load_pretrained(args.generator))
    proj = load_projection(args.projection, gen.config)
    files = sorted(Path(args.input_dir).glob("*.png"))
    if not files:
        raise ValueError(f"no PNG inputs in {args.input_dir}")
    root = make_rng(cfg.seed)
    for path in files:
        thermal = load_image(path)
        z, mods = project(proj, thermal)
        img = generate_modulated(gen, z, mods, root.fork(f"reconstruct/{path.stem}"))
        save_image(img, out / path.name)
    _snapshot(cfg, out)
    print(f"reconstructed {len(files)} images into {out}")
    return 0


def _result_reference_pairs(args) -> list[tuple[str, Path, Path]]:
    results = Path(args.results)
    if args.manifest:
        ds = _split_part(args, load_paired_dataset(args.manifest))
        pairs = []
        for rec in ds.records:
            result = results / Path(rec.thermal_path).name
            if not result.exists():
                raise ValueError(f"missing result image {result}")
            pairs.append((rec.key, result, Path(rec.visible_path)))
        return pairs
    if not args.references:
        raise ValueError("evaluate needs either --manifest or --references")
    refs = Path(args.references)
    pairs = []
    for result in sorted(results.glob("*.png")):
        ref = refs / result.name
        if not ref.exists():
            raise ValueError(f"no reference for {result.name} in {refs}")
        pairs.append((result.stem, result, ref))
    if not pairs:
        raise ValueError(f"no PNG results in {results}")
    return pairs


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _result_reference_pairs(args)
    phi = load_backbone(args.phi) if args.phi else make_test_backbone(PERCEPTUAL, cfg.backbone)
    eta = load_backbone(args.eta) if args.eta else make_test_backbone(IDENTITY, cfg.backbone)
    model = load_niqe_model(args.niqe_model) if args.niqe_model else None

    report = MetricReport()
    for name, result_path, ref_path in pairs:
        result = load_image(result_path).to_rgb()
        reference = load_image(ref_path).to_rgb()
        values = {
            "lpips": lpips(phi, result, reference),
            "deg": deg(eta, result, reference),
            "psnr": psnr(result, reference),
            "ssim": ssim(result, reference),
            "niqe": niqe(result, model) if model is not None else float("nan"),
        }
        report.add(name, **values)
    (out / "metrics.csv").write_text(report.to_csv())
    table = format_quality_table({"ours": report.aggregate()})
    (out / "metrics_table.txt").write_text(table + "\n")
    _snapshot(cfg, out)
    print(table)
    return 0


def cmd_verify(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = _split_part(args, load_paired_dataset(args.manifest))
    eta = load_backbone(args.eta) if args.eta else make_test_backbone(IDENTITY, cfg.backbone)
    gallery, probes = build_protocol(ds, eta, args.recon)
    result = verification_report(gallery, probes)
    table = format_verification_table({"ours": result})
    (out / "verification_table.txt").write_text(table + "\n")
    with open(out / "scores.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe_subject"] + list(result.gallery_ids))
        for pid, row in zip(result.probe_ids, result.scores):
            writer.writerow([pid] + [f"{v:.6f}" for v in row])
    _snapshot(cfg, out)
    print(table)
    return 0


def cmd_fit_niqe(args) -> int:
    cfg = _resolve_config(args)
    files = sorted(Path(args.input_dir).glob("*.png"))
    if not files:
        raise ValueError(f"no PNG corpus in {args.input_dir}")
    corpus = [load_image(p) for p in files]
    model = fit_niqe(corpus, patch_size=args.patch_size,
                     sharpness_threshold=args.sharpness)
    out = Path(args.out)
    save_niqe_model(model, out)
    _snapshot(cfg, out.parent)
    print(f"fit NIQE model on {len(corpus)} images -> {out}")
    return 0


def cmd_grid(args) -> int:
    _resolve_config(args)
    recons = sorted(Path(args.recons).glob("*.png"))
    if args.count:
        recons = recons[: args.count]
    if not recons:
        raise ValueError(f"no reconstructions in {args.recons}")
    rows = []
    for recon_path in recons:
        name = recon_path.name
        input_path = Path(args.inputs) / name
        ref_path = Path(args.refs) / name
        if not ref_path.exists():
            ref_path = Path(args.refs) / name.replace("_th", "_vis")
        triplet = []
        for p in (input_path, recon_path, ref_path):
            if not p.exists():
                raise ValueError(f"grid input {p} does not exist")
            triplet.append(load_image(p).to_rgb().array)
        if len({t.shape for t in triplet}) != 1:
            raise ValueError(f"grid images for {name} disagree in size")
        rows.append(np.concatenate(triplet, axis=2))
    montage = np.concatenate(rows, axis=1)
    save_image(Image(montage, RGB), args.out)
    print(f"wrote {len(rows)}x3 grid to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turbvis",
        description="thermal-to-visible face reconstruction under turbulence",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-dataset", help="render procedural paired faces")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--variations", type=int, default=10)
    p.add_argument("--resolution", type=int, default=None)
    p.set_defaults(func=cmd_make_toy_dataset)

    p = sub.add_parser("simulate", help="apply seeded turbulence degradation")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--input-dir", dest="input_dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pretrain", help="pretrain the generator on visible faces")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    _add_split_flags(p, "train")
    p.add_argument("--out", required=True)
    p.add_argument("--color-adjust", action="store_true", dest="color_adjust")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the projection against a frozen generator")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    _add_split_flags(p, "train")
    p.add_argument("--generator", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--phi", default=None, help="perceptual backbone checkpoint")
    p.add_argument("--eta", default=None, help="identity backbone checkpoint")
    p.add_argument("--color-adjust", action="store_true", dest="color_adjust")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="map degraded thermal PNGs to visible PNGs")
    _add_common(p)
    p.add_argument("--input-dir", required=True, dest="input_dir")
    p.add_argument("--generator", required=True)
    p.add_argument("--projection", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="image-quality metrics over a result set")
    _add_common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--references", default=None)
    p.add_argument("--manifest", default=None)
    _add_split_flags(p, "test")
    p.add_argument("--niqe-model", default=None, dest="niqe_model")
    p.add_argument("--phi", default=None)
    p.add_argument("--eta", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="face verification protocol on reconstructions")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    _add_split_flags(p, "test")
    p.add_argument("--recon", required=True)
    p.add_argument("--eta", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fit-niqe", help="fit the pristine NIQE model on a corpus")
    _add_common(p)
    p.add_argument("--input-dir", required=True, dest="input_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=96, dest="patch_size")
    p.add_argument("--sharpness", type=float, default=0.75)
    p.set_defaults(func=cmd_fit_niqe)

    p = sub.add_parser("grid", help="tile (input, reconstruction, reference) rows")
    _add_common(p)
    p.add_argument("--inputs", required=True)
    p.add_argument("--recons", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_grid)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse --help exits 0, usage errors exit 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
