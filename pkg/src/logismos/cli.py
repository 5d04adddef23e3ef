"""Command-line drivers.

Subcommands: phantom, presegment, train, segment3d, segment4d, metrics,
subplates, jei-serve. Every run takes a config file (JSON, see
PipelineConfig) plus overrides and writes its outputs under --out with a
manifest.json describing inputs, seeds, and products.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .mesh import read_mesh, write_mesh
from .phantom import PhantomSpec, generate_longitudinal, generate_mean_meshes, \
    generate_phantom
from .volume import read_volume, write_volume


def _load_config(args) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.from_json(Path(args.config).read_text())
    else:
        cfg = PipelineConfig()
    overrides = {}
    if getattr(args, "cost_mode", None):
        overrides["cost_mode"] = args.cost_mode
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return cfg.with_overrides(**overrides) if overrides else cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: PipelineConfig, extra: dict):
    doc = {"command": command, "config": json.loads(cfg.to_json())}
    doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2))


def _load_case_dir(path):
    """Reload a phantom case directory written by `phantom`."""
    from .mesh import TriMesh
    from .phantom import PhantomCase
    p = Path(path)
    volume = read_volume(p / "volume.vol")
    labels = read_volume(p / "labels.vol")
    params = json.loads((p / "params.json").read_text())
    meshes = {}
    for f in p.glob("truth_*.json"):
        _, obj, surf = f.stem.split("_")
        meshes[(obj, surf)] = read_mesh(f)
    return PhantomCase(volume, meshes, labels, params)


def _save_case_dir(case, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    write_volume(case.volume, out / "volume.vol")
    write_volume(case.truth_labels, out / "labels.vol")
    (out / "params.json").write_text(json.dumps(case.params, sort_keys=True))
    for (obj, surf), mesh in case.truth_meshes.items():
        write_mesh(mesh, out / f"truth_{obj}_{surf}.json")


def cmd_phantom(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    spec = PhantomSpec(noise_pct=args.noise_pct,
                       fluid_pockets=args.fluid_pockets,
                       lesions=args.lesions,
                       mesh_subdivisions=args.mesh_subdivisions)
    cases = []
    if args.timepoints > 1:
        series, transforms = generate_longitudinal(
            spec, T=args.timepoints, thinning=args.thinning, seed=args.seed or 0)
        for t, case in enumerate(series):
            _save_case_dir(case, out / f"t{t}")
            cases.append(f"t{t}")
        (out / "transforms.json").write_text(json.dumps(
            [tf.to_matrix34() for tf in transforms]))
    else:
        case = generate_phantom(spec, seed=args.seed or 0)
        _save_case_dir(case, out / "t0")
        cases.append("t0")
    means = generate_mean_meshes(spec)
    for (obj, surf), mesh in means.items():
        write_mesh(mesh, out / f"mean_{obj}_{surf}.json")
    _write_manifest(out, "phantom", cfg, {"cases": cases, "seed": args.seed or 0})
    print(f"wrote {len(cases)} case(s) under {out}")


def _mean_meshes_from_dir(path):
    p = Path(path)
    out = {}
    for f in p.glob("mean_*.json"):
        _, obj, surf = f.stem.split("_")
        out[(obj, surf)] = read_mesh(f)
    if not out:
        raise SystemExit(f"no mean_*.json meshes found in {p}")
    return out


def cmd_presegment(args):
    from .pipeline import presegment
    cfg = _load_config(args)
    out = _out_dir(args)
    case = _load_case_dir(args.case)
    means = _mean_meshes_from_dir(args.means or args.case + "/..")
    result = presegment(case, means, cfg)
    for name, r in result.items():
        write_mesh(r["mesh"], out / f"preseg_{name}.json")
        r["columns"].save(out / f"columns_{name}.json")
    _write_manifest(out, "presegment", cfg, {"case": str(args.case)})
    print(f"pre-segmented 2 objects into {out}")


def cmd_train(args):
    from .pipeline import train
    cfg = _load_config(args)
    out = _out_dir(args)
    manifest = json.loads(Path(args.manifest).read_text())
    stage1 = [_load_case_dir(p) for p in manifest["naf_cases"]]
    stage2 = [_load_case_dir(p) for p in manifest["rf_cases"]]
    means = _mean_meshes_from_dir(manifest["means"])
    models = train(stage1, stage2, cfg, mean_meshes=means)
    models.save(out)
    oob = {name: {str(k): v for k, v in rep.items()}
           for name, rep in models.oob_report.items()}
    (out / "oob.json").write_text(json.dumps(oob, sort_keys=True, indent=2))
    _write_manifest(out, "train", cfg, {"manifest": str(args.manifest)})
    print(f"trained models written to {out}")


def _metrics_json(case, res, cfg, t=0):
    from .pipeline import evaluate_case
    rep = evaluate_case(case, res, cfg, t=t)
    for name in rep:
        rep[name].pop("thickness_err", None)
    return rep


def cmd_segment3d(args):
    from .pipeline import TrainedModels, segment3d
    cfg = _load_config(args)
    out = _out_dir(args)
    case = _load_case_dir(args.case)
    means = _mean_meshes_from_dir(args.means)
    models = TrainedModels.load(args.models) if args.models else None
    res = segment3d(case, cfg, mean_meshes=means, models=models)
    for (t, obj, surf), mesh in res.meshes.items():
        write_mesh(mesh, out / f"surface_t{t}_{obj}_{surf}.json")
    metrics = _metrics_json(case, res, cfg)
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2))
    if args.session:
        from .jei import JeiSession
        JeiSession(case.volume, res.graph).save(out / "session.bin")
    _write_manifest(out, "segment3d", cfg, {"case": str(args.case)})
    print(json.dumps(metrics, sort_keys=True, indent=2))


def cmd_segment4d(args):
    from .pipeline import TrainedModels, segment4d
    cfg = _load_config(args)
    out = _out_dir(args)
    case_dirs = args.cases
    cases = [_load_case_dir(p) for p in case_dirs]
    means = _mean_meshes_from_dir(args.means)
    models = TrainedModels.load(args.models) if args.models else None
    res = segment4d(cases, cfg, mean_meshes=means, models=models)
    for (t, obj, surf), mesh in res.meshes.items():
        write_mesh(mesh, out / f"surface_t{t}_{obj}_{surf}.json")
    (out / "transforms.json").write_text(json.dumps(
        [tf.to_matrix34() for tf in res.transforms]))
    metrics = {f"t{t}": _metrics_json(cases[t], res, cfg, t=t)
               for t in range(len(cases))}
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2))
    _write_manifest(out, "segment4d", cfg, {"cases": [str(c) for c in case_dirs]})
    print(json.dumps(metrics, sort_keys=True, indent=2))


def cmd_metrics(args):
    """Surface-vs-surface distances between two mesh files (mm)."""
    a = read_mesh(args.solution)
    b = read_mesh(args.reference)
    from .mesh import closest_surface_points
    _, d_ab = closest_surface_points(b, a.vertices)
    report = {
        "mean_abs_mm": float(np.mean(d_ab)),
        "max_mm": float(np.max(d_ab)),
        "rms_mm": float(np.sqrt(np.mean(d_ab ** 2))),
        "n_vertices": int(len(a.vertices)),
    }
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        out = _out_dir(args)
        (out / "metrics.json").write_text(text)
    print(text)


def cmd_subplates(args):
    from .subplates import (CuttingPlane, detect_trochlear_notch,
                            femur_subplates, tibia_subplates)
    cfg = _load_config(args)
    out = _out_dir(args)
    femur_bone = read_mesh(args.femur_bone)
    femur_cart = read_mesh(args.femur_cartilage)
    tibia_cart = read_mesh(args.tibia_cartilage)
    ap = np.asarray(json.loads(args.ap_axis), dtype=float)
    ml = np.asarray(json.loads(args.ml_axis), dtype=float)
    centroid = femur_bone.centroid()
    iso = CuttingPlane(json.loads(args.isolate_normal),
                       centroid + np.asarray(json.loads(args.isolate_offset)))
    notch = detect_trochlear_notch(femur_bone, ap, iso, ml_axis=ml)
    flab = femur_subplates(femur_cart, notch, ap, ml)
    tlab = tibia_subplates(tibia_cart, notch, ap, ml)
    doc = {
        "notch_mm": notch.tolist(),
        "femur_regions": flab.regions.tolist(),
        "tibia_regions": tlab.regions.tolist(),
        "femur_counts": flab.counts(),
        "tibia_counts": tlab.counts(),
    }
    (out / "subplates.json").write_text(json.dumps(doc, sort_keys=True, indent=2))
    rows = ["region,count"]
    for name, count in sorted({**flab.counts(), **tlab.counts()}.items()):
        rows.append(f"{name},{count}")
    (out / "subplates.csv").write_text("\n".join(rows) + "\n")
    _write_manifest(out, "subplates", cfg, {})
    print(json.dumps({"notch_mm": doc["notch_mm"],
                      "femur_counts": doc["femur_counts"],
                      "tibia_counts": doc["tibia_counts"]}, indent=2))


def cmd_jei_serve(args):
    from .server import SessionStore, serve
    ui = args.ui_dir
    if ui is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui = candidate if candidate.is_dir() else None
    print(f"serving on {args.host}:{args.port}"
          + (f" (ui at /ui from {ui})" if ui else ""))
    serve(args.host, args.port, SessionStore(), ui_dir=ui)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="logismos")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--cost-mode", dest="cost_mode",
                       choices=("gradient", "rf-only", "naf+rf"))
        if out:
            p.add_argument("--out", required=True)

    p = sub.add_parser("phantom", help="generate synthetic case(s)")
    common(p)
    p.add_argument("--noise-pct", type=float, default=5.0)
    p.add_argument("--fluid-pockets", action="store_true")
    p.add_argument("--lesions", action="store_true")
    p.add_argument("--timepoints", type=int, default=1)
    p.add_argument("--thinning", type=float, default=0.0)
    p.add_argument("--mesh-subdivisions", type=int, default=3)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("presegment", help="gradient bone pre-segmentation")
    common(p)
    p.add_argument("--case", required=True)
    p.add_argument("--means", required=True)
    p.set_defaults(func=cmd_presegment)

    p = sub.add_parser("train", help="train patch forest + cluster forests")
    common(p)
    p.add_argument("--manifest", required=True,
                   help="JSON with naf_cases, rf_cases, means")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment3d", help="two-object two-surface solve")
    common(p)
    p.add_argument("--case", required=True)
    p.add_argument("--means", required=True)
    p.add_argument("--models")
    p.add_argument("--session", action="store_true",
                   help="also write an editing session blob")
    p.set_defaults(func=cmd_segment3d)

    p = sub.add_parser("segment4d", help="joint longitudinal solve")
    common(p)
    p.add_argument("--cases", nargs="+", required=True)
    p.add_argument("--means", required=True)
    p.add_argument("--models")
    p.set_defaults(func=cmd_segment4d)

    p = sub.add_parser("metrics", help="mesh-to-mesh distance report")
    p.add_argument("--solution", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("subplates", help="sub-plate labeling report")
    common(p)
    p.add_argument("--femur-bone", required=True)
    p.add_argument("--femur-cartilage", required=True)
    p.add_argument("--tibia-cartilage", required=True)
    p.add_argument("--ap-axis", default="[0,1,0]")
    p.add_argument("--ml-axis", default="[1,0,0]")
    p.add_argument("--isolate-normal", default="[0,0,-1]")
    p.add_argument("--isolate-offset", default="[0,0,-2]")
    p.set_defaults(func=cmd_subplates)

    p = sub.add_parser("jei-serve", help="serve the editing API (and UI)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(func=cmd_jei_serve)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
