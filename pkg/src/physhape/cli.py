"""Pipeline commands: fit, fem, pretrain, cotrain, report.

Each stage writes content-addressed artifacts under the output
directory (names carry a digest of everything the stage depends on)
plus a manifest entry with its metrics and wall time. Rerunning a
stage whose artifact already exists reuses it; identical config and
seed reproduce bit-identical files either way because every stage is
deterministic.

Exit codes: 0 success, 2 validation failure, 3 numerical divergence,
4 I/O failure.
"""

import os

# honor the thread-count knob before numpy binds its thread pools
_threads = os.environ.get("PHYSHAPE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import json
import sys
import time
import warnings

import numpy as np

from . import checkpoint, fem as fem_mod, physics, sampling
from .config import RunConfig, file_digest, stage_digests
from .cotrain import CoTrainConfig, cotrain as run_cotrain
from .elasticity import BoundarySpec, MaterialModel
from .errors import DivergenceError, IoError, ValidationError
from .geometry import (DensityParams, FitConfig, SdfField, eikonal_loss,
                       extract_mesh, fit_sdf)
from .mesh import is_watertight, load_obj, normalize_mesh, \
    require_watertight, save_obj
from .physics import DisplacementField, PhysicsWeights

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

STAGES = ("fit", "fem", "pretrain", "cotrain")


def _say(msg):
    print(msg, flush=True)


def _warn(msg):
    print("warning: %s" % msg, file=sys.stderr, flush=True)


def _material(cfg):
    m = cfg["material"]
    return MaterialModel(E=m["E"], nu=m["nu"])


def _bspec(cfg):
    b = cfg["boundary"]
    return BoundarySpec(dirichlet_band=tuple(b["dirichlet_band"]),
                        u_bar=tuple(b["u_bar"]),
                        load_band=tuple(b["load_band"]),
                        pressure=b["pressure"])


def _dp(cfg):
    return DensityParams(tau=cfg["density"]["tau"])


def _manifest_path(out):
    return os.path.join(out, "manifest.json")


def _load_manifest(out):
    path = _manifest_path(out)
    if not os.path.exists(path):
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError) as e:
        raise IoError("manifest %s is unreadable: %s" % (path, e))


def _record(out, stage, info):
    m = _load_manifest(out)
    m[stage] = info
    with open(_manifest_path(out), "w") as fh:
        json.dump(m, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _digests(cfg, pre_abl="", cot_abl=""):
    mesh_path = cfg["run"]["mesh"]
    if not mesh_path:
        raise ValidationError("config field run.mesh is required")
    return stage_digests(cfg, file_digest(mesh_path), pre_abl, cot_abl)


def _need(out, name, stage):
    path = os.path.join(out, name)
    if not os.path.exists(path):
        raise IoError("missing artifact %s; run the %s stage first"
                      % (path, stage))
    return path


def _build_sets(cfg, G, bspec, dp):
    s = cfg["sampling"]
    return sampling.build_sample_sets(
        G, bspec, N_domain=s["N_domain"], N_u=s["N_u"], N_f=s["N_f"],
        N_gc=s["N_gc"], seed=cfg["run"]["seed"],
        sparse_fraction=s["sparse_fraction"],
        dense_threshold=s["dense_threshold"], gc_margin=s["gc_margin"],
        dp=dp)


def cmd_fit(cfg, out):
    d = _digests(cfg)["fit"]
    ck = os.path.join(out, "fit-%s.phy3" % d)
    if os.path.exists(ck):
        _say("fit: reusing %s" % ck)
        return d
    t0 = time.time()
    path = cfg["run"]["mesh"]
    mesh = load_obj(path)
    require_watertight(mesh, context=path)
    mesh, (scale, center) = normalize_mesh(mesh)
    f = cfg["fit"]
    fit_cfg = FitConfig(epochs=f["epochs"],
                        steps_per_epoch=f["steps_per_epoch"],
                        batch=f["batch"], lr=f["lr"],
                        n_samples=f["n_samples"],
                        seed=cfg["run"]["seed"],
                        widths=tuple(f["widths"]))
    field = fit_sdf(mesh, fit_cfg)
    rng = np.random.default_rng(cfg["run"]["seed"])
    eik = float(eikonal_loss(field, rng.uniform(-1, 1, size=(4096, 3))))
    checkpoint.save_tensors(ck, field.to_tensors("g/"))
    wall = time.time() - t0
    info = {"digest": d, "checkpoint": os.path.basename(ck),
            "surface_error": field.fit_report["surface_error"],
            "final_loss": field.fit_report["final_loss"],
            "eikonal": eik, "scale": scale,
            "center": list(np.asarray(center, dtype=float)),
            "mesh": path, "wall_time": wall}
    _record(out, "fit", info)
    _say("fit: surface error %.4g, eikonal %.4g, %.1fs -> %s"
         % (info["surface_error"], eik, wall, ck))
    return d


def _load_field(out, d):
    ck = _need(out, "fit-%s.phy3" % d, "fit")
    try:
        return SdfField.from_tensors(checkpoint.load_tensors(ck), "g/")
    except KeyError as e:
        raise IoError("checkpoint %s is missing tensor %s" % (ck, e))


def cmd_fem(cfg, out):
    ds_all = _digests(cfg)
    d = ds_all["fem"]
    csv = os.path.join(out, "fem-%s.csv" % d)
    if os.path.exists(csv):
        _say("fem: reusing %s" % csv)
        return d
    t0 = time.time()
    G = _load_field(out, ds_all["fit"])
    dp, mat, bspec = _dp(cfg), _material(cfg), _bspec(cfg)
    f = cfg["fem"]
    hexmesh = fem_mod.voxelize(G, dp, f["resolution"])
    caught = []
    with warnings.catch_warnings(record=True) as wrec:
        warnings.simplefilter("always")
        sol = fem_mod.solve(hexmesh, mat, bspec, tol=f["tol"])
        caught = [str(w.message) for w in wrec]
    max_vm = fem_mod.max_von_mises(sol)
    if max_vm < 1e-12 * max(cfg["boundary"]["pressure"], 1e-30):
        caught.append("near-zero stress everywhere; check that the "
                      "load band reaches the shape")
    for msg in caught:
        _warn(msg)
    dataset = fem_mod.export_dataset(sol, hexmesh,
                                     n_points=f["n_anchors"],
                                     seed=cfg["run"]["seed"])
    train, hold = fem_mod.split_dataset(dataset, f["holdout_fraction"],
                                        seed=cfg["run"]["seed"])
    fem_mod.save_dataset(csv, train)
    fem_mod.save_dataset(os.path.join(out, "fem-%s-holdout.csv" % d),
                         hold)
    wall = time.time() - t0
    info = {"digest": d, "dataset": os.path.basename(csv),
            "max_von_mises": max_vm, "n_elements": hexmesh.n_elements,
            "volume_fraction": hexmesh.n_elements
            * (hexmesh.h ** 3) / 8.0,
            "iterations": sol.iterations, "converged": sol.converged,
            "warnings": caught, "wall_time": wall}
    _record(out, "fem", info)
    _say("fem: %d elements, max von-Mises %.5g, %.1fs -> %s"
         % (hexmesh.n_elements, max_vm, wall, csv))
    return d


def cmd_pretrain(cfg, out, no_fem_embed=False):
    abl = "no_fem_embed" if no_fem_embed else ""
    ds_all = _digests(cfg, pre_abl=abl)
    d = ds_all["pretrain"]
    ck = os.path.join(out, "pretrain-%s.phy3" % d)
    if os.path.exists(ck):
        _say("pretrain: reusing %s" % ck)
        return d
    t0 = time.time()
    G = _load_field(out, ds_all["fit"])
    dp, mat, bspec = _dp(cfg), _material(cfg), _bspec(cfg)
    fd = ds_all["fem"]
    train = fem_mod.import_dataset(_need(out, "fem-%s.csv" % fd, "fem"))
    hold = fem_mod.import_dataset(
        _need(out, "fem-%s-holdout.csv" % fd, "fem"))
    sets = _build_sets(cfg, G, bspec, dp)
    p = cfg["pretrain"]
    U = DisplacementField(widths=tuple(cfg["displacement"]["widths"]),
                          seed=cfg["run"]["seed"])
    weights = PhysicsWeights(w_pde=p["w_pde"], w_bc=p["w_bc"],
                             w_fem=0.0 if no_fem_embed else p["w_fem"])
    rep = physics.pretrain(U, G, dp, mat, sets, train, weights=weights,
                           epochs=p["epochs"], lr=p["lr"])
    pred = physics.predict(U, G, dp, mat, hold.x)
    denom = np.linalg.norm(hold.u)
    rel = float(np.linalg.norm(pred.u - hold.u) / denom) \
        if denom > 0 else float("nan")
    checkpoint.save_tensors(ck, U.to_tensors("u/"))
    physics.save_history_csv(os.path.join(out, "pretrain-%s.csv" % d),
                             rep.history)
    wall = time.time() - t0
    final = rep.final()
    info = {"digest": d, "checkpoint": os.path.basename(ck),
            "epochs": rep.epochs, "holdout_rel_l2": rel,
            "fem_embedding": not no_fem_embed,
            "final_losses": {"L_pl": final[1], "L_pde": final[2],
                             "L_bc": final[3], "L_fem": final[4]}
            if final is not None else None,
            "wall_time": wall}
    _record(out, "pretrain" + ("_nofem" if no_fem_embed else ""), info)
    _say("pretrain: %d epochs, holdout rel L2 %.4g, %.1fs -> %s"
         % (rep.epochs, rel, wall, ck))
    return d


def cmd_cotrain(cfg, out, no_gc=False, no_fem_embed=False,
                no_design=False, no_physics=False):
    flags = [n for n, v in (("no_gc", no_gc),
                            ("no_fem_embed", no_fem_embed),
                            ("no_design", no_design),
                            ("no_physics", no_physics)) if v]
    cot_abl = ",".join(flags)
    pre_abl = "no_fem_embed" if no_fem_embed else ""
    ds_all = _digests(cfg, pre_abl=pre_abl, cot_abl=cot_abl)
    d = ds_all["cotrain"]
    geo_ck = os.path.join(out, "cotrain-%s-geometry.phy3" % d)
    if os.path.exists(geo_ck):
        _say("cotrain: reusing %s" % geo_ck)
        return d
    t0 = time.time()
    G = _load_field(out, ds_all["fit"])
    uck = _need(out, "pretrain-%s.phy3" % ds_all["pretrain"], "pretrain")
    U = DisplacementField.from_tensors(checkpoint.load_tensors(uck), "u/")
    dp, mat, bspec = _dp(cfg), _material(cfg), _bspec(cfg)
    train = fem_mod.import_dataset(
        _need(out, "fem-%s.csv" % ds_all["fem"], "fem"))
    sets = _build_sets(cfg, G, bspec, dp)
    c = cfg["cotrain"]
    ccfg = CoTrainConfig(w_design=c["w_design"], w_gc=c["w_gc"],
                         w_vr=c["w_vr"], w_eikonal=c["w_eikonal"],
                         t=c["t"], epoch_max=c["epoch_max"],
                         alpha=c["alpha"], beta=c["beta"], M_v=c["M_v"],
                         two_phase=c["two_phase"], no_gc=no_gc,
                         no_design=no_design, no_fem_embed=no_fem_embed,
                         no_physics=no_physics)
    rep = run_cotrain(U, G, dp, mat, sets, train, ccfg, bspec=bspec,
                      fem_resolution=cfg["fem"]["resolution"])
    checkpoint.save_tensors(geo_ck, G.to_tensors("g/"))
    checkpoint.save_tensors(
        os.path.join(out, "cotrain-%s-displacement.phy3" % d),
        U.to_tensors("u/"))
    rep.save_csv(os.path.join(out, "cotrain-%s.csv" % d))
    shape_obj = os.path.join(out, "cotrain-%s-shape.obj" % d)
    final_mesh = extract_mesh(G, resolution=c["extract_resolution"])
    save_obj(shape_obj, final_mesh)
    wall = time.time() - t0
    info = dict(rep.summary())
    info.update({"digest": d, "ablations": flags,
                 "shape": os.path.basename(shape_obj),
                 "watertight": is_watertight(final_mesh),
                 "wall_time": wall})
    _record(out, "cotrain" + ("_" + cot_abl if cot_abl else ""), info)
    _say("cotrain: max von-Mises %s -> %s, vf %.4f -> %.4f, %.1fs"
         % (_fmt(info["initial_max_vm"]), _fmt(info["final_max_vm"]),
            info["initial_vf"], info["final_vf"], wall))
    return d


def _fmt(v, width=None):
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        s = "-"
    elif isinstance(v, float):
        s = "%.5g" % v
    else:
        s = str(v)
    return s if width is None else s.rjust(width)


def cmd_report(cfg, out):
    m = _load_manifest(out)
    if not m:
        raise IoError("no artifacts in %s; nothing to report" % out)
    missing = [s for s in STAGES if s not in m]
    if missing:
        _warn("missing stages: %s" % ", ".join(missing))
    name = cfg["run"]["name"] or \
        os.path.splitext(os.path.basename(cfg["run"]["mesh"]))[0] or "-"
    fem_i = m.get("fem", {})
    cot = m.get("cotrain", {})
    wall = sum(m[s].get("wall_time", 0.0) for s in m)
    cols = ("shape", "init max_vm", "final max_vm", "init vf",
            "final vf", "wall s")
    vals = (name,
            _fmt(fem_i.get("max_von_mises")),
            _fmt(cot.get("final_max_vm")),
            _fmt(cot.get("initial_vf", fem_i.get("volume_fraction"))),
            _fmt(cot.get("final_vf")),
            "%.1f" % wall)
    widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    _say("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    _say("  ".join(v.ljust(w) for v, w in zip(vals, widths)))
    return EXIT_OK


def _parser():
    ap = argparse.ArgumentParser(
        prog="physhape",
        description="stress-aware shape optimization pipeline")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES + ("report",):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="YAML config path (defaults used if omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.seed")
        p.add_argument("--out", default=None, help="override run.out")
        if name == "pretrain":
            p.add_argument("--no-fem-embed", action="store_true")
        if name == "cotrain":
            p.add_argument("--no-gc", action="store_true")
            p.add_argument("--no-fem-embed", action="store_true")
            p.add_argument("--no-design", action="store_true")
            p.add_argument("--no-physics", action="store_true")
    return ap


def run(argv=None):
    """Parse and execute; returns the process exit code."""
    args = _parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config) if args.config \
            else RunConfig()
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        if args.out is not None:
            cfg["run"]["out"] = args.out
        out = cfg["run"]["out"]
        os.makedirs(out, exist_ok=True)
        if args.command == "fit":
            cmd_fit(cfg, out)
        elif args.command == "fem":
            cmd_fem(cfg, out)
        elif args.command == "pretrain":
            cmd_pretrain(cfg, out, no_fem_embed=args.no_fem_embed)
        elif args.command == "cotrain":
            cmd_cotrain(cfg, out, no_gc=args.no_gc,
                        no_fem_embed=args.no_fem_embed,
                        no_design=args.no_design,
                        no_physics=args.no_physics)
        elif args.command == "report":
            cmd_report(cfg, out)
    except ValidationError as e:
        print("validation error: %s" % e, file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as e:
        print("divergence: %s" % e, file=sys.stderr)
        return EXIT_DIVERGENCE
    except (IoError, OSError) as e:
        print("i/o error: %s" % e, file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())
