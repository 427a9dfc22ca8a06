"""Command-line pipeline.

Only stdlib imports at module level: --threads and --deterministic must pin
the BLAS thread env vars before numpy first loads, so every numpy-touching
import happens inside the handlers.

Exit codes: 0 ok, 2 config error, 3 invariant violation, 4 I/O error.
"""

import argparse
import os
import sys

SUBCOMMANDS = ("bake-geometry", "bake-texture", "train", "ablate", "eval", "verify")


def _parser():
    p = argparse.ArgumentParser(prog="uvforge", description="UV texture toy pipeline")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="YAML config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--deterministic", action="store_true")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")
    return p


def _pin_threads(n):
    for var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)


def _scene_and_rig(cfg):
    sc = cfg["scene"]
    rig = {
        "radius": sc["rig_radius"],
        "elevation_deg": sc["rig_elevation_deg"],
        "fov_deg": sc["rig_fov_deg"],
    }
    return sc, rig


def _out_dir(cfg):
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def cmd_bake_geometry(cfg):
    import numpy as np

    from . import fileio as F
    from . import trainer as TR
    from .config import write_resolved

    sc, rig = _scene_and_rig(cfg)
    out = _out_dir(cfg)
    bundle = TR.build_scene(sc["kind"], sc["uv_res"], sc["view_res"], sc["n_views"], rig)
    files = []

    def put_pfm(rel, arr):
        F.write_pfm(os.path.join(out, rel), arr.astype(np.float32))
        files.append(rel)

    put_pfm("uv_xyz.pfm", bundle.geo.xyz)
    put_pfm("uv_normal.pfm", bundle.geo.normal)
    put_pfm("uv_mask.pfm", bundle.geo.mask.astype(np.float32))
    F.write_png(os.path.join(out, "uv_mask.png"), bundle.geo.mask.astype(np.float32))
    files.append("uv_mask.png")
    for i, view in enumerate(bundle.views):
        put_pfm(f"view{i}_xyz.pfm", view.xyz)
        put_pfm(f"view{i}_normal.pfm", view.normal)
        put_pfm(f"view{i}_depth.pfm", view.depth)
        put_pfm(f"view{i}_mask.pfm", view.mask.astype(np.float32))
    # [N,H,W] visibility stacked into one tall grayscale image
    put_pfm("visibility.pfm", bundle.vis.astype(np.float32).reshape(-1, bundle.vis.shape[2]))
    write_resolved(cfg, out)
    files.append("config.resolved.yaml")
    F.write_manifest(out, files)
    print(f"baked geometry for {sc['kind']}: {len(bundle.views)} views -> {out}")
    return 0


def _ground_truth(cfg, bundle):
    import numpy as np

    from . import textures as X

    rng = np.random.default_rng([cfg["seed"], 0x7E87])
    params = X.sample_params(cfg["texture"]["kind"], rng)
    target = X.bake_texture_map(bundle.geo, cfg["texture"]["kind"], params)
    return target, params


def cmd_bake_texture(cfg):
    import numpy as np

    from . import baker as B
    from . import fileio as F
    from . import metrics as MX
    from . import raster as R
    from . import trainer as TR
    from .config import write_resolved
    from .report import write_tsv

    sc, rig = _scene_and_rig(cfg)
    out = _out_dir(cfg)
    bundle = TR.build_scene(sc["kind"], sc["uv_res"], sc["view_res"], sc["n_views"], rig)
    target, params = _ground_truth(cfg, bundle)
    sample = TR.TrainSample(bundle, cfg["texture"]["kind"], params, target,
                            TR._sample_views(bundle, target))
    mode = cfg["texture"]["mode"]
    occl = R.occlusion_mask(bundle.vis) & bundle.geo.mask

    res = None
    if mode == "backproject":
        views, _, _ = TR.clean_views(sample)
        res = B.backproject_bake(bundle.geo, views, bundle.cams, bundle.vis)
        texture = res.texture
        if cfg["texture"]["fill_holes"]:
            texture = B.naive_fill(res, bundle.geo, bundle.mesh).texture
    elif mode == "oracle-attn":
        from types import SimpleNamespace

        from . import attention as A

        colored = [
            SimpleNamespace(xyz=v.xyz, mask=v.mask, rgb=rgb)
            for v, rgb in zip(bundle.views, sample.view_rgbs)
        ]
        texture = A.oracle_attend(bundle.geo, colored, tau=cfg["texture"]["tau"])
    else:  # model
        from . import model as M

        model = M.init_model(tuple(cfg["attention"]["widths"]), cfg["attention"]["heads"],
                             bands=cfg["encoder"]["bands"],
                             seed=cfg["seed"], ablation=cfg["trainer"]["ablation"])
        ckpt = cfg["texture"]["ckpt"]
        if ckpt:
            model.load_state(F.load_weights(ckpt))
        texture = TR.predict(model, sample)

    mask = bundle.geo.mask
    rows = [{
        "scene": sc["kind"], "texture": cfg["texture"]["kind"], "mode": mode,
        "psnr": MX.psnr(texture, target, mask),
        "ssim": MX.ssim(texture, target, mask),
    }]
    if occl.any():
        rows[0]["occl_psnr"] = MX.psnr(texture, target, occl)
    if res is not None:
        rows[0]["conflict_fraction"] = float(res.conflict_map[mask].mean())

    F.write_pfm(os.path.join(out, "texture.pfm"), texture.astype(np.float32))
    F.write_png(os.path.join(out, "texture.png"), texture)
    F.write_png(os.path.join(out, "target.png"), target)
    F.write_png(os.path.join(out, "occlusion_mask.png"), occl.astype(np.float32))
    if res is not None:
        F.write_png(os.path.join(out, "conflict_map.png"), res.conflict_map.astype(np.float32))
    write_tsv(os.path.join(out, "metrics.tsv"), rows)
    write_resolved(cfg, out)
    from .report import run_files

    F.write_manifest(out, run_files(out))
    print(f"baked texture ({mode}): psnr {rows[0]['psnr']:.2f} dB -> {out}")
    return 0


def _datasets(cfg, tcfg):
    import numpy as np

    from . import trainer as TR

    _, rig = _scene_and_rig(cfg)
    specs = [tuple(pair) for pair in cfg["trainer"]["suite"]]
    scenes = {}
    _, train_samples = TR.make_dataset(
        tcfg, specs, variants=tcfg.train_variants,
        rng=np.random.default_rng([tcfg.seed, 0xDA7A]), scenes=scenes, rig=rig)
    _, held = TR.make_dataset(
        tcfg, specs, variants=tcfg.eval_variants,
        rng=np.random.default_rng([tcfg.seed, 0xE7A1]), scenes=scenes, rig=rig)
    return train_samples, held


def cmd_train(cfg):
    from . import model as M
    from . import trainer as TR
    from .config import train_config, write_resolved
    from .report import plot_loss_curve, write_report

    out = _out_dir(cfg)
    tcfg = train_config(cfg)
    train_samples, held = _datasets(cfg, tcfg)
    model = M.init_model(tcfg.widths, tcfg.heads, seed=tcfg.seed, ablation=tcfg.ablation,
                         bands=tcfg.bands)
    print(f"training {tcfg.ablation} model, {model.param_count()} params, "
          f"{tcfg.steps} steps on {len(train_samples)} samples")
    history = TR.train(tcfg, train_samples, model, out_dir=out, quiet=False)
    rows = TR.evaluate(model, held)
    if history:
        plot_loss_curve(history, os.path.join(out, "loss_curve.png"))
    write_resolved(cfg, out)
    write_report(out, rows, f"held-out metrics ({tcfg.ablation})",
                 extra={"params": model.param_count(),
                        "final_loss": history[-1]["loss"] if history else float("nan"),
                        "mean_psnr": TR.summarize(rows, "psnr"),
                        "mean_ssim": TR.summarize(rows, "ssim")})
    print(f"held-out psnr {TR.summarize(rows, 'psnr'):.2f} dB -> {out}")
    return 0


def cmd_ablate(cfg):
    from . import trainer as TR
    from .config import train_config, write_resolved
    from .report import write_report

    out = _out_dir(cfg)
    tcfg = train_config(cfg)
    train_samples, held = _datasets(cfg, tcfg)
    rows = TR.run_ablation(tcfg, train_samples, held, out_dir=out)
    write_resolved(cfg, out)
    write_report(out, rows, "ablation arms (identical seeds and data)")
    for r in rows:
        print(f"{r['arm']:<12} psnr {r['psnr']:.2f}  ssim {r['ssim']:.3f}")
    return 0


def cmd_eval(cfg):
    from . import fileio as F
    from . import model as M
    from . import trainer as TR
    from .config import train_config, write_resolved
    from .errors import ConfigError
    from .report import write_report

    out = _out_dir(cfg)
    tcfg = train_config(cfg)
    ckpt = cfg["texture"]["ckpt"]
    if not ckpt:
        raise ConfigError("eval needs texture.ckpt pointing at trained weights")
    model = M.init_model(tcfg.widths, tcfg.heads, seed=tcfg.seed, ablation=tcfg.ablation,
                         bands=tcfg.bands)
    model.load_state(F.load_weights(ckpt))
    _, held = _datasets(cfg, tcfg)
    rows = TR.evaluate(model, held, capture_diag=True)
    write_resolved(cfg, out)
    write_report(out, rows, "held-out metrics",
                 extra={"ckpt": ckpt, "mean_psnr": TR.summarize(rows, "psnr")})
    print(f"eval psnr {TR.summarize(rows, 'psnr'):.2f} dB -> {out}")
    return 0


def cmd_verify(cfg):
    from . import fileio as F
    from .errors import InvariantError

    out = cfg["out_dir"]
    mpath = os.path.join(out, "manifest.json")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"no manifest at {mpath}")
    bad = F.verify_manifest(out)
    if bad:
        raise InvariantError(f"manifest mismatch: {', '.join(bad)}")
    print(f"manifest ok: {out}")
    return 0


HANDLERS = {
    "bake-geometry": cmd_bake_geometry,
    "bake-texture": cmd_bake_texture,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "verify": cmd_verify,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.deterministic:
        _pin_threads(1)
    elif args.threads:
        _pin_threads(args.threads)

    from .config import load_config
    from .errors import ConfigError, DimensionError, InvariantError, ParseError

    try:
        overrides = {"seed": args.seed, "out_dir": args.out}
        if args.deterministic:
            overrides["deterministic"] = True
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = load_config(args.config, overrides)
        if cfg["deterministic"] and not args.deterministic:
            _pin_threads(1)
        elif cfg["threads"] and not args.threads:
            _pin_threads(cfg["threads"])
        return HANDLERS[args.cmd](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (InvariantError, DimensionError) as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 3
    except (ParseError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
