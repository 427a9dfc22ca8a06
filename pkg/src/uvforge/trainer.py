"""Desk-scale training harness.

Scenes are procedural meshes with procedural ground-truth textures; views are
renders of those textures from the fixed rig. The model regresses the UV
texture from the views, with masked MSE on covered texels. Plain regression
instead of a denoising objective: it isolates the attention/encoding
mechanics and stays finite-difference checkable.

Determinism: every stochastic decision in a step comes from a fresh
generator seeded by (seed, step), so interrupted runs resume bit-exactly and
two runs with equal configs produce identical checkpoints.
"""

import os
import time
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

import numpy as np

from . import baker as B
from . import encoding as E
from . import fileio as F
from . import geometry as G
from . import metrics as MX
from . import model as M
from . import raster as R
from . import tensor as T
from . import textures as X
from .errors import ConfigError

# every mesh kind paired with the texture families it trains/evals on
DEFAULT_SUITE = (
    ("quad", "checker"),
    ("quad", "gradient3d"),
    ("quad", "sinmix"),
    ("cube6chart", "gradient3d"),
    ("cube6chart", "sinmix"),
    ("cube6chart", "stripes"),
    ("uvsphere", "gradient3d"),
    ("uvsphere", "sinmix"),
    ("uvsphere", "stripes"),
    ("two_plane_occluder", "gradient3d"),
    ("two_plane_occluder", "sinmix"),
    ("two_plane_occluder", "stripes"),
)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 2000
    batch: int = 2
    seed: int = 0
    drop_view_p: float = 0.1
    shuffle_views: bool = True
    corruption_strengths: tuple = (0.1, 0.25, 0.5)
    corruption_p: float = 0.5
    ablation: str = "full"
    widths: tuple = (64, 128)
    heads: int = 2
    bands: int = 10
    uv_res: int = 128
    view_res: int = 96
    n_views: int = 6
    train_variants: int = 3
    eval_variants: int = 1
    checkpoint_every: int = 500
    log_every: int = 10
    # draw a fresh texture instance every step instead of cycling a fixed
    # set; procedural textures make the corpus effectively unbounded, which
    # is what forces the view-copying mechanism instead of memorization
    fresh_textures: bool = True

    def __post_init__(self):
        if not 0.0 <= self.drop_view_p < 1.0:
            raise ConfigError(f"drop_view_p must be in [0,1), got {self.drop_view_p}")
        if self.ablation not in M.ABLATIONS:
            raise ConfigError(f"ablation {self.ablation!r} not in {M.ABLATIONS}")
        if self.batch < 1 or self.steps < 0:
            raise ConfigError("batch must be >= 1 and steps >= 0")


@dataclass
class SceneBundle:
    kind: str
    mesh: object
    norm: G.SceneNorm
    cams: list
    geo: R.GeoMaps
    views: list  # geometry-only renders (rgb all zero)
    vis: np.ndarray
    uv_embed: T.Tensor
    view_embeds: list


@dataclass
class TrainSample:
    scene: SceneBundle
    tex_kind: str
    tex_params: dict
    target: np.ndarray  # [H,W,3] ground-truth texture
    view_rgbs: list  # clean per-view colors


def build_scene(kind, uv_res=128, view_res=96, n_views=6, rig=None):
    mesh, norm = G.normalize_scene(G.make_procedural(kind))
    cams = G.fixed_rig(n_views=n_views, width=view_res, height=view_res, **(rig or {}))
    geo = R.bake_uv(mesh, uv_res, uv_res)
    views = [R.render_view(mesh, c) for c in cams]
    vis = R.compute_visibility(geo, views, cams)
    return SceneBundle(
        kind=kind, mesh=mesh, norm=norm, cams=cams, geo=geo, views=views, vis=vis,
        uv_embed=E.fourier_embed(geo),
        view_embeds=[E.fourier_embed(v) for v in views],
    )


def _sample_views(scene, target):
    rgbs = []
    for view in scene.views:
        rgb = np.zeros(view.rgb.shape, dtype=np.float32)
        if view.mask.any():
            rgb[view.mask] = R.sample_texture(target, view.uv[view.mask])
        rgbs.append(rgb)
    return rgbs


def make_dataset(cfg, specs=DEFAULT_SUITE, variants=None, rng=None, scenes=None, rig=None):
    """One TrainSample per (mesh kind, texture family) per variant.

    Pass the rng from a disjoint stream for held-out data: families repeat
    across splits, exact texture instances never do.
    """
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 0xDA7A])
    variants = variants if variants is not None else cfg.train_variants
    scenes = scenes if scenes is not None else {}
    samples = []
    for kind, tex_kind in specs:
        if kind not in scenes:
            scenes[kind] = build_scene(kind, cfg.uv_res, cfg.view_res, cfg.n_views, rig)
        scene = scenes[kind]
        for _ in range(variants):
            params = X.sample_params(tex_kind, rng)
            target = X.bake_texture_map(scene.geo, tex_kind, params)
            samples.append(
                TrainSample(scene, tex_kind, params, target, _sample_views(scene, target))
            )
    return scenes, samples


def step_rng(seed, step):
    return np.random.default_rng([seed, 0x57E9, step])


def redraw_texture(sample, rng):
    """Same scene and family, brand-new texture instance."""
    params = X.sample_params(sample.tex_kind, rng)
    target = X.bake_texture_map(sample.scene.geo, sample.tex_kind, params)
    return TrainSample(sample.scene, sample.tex_kind, params, target,
                       _sample_views(sample.scene, target))


def _bp_front(sample, rgb0):
    """Back-project the front (azimuth 0) view only; color prior for no_ref_attn."""
    scene = sample.scene
    front = SimpleNamespace(rgb=rgb0, mask=scene.views[0].mask)
    res = B.backproject_bake(scene.geo, [front], scene.cams[:1], scene.vis[:1])
    return res.texture


def assemble_views(sample, cfg, rng, want_bp):
    """Apply corruption, view dropout, and shuffle; returns (views, embeds, bp)."""
    scene = sample.scene
    n = len(scene.cams)
    # views that actually see the surface; rear views of one-sided geometry
    # are legitimately empty and useless to corrupt or to keep as the sole
    # survivor of dropout
    alive = [i for i in range(n) if scene.views[i].mask.any()] or list(range(n))
    rgbs = list(sample.view_rgbs)
    if cfg.corruption_p > 0 and rng.uniform() < cfg.corruption_p:
        j = alive[int(rng.integers(len(alive)))]
        mode = R.CORRUPT_MODES[int(rng.integers(len(R.CORRUPT_MODES)))]
        s = float(cfg.corruption_strengths[int(rng.integers(len(cfg.corruption_strengths)))])
        rgbs[j], _ = R.corrupt_view(rgbs[j], scene.views[j].mask, mode, s, rng)
    bp = _bp_front(sample, rgbs[0]) if want_bp else None
    keep = rng.uniform(size=n) >= cfg.drop_view_p
    if not keep[alive].any():
        keep[alive[int(rng.integers(len(alive)))]] = True  # never drop every live view
    order = rng.permutation(n) if cfg.shuffle_views else np.arange(n)
    views = []
    embeds = []
    for i in order:
        mask = scene.views[i].mask if keep[i] else np.zeros_like(scene.views[i].mask)
        views.append(SimpleNamespace(rgb=rgbs[i], mask=mask))
        embeds.append(scene.view_embeds[i])
    return views, embeds, bp


def clean_views(sample, want_bp=False):
    views = [
        SimpleNamespace(rgb=rgb, mask=view.mask)
        for rgb, view in zip(sample.view_rgbs, sample.scene.views)
    ]
    bp = _bp_front(sample, sample.view_rgbs[0]) if want_bp else None
    return views, list(sample.scene.view_embeds), bp


def loss(pred, target, coverage):
    """Masked MSE over covered texels (the training objective)."""
    return M.masked_mse(pred, target, coverage)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, opt, step):
    named = dict(model.params())
    for (k, _), m, v in zip(model.trainable().items(), opt.m, opt.v):
        named[f"opt.m.{k}"] = m
        named[f"opt.v.{k}"] = v
    named["opt.t"] = np.array([opt.t], dtype=np.float32)
    named["meta.step"] = np.array([step], dtype=np.float32)
    F.save_weights(path, {k: (p.data if isinstance(p, T.Tensor) else p) for k, p in named.items()})


def load_checkpoint(path, model, opt=None):
    named = F.load_weights(path)
    model.load_state(named)
    if opt is not None:
        for i, (k, _) in enumerate(model.trainable().items()):
            opt.m[i][:] = named[f"opt.m.{k}"]
            opt.v[i][:] = named[f"opt.v.{k}"]
        opt.t = int(named["opt.t"][0])
    return int(named["meta.step"][0])


# ---------------------------------------------------------------------------
# training loop


def _loss_psnr(loss):
    return min(99.0, float(10.0 * np.log10(1.0 / max(loss, 1e-10))))


def train(cfg, samples, model, out_dir=None, resume=None, quiet=True):
    """Run cfg.steps optimization steps; returns the metrics history."""
    params = list(model.trainable().values())
    opt = T.Adam(params, lr=cfg.lr)
    start = 0
    if resume is not None:
        start = load_checkpoint(resume, model, opt) + 1
    want_bp = model.ablation == "no_ref_attn"
    log_path = os.path.join(out_dir, "metrics.log") if out_dir else None
    history = []
    lines = []
    t0 = time.time()
    for step in range(start, cfg.steps):
        rng = step_rng(cfg.seed, step)
        idx = rng.integers(0, len(samples), size=cfg.batch)
        with T.Tape() as tape:
            total = None
            for i in idx:
                s = samples[i]
                if cfg.fresh_textures:
                    s = redraw_texture(s, rng)
                views, embeds, bp = assemble_views(s, cfg, rng, want_bp)
                pred = M.forward(model, s.scene.geo, s.scene.uv_embed, views, embeds, bp)
                loss = M.masked_mse(pred, s.target, s.scene.geo.mask)
                total = loss if total is None else T.add(total, loss)
            if cfg.batch > 1:
                total = T.scale(total, 1.0 / cfg.batch)
            tape.backward(total)
        opt.step()
        opt.zero_grad()
        lval = float(total.data)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            row = {"step": step, "loss": lval, "psnr": _loss_psnr(lval)}
            history.append(row)
            lines.append(f"{step}\t{lval:.8f}\t{row['psnr']:.3f}\n")
            if not quiet:
                print(f"step {step:5d}  loss {lval:.6f}  ({time.time() - t0:.1f}s)")
        if out_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"ckpt_{step + 1:06d}.uvfb"), model, opt, step)
            if log_path:
                F.atomic_write_bytes(log_path, "".join(lines).encode())
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "ckpt_final.uvfb"), model, opt, cfg.steps - 1)
        if log_path:
            F.atomic_write_bytes(log_path, "".join(lines).encode())
    return history


# ---------------------------------------------------------------------------
# evaluation


def predict(model, sample, views=None, embeds=None, bp=None, diag=None):
    if views is None:
        views, embeds, bp = clean_views(sample, want_bp=model.ablation == "no_ref_attn")
    pred = M.forward(
        model, sample.scene.geo, sample.scene.uv_embed, views, embeds, bp, diag=diag
    )
    return np.clip(pred.data.transpose(1, 2, 0), 0.0, 1.0)


def evaluate(model, samples, capture_diag=False):
    rows = []
    for s in samples:
        diag = {"capture_weights": True} if capture_diag else None
        img = predict(model, s, diag=diag)
        mask = s.scene.geo.mask
        row = {
            "scene": s.scene.kind,
            "texture": s.tex_kind,
            "psnr": MX.psnr(img, s.target, mask),
            "ssim": MX.ssim(img, s.target, mask),
        }
        occl = R.occlusion_mask(s.scene.vis) & mask
        if occl.any():
            row["occl_psnr"] = MX.psnr(img, s.target, occl)
        if capture_diag and "ref.weights" in (diag or {}):
            row["ref_view_entropy"] = _mean_view_entropy(diag, len(s.scene.cams))
        rows.append(row)
    return rows


def _mean_view_entropy(diag, n_views):
    import math

    from .attention import view_mass_entropy

    ents = [
        view_mass_entropy(v, n_views)
        for k, v in diag.items()
        if k.endswith("ref.weights") or k == "ref.weights"
    ]
    return float(np.mean(ents)) if ents else math.nan


def bake_comparison(sample):
    """Backproject + island fill on the clean views, plus the masks the
    acceptance probes care about."""
    scene = sample.scene
    views = [
        SimpleNamespace(rgb=rgb, mask=v.mask) for rgb, v in zip(sample.view_rgbs, scene.views)
    ]
    res = B.backproject_bake(scene.geo, views, scene.cams, scene.vis)
    filled = B.naive_fill(res, scene.geo, scene.mesh)
    occl = R.occlusion_mask(scene.vis) & scene.geo.mask
    double = res.view_has.sum(axis=0) >= 2
    return filled, occl, double


def summarize(rows, key):
    vals = [r[key] for r in rows if key in r]
    return float(np.mean(vals)) if vals else float("nan")


# ---------------------------------------------------------------------------
# ablations


def run_ablation(cfg, samples_train, samples_eval, out_dir=None, arms=M.ABLATIONS):
    """Train every arm under identical seeds/data; report held-out metrics."""
    rows = []
    for arm in arms:
        model = M.init_model(cfg.widths, cfg.heads, cfg.seed, ablation=arm, bands=cfg.bands)
        arm_dir = os.path.join(out_dir, arm) if out_dir else None
        if arm_dir:
            os.makedirs(arm_dir, exist_ok=True)
        train(replace(cfg, ablation=arm), samples_train, model, out_dir=arm_dir)
        ev = evaluate(model, samples_eval, capture_diag=True)
        rows.append(
            {
                "arm": arm,
                "seed": cfg.seed,
                "psnr": summarize(ev, "psnr"),
                "ssim": summarize(ev, "ssim"),
                "occl_psnr": summarize(ev, "occl_psnr"),
                "ref_view_entropy": summarize(ev, "ref_view_entropy"),
            }
        )
    return rows
