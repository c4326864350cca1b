"""Command-line entry point: ``dsir <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import contrastive, masrnet, metrics, phantom, registration
from .io import config_from_dict, load_config, read_volume, write_volume
from .volume import DisplacementField, LabelVolume, Volume, warp, warp_labels

log = logging.getLogger("dsir")

EXT = ".f32"


class UsageError(Exception):
    pass


def _tuple(text: str, cast=float) -> tuple:
    return tuple(cast(t) for t in text.split(","))


def _load_scalar(path) -> Volume:
    obj = read_volume(path)
    if not isinstance(obj, Volume):
        raise UsageError(f"{path} does not hold an intensity volume")
    return obj


def _load_labels(path) -> LabelVolume:
    obj = read_volume(path)
    if isinstance(obj, LabelVolume):
        return obj
    if isinstance(obj, Volume):
        return LabelVolume(np.rint(obj.data).astype(np.int16))
    raise UsageError(f"{path} does not hold a label map")


def _section(cfg: dict, name: str) -> dict:
    """Config files may nest keys under the subcommand name or keep them flat."""
    return dict(cfg.get(name, {})) if name in cfg else {k: v for k, v in cfg.items() if not isinstance(v, dict)}


# --------------------------------------------------------------------------
# subcommands


def cmd_phantom(args, cfg) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = (args.dims,) * 3
    for i in range(args.count):
        seed = args.seed + i
        ph = phantom.generate_phantom(seed, dims)
        stem = out / f"phantom_{i:03d}"
        write_volume(ph.intensity, f"{stem}{EXT}")
        write_volume(ph.labels, f"{stem}_labels{EXT}")
        if args.amplitude is not None:
            fixed, other = phantom.make_modality_pair(ph, seed)
            gt = phantom.synth_deformation(seed, dims, args.amplitude)
            write_volume(warp(other, gt), f"{stem}_moving{EXT}")
            write_volume(warp_labels(ph.labels, gt), f"{stem}_moving_labels{EXT}")
            write_volume(phantom.invert_field(gt), f"{stem}_gt_field{EXT}")
    print(f"wrote {args.count} phantoms to {out}")
    return 0


def _corpus(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.glob(f"phantom_*{EXT}")
                            if not any(tag in f.name for tag in ("_labels", "_moving", "_gt_field")))
        else:
            files.append(p)
    return files


def cmd_train(args, cfg) -> int:
    files = _corpus(args.data)
    if not files:
        raise UsageError("no training volumes found")
    corpus = [_load_scalar(f) for f in files]
    section = _section(cfg, "train")
    net_keys = set(masrnet.MasrNetConfig.__dataclass_fields__)
    net_cfg = masrnet.MasrNetConfig.from_dict({k: v for k, v in section.items() if k in net_keys}
                                             | ({"n_features": args.features} if args.features else {}))
    epochs = args.epochs
    if epochs is None and args.steps is not None and "epochs" not in section:
        epochs = -(-args.steps // len(corpus))
    train_cfg = config_from_dict(
        contrastive.TrainConfig, {k: v for k, v in section.items() if k not in net_keys},
        n_samples=args.n_samples, learning_rate=args.lr, max_steps=args.steps, epochs=epochs,
        crop=args.crop, seed=args.seed)
    result = contrastive.train(corpus, train_cfg, net_cfg, checkpoint_dir=args.out)
    if args.trace:
        contrastive.write_trace_csv(result.trace, args.trace)
    running = result.running_losses(train_cfg.running_window)
    print(f"steps {len(result.trace)} running loss {running[0]:.6f} -> {running[-1]:.6f}")
    return 0


def _registration_config(args, cfg) -> registration.RegistrationConfig:
    section = _section(cfg, "register")
    rcfg = config_from_dict(registration.RegistrationConfig, section, metric=args.metric,
                            checkpoint=args.checkpoint)
    if rcfg.metric == "dns" and rcfg.checkpoint is None:
        raise UsageError("--metric dns requires --checkpoint")
    return rcfg


def cmd_register(args, cfg) -> int:
    rcfg = _registration_config(args, cfg)
    F, M = _load_scalar(args.fixed), _load_scalar(args.moving)
    result = registration.register(F, M, rcfg)
    write_volume(result.field, args.out)
    if args.trace:
        registration.write_registration_trace(result.trace, args.trace)
    if args.warped:
        write_volume(warp(M, result.field), args.warped)
    _, fold = metrics.jacobian_folding(result.field)
    print(f"metric {rcfg.metric} levels {len(result.level_dims)} folding {fold:.4f}% "
          f"time {result.wall_time:.1f}s")
    return 0


def cmd_eval(args, cfg) -> int:
    fixed = _load_labels(args.fixed_labels)
    if args.warped_labels:
        warped = _load_labels(args.warped_labels)
        field = None
    else:
        if not args.moving_labels:
            raise UsageError("eval needs --warped-labels or --moving-labels")
        moving = _load_labels(args.moving_labels)
        field = read_volume(args.field) if args.field else DisplacementField.zeros(moving.dims)
        if not isinstance(field, DisplacementField):
            raise UsageError(f"{args.field} does not hold a displacement field")
        warped = warp_labels(moving, field)
    if fixed.dims != warped.dims:
        raise ValueError(f"label dims differ: {fixed.dims} vs {warped.dims}")
    labels = sorted(set(np.unique(fixed.data).tolist()) | set(np.unique(warped.data).tolist()))
    print("label\tdice\thd95")
    for lab in labels:
        if lab == 0:
            continue
        a, b = fixed.mask(lab), warped.mask(lab)
        d = metrics.dice(a, b)
        h = metrics.hd95(a, b) if a.data.any() and b.data.any() else float("nan")
        print(f"{lab}\t{d:.4f}\t{h:.4f}")
    if field is not None:
        _, fold = metrics.jacobian_folding(field)
        print(f"folding\t{fold:.4f}%")
    return 0


def _descriptor_fields(args, F, M):
    if args.metric == "mind":
        from .baselines import mind
        return mind(F), mind(M)
    if args.checkpoint is None:
        raise UsageError("--metric dns requires --checkpoint")
    model = masrnet.load_model(args.checkpoint)
    return (np.moveaxis(registration.embed(F, model), 0, -1),
            np.moveaxis(registration.embed(M, model), 0, -1))


def cmd_heatmap(args, cfg) -> int:
    F, M = _load_scalar(args.fixed), _load_scalar(args.moving)
    src, tgt = _descriptor_fields(args, F, M)
    point = tuple(args.point)
    if any(not 0 <= p < n for p, n in zip(point, F.dims)):
        raise UsageError(f"--point {point} lies outside dims {F.dims}")
    heat = metrics.similarity_heatmap(src, tgt, point)
    write_volume(heat, args.out)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("i,j,k,similarity\n")
            for idx in np.ndindex(heat.dims):
                fh.write(f"{idx[0]},{idx[1]},{idx[2]},{heat.data[idx]!r}\n")
    peak = np.unravel_index(int(np.argmax(heat.data)), heat.dims)
    print(f"peak {tuple(int(p) for p in peak)} value {heat.data[peak]:.4f}")
    return 0


def cmd_landscape(args, cfg) -> int:
    F, M = _load_scalar(args.fixed), _load_scalar(args.moving)
    model = None
    if args.metric == "dns":
        if args.checkpoint is None:
            raise UsageError("--metric dns requires --checkpoint")
        model = masrnet.load_model(args.checkpoint)
    cost = registration.descriptor_cost(args.metric, model)
    grid = metrics.rotation_grid(-args.range, args.range, args.step)
    rows = metrics.loss_landscape(F, M, cost, grid)
    metrics.write_landscape_csv(rows, args.out)
    pick = max if args.metric == "nmi" else min
    best = pick(rows, key=lambda r: r[2])
    print(f"optimum at ({best[0]:g}, {best[1]:g}) cost {best[2]:.6f}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsir", description="Modality-agnostic structural representations for deformable registration.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    parser.add_argument("--config", help="JSON or YAML file; flags override its keys")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--dims", type=int, default=48)
    p.add_argument("--amplitude", type=float, help="also write a deformed, contrast-inverted moving image")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="contrastive training")
    p.add_argument("--data", nargs="+", required=True, help="volume files or phantom directories")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--crop", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--trace", help="loss trace CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="instance-optimisation registration")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--metric", choices=registration.METRICS)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True, help="displacement field output")
    p.add_argument("--warped", help="warped moving image output")
    p.add_argument("--trace", help="loss trace CSV")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="Dice / HD95 / folding")
    p.add_argument("--fixed-labels", required=True)
    p.add_argument("--moving-labels")
    p.add_argument("--warped-labels")
    p.add_argument("--field")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="descriptor similarity map for one point")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--metric", choices=("dns", "mind"), default="dns")
    p.add_argument("--checkpoint")
    p.add_argument("--point", type=int, nargs=3, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("landscape", help="cost over a grid of rotations")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--metric", choices=registration.METRICS, default="dns")
    p.add_argument("--checkpoint")
    p.add_argument("--range", type=float, default=30.0)
    p.add_argument("--step", type=float, default=5.0)
    p.add_argument("--out", required=True, help="CSV output")
    p.set_defaults(func=cmd_landscape)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        with threadpool_limits(limits=args.threads):
            return args.func(args, cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"dsir: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
