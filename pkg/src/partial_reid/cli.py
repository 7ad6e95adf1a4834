"""Command-line entry point: ``prid <command> [options]``.

Exit codes: 0 success, 1 I/O or runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import toy
from .alignment import align_with_report, compute_reference, read_joint_file, resolve_path
from .config import ConfigError, RunConfig, resolve_config
from .cropgen import CropSpec, generate_dataset, read_frame_manifest, write_manifest
from .errors import FormatError, PartialReIDError
from .evaluation import EvalReport, LabeledSet, ProtocolConfig, run_protocol
from .features import FeatureRecord, HistogramEmbedder, PRESET_DIM, combine, read_feature_file, write_feature_file
from .hallucination import (CycleObjectiveConfig, apply_completion, baseline_fill, image_discriminator,
                            image_generator, image_to_vector, linear_fixture_1d, save_params, train_cycle,
                            write_trace)
from .imaging import ImageBuffer, ValidityMask, load_image, load_mask, resize, save_image, save_mask
from .rng import substream

log = logging.getLogger("partial_reid")


class UsageError(Exception):
    pass


# --- helpers --------------------------------------------------------------------

def _config(args, keys) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in keys}
    return resolve_config(getattr(args, "config", None), overrides)


def _echo_config(cfg: RunConfig, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"resolved_config.{command}.json").write_text(cfg.to_json(), encoding="utf-8")


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}: {exc.msg}", line=lineno) from exc
    return out


def _write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def _rel(path: Path, start: Path) -> str:
    return os.path.relpath(path, start).replace(os.sep, "/")


# --- commands ---------------------------------------------------------------------

def cmd_gen_crops(args) -> int:
    cfg = _config(args, ("s", "o_min", "seed"))
    out = Path(args.out)
    spec = CropSpec(cfg.s, cfg.o_min, cfg.seed)
    manifest_path = Path(args.input_manifest)
    frames = read_frame_manifest(manifest_path)
    report = generate_dataset(frames, spec, out_dir=out, frame_root=manifest_path.parent)
    write_manifest(out / "manifest.jsonl", report.records)
    _echo_config(cfg, out, "gen-crops")
    stats = report.overlap_stats()
    print(f"records: {len(report.records)}  pairs: {report.n_pairs}  skipped identities: {len(report.skipped_identities)}")
    if report.n_pairs:
        print(f"overlap: min {stats['min']:.4f}  mean {stats['mean']:.4f}  max {stats['max']:.4f}")
    return 0


def cmd_align(args) -> int:
    cfg = _config(args, ("n_sigma", "ref_width", "ref_height", "min_scale", "seed", "threads"))
    out = Path(args.out)
    joints_path = Path(args.joints)
    records = read_joint_file(joints_path)
    ref_path = Path(args.reference_joints) if args.reference_joints else joints_path
    training = records if ref_path == joints_path else read_joint_file(ref_path)
    ref = compute_reference([r.joints for r in training], cfg.ref_width, cfg.ref_height, cfg.n_sigma)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def work(rec):
        image = load_image(resolve_path(joints_path.parent, rec.image))
        if args.resize_only:
            img = resize(image, ref.width, ref.height)
            res = (img, ValidityMask.all_valid(ref.width, ref.height), None, 0, True)
        else:
            r = align_with_report(image, rec.joints, ref, min_scale=cfg.min_scale)
            res = (r.image, r.mask, r.transform, r.n_reliable, r.fallback)
        stem = Path(rec.image).stem
        save_image(res[0], out / "images" / f"{stem}.png")
        save_mask(res[1], out / "masks" / f"{stem}.png")
        return rec, stem, res

    results = _pmap(work, records, cfg.threads)
    rows, manifest = [], []
    for rec, stem, (img, mask, t, n_rel, fallback) in results:
        if t is None:
            scale, tx, ty = ref.height / img.height, 0.0, 0.0
        else:
            scale, tx, ty = t.scale, t.tx, t.ty
        rows.append([rec.image, repr(scale), repr(tx), repr(ty), n_rel, int(fallback)])
        manifest.append({**rec.extra, "frame": f"images/{stem}.png", "mask": f"masks/{stem}.png",
                         "source": rec.image})
    with open(out / "transforms.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "scale", "tx", "ty", "n_reliable", "fallback"])
        w.writerows(rows)
    _write_jsonl(out / "manifest.jsonl", manifest)
    _echo_config(cfg, out, "align")
    print(f"aligned {len(rows)} images, {sum(r[5] for r in rows)} via resize fallback")
    return 0


def _run_fixture(cfg: RunConfig, out: Path) -> int:
    f = linear_fixture_1d(cfg.seed)
    models, trace = train_cycle(f.pgn, f.pcn, f.d_phi, f.d_h, f.phi, f.h, CycleObjectiveConfig(cfg.lam),
                                cfg.steps, cfg.lr, substream(cfg.seed, 2), batch_size=cfg.batch_size)
    write_trace(out / "loss_trace.csv", trace)
    for name, m in models._asdict().items():
        save_params(m, out / f"{name}.bin")
    print(f"l_total: initial {trace[0].l_total:.4f}  final {trace[-1].l_total:.4f}  "
          f"ratio {trace[-1].l_total / trace[0].l_total:.3f}")
    return 0


def cmd_hallucinate(args) -> int:
    cfg = _config(args, ("mode", "lam", "lr", "steps", "batch_size", "hidden", "seed", "threads"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out, "hallucinate")
    if args.fixture:
        if cfg.mode != "tiny-trained":
            raise UsageError("--fixture requires --mode tiny-trained")
        return _run_fixture(cfg, out)
    if not args.manifest:
        raise UsageError("--manifest is required unless --fixture is given")
    manifest_path = Path(args.manifest)
    base = manifest_path.parent
    records = _read_jsonl(manifest_path)
    for i, r in enumerate(records, start=1):
        if "frame" not in r or "mask" not in r:
            raise FormatError(f"{manifest_path}: record needs 'frame' and 'mask'", line=i)

    def load(r):
        return load_image(base / r["frame"]), load_mask(base / r["mask"])

    pairs = _pmap(load, records, cfg.threads)
    (out / "images").mkdir(exist_ok=True)

    if cfg.mode == "baseline":
        filled = _pmap(lambda p: baseline_fill(*p), pairs, cfg.threads)
    else:
        phi = np.stack([image_to_vector(img) for img, _ in pairs])
        if args.full_manifest:
            fm = Path(args.full_manifest)
            full = [load_image(fm.parent / r["frame"]) for r in _read_jsonl(fm)]
        else:
            full = [baseline_fill(img, m) for img, m in pairs]
        h = np.stack([image_to_vector(img) for img in full])
        pcn = image_generator(cfg.hidden, seed=cfg.seed)
        pgn = image_generator(cfg.hidden, seed=cfg.seed + 1)
        d_phi = image_discriminator(seed=cfg.seed + 2)
        d_h = image_discriminator(seed=cfg.seed + 3)
        models, trace = train_cycle(pgn, pcn, d_phi, d_h, phi, h, CycleObjectiveConfig(cfg.lam), cfg.steps,
                                    cfg.lr, substream(cfg.seed, 2), batch_size=cfg.batch_size)
        write_trace(out / "loss_trace.csv", trace)
        for name, m in models._asdict().items():
            save_params(m, out / f"{name}.bin")
        filled = [apply_completion(models.pcn, img, m) for img, m in pairs]

    new_records = []
    for r, img in zip(records, filled):
        name = f"images/{Path(r['frame']).stem}.png"
        save_image(img, out / name)
        new_records.append({**r, "frame": _rel(base / r["frame"], out), "mask": _rel(base / r["mask"], out),
                            "hallucinated": name})
    _write_jsonl(out / "manifest.jsonl", new_records)
    print(f"hallucinated {len(new_records)} images ({cfg.mode})")
    return 0


def _embedder(cfg: RunConfig, preset: str | None, channels: int) -> HistogramEmbedder:
    dim = cfg.dim or None
    n = cfg.n_strides
    if preset == "256":
        dim, n = PRESET_DIM, 6
    return HistogramEmbedder(n_strides=n, bins=cfg.bins, dim=dim, channels=channels, seed=cfg.seed)


def cmd_embed(args) -> int:
    cfg = _config(args, ("n_strides", "bins", "dim", "sources", "seed", "threads"))
    manifest_path = Path(args.manifest)
    base = manifest_path.parent
    records = _read_jsonl(manifest_path)
    if args.camera is not None:
        records = [r for r in records if int(r.get("camera", -1)) == args.camera]
    if not records:
        raise UsageError("no records to embed")
    for i, r in enumerate(records, start=1):
        if "frame" not in r or "identity" not in r or "camera" not in r:
            raise FormatError(f"{manifest_path}: record needs identity, camera and frame", line=i)
    first = load_image(base / records[0]["frame"])
    emb = _embedder(cfg, args.preset, first.channels)

    def work(r):
        phi = emb(load_image(base / r["frame"]))
        if cfg.sources == 1:
            from .features import CombinedFeature
            return CombinedFeature(phi.vectors, sources=1)
        h_path = r.get("hallucinated", r["frame"])
        return combine(emb(load_image(base / h_path)), phi)

    feats = _pmap(work, records, cfg.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_file(out, [FeatureRecord(r["identity"], int(r["camera"]), f) for r, f in zip(records, feats)])
    _echo_config(cfg, out.parent, f"embed.{out.stem}")
    f0 = feats[0]
    print(f"embedded {len(feats)} records: n_strides={f0.n_strides} dim={f0.dim} sources={f0.sources} "
          f"length={len(f0)}")
    return 0


def _labeled(path) -> LabeledSet:
    ff = read_feature_file(path)
    if not ff.records:
        raise UsageError(f"{path} holds no records")
    return LabeledSet.from_records([(r.identity, r.camera, r.feature) for r in ff.records],
                                   keys=[f"{Path(path).name}#{i}" for i in range(len(ff.records))])


def cmd_eval(args) -> int:
    cfg = _config(args, ("protocol", "trials", "seed", "query_camera"))
    queries = _labeled(args.query)
    gallery = _labeled(args.gallery) if args.gallery else None
    pc = ProtocolConfig(cfg.protocol, seed=cfg.seed, query_camera=cfg.query_camera,
                        exclude_same_camera=args.exclude_same_camera, single_shot=args.single_shot)
    report = run_protocol(pc, queries, gallery, trials=cfg.trials)
    text = report.to_json()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
        _echo_config(cfg, out.parent, f"eval.{out.stem}")
    print(text)
    print(report.table(args.label or ""))
    return 0


def run_demo(out: Path, seed: int = 0, threads: int = 1, quiet: bool = False) -> dict[str, EvalReport]:
    """Full chain on the toy set for the aligned and the resize-only pipelines."""
    data = out / "toy"
    paths = toy.write_toy_dataset(data, seed=seed)
    common = ["--seed", str(seed), "--threads", str(threads)]
    size = ["--ref-width", str(toy.WIDTH), "--ref-height", str(toy.HEIGHT)]
    steps = [
        ["gen-crops", "--input-manifest", str(paths["frames"]), "--s", "0.5", "--o-min", "0.25",
         "--out", str(out / "crops"), "--seed", str(seed)],
    ]
    for variant, extra in (("aligned", []), ("baseline", ["--resize-only"])):
        root = out / variant
        steps += [
            ["align", "--joints", str(paths["view_joints"]), "--reference-joints", str(paths["train_joints"]),
             "--out", str(root / "align"), *size, *common, *extra],
            ["hallucinate", "--manifest", str(root / "align" / "manifest.jsonl"), "--mode", "baseline",
             "--out", str(root / "hall"), *common],
            ["embed", "--manifest", str(root / "hall" / "manifest.jsonl"), "--camera", "0",
             "--out", str(root / "query.bin"), *common],
            ["embed", "--manifest", str(root / "hall" / "manifest.jsonl"), "--camera", "1",
             "--out", str(root / "gallery.bin"), *common],
            ["eval", "--query", str(root / "query.bin"), "--gallery", str(root / "gallery.bin"),
             "--protocol", "crop-cuhk03", "--out", str(root / "report.json"), "--label", variant, *common],
        ]
    for argv in steps:
        if quiet:
            import contextlib
            import io

            with contextlib.redirect_stdout(io.StringIO()):
                status = main(argv)
        else:
            status = main(argv)
        if status != 0:
            raise RuntimeError(f"demo step failed ({status}): {' '.join(argv)}")
    return {v: EvalReport.from_dict(json.loads((out / v / "report.json").read_text())) for v in ("aligned", "baseline")}


def cmd_demo(args) -> int:
    cfg = _config(args, ("seed", "threads"))
    out = Path(args.out)
    t0 = time.perf_counter()
    reports = run_demo(out, seed=cfg.seed, threads=cfg.threads, quiet=True)
    _echo_config(cfg, out, "demo")
    print(reports["aligned"].table("aligned + hallucinated"))
    print(reports["baseline"].table("resize baseline").splitlines()[1])
    print(f"demo finished in {time.perf_counter() - t0:.1f} s; outputs in {out}")
    return 0


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prid", description="Partial person re-identification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value or JSON config file; flags take precedence")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        return sp

    sp = common(sub.add_parser("gen-crops", help="synthesize paired partial crops"))
    sp.add_argument("--input-manifest", required=True)
    sp.add_argument("--s", type=float, dest="s", required=True)
    sp.add_argument("--o-min", type=float, dest="o_min", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_crops)

    sp = common(sub.add_parser("align", help="align views into the reference frame"))
    sp.add_argument("--joints", required=True, help="joint file of the images to align")
    sp.add_argument("--reference-joints", help="training joint file (defaults to --joints)")
    sp.add_argument("--ref-width", type=int)
    sp.add_argument("--ref-height", type=int)
    sp.add_argument("--n-sigma", type=float)
    sp.add_argument("--min-scale", type=float)
    sp.add_argument("--resize-only", action="store_true", help="skip alignment and just resize")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_align)

    sp = common(sub.add_parser("hallucinate", help="fill padded regions of aligned views"))
    sp.add_argument("--manifest", help="manifest written by align")
    sp.add_argument("--mode", choices=("baseline", "tiny-trained"))
    sp.add_argument("--fixture", choices=("linear-1d",), help="train the 1-D reference fixture instead")
    sp.add_argument("--full-manifest", help="full-body frames for the h domain (tiny-trained)")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_hallucinate)

    sp = common(sub.add_parser("embed", help="write combined stride features"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--camera", type=int, help="only embed records from this camera")
    sp.add_argument("--n-strides", type=int)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--dim", type=int, help="per-stride dimension after projection (0 = raw)")
    sp.add_argument("--sources", type=int, choices=(1, 2))
    sp.add_argument("--preset", choices=("256",), help="6 strides x 256 dims, two sources")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_embed)

    sp = common(sub.add_parser("eval", help="rank-k and mAP from feature files"))
    sp.add_argument("--query", required=True)
    sp.add_argument("--gallery")
    sp.add_argument("--protocol")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--query-camera", type=int)
    sp.add_argument("--exclude-same-camera", action="store_true", default=None)
    sp.add_argument("--single-shot", action="store_true", default=None)
    sp.add_argument("--label")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("demo", help="run the whole chain on the bundled toy set"))
    sp.add_argument("--out", default="demo_out")
    sp.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, FormatError) as exc:
        print(f"prid {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, PartialReIDError, ValueError, RuntimeError) as exc:
        print(f"prid {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
