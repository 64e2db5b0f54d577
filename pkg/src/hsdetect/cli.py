"""Command-line pipeline: ingest, statistics, detect/train, evaluate, report.

Subcommands
  detect    estimate background stats over a region and score it with a
            classical detector, streaming the cube in fixed 64-line chunks
  train-nn  train the spectral network on a labeled region
  score-nn  score a region with a saved network model
  eval      ROC/PR/log-FPR curves and a summary JSON for a score map + mask
  synth     generate a synthetic scene (cube, mask, signature) on disk
  report    consolidate summary JSONs into a per-method, per-region table

Exit codes: 0 success, 1 runtime failure, 2 input validation. Outputs are
written to a temp file and renamed, so failures leave no partial files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import background, detectors, envi_io, metrics, scene, spectral_nn, synth
from .errors import ValidationError

CHUNK_LINES = 64


def _log(message: str):
    print(message, file=sys.stderr)


def _resolve_header(raster_path: str, header_path: str | None) -> str:
    if header_path:
        if not os.path.exists(header_path):
            raise FileNotFoundError(f"header file not found: {header_path}")
        return header_path
    for candidate in (raster_path + ".hdr",
                      os.path.splitext(raster_path)[0] + ".hdr"):
        if os.path.exists(candidate):
            return candidate
    raise FileNotFoundError(f"no header found for raster: {raster_path}")


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _parse_window(text: str):
    """'l0:l1,s0:s1' -> ((l0, l1), (s0, s1)), half-open."""
    try:
        lines_part, samples_part = text.split(",")
        l0, l1 = (int(v) for v in lines_part.split(":"))
        s0, s1 = (int(v) for v in samples_part.split(":"))
    except ValueError:
        raise ValidationError(
            f"bad window '{text}' (expected l0:l1,s0:s1)"
        ) from None
    return (l0, l1), (s0, s1)


def _select_region(args, header: envi_io.EnviHeader) -> scene.Region:
    if getattr(args, "region", None):
        if not getattr(args, "presets", None):
            raise ValidationError("--region requires --presets")
        presets = scene.load_presets(_require_file(args.presets, "presets file"))
        if args.region not in presets:
            raise ValidationError(
                f"region '{args.region}' not in presets "
                f"({', '.join(sorted(presets)) or 'empty file'})"
            )
        return presets[args.region]
    if getattr(args, "window", None):
        (l0, l1), (s0, s1) = _parse_window(args.window)
        if not (0 <= l0 < l1 <= header.lines and 0 <= s0 < s1 <= header.samples):
            raise ValidationError(
                f"window {args.window} outside cube extent "
                f"{header.lines}x{header.samples}"
            )
        return scene.Region("window", l0, s0, l1 - l0, s1 - s0)
    return scene.Region("full", 0, 0, header.lines, header.samples)


def _region_window(region: scene.Region):
    return ((region.line_offset, region.line_offset + region.lines),
            (region.sample_offset, region.sample_offset + region.samples))


def _iter_line_chunks(region: scene.Region, chunk_lines: int = CHUNK_LINES):
    for l0 in range(region.line_offset, region.line_offset + region.lines,
                    chunk_lines):
        l1 = min(l0 + chunk_lines, region.line_offset + region.lines)
        yield ((l0, l1), (region.sample_offset,
                          region.sample_offset + region.samples))


def _load_mask_region(args, region: scene.Region) -> scene.GroundTruthMask:
    mask_raster = _require_file(args.mask, "mask file")
    mask_header = envi_io.read_header(
        _resolve_header(mask_raster, getattr(args, "mask_header", None)))
    mask = envi_io.read_mask(mask_header, mask_raster)
    full = scene.Region("mask", 0, 0, mask_header.lines, mask_header.samples)
    if not full.contains(region):
        raise ValidationError(
            f"region {region.lines}x{region.samples} at "
            f"({region.line_offset},{region.sample_offset}) outside mask "
            f"extent {full.lines}x{full.samples}"
        )
    return scene.crop_mask(scene.GroundTruthMask(region=full, labels=mask.labels),
                           region)


def _score_name(method: str, variant: str | None) -> str:
    return f"{method}-centered" if variant == "centered" else method


def _map_chunks(worker, windows, workers: int):
    """Apply `worker` to every chunk window, preserving window order so the
    combined result is identical for any worker count."""
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, windows))
    return [worker(w) for w in windows]


def cmd_detect(args) -> int:
    raster = _require_file(args.cube, "cube file")
    header = envi_io.read_header(_resolve_header(raster, args.header))
    signature = envi_io.read_signature(
        _require_file(args.signature, "signature file"), header.bands)
    region = _select_region(args, header)
    os.makedirs(args.out, exist_ok=True)

    exclude_labels = None
    if args.exclude_positives:
        if not args.mask:
            raise ValidationError("--exclude-positives requires --mask")
        exclude_labels = _load_mask_region(args, region).labels

    variant = "centered" if (args.method == "cem" and args.centered_cem) else None
    windows = list(_iter_line_chunks(region))
    model = None
    if args.stats_in:
        model = background.load_model(_require_file(args.stats_in, "statistics file"))
        if model.bands != header.bands:
            raise ValidationError(
                f"statistics have {model.bands} bands, cube has {header.bands}"
            )
        _log(f"loaded background statistics from {args.stats_in}")
    elif args.method != "sam":
        _log(f"estimating background over region '{region.name}' "
             f"({region.lines}x{region.samples} pixels)")

        def accumulate(window):
            chunk = envi_io.read_cube(header, raster, window=window)
            rows = chunk.values.reshape(-1, header.bands)
            if exclude_labels is not None:
                l0 = window[0][0] - region.line_offset
                nl_chunk = window[0][1] - window[0][0]
                rows = rows[exclude_labels[l0:l0 + nl_chunk].reshape(-1) == 0]
            return background.accumulate_chunk(rows)

        parts = [p for p in _map_chunks(accumulate, windows, args.parallel)
                 if p[0] > 0]
        n, s1, s2 = background.combine_partials(parts)
        if args.exclude_positives and n <= header.bands:
            raise ValidationError(
                f"insufficient background samples after exclusion: {n} pixels "
                f"for {header.bands} bands"
            )
        model = background.model_from_sums(n, s1, s2)
        if args.stats_out:
            background.save_model(model, args.stats_out)
            _log(f"wrote background statistics to {args.stats_out}")

    _log(f"scoring region with {args.method}")
    raw = np.empty((region.lines, region.samples), dtype=np.float64)

    def score(window):
        chunk = envi_io.read_cube(header, raster, window=window)
        rows = chunk.values.reshape(-1, header.bands)
        scores, flags = detectors.score_pixels(
            rows, args.method, model, signature,
            centered=args.method == "cem" and args.centered_cem)
        l0 = window[0][0] - region.line_offset
        nl_chunk = window[0][1] - window[0][0]
        raw[l0:l0 + nl_chunk] = scores.reshape(nl_chunk, region.samples)
        return flags

    flagged = sum(_map_chunks(score, windows, args.parallel))

    bad = ~np.isfinite(raw)
    if bad.any():
        idx = int(np.argmax(bad.ravel()))
        raise ValidationError(
            f"non-finite {args.method} score at line {idx // region.samples}, "
            f"sample {idx % region.samples}"
        )

    if args.method == "sam":
        smap = detectors.ScoreMap(
            region=region, scores=raw, method="sam", normalized=False,
            raw_min=float(raw.min()), raw_max=float(raw.max()), flagged=flagged)
    else:
        values, raw_min, raw_max, constant = detectors.normalize_scores(raw)
        smap = detectors.ScoreMap(
            region=region, scores=values, method=args.method,
            normalized=not constant, raw_min=raw_min, raw_max=raw_max,
            constant=constant, flagged=flagged)

    name = _score_name(args.method, variant)
    out_raster = os.path.join(args.out, f"{name}_scores.img")
    envi_io.write_scoremap(smap, out_raster + ".hdr", out_raster)
    entry = detectors.report_entry(smap, model, variant=variant)
    envi_io.atomic_write_text(os.path.join(args.out, f"{name}_report.jsonl"),
                              json.dumps(entry) + "\n")
    _log(f"wrote {out_raster}")
    return 0


def cmd_train_nn(args) -> int:
    raster = _require_file(args.cube, "cube file")
    header = envi_io.read_header(_resolve_header(raster, args.header))
    region = _select_region(args, header)
    if not args.mask:
        raise ValidationError("train-nn requires --mask")
    mask = _load_mask_region(args, region)
    os.makedirs(args.out, exist_ok=True)

    _log(f"loading training region '{region.name}' "
         f"({region.lines}x{region.samples}, {mask.positive_count} positives)")
    cube = envi_io.read_cube(header, raster, window=_region_window(region))
    cube.region = region
    table = scene.flatten(cube, mask)

    config = spectral_nn.TrainConfig(
        epochs=args.epochs, learning_rate=args.learning_rate,
        batch_size=args.batch_size, positive_weight=args.positive_weight,
        seed=args.seed)
    _log(f"training for {config.epochs} epochs (seed {config.seed})")
    params, trace = spectral_nn.train(table, config)

    model_path = os.path.join(args.out, "spectral_nn.model")
    spectral_nn.save_model(params, model_path)
    spectral_nn.write_loss_trace(trace, os.path.join(args.out, "loss_trace.csv"))
    _log(f"wrote {model_path} (final epoch loss {trace[-1]:.6g})")
    return 0


def cmd_score_nn(args) -> int:
    raster = _require_file(args.cube, "cube file")
    header = envi_io.read_header(_resolve_header(raster, args.header))
    params = spectral_nn.load_model(_require_file(args.model, "model file"))
    if params.bands != header.bands:
        raise ValidationError(
            f"model expects {params.bands} bands, cube has {header.bands}"
        )
    region = _select_region(args, header)
    os.makedirs(args.out, exist_ok=True)

    _log(f"scoring region '{region.name}' with the spectral network")
    scores = np.empty((region.lines, region.samples), dtype=np.float64)
    row0 = 0
    for window in _iter_line_chunks(region):
        chunk = envi_io.read_cube(header, raster, window=window)
        rows = (chunk.values.reshape(-1, header.bands)
                - params.input_mean) / params.input_std
        p = spectral_nn.forward(params, rows)
        nl_chunk = window[0][1] - window[0][0]
        scores[row0:row0 + nl_chunk] = p.reshape(nl_chunk, region.samples)
        row0 += nl_chunk

    smap = detectors.ScoreMap(region=region, scores=scores, method="nn",
                              normalized=False, raw_min=float(scores.min()),
                              raw_max=float(scores.max()))
    out_raster = os.path.join(args.out, "nn_scores.img")
    envi_io.write_scoremap(smap, out_raster + ".hdr", out_raster)
    entry = detectors.report_entry(smap, None)
    envi_io.atomic_write_text(os.path.join(args.out, "nn_report.jsonl"),
                              json.dumps(entry) + "\n")
    _log(f"wrote {out_raster}")
    return 0


def cmd_eval(args) -> int:
    score_raster = _require_file(args.scores, "score map file")
    score_header = envi_io.read_header(
        _resolve_header(score_raster, args.scores_header))
    scores = envi_io.read_scoremap(score_header, score_raster)

    mask_raster = _require_file(args.mask, "mask file")
    mask_header = envi_io.read_header(
        _resolve_header(mask_raster, args.mask_header))
    mask = envi_io.read_mask(mask_header, mask_raster)
    if scores.shape != mask.labels.shape:
        raise ValidationError(
            f"score map {scores.shape} and mask {mask.labels.shape} differ"
        )
    os.makedirs(args.out, exist_ok=True)

    roc_curve = metrics.roc(scores, mask.labels)
    pr_curve = metrics.pr(scores, mask.labels)
    log_curve = metrics.log_roc_resample(roc_curve, metrics.default_log_fpr_grid())

    metrics.write_curve_csv(roc_curve, os.path.join(args.out, "roc.csv"))
    metrics.write_curve_csv(pr_curve, os.path.join(args.out, "pr.csv"))
    metrics.write_curve_csv(log_curve, os.path.join(args.out, "roc_logfpr.csv"))
    positives = int(mask.positive_count)
    negatives = int(mask.labels.size - positives)
    summary = metrics.summary_dict(args.method, args.region_name,
                                   roc_curve, pr_curve, positives, negatives)
    metrics.write_summary_json(summary, os.path.join(args.out, "summary.json"))
    if args.svg:
        metrics.write_svg([(args.method, roc_curve)],
                          os.path.join(args.out, "roc.svg"))
        metrics.write_svg([(args.method, log_curve)],
                          os.path.join(args.out, "roc_log.svg"), log_x=True)
        metrics.write_svg([(args.method, pr_curve)],
                          os.path.join(args.out, "pr.svg"))
    _log(f"auc={roc_curve.summary:.6f} ap={pr_curve.summary:.6f} "
         f"({positives} positives / {negatives} negatives)")
    return 0


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng([args.seed, 1])
    plants = synth.random_plants(args.lines, args.samples, args.targets, rng,
                                 alpha_range=(args.alpha_min, args.alpha_max))
    spec = synth.SynthSpec(
        lines=args.lines, samples=args.samples, bands=args.bands,
        seed=args.seed, plants=plants, noise_floor=args.noise_floor,
        contaminate=args.contaminate, target_deflection=args.deflection)
    cube, mask, signature, _ = synth.generate(spec)

    cube_path = os.path.join(args.out, "cube.img")
    mask_path = os.path.join(args.out, "mask.img")
    envi_io.write_cube(cube, cube_path + ".hdr", cube_path)
    envi_io.write_mask(mask, mask_path + ".hdr", mask_path)
    envi_io.write_signature(signature, os.path.join(args.out, "signature.csv"))
    info = {
        "lines": args.lines, "samples": args.samples, "bands": args.bands,
        "seed": args.seed, "targets": args.targets,
        "deflection": synth.snr_of(spec), "contaminated": bool(args.contaminate),
    }
    envi_io.atomic_write_text(os.path.join(args.out, "scene.json"),
                              json.dumps(info, indent=2) + "\n")
    _log(f"wrote scene to {args.out} (deflection {info['deflection']:.3f})")
    return 0


def cmd_report(args) -> int:
    table: dict = {}
    regions: list = []
    for path in args.summaries:
        with open(_require_file(path, "summary file"), "r") as f:
            summary = json.load(f)
        for key in ("method", "region", "auc", "ap"):
            if key not in summary:
                raise ValidationError(f"{path}: summary missing key '{key}'")
        method, region = summary["method"], summary["region"]
        if region not in regions:
            regions.append(region)
        if (method, region) in table:
            _log(f"warning: duplicate summary for {method}/{region}; "
                 f"using {path}")
        table[(method, region)] = (summary["ap"], summary["auc"])

    order = [m for m in ("sam", "mf", "ace", "cem", "nn")
             if any(k[0] == m for k in table)]
    order += sorted({k[0] for k in table} - set(order))

    headers = ["model"]
    for region in regions:
        headers += [f"{region} AP", f"{region} AUC"]
    rows = []
    for method in order:
        row = [method]
        for region in regions:
            cell = table.get((method, region))
            if cell is None:
                row += ["--", "--"]
            else:
                row += [f"{cell[0]:.3f}", f"{cell[1]:.3f}"]
        rows.append(row)

    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) if rows
              else len(headers[i]) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        envi_io.atomic_write_text(os.path.join(args.out, "comparison.txt"), text)
        csv_lines = [",".join(headers)]
        csv_lines += [",".join(row) for row in rows]
        envi_io.atomic_write_text(os.path.join(args.out, "comparison.csv"),
                                  "\n".join(csv_lines) + "\n")
    return 0


def _add_cube_args(p: argparse.ArgumentParser):
    p.add_argument("--cube", required=True, help="raster file of the cube")
    p.add_argument("--header", help="ENVI header (default: <cube>.hdr)")
    p.add_argument("--region", help="region preset name (needs --presets)")
    p.add_argument("--presets", help="region preset file")
    p.add_argument("--window", help="explicit window l0:l1,s0:s1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsdetect",
        description="Hyperspectral target detection and evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="score a region with a classical detector")
    _add_cube_args(p)
    p.add_argument("--signature", required=True, help="target signature CSV")
    p.add_argument("--method", required=True, choices=("sam", "mf", "ace", "cem"))
    p.add_argument("--centered-cem", action="store_true",
                   help="use the mean-centered CEM variant")
    p.add_argument("--mask", help="ground-truth mask (for --exclude-positives)")
    p.add_argument("--mask-header")
    p.add_argument("--exclude-positives", action="store_true",
                   help="drop labeled target pixels from the statistics")
    p.add_argument("--stats-in", help="reuse a saved background model")
    p.add_argument("--stats-out", help="persist the estimated background model")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("train-nn", help="train the spectral network")
    _add_cube_args(p)
    p.add_argument("--mask", required=True, help="ground-truth mask raster")
    p.add_argument("--mask-header")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=0.0002)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--positive-weight", type=float, default=None,
                   help="default: negative/positive pixel ratio")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_nn)

    p = sub.add_parser("score-nn", help="score a region with a saved model")
    _add_cube_args(p)
    p.add_argument("--model", required=True, help="saved spectral_nn model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score_nn)

    p = sub.add_parser("eval", help="ROC/PR evaluation of a score map")
    p.add_argument("--scores", required=True, help="score map raster")
    p.add_argument("--scores-header")
    p.add_argument("--mask", required=True, help="ground-truth mask raster")
    p.add_argument("--mask-header")
    p.add_argument("--method", default="unknown", help="label for the summary")
    p.add_argument("--region-name", default="region")
    p.add_argument("--svg", action="store_true", help="also render SVG curves")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene on disk")
    p.add_argument("--lines", type=int, default=256)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--bands", type=int, default=64)
    p.add_argument("--targets", type=int, default=100)
    p.add_argument("--alpha-min", type=float, default=0.5)
    p.add_argument("--alpha-max", type=float, default=1.0)
    p.add_argument("--deflection", type=float, default=None,
                   help="rescale the target to hit this matched-filter deflection")
    p.add_argument("--noise-floor", type=float, default=0.0)
    p.add_argument("--contaminate", action="store_true",
                   help="scale 5%% of background pixels by 3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="combine summary JSONs into a table")
    p.add_argument("summaries", nargs="+", help="summary.json files")
    p.add_argument("--out", help="directory for comparison.txt/.csv")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single-line diagnostic per contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
