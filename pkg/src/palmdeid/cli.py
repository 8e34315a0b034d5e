"""Command-line orchestration: synth / deid / eval / report.

Exit codes: 0 success, 1 usage or config error, 2 I/O error. All outputs
are deterministic for fixed flags and seeds; files are written atomically
and reports embed the resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import deid, imageio, matcher, metrics, synth
from .exceptions import ConfigInvalid, PalmDeidError

log = logging.getLogger("palmdeid")

_POPULATION_COLORS = {
    "genuine": "#d62728",
    "imposter": "#1f77b4",
    "deid": "#000000",
    "diversity": "#2ca02c",
}


def _configure_logging() -> None:
    level = logging.INFO if os.environ.get("PALMDEID_VERBOSE") else logging.WARNING
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    imageio.write_text(path, buf.getvalue())


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and not np.isfinite(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value)) if isinstance(value, float) else str(value)


def cmd_synth(args) -> int:
    if args.identities < 2 or args.sessions < 2:
        log.error("need at least 2 identities and 2 sessions")
        return 1
    manifest = synth.make_dataset(
        args.identities, args.sessions, args.seed, args.out, palm_span=args.palm_span
    )
    print(manifest)
    return 0


def _score_model_from(config: dict) -> deid.ScoreModel:
    allowed = {
        "tau", "texture_gain", "weight_scale", "weight_seed", "field_seed",
        "mean_offset", "context_gain", "context_bend", "direction_spread",
    }
    bad = set(config) - allowed
    if bad:
        raise ConfigInvalid(f"unknown score_model fields: {sorted(bad)}")
    return deid.ScoreModel(**config)


def _expand_subruns(config: dict) -> list:
    """Cartesian expansion of list-valued sweep axes into tagged sub-runs."""
    alphas = config.get("alpha", 0.1)
    alphas = alphas if isinstance(alphas, list) else [alphas]
    fusions = config.get("fusion_set", ["s", "m"])
    if not (fusions and isinstance(fusions[0], list)):
        fusions = [fusions]
    baselines = config.get("baseline")
    baselines = baselines if isinstance(baselines, list) else [baselines]
    steps = int(config.get("steps", 50))
    seeds = tuple(config.get("seeds", [0]))
    model = _score_model_from(config.get("score_model", {}))

    def make_cfg(alpha, fusion, baseline):
        return deid.DeidConfig(
            alpha=float(alpha),
            fusion_set=tuple(fusion),
            steps=steps,
            seeds=seeds,
            score_model=model,
            baseline=baseline,
            blur_sigma=float(config.get("blur_sigma", 8.0)),
            pixelate_block=int(config.get("pixelate_block", 16)),
            deblock_sigma=float(config.get("deblock_sigma", 0.6)),
        )

    subruns = []
    for baseline in baselines:
        if baseline is not None:
            # alpha/fusion axes do not apply to classical baselines
            subruns.append((str(baseline), make_cfg(alphas[0], fusions[0], baseline)))
            continue
        for alpha in alphas:
            for fusion in fusions:
                tag = f"a{alpha}_f{''.join(fusion)}"
                subruns.append((tag, make_cfg(alpha, fusion, None)))
    tags = [t for t, _ in subruns]
    if len(set(tags)) != len(tags):
        raise ConfigInvalid("sweep axes produce duplicate sub-run tags")
    return subruns


def cmd_deid(args) -> int:
    config = imageio.read_json(args.config)
    subruns = _expand_subruns(config)
    samples = synth.load_manifest(args.manifest)
    out = Path(args.out)
    records = []
    for tag, cfg in subruns:
        log.info("sub-run %s on %d samples", tag, len(samples))
        for idx, sample in enumerate(samples):
            result = deid.deidentify(sample, cfg)
            stem = f"id{sample.identity:03d}_s{sample.session}"
            for seed, image in zip(cfg.seeds, result.images):
                rel = f"{tag}/{stem}_seed{seed}.png"
                imageio.write_gray(out / rel, image)
                records.append(
                    {
                        "image_path": rel,
                        "source_index": idx,
                        "identity": sample.identity,
                        "session": sample.session,
                        "seed": seed,
                        "sub_run": tag,
                    }
                )
            imageio.write_text(
                out / f"{tag}/{stem}.provenance.json", _json_text(result.provenance)
            )
    imageio.write_json(out / "subruns.json", {tag: cfg.to_config() for tag, cfg in subruns})
    manifest_path = out / "deid_manifest.json"
    imageio.write_json(manifest_path, records)
    print(manifest_path)
    return 0


def _histogram_svg(score_sets, bins: int = 64) -> str:
    """Minimal overlaid-histogram SVG, deterministic text output."""
    width, height, pad = 640, 360, 40
    rows = metrics.histogram_table(score_sets, bins)
    lo = min(r[1] for r in rows)
    hi = max(r[2] for r in rows)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for s in score_sets:
        counts, edges = np.histogram(s.samples, bins=bins, range=(lo, hi))
        total = max(1, counts.max())
        pts = []
        for b in range(bins):
            x = pad + (edges[b] + edges[b + 1]) / 2 / (hi - lo or 1) * (width - 2 * pad)
            y = height - pad - counts[b] / total * (height - 2 * pad)
            pts.append(f"{x:.1f},{y:.1f}")
        color = _POPULATION_COLORS.get(s.population, "#888888")
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_eval(args) -> int:
    samples = synth.load_manifest(args.manifest)
    deid_records = imageio.read_json(args.deid_manifest)
    deid_base = Path(args.deid_manifest).parent
    out = Path(args.out)
    mcfg = matcher.MatcherConfig()

    for rec in deid_records:
        idx = rec["source_index"]
        if idx >= len(samples) or samples[idx].identity != rec["identity"]:
            log.error("de-identified manifest does not match the original manifest")
            return 1

    log.info("scoring original pools (%d samples)", len(samples))
    pools = matcher.score_pools(samples, mcfg)
    genuine, imposter = pools["genuine"], pools["imposter"]
    codes = matcher.encode_samples(samples, mcfg)
    gallery_labels = [s.identity for s in samples]

    subrun_configs = {}
    subruns_path = deid_base / "subruns.json"
    if subruns_path.exists():
        subrun_configs = imageio.read_json(subruns_path)

    by_subrun = {}
    for rec in deid_records:
        by_subrun.setdefault(rec["sub_run"], []).append(rec)

    for tag, records in sorted(by_subrun.items()):
        log.info("evaluating sub-run %s (%d images)", tag, len(records))
        distances, probe_codes, probe_labels = [], [], []
        quality_rows = []
        per_source = {}
        for rec in records:
            sample = samples[rec["source_index"]]
            image = imageio.read_gray(deid_base / rec["image_path"])
            roi = matcher.recognition_roi(image, sample.keypoints, mcfg)
            code = matcher.encode(roi, mcfg)
            probe_codes.append(code)
            probe_labels.append(rec["identity"])
            dist = matcher.distance_matrix(
                [codes[rec["source_index"]]], [code], mcfg, on_no_overlap="max"
            )[0, 0]
            distances.append(dist)
            quality_rows.append(
                (
                    metrics.ssim(sample.image, image),
                    metrics.ms_ssim(sample.image, image),
                    metrics.psnr(sample.image, image),
                )
            )
            per_source.setdefault(rec["source_index"], []).append(roi)

        deid_set = metrics.ScoreSet("deid", distances)
        accuracy = matcher.rank1_accuracy(codes, gallery_labels, probe_codes, probe_labels, mcfg)
        report = metrics.evaluate_deid(
            genuine, imposter, deid_set, accuracy_percent=accuracy,
            extras={"sub_run": tag, "n_probes": len(records)},
        )
        score_sets = [genuine, imposter, deid_set]
        diversity = None
        if all(len(v) >= 2 for v in per_source.values()) and per_source:
            diversity = metrics.diversity_report(list(per_source.values()), mcfg)
            score_sets.append(diversity)

        payload = report.to_dict()
        payload["config"] = {
            "matcher": dict(vars(mcfg)),
            "deid": subrun_configs.get(tag),
        }
        if diversity is not None:
            payload["diversity_mean"] = diversity.mu
            payload["diversity_sigma"] = diversity.sigma
        payload["ms_ssim_scales"] = metrics.feasible_ms_ssim_scales(
            min(samples[0].image.shape)
        )
        imageio.write_text(out / f"report_{tag}.json", _json_text(payload))

        arr = np.asarray([[q[0], q[1], q[2]] for q in quality_rows], dtype=np.float64)
        finite_psnr = arr[np.isfinite(arr[:, 2]), 2]
        psnr_mean = float(finite_psnr.mean()) if finite_psnr.size else float("inf")
        psnr_std = float(finite_psnr.std()) if finite_psnr.size else 0.0
        _write_csv(
            out / f"quality_{tag}.csv",
            ("metric", "mean", "std"),
            [
                ("ssim", _fmt(float(arr[:, 0].mean())), _fmt(float(arr[:, 0].std()))),
                ("ms_ssim", _fmt(float(arr[:, 1].mean())), _fmt(float(arr[:, 1].std()))),
                ("psnr", _fmt(psnr_mean), _fmt(psnr_std)),
            ],
        )
        _write_csv(
            out / f"scores_{tag}.csv",
            ("population", "distance"),
            [(s.population, _fmt(float(d))) for s in score_sets for d in s.samples],
        )
        _write_csv(
            out / f"hist_{tag}.csv",
            ("population", "bin_left", "bin_right", "count"),
            [
                (p, _fmt(l), _fmt(r), c)
                for p, l, r, c in metrics.histogram_table(score_sets)
            ],
        )
        if args.svg:
            imageio.write_text(out / f"dist_{tag}.svg", _histogram_svg(score_sets))
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in sorted(args.reports):
        data = imageio.read_json(path)
        rows.append(
            (
                data.get("sub_run", Path(path).stem),
                _fmt(data.get("rr_percent")),
                _fmt(data.get("dir_percent")),
                data.get("band", ""),
                _fmt(data.get("eer_percent")),
                _fmt(data.get("accuracy_percent")),
            )
        )
    out = Path(args.out)
    _write_csv(
        out / "comparison.csv",
        ("sub_run", "rr_percent", "dir_percent", "band", "eer_percent", "accuracy_percent"),
        rows,
    )
    imageio.write_text(
        out / "comparison.json",
        _json_text([dict(zip(("sub_run", "rr", "dir", "band", "eer", "acc"), r)) for r in rows]),
    )
    print(out / "comparison.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="palmdeid", exit_on_error=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic hand dataset", exit_on_error=False)
    p.add_argument("--identities", type=int, default=50)
    p.add_argument("--sessions", type=int, default=4)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--palm-span", type=float, default=synth.DEFAULT_PALM_SPAN)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("deid", help="de-identify a dataset", exit_on_error=False)
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_deid)

    p = sub.add_parser("eval", help="evaluate de-identification", exit_on_error=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--deid-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true", help="also write distribution SVG plots")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge sub-run reports into one table", exit_on_error=False)
    p.add_argument("--out", required=True)
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except (argparse.ArgumentError, SystemExit):
        return 1
    try:
        return args.func(args)
    except PalmDeidError as exc:
        log.error("invalid configuration or data: %s", exc)
        return 1
    except (json.JSONDecodeError, KeyError) as exc:
        log.error("malformed input file: %s", exc)
        return 1
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
