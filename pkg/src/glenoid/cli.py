"""``glenoid`` command line: measurement, evaluation and the synthetic experiments.

Exit codes: 0 ok, 1 usage, 2 pipeline stage failure, 3 output I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .awing import AWingParams, awing_grad, awing_loss, gradient_check
from .config import RunConfig
from .errors import GlenoidError, StageError
from .geometry import DEFAULT_RATIO_GRID, measure_bone_loss, tune_diameter_ratio
from .io_utils import atomic_write_text
from .metrics import (PairedMeasurements, bland_altman_points, confusion_matrix, noninferiority_summary,
                      reliability_report, severity_class)
from .phantom import generate, mirror_case, random_specs, write_cases
from .points import PointSet3, read_points, write_points
from .rim import RimHeatmap, chamfer_distance, ground_truth_chain, heatmap_to_rim, skeletonize
from .volume import VoxelMask, flip_points_sagittal, flip_sagittal, read_mask, write_mask

EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_IO = 0, 1, 2, 3
MIN_SUBGROUP_N = 5
AWING_TABLE_Y = (0.0, 0.5, 1.0)
AWING_TABLE_YHAT = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25)


class OutputError(Exception):
    """Writing a result file failed."""


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_text(path: Path, text: str) -> None:
    try:
        atomic_write_text(path, text)
    except OSError as exc:
        raise OutputError(f"{path}: {exc.strerror or exc}") from exc


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _load_mask(path, stage: str) -> VoxelMask:
    header = Path(path).with_suffix(".json") if Path(path).suffix in ("", ".raw") else Path(path)
    if not header.exists():
        raise StageError(stage, "file not found")
    try:
        return read_mask(path)
    except FileNotFoundError as exc:
        raise StageError(stage, "file not found") from exc
    except GlenoidError as exc:
        raise StageError(stage, str(exc)) from exc


def load_rim(path, config: RunConfig) -> PointSet3:
    """Rim landmarks from a point-set JSON, or from a heatmap mask header."""
    path = Path(path)
    if not path.exists() and not path.with_suffix(".json").exists():
        raise StageError("rim", "file not found")
    if not path.exists():
        path = path.with_suffix(".json")
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError("rim", f"unreadable rim file: {exc}") from exc
    try:
        if isinstance(doc, dict) and "points_mm" in doc:
            return read_points(path)
        grid = read_mask(path)
        if grid.is_binary:
            return skeletonize(grid)
        return heatmap_to_rim(RimHeatmap(grid, config.sigma_mm), config.heatmap_threshold)
    except (GlenoidError, ValueError) as exc:
        raise StageError("rim", str(exc)) from exc


def load_config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    cfg = RunConfig.from_dict(base)
    overrides = {}
    if getattr(args, "laterality", None):
        overrides["laterality"] = args.laterality
    if getattr(args, "ratio", None) is not None:
        overrides["diameter_ratio"] = args.ratio
    if getattr(args, "unconstrained", False):
        overrides["constrained"] = False
    if getattr(args, "angular_step", None) is not None:
        overrides["angular_step_deg"] = args.angular_step
    if overrides:
        cfg = RunConfig.from_dict({**cfg.as_dict(), **overrides})
    return cfg


def run_measure(mask_path, rim_path, out_dir, config: RunConfig) -> dict:
    """Measure one case and write its report, timings and intermediates."""
    mask = _load_mask(mask_path, "mask")
    rim = load_rim(rim_path, config)
    if config.laterality == "Right":
        rim = flip_points_sagittal(rim, mask)
        mask = flip_sagittal(mask)
    report = measure_bone_loss(mask, rim, config)
    out_dir = Path(out_dir)
    proj = report.projected_mask
    report.intermediates.update({
        "projected_mask": "projected_mask.json",
        "projected_rim": "projected_rim.json",
        "plane": "plane.json",
    })
    try:
        write_mask(proj.to_voxel_mask(), out_dir / "projected_mask")
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    _write_text(out_dir / "projected_rim.json",
                _dump({"points_uv_mm": [[float(a), float(b)] for a, b in report.projected_rim],
                       "origin_uv_mm": [float(c) for c in proj.origin_uv],
                       "cell_mm": proj.cell_mm}))
    _write_text(out_dir / "plane.json", _dump(report.plane.as_dict()))
    doc = report.as_dict()
    _write_text(out_dir / "report.json", _dump(doc))
    _write_text(out_dir / "timings.json", _dump({k: float(v) for k, v in report.timings_s.items()}))
    return doc


def _measure_job(job):
    case_id, mask_path, rim_path, out_dir, cfg_dict = job
    try:
        doc = run_measure(mask_path, rim_path, out_dir, RunConfig.from_dict(cfg_dict))
        return case_id, doc["bone_loss_pct"], None
    except StageError as exc:
        return case_id, None, str(exc)


def _pool_map(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


def cmd_measure(args) -> int:
    cfg = load_config(args)
    out_dir = Path(args.out_dir)
    if args.cases:
        cases_dir = Path(args.cases)
        masks = sorted(cases_dir.glob("*_mask.json"))
        if not masks:
            raise StageError("mask", f"no *_mask.json files in {cases_dir}")
        jobs = []
        for m in masks:
            cid = m.name[: -len("_mask.json")]
            jobs.append((cid, m, cases_dir / f"{cid}_rim.json", out_dir / cid, cfg.as_dict()))
        results = _pool_map(_measure_job, jobs, args.jobs)
        rows, failed = [], 0
        for cid, pct, err in results:
            if err is not None:
                failed += 1
                print(f"{cid}: {err}", file=sys.stderr)
                rows.append([cid, "", "", err])
            else:
                rows.append([cid, repr(pct), severity_class(pct, cfg.cutoffs), ""])
        _write_text(out_dir / "pred.csv", _csv_text(["case_id", "bone_loss_pct", "severity", "error"], rows))
        print(f"measured {len(rows) - failed}/{len(rows)} cases -> {out_dir / 'pred.csv'}")
        return EXIT_STAGE if failed else EXIT_OK
    if not (args.mask and args.rim):
        raise UsageError("measure needs --mask and --rim, or --cases")
    doc = run_measure(args.mask, args.rim, out_dir, cfg)
    print(f"bone_loss_pct={doc['bone_loss_pct']:.4f} severity={doc['severity']} "
          f"diameter_mm={doc['diameter_A_mm']:.4f} defect_mm={doc['defect_B_mm']:.4f}")
    return EXIT_OK


class UsageError(Exception):
    pass


def _read_csv(path) -> list:
    path = Path(path)
    if not path.exists():
        raise StageError("eval", f"{path}: file not found")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _truth_values(rows) -> dict:
    out = {}
    for row in rows:
        if row.get("rater_a") not in (None, "") and row.get("rater_b") not in (None, ""):
            a, b = float(row["rater_a"]), float(row["rater_b"])
            out[row["case_id"]] = {"rater_a": a, "rater_b": b, "consensus": 0.5 * (a + b)}
        elif row.get("bone_loss_truth_pct") not in (None, ""):
            out[row["case_id"]] = {"consensus": float(row["bone_loss_truth_pct"])}
        else:
            raise StageError("eval", f"case {row.get('case_id')!r}: no truth value")
    return out


def _band_report(pairs: PairedMeasurements, truth: np.ndarray, cutoffs) -> dict:
    bands = np.array([severity_class(t, cutoffs) for t in truth])
    out = {}
    for band in ("Low", "Moderate", "High"):
        sel = bands == band
        if sel.sum() < MIN_SUBGROUP_N:
            out[band] = {"n": int(sel.sum()), "status": "insufficient n"}
        else:
            out[band] = reliability_report(pairs.subset(sel)).as_dict()
    return out


def cmd_eval(args) -> int:
    cfg = load_config(args)
    truth = _truth_values(_read_csv(args.truth))
    out_dir = Path(args.out_dir)
    doc = {"schema_version": 1, "config": cfg.as_dict()}
    ids = sorted(truth)
    consensus = np.array([truth[i]["consensus"] for i in ids])

    if all("rater_a" in truth[i] for i in ids):
        raters = PairedMeasurements.of([truth[i]["rater_a"] for i in ids],
                                       [truth[i]["rater_b"] for i in ids], ids)
        doc["rater_a_vs_rater_b"] = reliability_report(raters).as_dict()

    if args.pred:
        pred_rows = _read_csv(args.pred)
        pred = {r["case_id"]: r for r in pred_rows}
        if set(pred) != set(truth):
            missing = sorted(set(truth) ^ set(pred))
            raise StageError("eval", f"case_id mismatch between truth and prediction: {missing[:5]}")
        bad = [i for i in ids if pred[i].get("bone_loss_pct") in (None, "")]
        if bad:
            raise StageError("eval", f"missing prediction for {bad[:5]}")
        algo = np.array([float(pred[i]["bone_loss_pct"]) for i in ids])
        pairs = PairedMeasurements.of(algo, consensus, ids)
        doc["algorithm_vs_truth"] = reliability_report(pairs).as_dict()
        doc["subgroups"] = _band_report(pairs, consensus, cfg.cutoffs)
        doc["confusion"] = confusion_matrix(algo, consensus, cfg.cutoffs).as_dict()
        ba = bland_altman_points(pairs)
        _write_text(out_dir / "bland_altman.csv",
                    _csv_text(["case_id", "mean", "difference"],
                              [[i, repr(float(m)), repr(float(d))] for i, (m, d) in zip(ids, ba)]))
        _write_text(out_dir / "scatter.csv",
                    _csv_text(["case_id", "truth", "algorithm"],
                              [[i, repr(float(t)), repr(float(a))] for i, t, a in zip(ids, consensus, algo)]))
        if all(pred[i].get("human_err_deg") not in (None, "") and pred[i].get("algo_err_deg") not in (None, "")
               for i in ids):
            ang = [(float(pred[i]["human_err_deg"]), float(pred[i]["algo_err_deg"])) for i in ids]
            doc["normal_noninferiority"] = noninferiority_summary(ang)
    elif "rater_a_vs_rater_b" not in doc:
        raise UsageError("eval needs --pred or a truth file with rater_a/rater_b columns")

    _write_text(out_dir / "reliability.json", _dump(doc))
    for key in ("algorithm_vs_truth", "rater_a_vs_rater_b"):
        if key in doc:
            r = doc[key]
            print(f"{key}: n={r['n']} icc={r['icc']:.4f} pearson_r={r['pearson_r']:.4f} mae={r['mae']:.4f}")
    return EXIT_OK


def _parse_range(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO,HI") from None
    if not 0 <= lo <= hi < 50:
        raise argparse.ArgumentTypeError("defect range must satisfy 0 <= LO <= HI < 50")
    return lo, hi


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _gen_job(spec):
    return generate(spec)


def cmd_phantom(args) -> int:
    specs = random_specs(args.n, seed=args.seed, spacing_mm=args.spacing, defect_range=args.defect_range,
                         cup=args.cup, height_ratio=args.height_ratio)
    try:
        cases = _pool_map(_gen_job, specs, args.jobs)
    except GlenoidError as exc:
        raise StageError("phantom", str(exc)) from exc
    if args.right:
        cases = [mirror_case(c) for c in cases]
    try:
        truth = write_cases(cases, args.out_dir)
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    print(f"wrote {len(cases)} phantoms -> {truth}")
    return EXIT_OK


def cmd_tune_ratio(args) -> int:
    cfg = load_config(args)
    if args.cases:
        cases_dir = Path(args.cases)
        rows = _read_csv(cases_dir / "truth.csv")
        cases = [(_load_mask(cases_dir / f"{r['case_id']}_mask.json", "mask"),
                  read_points(cases_dir / f"{r['case_id']}_rim.json"),
                  float(r["bone_loss_truth_pct"])) for r in rows]
    else:
        specs = random_specs(args.n, seed=args.seed, height_ratio=args.height_ratio)
        cases = [(c.mask, c.rim_truth, c.bone_loss_truth_pct) for c in _pool_map(_gen_job, specs, args.jobs)]
    result = tune_diameter_ratio(cases, DEFAULT_RATIO_GRID, cfg, allow_failures=args.allow_failures)
    rows = [[f"{g:.2f}", f"{m:.6f}"] for g, m in result.mae_curve]
    text = _csv_text(["ratio", "mae_pct"], rows)
    sys.stdout.write(text)
    print(f"best_ratio={result.best_ratio:.2f}")
    for i, msg in sorted(result.failures.items()):
        print(f"excluded case {i}: {msg}", file=sys.stderr)
    if args.out:
        _write_text(Path(args.out), text)
    return EXIT_OK


def cmd_awing_check(args) -> int:
    params = AWingParams()
    grid = [[repr(y), repr(yh), repr(float(awing_loss(y, yh, params))), repr(float(awing_grad(y, yh, params)) + 0.0)]
            for y in AWING_TABLE_Y for yh in AWING_TABLE_YHAT]
    sys.stdout.write(_csv_text(["y", "yhat", "loss", "grad"], grid))
    table = gradient_check(n=args.n, seed=args.seed, params=params)
    worst = float(table[:, 4].max())
    if args.out:
        _write_text(Path(args.out), _csv_text(["y", "yhat", "analytic", "numeric", "rel_err"],
                                              [[repr(float(v)) for v in row] for row in table]))
    status = "PASS" if worst < 1e-5 else "FAIL"
    sys.stdout.write("\n" + _csv_text(["samples", "max_rel_err", "tolerance", "status"],
                                      [[len(table), f"{worst:.3e}", "1e-05", status]]))
    if worst >= 1e-5:
        raise StageError("awing", f"gradient check failed: max relative error {worst:.3e}")
    return EXIT_OK


def cmd_rim_gt(args) -> int:
    cfg = load_config(args)
    landmarks = load_rim(args.landmarks, cfg)
    template = _load_mask(args.template, "template")
    try:
        gt = ground_truth_chain(landmarks, template, cfg.resample_n, cfg.tube_radius_mm, cfg.sigma_mm)
        recovered = heatmap_to_rim(gt.heatmap, cfg.heatmap_threshold)
        chamfer = chamfer_distance(gt.skeleton, recovered)
    except (GlenoidError, ValueError) as exc:
        raise StageError("rim-gt", str(exc)) from exc
    out = Path(args.out_dir)
    try:
        write_points(gt.resampled, out / "resampled.json")
        write_mask(gt.tube, out / "tube")
        write_points(gt.skeleton, out / "skeleton.json")
        write_mask(gt.heatmap.grid, out / "heatmap")
        write_points(recovered, out / "recovered_skeleton.json")
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    diag = float(np.linalg.norm(template.spacing_mm))
    _write_text(out / "rim_gt.json", _dump({"chamfer_mm": chamfer, "voxel_diagonal_mm": diag,
                                            "skeleton_points": len(gt.skeleton),
                                            "recovered_points": len(recovered),
                                            "config": cfg.as_dict()}))
    print(f"chamfer_mm={chamfer:.4f} voxel_diagonal_mm={diag:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glenoid", description="Glenoid bone-loss measurement toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--jobs", type=_positive_int, default=1, help="parallel workers for batch work")

    m = sub.add_parser("measure", help="measure bone loss for one case or a directory of cases")
    m.add_argument("--mask", help="glenoid mask (.json header)")
    m.add_argument("--rim", help="rim landmarks (points JSON) or rim heatmap (.json header)")
    m.add_argument("--cases", help="directory of case_XXX_mask/rim files")
    m.add_argument("--out-dir", required=True)
    m.add_argument("--laterality", choices=["Left", "Right"])
    m.add_argument("--ratio", type=float, help="diameter / height ratio")
    m.add_argument("--unconstrained", action="store_true", help="fit the circle radius freely")
    m.add_argument("--angular-step", type=float)
    common(m)
    m.set_defaults(func=cmd_measure)

    e = sub.add_parser("eval", help="agreement statistics between predictions and truth")
    e.add_argument("--truth", required=True, help="CSV with bone_loss_truth_pct or rater_a,rater_b")
    e.add_argument("--pred", help="CSV with case_id,bone_loss_pct")
    e.add_argument("--out-dir", required=True)
    common(e)
    e.set_defaults(func=cmd_eval)

    ph = sub.add_parser("phantom", help="generate synthetic phantoms with known bone loss")
    ph.add_argument("--n", type=_positive_int, default=100)
    ph.add_argument("--seed", type=int, default=42)
    ph.add_argument("--spacing", type=float, default=0.5)
    ph.add_argument("--defect-range", type=_parse_range, default=(0.0, 35.0), help="LO,HI percent")
    ph.add_argument("--cup", action="store_true", help="add an offset cavitary cup")
    ph.add_argument("--height-ratio", type=float, default=0.6955)
    ph.add_argument("--right", action="store_true", help="write right-shoulder (mirrored) cases")
    ph.add_argument("--out-dir", required=True)
    common(ph)
    ph.set_defaults(func=cmd_phantom)

    t = sub.add_parser("tune-ratio", help="grid-search the diameter / height ratio")
    t.add_argument("--cases", help="phantom directory with truth.csv; otherwise phantoms are generated")
    t.add_argument("--n", type=_positive_int, default=30)
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--height-ratio", type=float, default=0.6955)
    t.add_argument("--allow-failures", action="store_true")
    t.add_argument("--out", help="write the MAE curve CSV here")
    common(t)
    t.set_defaults(func=cmd_tune_ratio)

    a = sub.add_parser("awing-check", help="finite-difference check of the Adaptive Wing gradient")
    a.add_argument("--n", type=_positive_int, default=1000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", help="write per-sample CSV here")
    a.set_defaults(func=cmd_awing_check)

    r = sub.add_parser("rim-gt", help="landmarks -> tube -> skeleton -> heatmap ground-truth chain")
    r.add_argument("--landmarks", required=True)
    r.add_argument("--template", required=True, help="mask header defining the output grid")
    r.add_argument("--out-dir", required=True)
    common(r)
    r.set_defaults(func=cmd_rim_gt)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"glenoid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    except OutputError as exc:
        print(f"output: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GlenoidError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
