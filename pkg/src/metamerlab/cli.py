"""Operator command line.

Subcommands: ingest | synth | texform | optimize | iqa | trials | simulate |
analyze | serve. Every run resolves its configuration (file values overridden
by flags), hashes its inputs, and writes a ``manifest.json`` next to its
outputs; re-running a subcommand from that manifest reproduces the numeric
outputs bit for bit. Existing output files are never overwritten without
--force.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import (build_curve, compare_curves, critical_eccentricity,
                       curve_svg, fit_sigmoid)
from .experiment import (ExperimentConfig, RandomObserver, SimulatedObserver,
                         TrialRecord, TrialSpec, run_simulated_session,
                         score_session, table_to_csv)
from .iqa import (MseMetric, TextureTolerantMetric, optimize_texform_params,
                  pyramid_iqa)
from .image import load_png, save_png
from .pooling import PoolingConfig
from .stats import StatConfig
from .stimuli import ingest_stimulus_set, scan_for_duplicates
from .synthesis import SynthesisConfig, invert_features, synthesize_texform
from .extractors import ConvFeatureExtractor, GlobalStatExtractor


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _hash_tree(path: Path) -> str:
    """Content hash of a file, or of a directory's files (names + bytes)."""
    if path.is_file():
        return _sha256_file(path)
    h = hashlib.sha256()
    for f in sorted(path.rglob("*")):
        if f.is_file():
            h.update(str(f.relative_to(path)).encode())
            h.update(_sha256_file(f).encode())
    return h.hexdigest()


class OutputDir:
    """Output directory guard: refuses to overwrite unless forced."""

    def __init__(self, root: str | Path, force: bool):
        self.root = Path(root)
        self.force = force
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        if p.exists() and not self.force:
            raise FileExistsError(
                f"{p} exists; pass --force to overwrite")
        self.written.append(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def write_json(self, name: str, doc) -> Path:
        return self.write_text(name, json.dumps(doc, indent=2, sort_keys=True))

    def write_manifest(self, subcommand: str, config: dict, inputs: dict):
        manifest = {
            "subcommand": subcommand,
            "config": config,
            "inputs": {k: _hash_tree(Path(v)) for k, v in inputs.items()},
            "input_paths": {k: str(v) for k, v in inputs.items()},
            "outputs": self.written,
        }
        p = self.root / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _emit(args, human: str, **diag) -> None:
    """Human status line, or a machine-readable JSON object with --json."""
    if getattr(args, "json", False):
        print(json.dumps(diag, sort_keys=True))
    else:
        print(human)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _resolved(file_cfg: dict, **flags) -> dict:
    out = dict(file_cfg)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _stat_config(cfg: dict) -> StatConfig:
    return StatConfig(cfg.get("scales", 4), cfg.get("orientations", 4),
                      cfg.get("autocorr_window", 7))


def _syn_config(cfg: dict) -> SynthesisConfig:
    keys = ("seed", "max_steps", "step_size", "tol", "lambda_structural",
            "structural_level", "optimizer", "adam_lr")
    return SynthesisConfig(**{k: cfg[k] for k in keys if k in cfg})


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    sset = ingest_stimulus_set(args.set)
    out = OutputDir(args.out, args.force)
    manifest = sset.manifest()
    if args.scan_duplicates:
        manifest["duplicate_scan"] = scan_for_duplicates(sset)
    out.write_json("stimulus_manifest.json", manifest)
    out.write_manifest("ingest", {"set": str(args.set),
                                  "scan_duplicates": args.scan_duplicates},
                       {"set": args.set})
    if not sset.report.clean:
        _emit(args, f"ingested with issues: {len(sset.report.missing_originals)} "
              f"missing originals, {len(sset.report.malformed)} malformed",
              subcommand="ingest", ok=False,
              missing_originals=len(sset.report.missing_originals),
              malformed=len(sset.report.malformed))
        return 1
    _emit(args, f"ingested {len(sset)} files, {manifest['classes']} classes",
          subcommand="ingest", ok=True, files=len(sset),
          classes=manifest["classes"])
    return 0


def cmd_synth(args) -> int:
    cfg = _resolved(_load_config_file(args.config), seed=args.seed,
                    max_steps=args.max_steps, tol=args.tol,
                    extractor=args.extractor, scales=args.scales,
                    orientations=args.orientations)
    syn = _syn_config(cfg)
    if cfg.get("extractor", "stats") == "conv":
        extractor = ConvFeatureExtractor(seed=cfg.get("extractor_seed", 1234))
    else:
        extractor = GlobalStatExtractor(_stat_config(cfg))
    target = load_png(args.input)
    result = invert_features(extractor, target, syn)
    out = OutputDir(args.out, args.force)
    save_png(result.image, out.path("synth.png"), bit_depth=16)
    out.write_json("synth.json", {"extractor": extractor.name,
                                  **result.sidecar()})
    out.write_manifest("synth", cfg, {"input": args.input})
    _emit(args, f"synth: converged={result.converged} steps={result.steps}",
          subcommand="synth", ok=result.converged, steps=result.steps,
          final_feature_distance=result.final_feature_distance)
    return 0 if result.converged else 1


def cmd_texform(args) -> int:
    cfg = _resolved(_load_config_file(args.config), seed=args.seed,
                    s=args.s, zx=args.zx, zy=args.zy,
                    max_steps=args.max_steps, tol=args.tol,
                    optimizer=args.optimizer)
    syn = _syn_config(cfg)
    target = load_png(args.input)
    from .image import to_grayscale
    gray = to_grayscale(target)
    zy = cfg.get("zy")
    zy = gray.height / 2.0 if zy is None else float(zy)
    pooling = PoolingConfig(gray.width, gray.height, float(cfg.get("s", 0.5)),
                            (float(cfg.get("zx", 640.0)), zy),
                            float(cfg.get("min_region_px", 16.0)))
    result = synthesize_texform(gray, pooling, _stat_config(cfg), syn)
    out = OutputDir(args.out, args.force)
    save_png(result.image, out.path("texform.png"), bit_depth=16)
    out.write_json("texform.json", {
        "pooling": pooling.to_dict(), **result.sidecar()})
    out.write_manifest("texform", cfg, {"input": args.input})
    _emit(args, f"texform: converged={result.converged} steps={result.steps}",
          subcommand="texform", ok=result.converged, steps=result.steps,
          final_feature_distance=result.final_feature_distance)
    return 0 if result.converged else 1


def cmd_optimize(args) -> int:
    cfg = _resolved(_load_config_file(args.config), seed=args.seed)
    targets = ingest_stimulus_set(args.targets)
    refs = ingest_stimulus_set(args.refs)
    s_grid = [float(v) for v in args.s_grid.split(",")]
    z_grid = [float(v) for v in args.z_grid.split(",")]
    stat_cfg = _stat_config(cfg)
    metric = TextureTolerantMetric(stat_cfg, level=cfg.get("metric_level", 3))
    result = optimize_texform_params(
        targets, refs, s_grid, z_grid, metric, stat_cfg, _syn_config(cfg),
        min_region_px=cfg.get("min_region_px", 8.0),
        cache_dir=Path(args.out) / "cache", jobs=args.jobs)
    out = OutputDir(args.out, args.force)
    out.write_text("optimization.json", result.to_json())
    out.write_manifest("optimize", {**cfg, "s_grid": s_grid, "z_grid": z_grid},
                       {"targets": args.targets, "refs": args.refs})
    failed = [p for p in result.points if p.dissimilarity is None]
    _emit(args, f"optimize: best={result.best} over {len(result.points)} points"
          + (f" ({len(failed)} failed)" if failed else ""),
          subcommand="optimize", ok=result.best is not None and not failed,
          best=list(result.best) if result.best else None,
          points=len(result.points), failed=len(failed))
    return 0 if result.best is not None and not failed else 1


def cmd_iqa(args) -> int:
    sset = ingest_stimulus_set(args.set)
    levels = tuple(int(v) for v in args.levels.split(","))
    metrics = []
    for name in args.metrics.split(","):
        if name == "mse":
            metrics.append(MseMetric())
        elif name in ("percep", "texstat"):
            metrics.append(TextureTolerantMetric(_stat_config(
                _load_config_file(args.config))))
        else:
            print(f"unknown metric {name!r}", file=sys.stderr)
            return 2
    report = pyramid_iqa(sset, metrics, levels=levels)
    out = OutputDir(args.out, args.force)
    out.write_text("iqa.csv", report.to_csv())
    out.write_text("iqa.json", report.to_json())
    out.write_manifest("iqa", {"levels": list(levels),
                               "metrics": args.metrics.split(",")},
                       {"set": args.set})
    _emit(args, f"iqa: {len(report.scores)} scores, {len(report.skipped)} skipped",
          subcommand="iqa", ok=True, scores=len(report.scores),
          skipped=len(report.skipped))
    return 0


def cmd_trials(args) -> int:
    cfg = ExperimentConfig.from_dict(_load_config_file(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    sset = ingest_stimulus_set(args.set)
    from .experiment import generate_trials
    specs = generate_trials(cfg, sset)
    out = OutputDir(args.out, args.force)
    out.write_json("schedule.json", {"config": cfg.to_dict(),
                                     "trials": [s.to_dict() for s in specs]})
    out.write_manifest("trials", cfg.to_dict(), {"set": args.set,
                                                 "config": args.config})
    _emit(args, f"trials: {len(specs)} generated",
          subcommand="trials", ok=True, trials=len(specs))
    return 0


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_dict(_load_config_file(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    sset = ingest_stimulus_set(args.set)
    if args.observer == "random":
        observer = RandomObserver(seed=args.observer_seed)
    else:
        observer = SimulatedObserver(sset, noise=args.noise,
                                     seed=args.observer_seed)
    specs, records = run_simulated_session(cfg, sset, observer)
    out = OutputDir(args.out, args.force)
    out.write_json("schedule.json", {"config": cfg.to_dict(),
                                     "trials": [s.to_dict() for s in specs]})
    lines = [json.dumps({"schema_version": 1, **r.to_dict()}, sort_keys=True)
             for r in records]
    out.write_text("records.jsonl", "\n".join(lines) + "\n")
    table = score_session(records, specs)
    out.write_text("cells.csv", table_to_csv(table))
    out.write_manifest("simulate", {**cfg.to_dict(), "observer": args.observer,
                                    "noise": args.noise,
                                    "observer_seed": args.observer_seed},
                       {"set": args.set, "config": args.config})
    _emit(args, f"simulate: {len(records)} trials answered",
          subcommand="simulate", ok=True, trials=len(records))
    return 0


def _load_session_files(schedule_path: Path, records_path: Path):
    doc = json.loads(schedule_path.read_text())
    specs = [TrialSpec.from_dict(d) for d in doc["trials"]]
    cfg = ExperimentConfig.from_dict(doc["config"])
    records = []
    for line in records_path.read_text().splitlines():
        if line.strip():
            d = json.loads(line)
            d.pop("schema_version", None)
            records.append(TrialRecord(**d))
    return cfg, specs, records


def cmd_analyze(args) -> int:
    cfg, specs, records = _load_session_files(Path(args.schedule),
                                              Path(args.records))
    table = score_session(records, specs)
    out = OutputDir(args.out, args.force)
    out.write_text("cells.csv", table_to_csv(table))
    conditions = sorted({cond for cond, _ in table})
    curves = {}
    fits = {}
    for cond in conditions:
        curve = build_curve(table, cond, cfg.chance, samples=args.samples,
                            seed=args.seed or 0)
        curves[cond] = curve
        out.write_text(f"curve_{cond.replace(':', '_')}.json", curve.to_json())
        out.write_text(f"curve_{cond.replace(':', '_')}.csv", curve.to_csv())
        fit = None
        if len(curve.points) >= 3:
            fit = fit_sigmoid(curve)
            fits[cond] = fit
            out.write_json(f"fit_{cond.replace(':', '_')}.json", {
                **fit.to_dict(),
                "critical_eccentricity": critical_eccentricity(fit)})
        out.write_text(f"curve_{cond.replace(':', '_')}.svg",
                       curve_svg(curve, fit))
    comparisons = []
    for i in range(len(conditions)):
        for j in range(i + 1, len(conditions)):
            a, b = curves[conditions[i]], curves[conditions[j]]
            if a.eccentricities() == b.eccentricities():
                comparisons.append(compare_curves(a, b, samples=args.samples,
                                                  seed=args.seed or 0).to_dict())
    if comparisons:
        out.write_json("comparisons.json", comparisons)
    out.write_manifest("analyze", {"samples": args.samples,
                                   "seed": args.seed or 0},
                       {"schedule": args.schedule, "records": args.records})
    _emit(args, f"analyze: {len(conditions)} conditions, {len(comparisons)} comparisons",
          subcommand="analyze", ok=True, conditions=len(conditions),
          comparisons=len(comparisons))
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    sset = ingest_stimulus_set(args.set)
    app = create_app(sset, args.sessions_dir, token=args.token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_rerun(args) -> int:
    """Re-run a subcommand from its manifest (reproducibility check)."""
    manifest = json.loads((Path(args.manifest)).read_text())
    sub = manifest["subcommand"]
    cfg = manifest["config"]
    paths = manifest["input_paths"]
    out = args.out
    argv = {"ingest": lambda: ["ingest", "--set", paths["set"], "--out", out]
            + (["--scan-duplicates"] if cfg.get("scan_duplicates") else []),
            "trials": lambda: ["trials", "--config", paths["config"],
                               "--set", paths["set"], "--out", out],
            "simulate": lambda: ["simulate", "--config", paths["config"],
                                 "--set", paths["set"], "--out", out,
                                 "--observer", cfg["observer"],
                                 "--noise", str(cfg["noise"]),
                                 "--observer-seed", str(cfg["observer_seed"])],
            "analyze": lambda: ["analyze", "--schedule", paths["schedule"],
                                "--records", paths["records"], "--out", out,
                                "--samples", str(cfg["samples"]),
                                "--seed", str(cfg["seed"])],
            }.get(sub)
    if argv is None:
        print(f"rerun unsupported for subcommand {sub!r}", file=sys.stderr)
        return 2
    return main(argv() + (["--force"] if args.force else []))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metamerlab")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--force", action="store_true",
                        help="overwrite existing outputs")
        sp.add_argument("--json", action="store_true",
                        help="machine-readable status on stdout")

    sp = sub.add_parser("ingest", help="validate a stimulus set directory")
    sp.add_argument("--set", required=True)
    sp.add_argument("--scan-duplicates", action="store_true")
    common(sp)
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("synth", help="invert feature representations")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--config")
    sp.add_argument("--extractor", choices=["stats", "conv"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--max-steps", type=int, dest="max_steps")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--scales", type=int)
    sp.add_argument("--orientations", type=int)
    common(sp)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("texform", help="synthesize a texform")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--config")
    sp.add_argument("--s", type=float)
    sp.add_argument("--zx", type=float)
    sp.add_argument("--zy", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--max-steps", type=int, dest="max_steps")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--optimizer", choices=["linesearch", "adam"])
    common(sp)
    sp.set_defaults(fn=cmd_texform)

    sp = sub.add_parser("optimize", help="grid-search texform parameters")
    sp.add_argument("--targets", required=True)
    sp.add_argument("--refs", required=True)
    sp.add_argument("--s-grid", default="0.25,0.4,0.5,0.6,0.8")
    sp.add_argument("--z-grid", default="448,640,832")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, default=1,
                    help="parallel workers for grid points")
    common(sp)
    sp.set_defaults(fn=cmd_optimize)

    sp = sub.add_parser("iqa", help="pyramid-level quality report")
    sp.add_argument("--set", required=True)
    sp.add_argument("--levels", default="0,3")
    sp.add_argument("--metrics", default="mse,percep")
    sp.add_argument("--config")
    common(sp)
    sp.set_defaults(fn=cmd_iqa)

    sp = sub.add_parser("trials", help="generate a trial schedule")
    sp.add_argument("--config", required=True)
    sp.add_argument("--set", required=True)
    sp.add_argument("--seed", type=int)
    common(sp)
    sp.set_defaults(fn=cmd_trials)

    sp = sub.add_parser("simulate", help="run a simulated-observer session")
    sp.add_argument("--config", required=True)
    sp.add_argument("--set", required=True)
    sp.add_argument("--observer", choices=["blur", "random"], default="blur")
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--observer-seed", type=int, default=0,
                    dest="observer_seed")
    sp.add_argument("--seed", type=int)
    common(sp)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("analyze", help="curves, fits, comparisons, plots")
    sp.add_argument("--schedule", required=True)
    sp.add_argument("--records", required=True)
    sp.add_argument("--samples", type=int, default=10000)
    sp.add_argument("--seed", type=int)
    common(sp)
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("serve", help="run the experiment HTTP service")
    sp.add_argument("--set", required=True)
    sp.add_argument("--sessions-dir", required=True, dest="sessions_dir")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8700)
    sp.add_argument("--token")
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("rerun", help="re-run a subcommand from its manifest")
    sp.add_argument("--manifest", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_rerun)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except FileExistsError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
