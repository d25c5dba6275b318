"""Command-line entry point wiring the library into reproducible runs.

Subcommands: synth, extract-features, fetch-tiles, embed, train-ss,
train-impression, experiment.  Flags win over the optional plain-text
``key = value`` config file, which wins over built-in defaults; every command
writes a resolved-config snapshot next to its outputs so a run can be
repeated from its artifacts alone.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import acoustic, data, embedding, experiment, mlp, selection, synth, tiles

log = logging.getLogger("soundscape_ml")


def load_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; values go through JSON, falling back to str."""
    config: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, _, value = line.partition(sep)
                break
        else:
            raise ValueError(f"config line {lineno} is not 'key = value': {raw!r}")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            config[key] = json.loads(value)
        except json.JSONDecodeError:
            config[key] = value
    return config


class Resolver:
    """Effective option lookup: CLI flag, then config file, then default."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        self.config = load_config_file(args.config) if self.args.get("config") else {}
        self.resolved: dict = {}

    def get(self, key: str, default=None, cast=None):
        value = self.args.get(key)
        if value is None:
            value = self.config.get(key, default)
        if value is not None and cast is not None:
            value = cast(value)
        self.resolved[key] = value
        return value

    def snapshot(self, path: Path, extra: dict | None = None) -> None:
        entries = dict(self.resolved)
        if extra:
            entries.update(extra)
        lines = [f"{key} = {json.dumps(value, default=str)}" for key, value in sorted(entries.items())]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="plain-text key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--resume", action="store_true", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soundscape-ml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with known ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--noise-only-rate", type=float, default=None)
    p.add_argument("--attribute-noise", type=float, default=None)
    p.add_argument("--embedding-noise", type=float, default=None)
    p.add_argument("--no-audio", action="store_true", default=None, help="skip writing WAV files")
    _add_common(p)

    p = sub.add_parser("extract-features", help="acoustic features for every manifest row")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", default=None)
    p.add_argument("--out", required=True, help="output JSON-lines feature file")
    p.add_argument("--calibration-offset", type=float, default=None)
    p.add_argument("--silence-floor", type=float, default=None)
    p.add_argument("--percentile-convention", choices=acoustic.PERCENTILE_CONVENTIONS, default=None)
    p.add_argument("--allow-other-rates", action="store_true", default=None)
    _add_common(p)

    p = sub.add_parser("fetch-tiles", help="aerial-image windows for every manifest row")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for <id>.png images")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--tile-url", default=None, help="URL template with {quadkey} or {x}/{y}/{z}")
    p.add_argument("--tile-dir", default=None, help="local tile tree <zoom>/<quadkey>.png")
    p.add_argument("--zoom", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("embed", help="train/apply the bottleneck encoder for image features")
    p.add_argument("--embeddings", default=None, help="input JSON-lines 2048-dim embeddings")
    p.add_argument("--images", default=None, help="directory of <id>.png aerial images")
    p.add_argument("--out", required=True, help="output JSON-lines 128-dim bottlenecks")
    p.add_argument("--model", default=None, help="autoencoder file: load if present, else train+save")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    _add_common(p)

    for name, help_text in (
        ("train-ss", "train the stage-one sound-source predictor"),
        ("train-impression", "train one stage-two impression predictor"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", required=True)
        p.add_argument("--features", required=True)
        p.add_argument("--bottlenecks", required=True)
        p.add_argument("--out", required=True, help="output model JSON path")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--cv-folds", type=int, default=None)
        p.add_argument("--algorithm", choices=("tpe", "random"), default=None)
        p.add_argument("--trial-log", default=None)
        if name == "train-ss":
            p.add_argument("--inputs", required=True, choices=("ES", "AP", "ES+AP"))
        else:
            p.add_argument("--combo", required=True)
            p.add_argument("--ss-source", default="oracle")
            p.add_argument("--impression", required=True, choices=("p", "e"))
            p.add_argument("--ss-model", default=None, help="stage-one model for eSS sources")
        _add_common(p)

    p = sub.add_parser("experiment", help="run the full evaluation matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--bottlenecks", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--cv-folds", type=int, default=None)
    p.add_argument("--algorithm", choices=("tpe", "random"), default=None)
    p.add_argument("--oracle-only", action="store_true", default=None)
    p.add_argument("--combos", default=None, help="comma-separated combo labels")
    p.add_argument("--ss-sources", default=None, help="comma-separated source labels")
    p.add_argument("--no-cleanse", action="store_true", default=None, help="keep noise-only rows")
    _add_common(p)

    return parser


def _load_inputs(resolver: Resolver, cleanse: bool = False):
    manifest = data.load_manifest(resolver.get("manifest"), check_audio=False)
    if cleanse:
        before = len(manifest)
        manifest = data.cleanse_noise_only(manifest)
        log.info("cleansed %d noise-only rows (%s)", before - len(manifest), data.DEFAULT_NOISE_RULE.describe())
    features = acoustic.read_features(resolver.get("features"))
    bottlenecks = {b.id: b for b in embedding.read_bottlenecks(resolver.get("bottlenecks"))}
    return manifest, experiment.build_dataset(manifest, features, bottlenecks)


def _hpo_from(resolver: Resolver) -> experiment.HPOSettings:
    return experiment.HPOSettings(
        algorithm=resolver.get("algorithm", "tpe"),
        n_iter=resolver.get("trials", 100, int),
        cv_folds=resolver.get("cv_folds", 10, int),
        trial_epochs=resolver.get("trial_epochs", 200, int),
        final_epochs=resolver.get("final_epochs", 200, int),
        batch_size=resolver.get("batch_size", 32, int),
        lr=resolver.get("lr", 1e-3, float),
        l2=resolver.get("l2", 1e-3, float),
    )


def cmd_synth(resolver: Resolver) -> int:
    out = Path(resolver.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    recipe = synth.SynthRecipe(
        noise_only_rate=resolver.get("noise_only_rate", 0.0, float),
        attribute_noise=resolver.get("attribute_noise", 0.0, float),
        embedding_noise=resolver.get("embedding_noise", 0.0, float),
    )
    dataset = synth.generate(
        n=resolver.get("n", 100, int),
        recipe=recipe,
        seed=resolver.get("seed", 0, int),
        out_dir=out,
        write_wavs=not resolver.get("no_audio", False),
    )
    resolver.snapshot(out / "resolved_config.txt")
    log.info("wrote %d recordings under %s", len(dataset.manifest), out)
    print(dataset.manifest_path)
    return 0


def _extract_one(payload: tuple[str, str, dict]) -> tuple[str, list | None, str | None]:
    rec_id, audio_path, options = payload
    try:
        feature = acoustic.extract_feature(audio_path, **options)
        return rec_id, feature.values.tolist(), None
    except Exception as exc:  # noqa: BLE001 - per-file failures must not abort the batch
        return rec_id, None, f"{type(exc).__name__}: {exc}"


def cmd_extract_features(resolver: Resolver) -> int:
    manifest_path = Path(resolver.get("manifest"))
    manifest = data.load_manifest(manifest_path, check_audio=False)
    root = Path(resolver.get("audio_root") or manifest_path.parent)
    out = Path(resolver.get("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    options = {
        "calibration_offset": resolver.get("calibration_offset", 0.0, float),
        "silence_floor": resolver.get("silence_floor", acoustic.DEFAULT_SILENCE_FLOOR, float),
        "percentile_convention": resolver.get("percentile_convention", "statistical"),
        "allow_other_rates": resolver.get("allow_other_rates", False),
    }
    workers = resolver.get("workers", 1, int)

    payloads = []
    for entry in manifest.entries:
        audio = Path(entry.recording.audio_path)
        if not audio.is_absolute():
            audio = root / audio
        payloads.append((entry.recording.id, str(audio), options))

    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_one, payloads))
    else:
        results = [_extract_one(p) for p in payloads]

    failures = []
    written = 0
    with out.open("w", encoding="utf-8") as handle:
        for rec_id, values, error in results:
            if error is None:
                handle.write(json.dumps({"id": rec_id, "feature": values}) + "\n")
                written += 1
            else:
                log.error("extraction failed for %s: %s", rec_id, error)
                failures.append({"id": rec_id, "error": error})
    failure_path = out.with_suffix(".failures.jsonl")
    with failure_path.open("w", encoding="utf-8") as handle:
        for row in failures:
            handle.write(json.dumps(row) + "\n")
    resolver.snapshot(out.parent / "resolved_config.txt", {"failures": len(failures)})
    log.info("wrote %d features to %s (%d failures)", written, out, len(failures))
    return 0


def cmd_fetch_tiles(resolver: Resolver) -> int:
    manifest = data.load_manifest(resolver.get("manifest"), check_audio=False)
    out = Path(resolver.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    tile_url = resolver.get("tile_url")
    tile_dir = resolver.get("tile_dir")
    if not tile_url and not tile_dir:
        log.error("need --tile-url or --tile-dir")
        return 2
    client: tiles.TileClient
    client = tiles.HttpTileClient(tile_url) if tile_url else tiles.FilesystemTileClient(tile_dir)
    cache_dir = resolver.get("cache_dir")
    if cache_dir:
        client = tiles.CachingTileClient(client, cache_dir)
    zoom = resolver.get("zoom", tiles.DEFAULT_ZOOM, int)
    size = resolver.get("size", tiles.DEFAULT_WINDOW, int)

    by_plan: dict[tuple, bytes] = {}  # identical windows are fetched once
    failures = 0
    for entry in manifest.entries:
        rec = entry.recording
        try:
            plan = tiles.plan_window(rec.latitude, rec.longitude, zoom=zoom, size=size)
            key = (plan.crop_origin, plan.zoom, plan.size)
            if key not in by_plan:
                image = tiles.fetch_and_stitch(client, plan)
                by_plan[key] = tiles.encode_png(image.pixels)
            (out / f"{rec.id}.png").write_bytes(by_plan[key])
        except Exception as exc:  # noqa: BLE001
            log.error("tile fetch failed for %s: %s", rec.id, exc)
            failures += 1
    resolver.snapshot(out / "resolved_config.txt", {"failures": failures, "unique_windows": len(by_plan)})
    log.info("wrote %d images (%d unique windows, %d failures)", len(manifest) - failures, len(by_plan), failures)
    return 0


def cmd_embed(resolver: Resolver) -> int:
    embeddings_path = resolver.get("embeddings")
    images_dir = resolver.get("images")
    if not embeddings_path and not images_dir:
        log.error("need --embeddings or --images")
        return 2
    if embeddings_path:
        items = embedding.ingest_embeddings(embeddings_path)
    else:
        items = []
        for png in sorted(Path(images_dir).glob("*.png")):
            from PIL import Image

            pixels = np.asarray(Image.open(png).convert("RGB"), dtype=np.uint8)
            items.append(embedding.baseline_embed(pixels, rec_id=png.stem))
    if not items:
        log.error("no embeddings to encode")
        return 2

    model_path = resolver.get("model")
    if model_path and Path(model_path).exists():
        model = embedding.AutoencoderModel.load(model_path)
        log.info("loaded autoencoder from %s", model_path)
    else:
        config = embedding.AutoencoderConfig(
            epochs=resolver.get("epochs", 100, int),
            batch_size=resolver.get("batch_size", 16, int),
            lr=resolver.get("lr", 0.01, float),
            momentum=resolver.get("momentum", 0.9, float),
            seed=resolver.get("seed", 0, int),
        )
        model = embedding.train_autoencoder(items, config)
        log.info(
            "trained autoencoder: train MSE %.4f -> %.4f",
            model.train_losses[0],
            model.final_train_loss,
        )
        if model_path:
            model.save(model_path)

    out = Path(resolver.get("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    count = embedding.write_vectors(out, embedding.encode_batch(model, items))
    resolver.snapshot(out.parent / "resolved_config.txt")
    log.info("wrote %d bottleneck features to %s", count, out)
    return 0


def cmd_train_ss(resolver: Resolver) -> int:
    _, dataset = _load_inputs(resolver)
    inputs = experiment.FeatureCombo.from_label(resolver.get("inputs"))
    seed = resolver.get("seed", 0, int)
    rows = np.arange(len(dataset))
    log_path = resolver.get("trial_log")
    model, result = experiment.train_sound_source_predictor(
        inputs, dataset, rows, _hpo_from(resolver), seed,
        Path(log_path) if log_path else None,
    )
    out = Path(resolver.get("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    resolver.snapshot(out.parent / "resolved_config.txt", {
        "best_config": {"layers": result.best_layers, "units": result.best_units},
        "best_cv_r2": result.best_score,
    })
    log.info("best config %dx%d (CV R2 %.3f) -> %s", result.best_layers, result.best_units, result.best_score, out)
    return 0


def cmd_train_impression(resolver: Resolver) -> int:
    _, dataset = _load_inputs(resolver)
    combo = experiment.FeatureCombo.from_label(resolver.get("combo"))
    source = experiment.SSSource.from_label(resolver.get("ss_source", "oracle"))
    impression = {"p": "pleasantness", "e": "eventfulness"}[resolver.get("impression")]
    seed = resolver.get("seed", 0, int)
    rows = np.arange(len(dataset))

    ss_values = None
    if source is not experiment.SSSource.ORACLE:
        ss_model_path = resolver.get("ss_model")
        if not ss_model_path:
            log.error("%s needs --ss-model", source.label)
            return 2
        ss_model = mlp.MLPModel.load(ss_model_path)
        x = experiment.assemble_matrix(source.predictor_inputs, dataset, rows).values
        ss_values = experiment.predict_sources(ss_model, x)

    log_path = resolver.get("trial_log")
    model, result = experiment.train_impression_predictor(
        combo, source, impression, dataset, rows, _hpo_from(resolver), seed,
        ss_train_values=ss_values,
        log_path=Path(log_path) if log_path else None,
    )
    out = Path(resolver.get("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    resolver.snapshot(out.parent / "resolved_config.txt", {
        "best_config": {"layers": result.best_layers, "units": result.best_units},
        "best_cv_r2": result.best_score,
    })
    log.info("best config %dx%d (CV R2 %.3f) -> %s", result.best_layers, result.best_units, result.best_score, out)
    return 0


def cmd_experiment(resolver: Resolver) -> int:
    manifest, dataset = _load_inputs(resolver, cleanse=not resolver.get("no_cleanse", False))
    out = Path(resolver.get("out"))
    out.mkdir(parents=True, exist_ok=True)

    combos = tuple(
        experiment.FeatureCombo.from_label(label.strip())
        for label in resolver.get("combos", "").split(",")
        if label.strip()
    ) or tuple(experiment.FeatureCombo)
    if resolver.get("oracle_only", False):
        sources: tuple = (experiment.SSSource.ORACLE,)
    else:
        sources = tuple(
            experiment.SSSource.from_label(label.strip())
            for label in resolver.get("ss_sources", "").split(",")
            if label.strip()
        ) or tuple(experiment.SSSource)

    settings = experiment.ExperimentSettings(
        n_train=resolver.get("n_train", 599, int),
        n_test=resolver.get("n_test", 200, int),
        seed=resolver.get("seed", 0, int),
        hpo=_hpo_from(resolver),
        combos=combos,
        ss_sources=sources,
        workers=resolver.get("workers", 1, int),
        log_dir=str(out / "trials"),
    )

    completed: list[experiment.CellResult] = []
    report_path = out / "report.json"
    if resolver.get("resume", False) and report_path.exists():
        previous = json.loads(report_path.read_text(encoding="utf-8"))
        for payload in previous.get("cells", {}).values():
            completed.append(
                experiment.CellResult(
                    impression=payload["impression"],
                    combo=payload["combo"],
                    ss_source=payload["ss_source"],
                    status=payload["status"],
                    test_r2=payload["test_r2"],
                    cv_score=payload["cv_score"],
                    layers=payload["config"]["layers"],
                    units=payload["config"]["units"],
                    seed=payload["seed"],
                    started=payload["started"],
                    finished=payload["finished"],
                    error=payload["error"],
                )
            )
        log.info("resuming: %d cells already done", len(completed))

    report = experiment.run_experiment_matrix(dataset, settings, completed=completed)
    report.save(report_path)
    (out / "report.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    resolver.snapshot(out / "resolved_config.txt", {
        "rows_after_cleanse": len(manifest),
        "noise_rule": data.DEFAULT_NOISE_RULE.describe(),
        "fingerprint": settings.fingerprint(),
    })
    print(report.to_table())
    failed = [c for c in report.cells if c.status != "ok"]
    log.info("%d/%d cells ok", len(report.cells) - len(failed), len(report.cells))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "extract-features": cmd_extract_features,
    "fetch-tiles": cmd_fetch_tiles,
    "embed": cmd_embed,
    "train-ss": cmd_train_ss,
    "train-impression": cmd_train_impression,
    "experiment": cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](Resolver(args))
    except Exception as exc:  # noqa: BLE001 - fatal errors exit nonzero with a message
        log.error("%s", exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
