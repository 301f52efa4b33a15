"""Command-line front end: configuration, subcommands, run artifacts.

Configuration is a flat ``section.key = value`` text file; any key can be
overridden on the command line as ``--section.key value``. The effective
configuration is logged verbatim into the output directory. All randomness
flows from the three named seeds ``seed.split``, ``seed.init`` and
``seed.shuffle``.

Exit codes: 0 success, 2 configuration or network-plan error, 3 data error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

# The pipeline is dominated by many small matrix products; BLAS thread pools
# only add contention there. Honored only if the user has not chosen.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np

from reefnet import cnn, dataset, evaluation, features, gridcore, preprocess, synth
from reefnet.errors import (BadClassId, ConfigError, ConstantChannel, DegenerateHistogram,
                            EmptyClass, EmptyMatrix, InvalidPlan, MissingImage, ParseError,
                            PointOutOfBounds, ReefNetError, ShapeMismatch,
                            UnsupportedEnhancement)

log = logging.getLogger("reefnet")

DEFAULTS = {
    "data.annotations": "",
    "data.image_root": "",
    "enhance.kind": "none",
    "enhance.low_pct": "1.0",
    "enhance.high_pct": "99.0",
    "patch.sizes": "61,121,181",
    "patch.unify": "down_scale",
    "patch.interp": "bicubic",
    "features.zca": "false",
    "features.wld": "false",
    "features.pc": "false",
    "features.from_enhanced": "true",
    "zca.epsilon": "1e-5",
    "wld.alpha": "1.0",
    "wld.delta": "1e-6",
    "wld.emit": "excitation",
    "pc.scales": "4",
    "pc.orientations": "6",
    "pc.min_wavelength": "3.0",
    "pc.mult": "2.1",
    "pc.sigma_on_f": "0.55",
    "pc.noise_k": "2.0",
    "pc.epsilon": "1e-4",
    "normalize.kind": "min_max",
    "normalize.out_min": "-1.0",
    "normalize.out_max": "1.0",
    "net.maps": "6,16",
    "net.kernels": "6,5",
    "net.pools": "2,4",
    "net.beta": "1.0",
    "train.initial_lr": "1.0",
    "train.epochs": "10",
    "train.batch_size": "3",
    "split.train_ratio": "0.6666666666666666",
    "split.per_class_cap": "300",
    "split.cap_unit": "points",
    "seed.split": "1",
    "seed.init": "2",
    "seed.shuffle": "3",
}


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_int_list(key: str, value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated integers, got {value!r}") from exc


def load_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


class RunConfig:
    """Validated, cross-checked configuration for one pipeline run."""

    def __init__(self, values: dict[str, str]):
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = dict(DEFAULTS)
        cfg.update(values)
        self.raw = cfg

        try:
            self.enhancement = preprocess.EnhancementSpec(
                kind=cfg["enhance.kind"],
                low_pct=float(cfg["enhance.low_pct"]),
                high_pct=float(cfg["enhance.high_pct"]))
            self.patch = preprocess.HybridPatchSpec(
                sizes=_parse_int_list("patch.sizes", cfg["patch.sizes"]),
                unify=cfg["patch.unify"],
                interp=cfg["patch.interp"])
            self.flags = dataset.FeatureFlags(
                zca=_parse_bool("features.zca", cfg["features.zca"]),
                wld=_parse_bool("features.wld", cfg["features.wld"]),
                pc=_parse_bool("features.pc", cfg["features.pc"]),
                zca_spec=features.ZcaSpec(epsilon=float(cfg["zca.epsilon"])),
                wld_spec=features.WldSpec(alpha=float(cfg["wld.alpha"]),
                                          delta=float(cfg["wld.delta"]),
                                          emit=cfg["wld.emit"]),
                pc_spec=features.PcSpec(
                    scales=int(cfg["pc.scales"]),
                    orientations=int(cfg["pc.orientations"]),
                    min_wavelength=float(cfg["pc.min_wavelength"]),
                    mult=float(cfg["pc.mult"]),
                    sigma_on_f=float(cfg["pc.sigma_on_f"]),
                    noise_k=float(cfg["pc.noise_k"]),
                    epsilon=float(cfg["pc.epsilon"])),
                from_enhanced=_parse_bool("features.from_enhanced", cfg["features.from_enhanced"]))
            self.norm = gridcore.NormalizationSpec(
                kind=cfg["normalize.kind"],
                out_min=float(cfg["normalize.out_min"]),
                out_max=float(cfg["normalize.out_max"]))
            self.split = dataset.SplitSpec(
                train_ratio=float(cfg["split.train_ratio"]),
                per_class_cap=int(cfg["split.per_class_cap"]),
                seed=int(cfg["seed.split"]),
                cap_unit=cfg["split.cap_unit"])
            self.train_config = cnn.TrainConfig(
                initial_lr=float(cfg["train.initial_lr"]),
                epochs=int(cfg["train.epochs"]),
                batch_size=int(cfg["train.batch_size"]),
                shuffle_seed=int(cfg["seed.shuffle"]))
            self.net_maps = _parse_int_list("net.maps", cfg["net.maps"])
            self.net_kernels = _parse_int_list("net.kernels", cfg["net.kernels"])
            self.net_pools = _parse_int_list("net.pools", cfg["net.pools"])
            self.beta = float(cfg["net.beta"])
            self.init_seed = int(cfg["seed.init"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

        if not len(self.net_maps) == len(self.net_kernels) == len(self.net_pools):
            raise ConfigError("net.maps, net.kernels and net.pools must have equal length")
        self.annotations = cfg["data.annotations"]
        self.image_root = cfg["data.image_root"]

        # Reject configurations whose window size cannot propagate through
        # the network; the InvalidPlan message carries the shape trace.
        self.network_spec(channels=3 + self.flags.count)

    def network_spec(self, channels: int, classes: int = 2) -> cnn.NetworkSpec:
        stages = []
        n_in = channels
        for maps, kernel, pool in zip(self.net_maps, self.net_kernels, self.net_pools):
            stages.append((cnn.ConvLayerSpec(n_in, maps, kernel), cnn.PoolLayerSpec(pool)))
            n_in = maps
        try:
            spec = cnn.NetworkSpec(self.patch.unified_size, channels, tuple(stages),
                                   classes, cnn.ActivationSpec(self.beta))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        cnn.plan_shapes(spec)
        return spec

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self.raw):
                fh.write(f"{key} = {self.raw[key]}\n")


def _build_fold_samples(config: RunConfig, points, catalog, workers: int):
    samples = list(dataset.build_samples(
        points, catalog, config.image_root, patch_spec=config.patch,
        enhancement=config.enhancement, flags=config.flags, norm=config.norm,
        workers=workers))
    return samples


def _as_pairs(samples):
    return [(s.x, s.label) for s in samples]


def cmd_synth(out_dir, seed: int) -> int:
    csv_path = synth.generate(out_dir, seed)
    log.info("synthetic dataset at %s", csv_path)
    print(csv_path)
    return 0


def cmd_ingest(config: RunConfig, out_dir) -> int:
    if not config.annotations or not config.image_root:
        raise ConfigError("data.annotations and data.image_root are required")
    points, catalog = dataset.ingest(config.annotations, config.image_root)
    train, test = dataset.balance_and_split(points, config.split,
                                            sizes_per_point=len(config.patch.sizes))
    os.makedirs(out_dir, exist_ok=True)
    dataset.write_catalog(catalog, os.path.join(out_dir, "catalog.txt"))
    dataset.write_manifest(train, test, os.path.join(out_dir, "manifest.csv"))
    config.dump(os.path.join(out_dir, "config_used.txt"))
    for name in catalog.names:
        n_train = sum(1 for p in train if p.label == name)
        n_test = sum(1 for p in test if p.label == name)
        print(f"{name}: {n_train} train + {n_test} test points")
    return 0


def cmd_train(config: RunConfig, out_dir, workers: int) -> int:
    catalog = dataset.read_catalog(os.path.join(out_dir, "catalog.txt"))
    train_pts, test_pts = dataset.read_manifest(os.path.join(out_dir, "manifest.csv"))
    log.info("building %d train / %d test points", len(train_pts), len(test_pts))
    train_samples = _build_fold_samples(config, train_pts, catalog, workers)
    test_samples = _build_fold_samples(config, test_pts, catalog, workers)
    if not train_samples:
        raise EmptyClass("manifest has no training points")

    channels = train_samples[0].x.shape[0]
    spec = config.network_spec(channels=channels, classes=len(catalog))
    log.info("training %s for %d epochs", spec, config.train_config.epochs)
    state, history = cnn.train(_as_pairs(train_samples), spec, config.train_config,
                               test_samples=_as_pairs(test_samples),
                               init_seed=config.init_seed)

    cnn.save_model(os.path.join(out_dir, "model.rnet"), spec, state)
    cnn.write_history(history, os.path.join(out_dir, "history.csv"))
    config.dump(os.path.join(out_dir, "config_used.txt"))
    final = history[-1]
    print(f"final train error {final.train_error:.4f}, "
          f"test OA {1.0 - final.test_error:.4f}")
    return 0


def cmd_eval(config: RunConfig, out_dir, workers: int, model_path=None) -> int:
    catalog = dataset.read_catalog(os.path.join(out_dir, "catalog.txt"))
    _train_pts, test_pts = dataset.read_manifest(os.path.join(out_dir, "manifest.csv"))
    spec, state = cnn.load_model(model_path or os.path.join(out_dir, "model.rnet"))
    if spec.classes != len(catalog):
        raise ShapeMismatch(f"model has {spec.classes} classes, catalog has {len(catalog)}")
    samples = _build_fold_samples(config, test_pts, catalog, workers)
    if samples and samples[0].x.shape != (spec.input_channels, spec.input_side, spec.input_side):
        raise ShapeMismatch(f"model expects {(spec.input_channels, spec.input_side, spec.input_side)},"
                            f" samples are {samples[0].x.shape}")

    cm = evaluation.ConfusionMatrix(catalog)
    for start in range(0, len(samples), 32):
        part = samples[start:start + 32]
        scores = cnn.forward_batch(np.stack([s.x for s in part]), spec, state).scores
        for sample, pred in zip(part, np.argmax(scores, axis=1)):
            evaluation.accumulate(cm, sample.label, int(pred))

    evaluation.write_report(cm, os.path.join(out_dir, "report.csv"))
    evaluation.write_confusion_csv(cm, os.path.join(out_dir, "confusion.csv"))
    evaluation.write_heatmap(cm, os.path.join(out_dir, "confusion.png"))
    rep = evaluation.metrics(cm)
    print(f"test OA {rep.overall_accuracy:.4f} over {cm.total} samples")
    return 0


def cmd_predict(config: RunConfig, out_dir, model_path, image_path, row: int, col: int) -> int:
    spec, state = cnn.load_model(model_path or os.path.join(out_dir, "model.rnet"))
    catalog_path = os.path.join(out_dir, "catalog.txt")
    names = dataset.read_catalog(catalog_path).names if os.path.isfile(catalog_path) else None
    img = gridcore.read_png(image_path)
    point = dataset.AnnotatedPoint(os.path.basename(str(image_path)), row, col, "?")
    sams = dataset.point_samples(img, preprocess.enhance(img, config.enhancement), point,
                                 -1, config.patch, config.flags, config.norm)
    mean_scores = np.zeros(spec.classes)
    for s in sams:
        if s.x.shape != (spec.input_channels, spec.input_side, spec.input_side):
            raise ShapeMismatch(f"model expects {(spec.input_channels, spec.input_side, spec.input_side)},"
                                f" sample is {s.x.shape}")
        cls, scores = cnn.predict(s.x, spec, state)
        mean_scores += scores / len(sams)
        print(f"size {s.source_size}: class {cls}"
              + (f" ({names[cls]})" if names else "")
              + " scores " + " ".join(f"{v:.4f}" for v in scores))
    cls = int(np.argmax(mean_scores))
    print(f"aggregate: class {cls}" + (f" ({names[cls]})" if names else ""))
    return 0


def cmd_features(config: RunConfig, image_path) -> int:
    img = gridcore.read_png(image_path)
    gray = gridcore.ImageGrid(gridcore.to_grayscale(img).data / 255.0)
    stem, _ext = os.path.splitext(str(image_path))
    outputs = {
        "zca": features.zca_whiten(gray, config.flags.zca_spec),
        "wld": features.wld(gray, config.flags.wld_spec),
        "pc": features.phase_congruency(gray, config.flags.pc_spec),
    }
    for name, grid in outputs.items():
        scaled = gridcore.ImageGrid(grid.data * 255.0)
        gridcore.write_png(scaled, f"{stem}_{name}.png", rescale=False)
        gridcore.write_grid(grid, f"{stem}_{name}.rgrd")
        print(f"{stem}_{name}.png")
    return 0


def _split_overrides(tokens) -> dict[str, str]:
    overrides: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}")
        body = token[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            key = body
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag --{key} needs a value")
            value = tokens[i + 1]
            i += 2
        if "." not in key:
            raise ConfigError(f"unknown flag --{key}")
        overrides[key] = value
    return overrides


def _configure_logging():
    level_name = os.environ.get("REEFNET_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigError(f"REEFNET_LOG must be error, info or debug, not {level_name!r}")
    logging.basicConfig(level=levels[level_name],
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reefnet",
        description="point-annotated image classification pipeline")
    parser.add_argument("command",
                        choices=["synth", "ingest", "train", "eval", "predict", "features"])
    parser.add_argument("--config", help="flat 'section.key = value' config file")
    parser.add_argument("--out", default="run", help="output directory for run artifacts")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--seed", type=int, default=7, help="seed for the synth command")
    parser.add_argument("--model", help="model file (eval/predict); defaults to OUT/model.rnet")
    parser.add_argument("--image", help="input image (predict/features)")
    parser.add_argument("--row", type=int, help="point row (predict)")
    parser.add_argument("--col", type=int, help="point column (predict)")
    return parser


def run(argv=None) -> int:
    args, rest = build_parser().parse_known_args(argv)
    _configure_logging()

    values: dict[str, str] = {}
    if args.config:
        values.update(load_config_file(args.config))
    values.update(_split_overrides(rest))

    if args.command == "synth":
        return cmd_synth(args.out, args.seed)

    config = RunConfig(values)
    if args.command == "ingest":
        return cmd_ingest(config, args.out)
    if args.command == "train":
        return cmd_train(config, args.out, args.workers)
    if args.command == "eval":
        return cmd_eval(config, args.out, args.workers, args.model)
    if args.command == "predict":
        if not args.image or args.row is None or args.col is None:
            raise ConfigError("predict needs --image, --row and --col")
        return cmd_predict(config, args.out, args.model, args.image, args.row, args.col)
    if args.command == "features":
        if not args.image:
            raise ConfigError("features needs --image")
        return cmd_features(config, args.image)
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ConfigError, InvalidPlan, ShapeMismatch) as exc:
        log.error("%s", exc)
        return 2
    except (ParseError, MissingImage, PointOutOfBounds, EmptyClass, DegenerateHistogram,
            ConstantChannel, UnsupportedEnhancement, BadClassId, EmptyMatrix) as exc:
        log.error("%s", exc)
        return 3
    except OSError as exc:
        log.error("%s", exc)
        return 4
    except ReefNetError as exc:
        log.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
