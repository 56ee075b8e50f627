"""Command-line entry point.

Every :class:`PipelineConfig` field is available as a ``--flag`` (underscores
become dashes) and overrides the value from ``--config``.  Exit codes:
0 success, 2 configuration error, 3 IO or format error, 4 payload corrupted by
the channel while ``--strict`` is set, 5 any other failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .errors import ConfigError, FormatError, StageError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CORRUPT, EXIT_INTERNAL = 0, 2, 3, 4, 5
THREADS_ENV = "SEMCOMM_THREADS"

VERBS = {
    "segment": "segment one image into a label map",
    "restore": "restore an image from a label map (PGM)",
    "pipeline": "transmit one image through the full system",
    "train-seg": "train the segmentation network on a dataset directory",
    "train-gan": "train the restoration pair on DATASET/X and DATASET/Y",
    "quantize": "store segmentation weights as INT8 and report the size reduction",
    "sweep-snr": "run the pipeline over a list of SNRs",
    "report": "merge run reports into JSON + plot CSV (or print the latency example)",
    "synth-data": "write a synthetic dataset for trying the other verbs",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            group.add_argument(flag, dest=f.name, metavar=type(f.default).__name__.upper(),
                               default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semcomm", description="Semantic image communication toolkit.")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    for verb, help_text in VERBS.items():
        p = sub.add_parser(verb, help=help_text, description=help_text)
        p.add_argument("--config", help="key=value config file")
        if verb == "restore":
            p.add_argument("labels", help="label map PGM")
        if verb == "sweep-snr":
            p.add_argument("--snrs", default="0:10:1", help="comma list or start:stop:step in dB (default 0:10:1)")
        if verb == "report":
            p.add_argument("reports", nargs="*", help="report.json files; none prints the latency example")
        if verb == "synth-data":
            p.add_argument("kind", choices=("seg", "gan"))
            p.add_argument("--count", type=int, default=16)
            p.add_argument("--size", type=int, default=64)
        _add_config_flags(p)
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names}
    if args.config:
        return load_config(args.config, overrides)
    return PipelineConfig.from_dict(overrides)


def parse_snrs(text: str) -> list[float]:
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(max(count, 0))]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"--snrs: {exc}") from None


def thread_limit():
    """``SEMCOMM_THREADS``: unset leaves BLAS alone, 0 means deterministic single-thread."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, allow_nan=False))


# -- verbs ---------------------------------------------------------------------


def cmd_segment(cfg: PipelineConfig, args) -> int:
    from .imageio import read_ppm, write_label_pgm, write_ppm
    from .labelmap import colorize
    from .pipeline import check_image_extent, load_segnet, palette_for, stage

    with stage("load"):
        if not cfg.image:
            raise ConfigError("segment needs --image")
        cfg.check_paths("image", "seg_weights", "palette")
        image = read_ppm(cfg.image)
        check_image_extent(cfg, *image.shape[1:])
        net = load_segnet(cfg, *image.shape[1:])
    with stage("segment"):
        if cfg.quantized:
            from .quantization.model import build_int8_model
            from .segmentation.net import normalize_image

            net = build_int8_model(net, normalize_image(image).data[None])
        from .segmentation.net import segment

        labels = segment(image, net)
    with stage("write"):
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        write_label_pgm(out / "semantic.pgm", labels)
        write_ppm(out / "semantic_color.ppm", colorize(labels, palette_for(cfg)))
    counts = np.bincount(labels.labels.ravel(), minlength=cfg.num_classes)
    _print({"semantic": str(out / "semantic.pgm"), "class_pixels": counts.tolist()})
    return EXIT_OK


def cmd_restore(cfg: PipelineConfig, args) -> int:
    from .imageio import read_label_pgm, write_ppm
    from .pipeline import check_image_extent, load_restorer, palette_for, stage
    from .restoration.gan import restore

    with stage("load"):
        cfg.check_paths("gan_weights", "palette")
        labels = read_label_pgm(args.labels, cfg.num_classes)
        check_image_extent(cfg, labels.height, labels.width)
        gen = load_restorer(cfg)
        palette = palette_for(cfg)
    with stage("restore"):
        image = restore(labels, gen, palette)
    with stage("write"):
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        write_ppm(out / "restored.ppm", image)
    _print({"restored": str(out / "restored.ppm")})
    return EXIT_OK


def cmd_pipeline(cfg: PipelineConfig, args) -> int:
    from .pipeline import run_pipeline

    run = run_pipeline(cfg)
    receiver = run.report["receiver"]
    _print({"files": run.files, "degraded": receiver["degraded"], "ber": run.report["channel"]["ber"],
            "psnr": run.report["metrics"]["psnr"], "reduction": run.report["latency"]["reduction"]})
    if receiver["degraded"] and cfg.strict:
        print(f"semcomm: payload corrupted by the channel: {receiver['error']}", file=sys.stderr)
        return EXIT_CORRUPT
    return EXIT_OK


def cmd_train_seg(cfg: PipelineConfig, args) -> int:
    from .pipeline import train_seg_from_dir

    if not cfg.dataset:
        raise ConfigError("train-seg needs --dataset")
    _print(train_seg_from_dir(cfg, callback=_progress))
    return EXIT_OK


def cmd_train_gan(cfg: PipelineConfig, args) -> int:
    from .pipeline import train_gan_from_dir

    if not cfg.dataset:
        raise ConfigError("train-gan needs --dataset")
    _print(train_gan_from_dir(cfg, callback=_progress))
    return EXIT_OK


def _progress(row: dict) -> None:
    print(" ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()),
          file=sys.stderr)


def cmd_quantize(cfg: PipelineConfig, args) -> int:
    from .pipeline import build_segnet, stage
    from .quantization.model import quantize_model
    from .weights import load_weights, save_weights

    with stage("load"):
        cfg.check_paths("seg_weights")
        weights = load_weights(cfg.seg_weights) if cfg.seg_weights else build_segnet(cfg).state_dict()
    with stage("quantize"):
        qweights, report = quantize_model(weights)
    with stage("write"):
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        save_weights(out / "weights_int8.scwt", qweights)
        (out / "size_report.json").write_text(report.to_json() + "\n")
    _print(dataclasses.asdict(report))
    return EXIT_OK


def cmd_sweep_snr(cfg: PipelineConfig, args) -> int:
    from .pipeline import emit_plot_data, emit_report, stage, sweep_snr

    snrs = parse_snrs(args.snrs)
    reports = sweep_snr(cfg, snrs)
    with stage("write"):
        out = Path(cfg.output)
        emit_report(reports, out / "sweep.json")
        emit_plot_data(reports, out / "sweep.csv")
    _print({"runs": len(reports), "report": str(out / "sweep.json"), "plot_data": str(out / "sweep.csv")})
    return EXIT_OK


def cmd_report(cfg: PipelineConfig, args) -> int:
    from .pipeline import emit_plot_data, emit_report, latency_example, stage

    if not args.reports:
        _print(latency_example())
        return EXIT_OK
    with stage("load"):
        reports = []
        for path in args.reports:
            try:
                data = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: not JSON ({exc})") from exc
            reports.extend(data if isinstance(data, list) else [data])
    with stage("write"):
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        emit_report(reports, out / "reports.json")
        emit_plot_data(reports, out / "plot.csv")
    _print({"runs": len(reports), "report": str(out / "reports.json"), "plot_data": str(out / "plot.csv")})
    return EXIT_OK


def cmd_synth_data(cfg: PipelineConfig, args) -> int:
    from .imageio import write_label_pgm, write_ppm
    from .labelmap import LabelMap, colorize
    from .synthetic import NUM_SHAPE_CLASSES, make_domain_pair, make_segmentation_dataset

    if args.count < 1 or args.size % 16 or (args.kind == "seg" and args.size < 48) or args.size < 16:
        raise ConfigError("--count must be >= 1 and --size a multiple of 16 (at least 48 for seg)")
    out = Path(cfg.output)
    if args.kind == "seg":
        out.mkdir(parents=True, exist_ok=True)
        images, labels = make_segmentation_dataset(args.count, args.size, cfg.seed)
        for i, (img, lab) in enumerate(zip(images, labels)):
            write_ppm(out / f"{i:04d}.ppm", img)
            write_label_pgm(out / f"{i:04d}.pgm", lab)
        _print({"dataset": str(out), "pairs": args.count, "num_classes": NUM_SHAPE_CLASSES})
        return EXIT_OK
    xs, _ = make_domain_pair(args.count, args.size, cfg.seed)
    # domain Y holds palette renderings of label maps, matching what the receiver restores from
    _, labels = make_segmentation_dataset(args.count, args.size, cfg.seed + 1)
    (out / "X").mkdir(parents=True, exist_ok=True)
    (out / "Y").mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        write_ppm(out / "X" / f"{i:04d}.ppm", xs[i])
        write_ppm(out / "Y" / f"{i:04d}.ppm", colorize(LabelMap(labels[i], NUM_SHAPE_CLASSES)))
    _print({"dataset": str(out), "per_domain": args.count})
    return EXIT_OK


COMMANDS = {
    "segment": cmd_segment,
    "restore": cmd_restore,
    "pipeline": cmd_pipeline,
    "train-seg": cmd_train_seg,
    "train-gan": cmd_train_gan,
    "quantize": cmd_quantize,
    "sweep-snr": cmd_sweep_snr,
    "report": cmd_report,
    "synth-data": cmd_synth_data,
}


def exit_code_for(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return EXIT_CONFIG
    if isinstance(cause, (FormatError, OSError)):
        return EXIT_IO
    return EXIT_INTERNAL


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        with thread_limit():
            return COMMANDS[args.verb](cfg, args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        print(f"semcomm {args.verb}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
