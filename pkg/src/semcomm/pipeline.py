"""End-to-end runs: image -> segmentation -> payload -> channel -> decode -> restoration,
plus directory-based training and report emission."""

from __future__ import annotations

import csv
import json
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.optim import Adam
from .autodiff.tensor import Tensor, no_grad
from .channel.codec import CODEC_RLE, HEADER_BYTES, bits_per_label, decode_payload, encode_label_map
from .channel.sim import MIN_SNR_SYMBOLS, apply_channel, bits_from_bytes, bytes_from_bits, measure_empirical_snr
from .config import PipelineConfig
from .errors import ConfigError, CorruptionError, FormatError, StageError
from .imageio import read_label_pgm, read_ppm, write_label_pgm, write_ppm
from .labelmap import LabelMap, default_palette, read_palette
from .metrics import LatencyModel, compression_ratio, latency_report, miou_mpa, mse, psnr, ssim
from .quantization.model import build_int8_model, quantize_model
from .restoration.gan import DiscriminatorConfig, Generator, GeneratorConfig, restore
from .restoration.train import CycleState, cycle_train_step
from .restoration.losses import cycle_loss
from .segmentation.net import SegNet, SegNetConfig, normalize_image, segment
from .segmentation.train import evaluate, train_seg_step, validation_loss
from .synthetic import to_unit_range
from .weights import as_float, load_weights, prefixed, save_weights, split_prefix

REPORT_VERSION = 1
PLOT_COLUMNS = ("snr_db", "ber", "miou", "psnr", "ssim", "ratio", "t_raw", "t_semantic", "reduction")


@contextmanager
def stage(name: str, timings: dict | None = None):
    """Attribute any failure inside the block to pipeline stage ``name``."""
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


# -- model construction ---------------------------------------------------------


def build_segnet(cfg: PipelineConfig, height: int = 64, width: int = 64) -> SegNet:
    return SegNet(SegNetConfig(num_classes=cfg.num_classes, base_channels=cfg.base_channels,
                               height=height, width=width, seed=cfg.seed))


def build_cycle(cfg: PipelineConfig) -> CycleState:
    state = CycleState.create(GeneratorConfig(base_filters=cfg.gan_base_filters, levels=cfg.gan_levels),
                              DiscriminatorConfig(layers=cfg.disc_layers), seed=cfg.seed,
                              lam=cfg.cycle_lambda, lr=cfg.lr_gan)
    for opt in (state.opt_g, state.opt_d):
        opt.state.step_size, opt.state.gamma = cfg.step_size, cfg.gamma
    return state


def _load_into(module, state, what: str) -> None:
    try:
        module.load_state_dict(as_float(state))
    except KeyError as exc:
        raise FormatError(f"{what} weights do not match the configured network: {exc}") from exc


def load_segnet(cfg: PipelineConfig, height: int, width: int) -> SegNet:
    net = build_segnet(cfg, height, width)
    if cfg.seg_weights:
        _load_into(net, load_weights(cfg.seg_weights), "segmentation")
    return net.eval()


def load_restorer(cfg: PipelineConfig) -> Generator:
    """The semantic -> realistic direction (F) of the trained cycle pair."""
    gen = Generator(GeneratorConfig(base_filters=cfg.gan_base_filters, levels=cfg.gan_levels, seed=cfg.seed + 1))
    if cfg.gan_weights:
        state = split_prefix("F", load_weights(cfg.gan_weights))
        if not state:
            raise FormatError(f"{cfg.gan_weights} holds no 'F.' tensors")
        _load_into(gen, state, "restoration")
    return gen.eval()


def palette_for(cfg: PipelineConfig) -> np.ndarray:
    return read_palette(cfg.palette) if cfg.palette else default_palette()


MIN_EXTENT = 8 * 6  # output stride times the largest pyramid bin


def check_image_extent(cfg: PipelineConfig, height: int, width: int) -> None:
    m = max(8, 2 ** cfg.gan_levels)
    if height % m or width % m:
        raise FormatError(f"image {height}x{width} must have extents divisible by {m}")
    if min(height, width) < MIN_EXTENT:
        raise FormatError(f"image {height}x{width} is smaller than {MIN_EXTENT} pixels on a side")


# -- one pipeline run -----------------------------------------------------------


@dataclass
class RunResult:
    report: dict
    timings: dict
    sent: LabelMap
    received: LabelMap
    restored: np.ndarray
    symbol_log: object = None
    files: dict = field(default_factory=dict)


def _finite(x: float) -> float:
    if not math.isfinite(x):
        raise ValueError(f"non-finite report value {x}")
    return float(x)


def run_pipeline(cfg: PipelineConfig, write: bool = True) -> RunResult:
    """Transmit one image end to end and measure everything.

    ``report`` depends only on the config and input files; wall-clock stage
    times are kept apart in ``timings``.  A payload damaged beyond decoding is
    replaced by an all-background map and flagged ``degraded``.
    """
    timings: dict[str, float] = {}
    with stage("load", timings):
        if not cfg.image:
            raise ConfigError("no input image configured")
        cfg.check_paths("image", "seg_weights", "gan_weights", "palette")
        image = read_ppm(cfg.image)
        _, h, w = image.shape
        check_image_extent(cfg, h, w)
        net = load_segnet(cfg, h, w)
        restorer = load_restorer(cfg)
        palette = palette_for(cfg)
        if palette.shape[0] < cfg.num_classes:
            raise ConfigError("palette has fewer entries than classes")

    size_report = None
    with stage("segment", timings):
        model = net
        if cfg.quantized:
            _, size_report = quantize_model(net.state_dict())
            model = build_int8_model(net, normalize_image(image).data[None])
        sent = segment(image, model)

    with stage("encode", timings):
        payload = encode_label_map(sent, cfg.num_classes)
        wire = payload.to_bytes()

    with stage("channel", timings):
        chan = cfg.channel
        result = apply_channel(bits_from_bytes(wire), chan, log=True)
        received_bytes = bytes_from_bits(result.bits)
        sent_bits = bits_from_bytes(wire)
        bit_errors = int(np.count_nonzero(result.bits != sent_bits))
        symbols = len(sent_bits)

    error = ""
    with stage("decode", timings):
        try:
            received = decode_payload(received_bytes, cfg.num_classes)
            if received.labels.shape != sent.labels.shape:
                raise CorruptionError("decoded map has the wrong extent")
        except CorruptionError as exc:
            error = str(exc)
            received = LabelMap(np.zeros_like(sent.labels), cfg.num_classes)

    with stage("restore", timings):
        restored = restore(received, restorer, palette)

    with stage("metrics", timings):
        raw_bytes = 3 * h * w
        chan_stats = {
            "noiseless": cfg.noiseless,
            "snr_db": None if cfg.noiseless else _finite(cfg.snr_db),
            "fading": cfg.fading,
            "per_symbol_fading": cfg.per_symbol_fading,
            "bits": symbols,
            "bit_errors": bit_errors,
            "ber": bit_errors / symbols,
        }
        if cfg.fading and not cfg.per_symbol_fading:
            chan_stats["block_gain_power"] = _finite(float(abs(result.log.h[0]) ** 2))
        if symbols >= MIN_SNR_SYMBOLS:
            chan_stats["equalized_snr_db"] = _finite(measure_empirical_snr(result.log.sent, result.log.equalized))
        labels = miou_mpa(received, sent, cfg.num_classes)
        quality = {
            "label_mIoU": labels["mIoU"],
            "label_mPA": labels["mPA"],
            "labels_identical": received == sent,
            "mse": _finite(mse(restored, image)),
            "psnr": _finite(psnr(restored, image)),
        }
        if min(h, w) >= 11:
            quality["ssim"] = _finite(ssim(restored, image))
        latency = latency_report(LatencyModel(cfg.bitrate, raw_bytes * 8, payload.nbytes * 8,
                                              cfg.t_seg, cfg.t_restore))
        report = {
            "version": REPORT_VERSION,
            "config": cfg.to_dict(),
            "image": {"width": w, "height": h, "raw_bytes": raw_bytes},
            "payload": {
                "codec": "rle" if payload.codec == CODEC_RLE else "bitpack",
                "bits_per_label": bits_per_label(cfg.num_classes),
                "header_bytes": HEADER_BYTES,
                "bytes": payload.nbytes,
                "compression_ratio": compression_ratio(raw_bytes, payload.nbytes),
            },
            "channel": chan_stats,
            "receiver": {"degraded": bool(error), "error": error},
            "metrics": quality,
            "latency": {**latency, "stage_times": "injected from config"},
        }
        if size_report is not None:
            report["quantization"] = asdict(size_report)

    run = RunResult(report, timings, sent, received, restored, result.log)
    if write:
        with stage("write", timings):
            run.files = write_run(cfg, run, payload.nbytes * 8, raw_bytes * 8)
    return run


def write_run(cfg: PipelineConfig, run: RunResult, payload_bits: int, raw_bits: int) -> dict:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "semantic": out / "semantic.pgm",
        "received": out / "received.pgm",
        "restored": out / "restored.ppm",
        "report": out / "report.json",
        "timings": out / "timings.json",
    }
    write_label_pgm(files["semantic"], run.sent)
    write_label_pgm(files["received"], run.received)
    write_ppm(files["restored"], run.restored)
    files["report"].write_text(report_json(run.report))
    stage_times = dict(run.timings)
    measured = latency_report(LatencyModel(cfg.bitrate, raw_bits, payload_bits,
                                           stage_times.get("segment", 0.0), stage_times.get("restore", 0.0)))
    files["timings"].write_text(json.dumps({"stages": stage_times, "latency_measured": measured}, indent=2) + "\n")
    if cfg.symbol_log and run.symbol_log is not None:
        files["symbols"] = out / "symbols.csv"
        run.symbol_log.to_csv(files["symbols"])
    return {k: str(v) for k, v in files.items()}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


# -- reports ---------------------------------------------------------------------


def plot_row(report: dict) -> dict:
    chan, met, lat = report["channel"], report["metrics"], report["latency"]
    return {
        "snr_db": chan["snr_db"] if chan["snr_db"] is not None else "inf",
        "ber": chan["ber"],
        "miou": met["label_mIoU"],
        "psnr": met["psnr"],
        "ssim": met.get("ssim", ""),
        "ratio": report["payload"]["compression_ratio"],
        "t_raw": lat["T_raw"],
        "t_semantic": lat["T_semantic"],
        "reduction": lat["reduction"],
    }


def emit_report(reports: list[dict], path) -> None:
    Path(path).write_text(json.dumps(reports, indent=2, allow_nan=False) + "\n")


def emit_plot_data(reports: list[dict], path) -> None:
    """CSV with one row per run, sorted by SNR (noiseless runs last)."""
    rows = [plot_row(r) for r in reports]
    rows.sort(key=lambda r: math.inf if r["snr_db"] == "inf" else r["snr_db"])
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PLOT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def sweep_snr(cfg: PipelineConfig, snrs) -> list[dict]:
    """One run per SNR with the same seed (common random numbers), each in its own sub-directory."""
    reports = []
    for snr in sorted(float(s) for s in snrs):
        sub = cfg.replace(snr_db=snr, noiseless=False, output=str(Path(cfg.output) / f"snr_{snr:g}"))
        reports.append(run_pipeline(sub).report)
    return reports


def latency_example() -> dict:
    """The documented reference case: 2 MiB raw, 80 KiB payload, 1 Mbit/s, 0.5 s processing."""
    model = LatencyModel(bitrate=1e6, raw_bits=2 * 1024 * 1024 * 8, payload_bits=80 * 1024 * 8,
                         t_seg=0.25, t_restore=0.25)
    return {"model": asdict(model), **latency_report(model)}


# -- training from directories ---------------------------------------------------


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split; tiny sets validate on the training data."""
    order = np.random.default_rng(seed).permutation(n)
    k = int(round(val_fraction * n))
    if k == 0 or k >= n:
        return np.sort(order), np.sort(order)
    return np.sort(order[k:]), np.sort(order[:k])


def load_seg_dataset(directory, num_classes: int) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Pairs ``NAME.ppm`` (image) + ``NAME.pgm`` (labels) from one directory."""
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"dataset directory {d} does not exist")
    images = {p.stem: p for p in d.glob("*.ppm")}
    labels = {p.stem: p for p in d.glob("*.pgm")}
    if not images:
        raise FormatError(f"no .ppm images in {d}")
    unmatched = sorted(set(images) ^ set(labels))
    if unmatched:
        raise FormatError(f"unpaired files in {d}: {', '.join(unmatched[:5])}")
    names = sorted(images)
    xs = [read_ppm(images[n]) for n in names]
    ys = [read_label_pgm(labels[n], num_classes).labels for n in names]
    shapes = {x.shape for x in xs} | {(3, *y.shape) for y in ys}
    if len(shapes) != 1:
        raise FormatError("all images and label maps must share one extent")
    return np.stack(xs), np.stack(ys), names


def load_domain(directory) -> np.ndarray:
    d = Path(directory)
    files = sorted(d.glob("*.ppm")) if d.is_dir() else []
    if not files:
        raise FormatError(f"no .ppm images in {d}")
    xs = [read_ppm(p) for p in files]
    if len({x.shape for x in xs}) != 1:
        raise FormatError(f"images in {d} differ in extent")
    return np.stack(xs)


def _write_trace(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def train_seg_from_dir(cfg: PipelineConfig, callback=None) -> dict:
    """Epoch-based training; writes ``weights.scwt`` (best validation loss) and ``trace.csv``."""
    with stage("load"):
        images, labels, _ = load_seg_dataset(cfg.dataset, cfg.num_classes)
        x = to_unit_range(images)
        tr, va = split_indices(len(x), cfg.val_fraction, cfg.seed)
        net = build_segnet(cfg, *x.shape[2:])
        if cfg.seg_weights:
            _load_into(net, load_weights(cfg.seg_weights), "segmentation")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.parameters(), cfg.lr_seg, step_size=cfg.step_size, gamma=cfg.gamma)
    rows, best = [], math.inf
    with stage("train"):
        for epoch in range(cfg.epochs):
            opt.set_epoch(epoch)
            order = tr[rng.permutation(len(tr))]
            losses = []
            for i in range(0, len(order), cfg.batch_size):
                idx = np.sort(order[i : i + cfg.batch_size])
                losses.append(train_seg_step(net, opt, x[idx], labels[idx]))
            val = validation_loss(net, x[va], labels[va])
            scores = evaluate(net, x[va], labels[va])
            rows.append({"epoch": epoch, "lr": opt.state.lr, "train_loss": float(np.mean(losses)),
                         "val_loss": val, "val_mIoU": scores["mIoU"]})
            if val < best:
                best = val
                save_weights(out / "weights.scwt", net.state_dict())
            if callback is not None:
                callback(rows[-1])
    _write_trace(out / "trace.csv", rows)
    return {"weights": str(out / "weights.scwt"), "trace": str(out / "trace.csv"), "best_val_loss": best,
            "epochs": len(rows)}


def _val_cycle(state: CycleState, x: np.ndarray, y: np.ndarray) -> float:
    with no_grad():
        tx, ty = Tensor(x), Tensor(y)
        return float(cycle_loss(tx, state.f(state.g(tx)), ty, state.g(state.f(ty))).data)


def train_gan_from_dir(cfg: PipelineConfig, callback=None) -> dict:
    """Unpaired domains ``DATASET/X`` (realistic) and ``DATASET/Y`` (semantic renderings)."""
    with stage("load"):
        xs = to_unit_range(load_domain(Path(cfg.dataset) / "X"))
        ys = to_unit_range(load_domain(Path(cfg.dataset) / "Y"))
        if xs.shape[1:] != ys.shape[1:]:
            raise FormatError("domains X and Y must share one image extent")
        state = build_cycle(cfg)
        if cfg.gan_weights:
            blob = load_weights(cfg.gan_weights)
            for name, net in (("G", state.g), ("F", state.f), ("DX", state.dx), ("DY", state.dy)):
                _load_into(net, split_prefix(name, blob), name)
        xtr, xva = split_indices(len(xs), cfg.val_fraction, cfg.seed)
        ytr, yva = split_indices(len(ys), cfg.val_fraction, cfg.seed + 1)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    rows, best = [], math.inf
    with stage("train"):
        for epoch in range(cfg.epochs):
            state.opt_g.set_epoch(epoch)
            state.opt_d.set_epoch(epoch)
            px, py = xtr[rng.permutation(len(xtr))], ytr[rng.permutation(len(ytr))]
            steps = max(1, min(len(px), len(py)) // cfg.batch_size)
            records = []
            for s in range(steps):
                bx = np.sort(px[s * cfg.batch_size : (s + 1) * cfg.batch_size])
                by = np.sort(py[s * cfg.batch_size : (s + 1) * cfg.batch_size])
                records.append(cycle_train_step(xs[bx], ys[by], state))
            row = {"epoch": epoch, "lr": state.opt_g.state.lr}
            for key in ("total", "adversarial", "cycle", "identity", "discriminator"):
                row[f"train_{key}"] = float(np.mean([r[key] for r in records]))
            row["val_cycle"] = _val_cycle(state, xs[xva], ys[yva])
            rows.append(row)
            if row["val_cycle"] < best:
                best = row["val_cycle"]
                save_weights(out / "weights.scwt", gan_state(state))
            if callback is not None:
                callback(row)
    _write_trace(out / "trace.csv", rows)
    return {"weights": str(out / "weights.scwt"), "trace": str(out / "trace.csv"), "best_val_cycle": best,
            "epochs": len(rows)}


def gan_state(state: CycleState):
    blob = {}
    for name, net in (("G", state.g), ("F", state.f), ("DX", state.dx), ("DY", state.dy)):
        blob.update(prefixed(name, net.state_dict()))
    return blob
