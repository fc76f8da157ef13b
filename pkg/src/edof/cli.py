"""Command-line entry point: ``edof <subcommand> ...``.

Every subcommand that writes files also writes ``<output>.manifest.json`` with
the resolved configuration, its hash, library versions, the seed and the
SHA-256 of each artifact.  Errors go to stderr as one JSON object and the
process exits with status 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io as _stdio
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as eio
from .corpus import depth_regions
from .fixedpoint import CLOCK_PRESETS, calibrate_scales, cycle_model, quantize_network
from .network import OUTPUT_SPACES, TrainConfig, init_from_ista, sgd_train
from .optics import OpticsSpec, PhaseMaskSpec, build_kernel_set
from .pipeline import (ReconstructionJob, assemble, extract_patches, psnr, reconstruct_image,
                       rgb_to_ycbcr422)
from .sensor import PATTERNS, demosaic_bilinear, simulate_capture
from .sparse import SolverConfig, build_concat_dictionary, dct_dictionary, ista_batch, omp, reconstruct_patch

log = logging.getLogger("edof")

THREADS_ENV = "EDOF_NUM_THREADS"
DEFAULT_PSI_GRID = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)


class CliError(Exception):
    def __init__(self, message: str, path: str | None = None, kind: str = "invalid-argument"):
        super().__init__(message)
        self.path, self.kind = path, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, kind="usage")


# ---------------------------------------------------------------------------
# configuration

@dataclasses.dataclass
class ExperimentConfig:
    """Everything that determines an experiment's outputs."""

    optics: OpticsSpec = dataclasses.field(default_factory=OpticsSpec)
    mask: PhaseMaskSpec = dataclasses.field(default_factory=PhaseMaskSpec.default)
    psi_grid: tuple[float, ...] = DEFAULT_PSI_GRID
    solver: SolverConfig = dataclasses.field(default_factory=SolverConfig)
    pattern: str = "RGGB"
    seed: int | None = None

    def to_dict(self) -> dict:
        opt = dataclasses.asdict(self.optics)
        opt["wavelengths"] = list(opt["wavelengths"])
        return {"optics": opt, "mask": self.mask.to_dict(), "psi_grid": list(self.psi_grid),
                "solver": {"mu": self.solver.mu, "iterations": self.solver.iterations},
                "pattern": self.pattern, "seed": self.seed}


_OPTICS_FIELDS = {f.name: f for f in dataclasses.fields(OpticsSpec)}


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _optics_type(name: str):
    if name == "wavelengths":
        return _float_list
    if name == "image_distance":
        return float
    return int if name in ("pupil_grid_size", "kernel_size", "oversample", "reference_channel") else float


def _add_optics_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("optics")
    g.add_argument("--config", help="JSON experiment config (flags override it)")
    for name in _OPTICS_FIELDS:
        g.add_argument(f"--optics.{name}", dest=f"optics__{name}", type=_optics_type(name), default=None)
    g.add_argument("--mask", choices=("on", "off"), default=None, help="phase mask on or clear aperture")
    g.add_argument("--mask.rings", dest="mask__rings", default=None,
                   help='JSON list of {"inner","outer","phases":[r,g,b]} rings')
    g.add_argument("--psi-grid", type=_float_list, default=None, help="comma-separated psi values")
    g.add_argument("--pattern", choices=PATTERNS, default=None)


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"file not found: {p}", str(p), "missing-file")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{p}: invalid JSON ({exc})", str(p), "schema") from None


def resolve_config(args) -> ExperimentConfig:
    raw = _load_json(args.config) if getattr(args, "config", None) else {}
    unknown = set(raw) - {"optics", "mask", "psi_grid", "solver", "pattern", "seed"}
    if unknown:
        raise CliError(f"unknown config keys {sorted(unknown)}", args.config, "schema")
    opt = dict(raw.get("optics", {}))
    bad = set(opt) - set(_OPTICS_FIELDS)
    if bad:
        raise CliError(f"unknown optics fields {sorted(bad)}", args.config, "schema")
    for name in _OPTICS_FIELDS:
        v = getattr(args, f"optics__{name}", None)
        if v is not None:
            opt[name] = v
    if "wavelengths" in opt:
        opt["wavelengths"] = tuple(opt["wavelengths"])
    mask = PhaseMaskSpec.from_dict(raw["mask"]) if "mask" in raw else PhaseMaskSpec.default()
    if getattr(args, "mask__rings", None):
        mask = PhaseMaskSpec.from_dict({"enabled": True, "rings": json.loads(args.mask__rings)})
    if getattr(args, "mask", None) == "off":
        mask = PhaseMaskSpec.clear()
    elif getattr(args, "mask", None) == "on" and not mask.enabled:
        mask = PhaseMaskSpec.default()
    solver = dict(raw.get("solver", {}))
    for key in ("mu", "iterations"):
        v = getattr(args, key, None)
        if v is not None:
            solver[key] = v
    seed = getattr(args, "seed", None)
    return ExperimentConfig(
        optics=OpticsSpec(**opt),
        mask=mask,
        psi_grid=tuple(getattr(args, "psi_grid", None) or raw.get("psi_grid", DEFAULT_PSI_GRID)),
        solver=SolverConfig(**solver),
        pattern=getattr(args, "pattern", None) or raw.get("pattern", "RGGB"),
        seed=seed if seed is not None else raw.get("seed"),
    )


def _kernels(cfg: ExperimentConfig):
    return build_kernel_set(cfg.optics, cfg.mask, cfg.psi_grid)


def _psi_index(cfg: ExperimentConfig, psi: float) -> int:
    ks_grid = cfg.psi_grid
    for i, p in enumerate(ks_grid):
        if abs(p - psi) < 1e-9:
            return i
    raise CliError(f"psi={psi} is not on the grid {list(ks_grid)}")


def _require_seed(args):
    if args.seed is None:
        raise CliError("--seed is required for this subcommand")


# ---------------------------------------------------------------------------
# artifacts

def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy
    return {"edof": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(primary: Path, command: str, config: dict, outputs: list[Path], seed) -> Path:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "versions": _versions(),
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = Path(str(primary) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"file not found: {p}", str(p), "missing-file")
    return p


def _args_config(args, skip=("func", "command")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# subcommands

def _depth_from_arg(text: str, cfg: ExperimentConfig, shape: tuple[int, int]):
    p = Path(text)
    if p.suffix == ".npy":
        psi_map = np.load(_existing(text))
        if psi_map.shape != shape:
            raise CliError(f"psi map shape {psi_map.shape} does not match image {shape}", text)
        lookup = {p_: i for i, p_ in enumerate(cfg.psi_grid)}
        try:
            return np.vectorize(lambda v: lookup[float(v)])(psi_map)
        except KeyError as exc:
            raise CliError(f"psi map value {exc.args[0]} is not on the grid", text) from None
    values = _float_list(text)
    idx = [_psi_index(cfg, v) for v in values]
    if len(idx) == 1:
        return idx[0]
    labels = depth_regions(*shape, n_regions=len(idx))
    return np.asarray(idx)[labels]


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    if args.noise_sigma > 0:
        _require_seed(args)
    img = eio.read_png(_existing(args.input))
    depth = _depth_from_arg(args.psi, cfg, (img.height, img.width))
    raw = simulate_capture(img, _kernels(cfg), depth, cfg.pattern, args.noise_sigma, args.seed or 0)
    out = eio.write_raw(args.out, raw)
    outputs = [out, eio.sidecar_path(out)]
    if args.blurred_out:
        outputs.append(eio.write_png(args.blurred_out, demosaic_bilinear(raw)))
    write_manifest(out, "simulate", {**cfg.to_dict(), **_args_config(args)}, outputs, args.seed)
    return 0


def _build_dictionary(cfg: ExperimentConfig, args):
    d = dct_dictionary(k=args.k, color_basis=args.color_basis)
    return build_concat_dictionary(d, _kernels(cfg), cfg.pattern)


def cmd_dict(args) -> int:
    if args.dict_command == "build":
        cfg = resolve_config(args)
        cd = _build_dictionary(cfg, args)
        out = eio.write_dictionary(args.out, cd)
        write_manifest(out, "dict build", {**cfg.to_dict(), **_args_config(args)}, [out], None)
        return 0
    from .sparse import lipschitz_upper
    cd = eio.read_dictionary(_existing(args.file))
    _emit({"n": cd.clear.atom_dim, "k": cd.k, "q": cd.q, "psi_grid": list(cd.psi_grid),
           "pattern": cd.pattern, "projected_shape": list(cd.projected.shape),
           "lipschitz": lipschitz_upper(cd.projected)})
    return 0


def cmd_solve(args) -> int:
    cd = eio.read_dictionary(_existing(args.dict))
    raw = eio.read_raw(_existing(args.raw))
    if raw.pattern != cd.pattern:
        raise CliError(f"raw pattern {raw.pattern} does not match dictionary pattern {cd.pattern}", args.raw)
    stream = extract_patches(raw, args.stride)
    if args.method == "ista":
        z = ista_batch(stream.patches, cd, SolverConfig(mu=args.mu, iterations=args.iters))
    else:
        z = np.stack([omp(y, cd, args.iters) for y in stream.patches])
    image = assemble(reconstruct_patch(z, cd), stream.origins, stream.frame_shape)
    out = eio.write_png(args.out, image)
    report = {"method": args.method, "patches": len(stream), "stride": args.stride}
    if args.gt:
        report["psnr_db"] = psnr(image, eio.read_png(_existing(args.gt)))
    outputs = [out]
    if args.report:
        outputs.append(_write_json(Path(args.report), report))
    write_manifest(out, "solve", _args_config(args), outputs, None)
    _emit(report)
    return 0


def _image_paths(directory: str, suffix: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"directory not found: {d}", str(d), "missing-file")
    paths = sorted(d.glob(f"*{suffix}"))
    if not paths:
        raise CliError(f"no {suffix} files in {d}", str(d), "missing-file")
    return paths


def cmd_train(args) -> int:
    from .corpus import patch_dataset
    from .sparse import select_mu
    _require_seed(args)
    cfg = resolve_config(args)
    ks = _kernels(cfg)
    images = [eio.read_png(p) for p in _image_paths(args.data, ".png")]
    psi_idx = [_psi_index(cfg, v) for v in args.psi]
    ys, xs, _ = patch_dataset(images, ks, psi_idx, args.patches, cfg.pattern, args.noise_sigma,
                              seed=args.seed, min_std=args.min_std)
    n_val = max(1, int(round(args.validation_fraction * len(ys))))
    val, (ys, xs) = (ys[:n_val], xs[:n_val]), (ys[n_val:], xs[n_val:])
    if args.init:
        net = eio.read_network(_existing(args.init))
    else:
        cd = (eio.read_dictionary(_existing(args.dict)) if args.dict
              else build_concat_dictionary(dct_dictionary(), ks, cfg.pattern))
        mu = args.mu
        if mu is None:
            sub = cd.sub(psi_idx) if len(psi_idx) < cd.q else cd
            mu = select_mu(val[0][:1000], val[1][:1000], sub, iterations=args.T - 1)
        m = None if args.m == 0 else args.m
        init = args.block if args.block is not None else "block"
        if args.m_init == "pca":
            init = "pca"
        net = init_from_ista(cd, SolverConfig(mu=mu), args.T, args.output_space, m, init)
    tc = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                     seed=args.seed, dataset_path=args.data)
    result = sgd_train(net, ys, xs, tc, val=val)
    out = eio.write_network(args.net, result.params)
    report = {"train_loss": result.train_loss, "val_loss": result.val_loss, "best_epoch": result.best_epoch,
              "patches": len(ys), "validation_patches": n_val}
    outputs = [out]
    if args.report:
        outputs.append(_write_json(Path(args.report), report))
    write_manifest(out, "train", {**cfg.to_dict(), **_args_config(args)}, outputs, args.seed)
    return 0


def _calibration_patches(directory: str, n: int, seed: int) -> np.ndarray:
    rows = []
    for p in _image_paths(directory, ".pgm"):
        rows.append(extract_patches(eio.read_raw(p), 8).patches)
    patches = np.vstack(rows)
    if len(patches) > n:
        patches = patches[np.sort(np.random.default_rng(seed).choice(len(patches), n, replace=False))]
    return patches


def cmd_quantize(args) -> int:
    net = eio.read_network(_existing(args.net))
    patches = _calibration_patches(args.calib, args.calib_patches, args.seed)
    plan = calibrate_scales(net, patches)
    out = eio.write_fixed_network(args.out, quantize_network(net, plan))
    write_manifest(out, "quantize", {**_args_config(args), "plan": plan.exponents()}, [out], args.seed)
    return 0


def _reconstruct(args, stride: int) -> int:
    net = eio.read_any_network(_existing(args.net))
    codes, pattern = eio.read_raw_codes(_existing(args.raw))
    from .sensor import RawBayerImage
    raw = RawBayerImage(codes.astype(np.float64) / eio.RAW_MAX, pattern)
    gt = eio.read_png(_existing(args.gt)) if getattr(args, "gt", None) else None
    image, report = reconstruct_image(ReconstructionJob(raw, net, stride, gt, raw_codes=codes))
    out = eio.write_png(args.out, image)
    outputs = [out]
    rep = report.to_dict()
    if getattr(args, "report", None):
        # wall-clock time stays on stdout so written artifacts are reproducible
        outputs.append(_write_json(Path(args.report), {k: v for k, v in rep.items() if k != "seconds"}))
    write_manifest(out, args.command, _args_config(args), outputs, None)
    _emit(rep)
    return 0


def cmd_reconstruct(args) -> int:
    return _reconstruct(args, args.stride)


def cmd_infer(args) -> int:
    return _reconstruct(args, args.stride)


def cmd_evaluate(args) -> int:
    """PSNR table: one row per (image, method) for a corpus of sharp PNGs."""
    cfg = resolve_config(args)
    if args.noise_sigma > 0:
        _require_seed(args)
    seed = args.seed or 0
    images = _image_paths(args.corpus, ".png")
    methods = [("network", eio.read_any_network(_existing(args.net)), cfg.mask)]
    if args.fixed:
        methods.append(("network_fixed", eio.read_fixed_network(_existing(args.fixed)), cfg.mask))
    if args.clear_net:
        methods.append(("clear_network", eio.read_any_network(_existing(args.clear_net)), PhaseMaskSpec.clear()))
    kernel_sets = {}
    rows = []
    for i, path in enumerate(images):
        img = eio.read_png(path)
        depth = _depth_from_arg(args.psi, cfg, (img.height, img.width))
        captures = {}
        for name, net, mask in [("blurred_bilinear", None, cfg.mask)] + methods:
            if mask not in kernel_sets:
                kernel_sets[mask] = build_kernel_set(cfg.optics, mask, cfg.psi_grid)
            if mask not in captures:
                raw = simulate_capture(img, kernel_sets[mask], depth, cfg.pattern, args.noise_sigma, seed + i)
                codes = eio.raw_to_codes(raw)
                from .sensor import RawBayerImage
                captures[mask] = (RawBayerImage(codes / eio.RAW_MAX, raw.pattern), codes)
            raw, codes = captures[mask]
            if net is None:
                score = psnr(demosaic_bilinear(raw).clipped(), img)
            else:
                _, rep = reconstruct_image(ReconstructionJob(raw, net, args.stride, img, raw_codes=codes))
                score = rep.psnr_db
            rows.append({"image": path.stem, "method": name, "psnr_db": f"{score:.4f}"})
    buf = _stdio.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["image", "method", "psnr_db"], lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    write_manifest(out, "evaluate", {**cfg.to_dict(), **_args_config(args)}, [out], args.seed)
    sys.stdout.write(buf.getvalue())
    return 0


def _clock(text: str) -> float:
    if text in CLOCK_PRESETS:
        return CLOCK_PRESETS[text]
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"clock must be in Hz or one of {sorted(CLOCK_PRESETS)}") from None


def cmd_cycles(args) -> int:
    rep = cycle_model(args.T, args.width, args.height, args.stride, args.clock).to_dict()
    if args.out:
        out = _write_json(Path(args.out), rep)
        write_manifest(out, "cycles", _args_config(args), [out], None)
    _emit(rep)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edof", description="Coded-aperture extended depth of field toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="blur, mosaic and add noise to a sharp PNG")
    s.add_argument("--input", required=True)
    s.add_argument("--psi", required=True, help="psi value, comma list (one per region), or .npy map")
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output .pgm (sidecar .json is written next to it)")
    s.add_argument("--blurred-out", help="also write the bilinear demosaic as PNG")
    _add_optics_args(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("dict", help="build or inspect a blurred dictionary")
    dsub = s.add_subparsers(dest="dict_command", required=True, parser_class=_Parser)
    b = dsub.add_parser("build")
    b.add_argument("--out", required=True)
    b.add_argument("--k", type=int, default=192)
    b.add_argument("--color-basis", choices=("opponent", "rgb"), default="opponent")
    _add_optics_args(b)
    i = dsub.add_parser("inspect")
    i.add_argument("file")
    s.set_defaults(func=cmd_dict)

    s = sub.add_parser("solve", help="per-patch sparse coding with a dictionary")
    s.add_argument("--dict", required=True)
    s.add_argument("--raw", required=True)
    s.add_argument("--method", choices=("ista", "omp"), default="ista")
    s.add_argument("--iters", type=int, default=100, help="ISTA iterations or OMP atoms")
    s.add_argument("--mu", type=float, default=SolverConfig.mu)
    s.add_argument("--stride", type=int, choices=(2, 4, 8), default=8)
    s.add_argument("--out", required=True)
    s.add_argument("--gt")
    s.add_argument("--report")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("train", help="train an unrolled network on simulated captures")
    s.add_argument("--net", required=True, help="output EDNN file")
    s.add_argument("--data", required=True, help="directory of sharp PNG training images")
    s.add_argument("--init", help="start from an existing EDNN instead of ISTA")
    s.add_argument("--dict", help="EDDC dictionary for ISTA initialisation (default: built from optics)")
    s.add_argument("--psi", type=_float_list, default=(8.0,))
    s.add_argument("--patches", type=int, default=50000)
    s.add_argument("--min-std", type=float, default=0.0)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--validation-fraction", type=float, default=0.1)
    s.add_argument("--T", type=int, default=8)
    s.add_argument("--m", type=int, default=192, help="coefficient width (0 = q*k)")
    s.add_argument("--m-init", choices=("block", "pca"), default="block")
    s.add_argument("--block", type=int, help="psi block index for block initialisation")
    s.add_argument("--output-space", choices=OUTPUT_SPACES, default="YCBCR422_128")
    s.add_argument("--mu", type=float, help="sparsity weight (default: chosen on validation)")
    s.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    s.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    s.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    s.add_argument("--seed", type=int)
    s.add_argument("--report")
    _add_optics_args(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("quantize", help="calibrate scales and quantise a float network")
    s.add_argument("--net", required=True)
    s.add_argument("--calib", required=True, help="directory of raw .pgm frames")
    s.add_argument("--calib-patches", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    for name, func, stride in (("reconstruct", cmd_reconstruct, 2), ("infer", cmd_infer, 8)):
        s = sub.add_parser(name, help="reconstruct a raw frame with a float or fixed network")
        s.add_argument("--raw", required=True)
        s.add_argument("--net", required=True, help="EDNN or EDFX file")
        s.add_argument("--stride", type=int, choices=(2, 4, 8), default=stride)
        s.add_argument("--out", required=True)
        s.add_argument("--gt")
        s.add_argument("--report")
        s.set_defaults(func=func)

    s = sub.add_parser("evaluate", help="PSNR table over a corpus of sharp PNGs")
    s.add_argument("--corpus", required=True)
    s.add_argument("--net", required=True)
    s.add_argument("--fixed", help="EDFX network for the hardware path")
    s.add_argument("--clear-net", help="network trained for the clear aperture")
    s.add_argument("--psi", default="8")
    s.add_argument("--stride", type=int, choices=(2, 4, 8), default=2)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    _add_optics_args(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("cycles", help="cycle budget and frame rate of the calculator pipeline")
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--width", type=int, default=1920)
    s.add_argument("--height", type=int, default=1080)
    s.add_argument("--stride", type=int, default=8)
    s.add_argument("--clock", type=_clock, default=125e6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cycles)
    return p


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    from threadpoolctl import threadpool_limits
    try:
        n = int(value)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    return threadpool_limits(limits=n)


def _fail(exc: Exception, kind: str, path: str | None = None) -> int:
    err = {"error": kind, "message": str(exc)}
    if path:
        err["path"] = path
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return 2


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        return _fail(exc, exc.kind, exc.path)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except CliError as exc:
        return _fail(exc, exc.kind, exc.path)
    except FileNotFoundError as exc:
        path = exc.filename or (exc.args[0] if exc.args else None)
        return _fail(FileNotFoundError(f"file not found: {path}"), "missing-file", str(path))
    except eio.ContainerError as exc:
        return _fail(exc, "schema")
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(exc, "invalid-argument")
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable report
        return _fail(exc, type(exc).__name__)


if __name__ == "__main__":
    sys.exit(main())
