"""Command-line surface.

Commands: compress, decompress, inspect, rate-report, rd-point, selfcheck,
gen-weights.  Exit codes: 0 ok, 1 selfcheck failure, 2 unreadable input,
3 weights problem, 4 stream/container problem.  All stdout reporting is CSV
with stable schemas (documented in the README).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import codec, image_io
from .container import load_container, save_container
from .errors import GricError, InputError, StreamError, WeightsError
from .weights import ENTROPY_MODES, generate_weights, load_weights, save_weights

EXIT_OK = 0
EXIT_SELFCHECK = 1
EXIT_INPUT = 2
EXIT_WEIGHTS = 3
EXIT_STREAM = 4


def _threads() -> int:
    env = os.environ.get("GRIC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _load_weights(path: str):
    if not path:
        raise WeightsError("no weights file given (use --weights)")
    return load_weights(path)


def _read_unit_image(path: str) -> np.ndarray:
    return image_io.to_unit_float(image_io.read_image(path))


def _compress_one(path: str, w, mode: str, out_path: str) -> str:
    start = time.monotonic()
    image = _read_unit_image(path)
    container = codec.encode_image(image, w, mode)
    save_container(container, out_path)
    elapsed = time.monotonic() - start
    total = os.path.getsize(out_path)
    bpp = container.payload_bits / (container.true_h * container.true_w)
    return (
        f"{path},{bpp:.6f},{len(container.hyper_payload)},"
        f"{len(container.latent_payload)},{total},{elapsed:.3f}"
    )


def _cmd_compress(args) -> int:
    w = _load_weights(args.weights)
    inputs = list(args.inputs)
    if len(inputs) > 1 and not args.batch:
        raise InputError("multiple inputs require --batch")
    outs = []
    for p in inputs:
        if args.out and not args.batch:
            outs.append(args.out)
        elif args.out:
            os.makedirs(args.out, exist_ok=True)
            outs.append(os.path.join(args.out, os.path.basename(p) + ".gric"))
        else:
            outs.append(p + ".gric")
    if args.batch and len(inputs) > 1:
        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            lines = list(pool.map(lambda io_pair: _compress_one(io_pair[0], w, args.mode, io_pair[1]),
                                  zip(inputs, outs)))
    else:
        lines = [_compress_one(p, w, args.mode, o) for p, o in zip(inputs, outs)]
    for line in lines:
        print(line)
    return EXIT_OK


def _cmd_decompress(args) -> int:
    w = _load_weights(args.weights)
    container = load_container(args.input)
    image = codec.decode_image(container, w)
    out = args.out or (args.input + ".ppm")
    image_io.write_image(out, image_io.to_uint8(image))
    if args.reference:
        ref = _read_unit_image(args.reference)
        if ref.shape != image.shape:
            raise InputError("reference image dimensions do not match decoded image")
        d = float(np.mean((ref.astype(np.float64) - image.astype(np.float64)) ** 2)) * 255.0 ** 2
        psnr = "inf" if d == 0.0 else f"{10.0 * math.log10(255.0 ** 2 / d):.4f}"
        print(f"{out},{psnr}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    c = load_container(args.input)
    print(f"mode,{c.mode}")
    print(f"true_dims,{c.true_w}x{c.true_h}")
    print(f"padded_dims,{c.padded_w}x{c.padded_h}")
    print(f"weights_hash,{c.weights_hash.hex()}")
    print(f"hyper_bytes,{len(c.hyper_payload)}")
    print(f"latent_bytes,{len(c.latent_payload)}")
    return EXIT_OK


def _cmd_rate_report(args) -> int:
    w = _load_weights(args.weights)
    image = _read_unit_image(args.input)
    report = codec.estimate_rate(image, w, args.mode, per_stage=True)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    stem = os.path.join(outdir, os.path.splitext(os.path.basename(args.input))[0])

    def norm_map(m: np.ndarray) -> np.ndarray:
        top = float(m.max())
        scaled = (m / top * 255.0) if top > 0 else m
        return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)

    stages = sorted(report.stage_maps)
    for name in stages:
        image_io.write_pgm(f"{stem}.{name}.pgm", norm_map(report.stage_maps[name]))
    lat_w = report.bit_map.shape[1]
    with open(f"{stem}.matches.csv", "w") as fh:
        fh.write("i,j,S,U," + ",".join(f"bits_{s}" for s in stages) + "\n")
        for i, match in enumerate(report.matches):
            iy, ix = divmod(i, lat_w)
            j = match.source if match and match.source is not None else -1
            s = match.similarity if match else 0.0
            u = match.confidence if match else 0.0
            bits = ",".join(f"{report.stage_maps[name][iy, ix]:.4f}" for name in stages)
            fh.write(f"{i},{j},{s:.6f},{u:.6f},{bits}\n")
    with open(f"{stem}.deltas.csv", "w") as fh:
        pairs = [(stages[k], stages[k + 1]) for k in range(len(stages) - 1)]
        fh.write("i," + ",".join(f"{a}_minus_{b}" for a, b in pairs) + "\n")
        for i in range(report.bit_map.size):
            iy, ix = divmod(i, lat_w)
            deltas = ",".join(
                f"{report.stage_maps[a][iy, ix] - report.stage_maps[b][iy, ix]:.4f}"
                for a, b in pairs
            )
            fh.write(f"{i},{deltas}\n")
    print(f"{args.input},{report.latent_bits:.2f},{report.hyper_bits:.2f},{report.bpp:.6f}")
    return EXIT_OK


def _cmd_rd_point(args) -> int:
    w = _load_weights(args.weights)
    image = _read_unit_image(args.input)
    point = codec.rd_loss(image, w, args.lmbda, args.mode)
    psnr = "inf" if math.isinf(point["psnr"]) else f"{point['psnr']:.4f}"
    row = f"{point['bpp']:.6f},{psnr},{point['loss']:.6f}"
    header = "bpp,psnr,loss"
    if args.out:
        new_file = not os.path.exists(args.out)
        with open(args.out, "a") as fh:
            if new_file:
                fh.write(header + "\n")
            fh.write(row + "\n")
    else:
        print(header)
    print(row)
    return EXIT_OK


def _selfcheck_cases(weights_path: str | None):
    from . import gsdn, probability, reference
    from .coder import RangeDecoder, RangeEncoder

    rng = np.random.default_rng(20240913)

    def check_gsdn():
        n = 4
        p = gsdn.GsdnParams(
            beta=rng.uniform(0.5, 2.0, n),
            gamma=rng.uniform(0.0, 0.3, (n, n)),
            nu=rng.uniform(-0.2, 0.2, n),
            tau=rng.uniform(-0.2, 0.2, (n, n)),
        )
        u = rng.normal(0, 1, (n, 3, 3))
        g = rng.normal(0, 1, (n, 3, 3))
        grad = gsdn.gsdn_input_gradient(u, p, g)
        h = 1e-5
        fd = np.zeros_like(u)
        for idx in np.ndindex(u.shape):
            up, dn = u.copy(), u.copy()
            up[idx] += h
            dn[idx] -= h
            fd[idx] = np.sum(g * (gsdn.gsdn_forward(up, p) - gsdn.gsdn_forward(dn, p))) / (2 * h)
        return np.allclose(grad, fd, rtol=1e-4, atol=1e-7)

    def check_pmf():
        levels = probability.default_scale_table()
        for sigma in (levels[0], levels[20], levels[-1]):
            mass = probability.gaussian_uniform_pmf(
                np.arange(-255, 256), 0.37, float(sigma)
            ).sum()
            tail = 1.0 - mass
            freqs, _ = probability.build_quantized_pmf_batch(
                np.asarray([0.37]), np.asarray([float(sigma)]), 255
            )
            if abs(mass + tail - 1.0) > 1e-9 or freqs.sum() != probability.TOTAL_FREQ:
                return False
        return True

    def check_coder():
        freqs, cum = probability.build_quantized_pmf_batch(
            np.asarray([0.25]), np.asarray([1.5]), 16
        )
        pmf = probability.QuantizedPmf(16, freqs[0], cum[0])
        syms = rng.integers(-16, 17, 500)
        enc = RangeEncoder()
        for s in syms:
            enc.encode_symbol(pmf, int(s))
        dec = RangeDecoder(enc.flush())
        return all(dec.decode_symbol(pmf) == int(s) for s in syms)

    def check_reference():
        grid = rng.integers(-3, 4, (2, 5, 5)).astype(np.float32)
        patches = reference.masked_patches(grid, 3)
        norms = np.sqrt((patches * patches).sum(axis=1))
        for i in range(1, patches.shape[0]):
            scores = reference.similarity_row(patches, i)
            best = reference.best_match(scores, i)
            expect_j, expect_s = None, 0.0
            for j in range(i):
                if norms[i] > 0 and norms[j] > 0:
                    s = float(patches[i] @ patches[j] / (norms[i] * norms[j]))
                else:
                    s = 0.0
                if s > expect_s:
                    expect_j, expect_s = j, s
            if best.source != expect_j:
                return False
        return True

    def check_codec():
        if weights_path:
            w = load_weights(weights_path)
        else:
            w = generate_weights(8, seed=3)
        image = rng.uniform(0, 1, (3, 32, 32)).astype(np.float32)
        container, trace = codec.encode_image(image, w, "full", trace=True)
        recon, dtrace = codec.decode_image(container, w, trace=True)
        return (
            np.array_equal(trace.yhat, dtrace.yhat)
            and np.array_equal(trace.zhat, dtrace.zhat)
            and recon.shape == image.shape
        )

    return [
        ("gsdn_gradient", check_gsdn),
        ("pmf_normalization", check_pmf),
        ("coder_round_trip", check_coder),
        ("reference_search", check_reference),
        ("codec_round_trip_32", check_codec),
    ]


def _cmd_selfcheck(args) -> int:
    failures = 0
    for name, fn in _selfcheck_cases(args.weights):
        try:
            ok = fn()
        except GricError as exc:
            print(f"{name},fail,{exc}")
            failures += 1
            continue
        print(f"{name},{'pass' if ok else 'fail'}")
        failures += 0 if ok else 1
    return EXIT_OK if failures == 0 else EXIT_SELFCHECK


def _cmd_gen_weights(args) -> int:
    w = generate_weights(args.latent_channels, seed=args.seed)
    save_weights(w, args.out)
    print(f"{args.out},{args.latent_channels},{args.seed},{w.content_hash.hex()}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gric", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_weights(p):
        p.add_argument("--weights", required=False, help="GRWT weights file")

    def add_mode(p):
        p.add_argument("--mode", choices=ENTROPY_MODES, default="full")

    p = sub.add_parser("compress", help="image -> GRIC container")
    p.add_argument("inputs", nargs="+")
    add_weights(p)
    add_mode(p)
    p.add_argument("--out", help="output container path (or directory with --batch)")
    p.add_argument("--batch", action="store_true", help="process several images concurrently")
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="GRIC container -> image")
    p.add_argument("input")
    add_weights(p)
    p.add_argument("--out", help="output image path (.ppm or .png)")
    p.add_argument("--reference", help="original image; prints PSNR when given")
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("inspect", help="print container header fields")
    p.add_argument("input")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("rate-report", help="per-position entropy maps and match CSV")
    p.add_argument("input")
    add_weights(p)
    add_mode(p)
    p.add_argument("--out", help="output directory (default: current)")
    p.set_defaults(func=_cmd_rate_report)

    p = sub.add_parser("rd-point", help="evaluate one rate-distortion point")
    p.add_argument("input")
    add_weights(p)
    add_mode(p)
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.0)
    p.add_argument("--out", help="CSV file to append to")
    p.set_defaults(func=_cmd_rd_point)

    p = sub.add_parser("selfcheck", help="run the embedded invariant suite")
    add_weights(p)
    p.set_defaults(func=_cmd_selfcheck)

    p = sub.add_parser("gen-weights", help="write seeded random weights")
    p.add_argument("--latent-channels", type=int, default=384)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="gric_weights.grwt")
    p.set_defaults(func=_cmd_gen_weights)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except WeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except StreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STREAM
    except GricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
