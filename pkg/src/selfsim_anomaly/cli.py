"""Command-line front end: ``detect``, ``selftest-noise`` and ``synth``."""
import argparse
import hashlib
import logging
import math
import os
import sys
import time

import numpy as np

from . import feature_prep, imageio, report, synth
from .errors import CalibrationError, FeatureMapError, InvalidInputError
from .feature_prep import FEATURES, PIXELS
from .nfa_detect import DetectionConfig, detect

EXIT_OK = 0
EXIT_DETECTED = 1
EXIT_INPUT = 2
EXIT_USAGE = 64

log = logging.getLogger("selfsim_anomaly")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _radii(text):
    try:
        radii = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"radii must be comma-separated integers, got {text!r}") from None
    if not radii or min(radii) < 1:
        raise argparse.ArgumentTypeError(f"radii must be positive, got {text!r}")
    return radii


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _add_pipeline_flags(p, with_mode=True):
    if with_mode:
        p.add_argument("--mode", choices=(PIXELS, FEATURES), default=None,
                       help="pixels for PNG input, features for FMAP input (default: from the file)")
    p.add_argument("--epsilon", type=_positive_float, default=1e-2)
    p.add_argument("--radii", type=_radii, default=None, help="e.g. 1,2")
    p.add_argument("--scales", type=_positive_int, default=4)
    p.add_argument("--patch-side", type=_positive_int, default=None)
    p.add_argument("--neighbors", type=_positive_int, default=None)
    p.add_argument("--h", type=_positive_float, default=None)
    p.add_argument("--stride", type=_positive_int, default=None)


def build_parser():
    parser = _Parser(prog="selfsim-anomaly", description="Self-similarity anomaly detection with NFA control.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", help="detect anomalies in a PNG image or an FMAP feature map")
    p.add_argument("--input", required=True)
    _add_pipeline_flags(p)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int, default=None, help="echoed into the report; detection itself is deterministic")
    p.add_argument("--fail-on-detect", action="store_true", help="exit 1 when anything is detected")
    p.add_argument("--no-maps", action="store_true", help="skip writing the per-map FMAP grids")

    p = sub.add_parser("selftest-noise", help="count detections on seeded white-noise images")
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--size", type=_positive_int, default=128)
    p.add_argument("--seed", type=int, default=0)
    _add_pipeline_flags(p, with_mode=False)
    p.add_argument("--out", default=None, help="optional JSON report path")

    p = sub.add_parser("synth", help="write a synthetic fixture PNG and its ground truth JSON")
    p.add_argument("--kind", choices=synth.KINDS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="PNG path; ground truth goes next to it as .json")
    return parser


def config_from_args(args, mode):
    return DetectionConfig.for_mode(
        mode, epsilon=args.epsilon, kernel_radii=args.radii, n_scales=args.scales,
        patch_side=args.patch_side, n_neighbors=args.neighbors, h=args.h, search_stride=args.stride,
    )


def load_input(path, mode):
    """Returns (array, mode). FMAP files are recognized by their magic bytes."""
    with open(path, "rb") as f:
        head = f.read(4)
    if head == feature_prep.FMAP_MAGIC:
        if mode == PIXELS:
            raise InvalidInputError(f"{path} is a feature map; use --mode features")
        return feature_prep.load_feature_map(path), FEATURES
    if mode == FEATURES:
        raise InvalidInputError(f"{path} is not an FMAP feature map")
    try:
        return imageio.read_png(path), PIXELS
    except Exception as exc:  # pypng raises several unrelated types
        raise InvalidInputError(f"cannot read {path} as PNG: {exc}") from exc


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def map_filename(scale, radius, channel):
    return f"nfa_s{scale}_k{radius}_c{channel}.fmap"


def build_report(result, config, image_shape, input_name=None, input_sha256=None, seed=None, maps=None):
    sigmas = []
    for (s, r), per_channel in sorted(result.stack.sigmas.items()):
        for c, sigma in enumerate(per_channel):
            sigmas.append({"scale": s, "kernel_radius": r, "channel": c, "sigma": sigma})
    return {
        "schema": report.SCHEMA,
        "input": {
            "name": input_name, "sha256": input_sha256,
            "height": int(image_shape[0]), "width": int(image_shape[1]),
            "channels": int(image_shape[2]) if len(image_shape) > 2 else 1,
        },
        "seed": seed,
        "config": config.to_dict(),
        "n_tests": int(result.stack.n_tests),
        "pyramid": [[int(h), int(w)] for h, w in result.pyramid_shapes],
        "ggd": [dict(channel=c, degenerate=p is None, **(p.to_dict() if p else {"shape": None, "scale": None}))
                for c, p in enumerate(result.ggd)],
        "sigma": sigmas,
        "pca": result.basis.to_dict() if result.basis is not None else None,
        "n_records": len(result.records),
        "records": [r.to_dict() for r in result.records],
        "maps": maps or [],
    }


def cmd_detect(args):
    t_start = time.perf_counter()
    image, mode = load_input(args.input, args.mode)
    config = config_from_args(args, mode)
    result = detect(image, config)

    os.makedirs(args.out_dir, exist_ok=True)
    maps = []
    if not args.no_maps:
        for (s, r) in result.stack.keys():
            grid = result.stack.log10_maps[(s, r)]
            for c in range(grid.shape[2]):
                name = map_filename(s, r, c)
                feature_prep.save_feature_map(os.path.join(args.out_dir, name), grid[:, :, c:c + 1])
                maps.append(name)

    rep = build_report(
        result, config, image.shape, input_name=os.path.basename(args.input),
        input_sha256=_sha256(args.input), seed=args.seed, maps=maps,
    )
    report.write_json(os.path.join(args.out_dir, "report.json"), rep)
    overlay, circles = imageio.render_overlay(image, result.records)
    imageio.write_png(os.path.join(args.out_dir, "overlay.png"), overlay)
    if result.basis is not None:
        report.write_json(os.path.join(args.out_dir, "basis.json"), result.basis.to_dict())
    # wall-clock numbers vary run to run, so they live outside report.json
    timings = dict(result.timings, total=time.perf_counter() - t_start)
    report.write_json(os.path.join(args.out_dir, "timings.json"), timings)

    print(f"{len(result.records)} detection(s) over N={result.stack.n_tests} tests")
    for r in result.records:
        print(f"  x={r.x} y={r.y} scale={r.scale} radius={r.kernel_radius} channel={r.channel} "
              f"log10_nfa={r.log10_nfa:.3f} band={r.band}")
    if args.fail_on_detect and result.records:
        return EXIT_DETECTED
    return EXIT_OK


def noise_budget(epsilon, trials):
    return max(1, math.ceil(5 * epsilon * trials))


def run_selftest(trials, size, seed, config):
    """Detections per seeded N(0, 1) image of shape (size, size, 3)."""
    rng = np.random.default_rng(seed)
    counts = []
    for _ in range(trials):
        img = rng.standard_normal((size, size, 3))
        counts.append(len(detect(img, config).records))
    return counts


def cmd_selftest_noise(args):
    config = config_from_args(args, PIXELS)
    counts = run_selftest(args.trials, args.size, args.seed, config)
    total = sum(counts)
    threshold = noise_budget(args.epsilon, args.trials)
    passed = total <= threshold
    rep = {
        "schema": report.SCHEMA,
        "seed": args.seed,
        "trials": args.trials,
        "size": args.size,
        "config": config.to_dict(),
        "counts": counts,
        "total": total,
        "expected": args.epsilon * args.trials,
        "threshold": threshold,
        "passed": passed,
    }
    if args.out:
        report.write_json(args.out, rep)
    print(f"{total} detection(s) in {args.trials} image(s); expected {args.epsilon * args.trials:g}, "
          f"allowed {threshold}: {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_DETECTED


def cmd_synth(args):
    img, truth = synth.generate(args.kind, args.seed)
    imageio.write_png(args.out, img)
    stem, _ = os.path.splitext(args.out)
    report.write_json(stem + ".json", dict(truth, schema=report.SCHEMA, width=img.shape[1], height=img.shape[0]))
    print(f"wrote {args.out} and {stem}.json")
    return EXIT_OK


COMMANDS = {"detect": cmd_detect, "selftest-noise": cmd_selftest_noise, "synth": cmd_synth}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, FeatureMapError, InvalidInputError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
