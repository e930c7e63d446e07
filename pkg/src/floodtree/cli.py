"""Command-line pipeline: synth, tree, train, infer, eval, bench.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
error. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation, inference, learning, model, raster, synthetic, tree as tree_mod
from .errors import FloodTreeError, NumericError

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("formatter_class", argparse.ArgumentDefaultsHelpFormatter)
        super().__init__(*args, **kwargs)

    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _load_frame(elev_path: str, band_paths: list[str], labels_path: str | None = None):
    elev = raster.load_grid(elev_path)
    bands = [raster.load_grid(p, expected_shape=elev.shape) for p in band_paths]
    labels = raster.read_labels(labels_path) if labels_path else None
    return raster.assemble_frame(elev, bands, labels)


def _require_inputs(*paths: str | None) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"input path does not exist: {p}")


def _cmd_synth(args) -> int:
    cfg = synthetic.SynthConfig(
        rows=args.rows, cols=args.cols, block=args.block,
        mu1=args.mu1, mu2=args.mu2, sigma1=args.sigma1, sigma2=args.sigma2,
        n_train=args.n_train, water_level_quantile=args.water_level_quantile,
        seed=args.seed,
    )
    frame, truth, train = synthetic.generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raster.write_grid(out / "elevation.asc", frame.elevation, frame.n_rows, frame.n_cols)
    for b in range(frame.n_bands):
        raster.write_grid(out / f"band_{b}.asc", frame.features[:, b], frame.n_rows, frame.n_cols)
    raster.write_grid(
        out / "truth.asc", truth.labels.astype(np.float64), frame.n_rows, frame.n_cols,
        valid=truth.labels >= 0,
    )
    raster.write_labels(out / "labels.csv", train.records())
    print(f"wrote {frame.n_rows}x{frame.n_cols} study area to {out}")
    return 0


def _cmd_tree(args) -> int:
    _require_inputs(args.elev)
    frame = _load_frame(args.elev, [])
    t = tree_mod.build_tree(frame, neighborhood=args.neighborhood)
    text = tree_mod.dump_edges(t)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_train(args) -> int:
    _require_inputs(args.elev, *args.band, args.labels)
    frame = _load_frame(args.elev, args.band, args.labels)
    t = tree_mod.build_tree(frame, neighborhood=args.neighborhood)
    labels = raster.read_labels(args.labels)
    result = learning.em_fit(
        t, frame, labels,
        epsilon=args.epsilon, max_iters=args.max_iters,
        init_pi=args.init_pi, init_rho=args.init_rho,
        clamp_labels=args.clamp_labels,
    )
    trace_lines = ["iter,pi,rho,loglik"]
    trace_lines += [
        f"{it},{pi:.17g},{rho:.17g},{ll:.17g}" for it, pi, rho, ll in result.trace
    ]
    trace_text = "\n".join(trace_lines) + "\n"
    sys.stdout.write(trace_text)
    if args.trace:
        Path(args.trace).write_text(trace_text)
    model.save_params(result.params, args.out_params)
    status = "converged" if result.converged else "max-iterations reached"
    print(f"{status} after {result.n_iters} iteration(s); parameters -> {args.out_params}")
    return 0


def _cmd_infer(args) -> int:
    _require_inputs(args.elev, *args.band, args.params)
    frame = _load_frame(args.elev, args.band)
    t = tree_mod.build_tree(frame, neighborhood=args.neighborhood)
    params = model.load_params(args.params)
    cmap = inference.infer_greedy(t, frame, params)
    inference.render_map(cmap, frame, args.out_map, image_path=args.out_image)
    print(f"objective {cmap.objective:.17g}; map -> {args.out_map}")
    return 0


def _load_truth(path: str, shape: tuple[int, int]) -> np.ndarray:
    if path.endswith(".csv"):
        records = raster.read_labels(path)
        truth = np.full(shape[0] * shape[1], -1, dtype=np.int8)
        for row, col, lab in records:
            if not (0 <= row < shape[0] and 0 <= col < shape[1]):
                raise FloodTreeError(f"truth label (row={row}, col={col}) out of bounds")
            truth[row * shape[1] + col] = lab
        return truth
    layer = raster.load_grid(path, expected_shape=shape)
    truth = np.full(layer.values.shape[0], -1, dtype=np.int8)
    truth[layer.valid] = layer.values[layer.valid].astype(np.int8)
    return truth


def _cmd_eval(args) -> int:
    _require_inputs(args.pred, args.truth)
    pred_layer = raster.load_grid(args.pred)
    pred = np.full(pred_layer.values.shape[0], -1, dtype=np.int8)
    pred[pred_layer.valid] = pred_layer.values[pred_layer.valid].astype(np.int8)
    truth = _load_truth(args.truth, pred_layer.shape)
    report = evaluation.score(pred, truth)
    print(report.to_table())
    print()
    sys.stdout.write(report.to_csv())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return 0


def _cmd_bench(args) -> int:
    sizes = [float(s) for s in args.sizes.split(",") if s.strip()]
    base = synthetic.SynthConfig(seed=args.seed)
    rows = evaluation.run_benchmark(
        sizes, iterations=args.iterations, repeats=args.repeats, base_config=base,
    )
    text = evaluation.benchmark_csv(rows)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="floodtree", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth",
                       help="generate a synthetic study area")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rows", type=int, default=1000, help="grid rows")
    p.add_argument("--cols", type=int, default=1000, help="grid columns")
    p.add_argument("--block", type=int, default=50, help="coarse feature block size")
    p.add_argument("--mu1", type=float, default=110.0, help="dry-class feature mean")
    p.add_argument("--mu2", type=float, default=150.0, help="flood-class feature mean")
    p.add_argument("--sigma1", type=float, default=20.0, help="dry-class feature sd")
    p.add_argument("--sigma2", type=float, default=20.0, help="flood-class feature sd")
    p.add_argument("--n-train", type=int, default=1000, help="training samples")
    p.add_argument("--water-level-quantile", type=float, default=0.5,
                   help="flood depth as a quantile of the elevation order")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("tree",
                       help="dump the dependency tree as edge CSV")
    p.add_argument("--elev", required=True)
    p.add_argument("--neighborhood", type=int, choices=(4, 8), default=4,
                   help="cell adjacency")
    p.add_argument("--out", default=None, help="write to file instead of stdout")
    p.set_defaults(func=_cmd_tree)

    p = sub.add_parser("train",
                       help="fit model parameters by EM")
    p.add_argument("--elev", required=True)
    p.add_argument("--band", action="append", default=[], help="feature band (repeatable)")
    p.add_argument("--labels", required=True, help="training labels CSV")
    p.add_argument("--epsilon", type=float, default=1e-5,
                   help="convergence threshold on the parameter max-change")
    p.add_argument("--max-iters", type=int, default=100, help="iteration cap")
    p.add_argument("--init-pi", type=float, default=0.5,
                   help="initial leaf prior (final fit is insensitive to it)")
    p.add_argument("--init-rho", type=float, default=0.99,
                   help="initial transition probability (keep it high)")
    p.add_argument("--out-params", required=True)
    p.add_argument("--trace", default=None, help="also write the iteration CSV here")
    p.add_argument("--neighborhood", type=int, choices=(4, 8), default=4,
                   help="cell adjacency")
    p.add_argument("--clamp-labels", action="store_true",
                   help="condition posteriors on the training labels during EM")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer",
                       help="infer the class map from fitted parameters")
    p.add_argument("--elev", required=True)
    p.add_argument("--band", action="append", default=[])
    p.add_argument("--params", required=True)
    p.add_argument("--out-map", required=True)
    p.add_argument("--out-image", default=None, help="optional PPM rendering")
    p.add_argument("--neighborhood", type=int, choices=(4, 8), default=4,
                   help="cell adjacency")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval",
                       help="score a predicted map against truth")
    p.add_argument("--pred", required=True, help="predicted class grid (.asc)")
    p.add_argument("--truth", required=True, help="truth grid (.asc) or labels (.csv)")
    p.add_argument("--csv", default=None, help="also write the CSV report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench",
                       help="time the pipeline phases across sizes")
    p.add_argument("--sizes", required=True, help="comma-separated cell counts, e.g. 1e6,2e6")
    p.add_argument("--iterations", type=int, default=3, help="fixed EM iterations per run")
    p.add_argument("--repeats", type=int, default=10, help="runs averaged per size")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", default=None, help="also write the CSV here")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"floodtree: numeric error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except (FloodTreeError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"floodtree: error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
