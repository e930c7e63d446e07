"""Scoring, the per-pixel maximum-likelihood reference, and benchmarks."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError
from .inference import ClassMap, infer_greedy
from .learning import em_fit
from .model import HmtParams, log_emission_field
from .raster import RasterFrame
from .synthetic import SynthConfig, generate, scaled_config
from .tree import build_tree

CLASS_NAMES = {0: "dry", 1: "flood"}


@dataclass(frozen=True)
class MetricsReport:
    """Per-class precision/recall/F plus their unweighted average.

    Confusion counts follow the class-1 (flood-positive) convention.
    """

    precision: tuple[float, float]
    recall: tuple[float, float]
    f_score: tuple[float, float]
    avg_f: float
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n_evaluated(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_table(self) -> str:
        lines = [f"{'class':<8}{'precision':>12}{'recall':>12}{'f_score':>12}"]
        for c in (0, 1):
            lines.append(
                f"{CLASS_NAMES[c]:<8}{self.precision[c]:>12.4f}"
                f"{self.recall[c]:>12.4f}{self.f_score[c]:>12.4f}"
            )
        lines.append(f"{'avg_f':<8}{'':>12}{'':>12}{self.avg_f:>12.4f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        head = "class,precision,recall,f_score,avg_f,tp,fp,fn,tn"
        rows = [
            f"{CLASS_NAMES[c]},{self.precision[c]:.17g},{self.recall[c]:.17g},"
            f"{self.f_score[c]:.17g},{self.avg_f:.17g},{self.tp},{self.fp},{self.fn},{self.tn}"
            for c in (0, 1)
        ]
        return "\n".join([head] + rows) + "\n"


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2.0 * p * r / (p + r) if p + r > 0.0 else 0.0
    return p, r, f


def score(predicted: ClassMap | np.ndarray, truth: np.ndarray) -> MetricsReport:
    """Metrics over labeled truth cells only.

    ``truth`` is cell-aligned with -1 marking cells outside the truth
    set. Every truth cell must carry a prediction.
    """
    pred = np.asarray(getattr(predicted, "labels", predicted)).reshape(-1)
    truth = np.asarray(getattr(truth, "labels", truth)).reshape(-1)
    if pred.shape != truth.shape:
        raise EmptyInputError(
            f"prediction ({pred.shape[0]} cells) and truth ({truth.shape[0]}) differ"
        )
    mask = truth >= 0
    if not mask.any():
        raise EmptyInputError("truth set is empty")
    if (pred[mask] < 0).any():
        raise EmptyInputError("truth labels a cell with no prediction")
    p = pred[mask]
    t = truth[mask]
    tp = int(((p == 1) & (t == 1)).sum())
    fp = int(((p == 1) & (t == 0)).sum())
    fn = int(((p == 0) & (t == 1)).sum())
    tn = int(((p == 0) & (t == 0)).sum())
    p1, r1, f1 = _prf(tp, fp, fn)
    p0, r0, f0 = _prf(tn, fn, fp)
    return MetricsReport(
        precision=(p0, p1),
        recall=(r0, r1),
        f_score=(f0, f1),
        avg_f=(f0 + f1) / 2.0,
        tp=tp, fp=fp, fn=fn, tn=tn,
    )


def mlc_classify(frame: RasterFrame, params: HmtParams) -> ClassMap:
    """Per-cell argmax of the class emission densities; ties go dry.

    Ignores all spatial structure; serves as the non-spatial reference
    classifier.
    """
    labels = np.full(frame.n_cells, -1, dtype=np.int8)
    valid = np.flatnonzero(frame.valid_mask)
    le = log_emission_field(params, frame.features[valid])
    labels[valid] = (le[:, 1] > le[:, 0]).astype(np.int8)
    return ClassMap(labels=labels, objective=None)


@dataclass(frozen=True)
class BenchmarkRow:
    n_cells: int
    rows: int
    cols: int
    repeats: int
    iterations: int
    build_seconds: float
    learn_seconds: float
    infer_seconds: float


def run_benchmark(
    sizes,
    iterations: int = 3,
    repeats: int = 10,
    base_config: SynthConfig | None = None,
    neighborhood: int = 4,
) -> list[BenchmarkRow]:
    """Wall-clock the three pipeline phases per study-area size.

    Phases run sequentially (no overlap) and timings average over
    ``repeats`` runs; EM runs exactly ``iterations`` iterations.
    """
    base = base_config if base_config is not None else SynthConfig()
    out = []
    for size in sizes:
        cfg = scaled_config(base, size)
        frame, _, train = generate(cfg)
        t_build = t_learn = t_infer = 0.0
        for _ in range(repeats):
            t0 = time.perf_counter()
            tree = build_tree(frame, neighborhood=neighborhood)
            t1 = time.perf_counter()
            result = em_fit(
                tree, frame, (train.x, train.y),
                epsilon=-1.0, max_iters=iterations,  # force all iterations
            )
            t2 = time.perf_counter()
            infer_greedy(tree, frame, result.params)
            t3 = time.perf_counter()
            t_build += t1 - t0
            t_learn += t2 - t1
            t_infer += t3 - t2
        out.append(BenchmarkRow(
            n_cells=cfg.rows * cfg.cols,
            rows=cfg.rows,
            cols=cfg.cols,
            repeats=repeats,
            iterations=iterations,
            build_seconds=t_build / repeats,
            learn_seconds=t_learn / repeats,
            infer_seconds=t_infer / repeats,
        ))
    return out


def benchmark_csv(rows: list[BenchmarkRow]) -> str:
    head = "n_cells,rows,cols,repeats,iterations,build_seconds,learn_seconds,infer_seconds"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r.n_cells},{r.rows},{r.cols},{r.repeats},{r.iterations},"
            f"{r.build_seconds:.6f},{r.learn_seconds:.6f},{r.infer_seconds:.6f}"
        )
    return "\n".join(lines) + "\n"
