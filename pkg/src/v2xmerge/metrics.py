"""Awareness metrics and the trajectory smoothness objective.

The communication side is scored with two event ratios, both computed
over (observer, control tick, neighbour) triples restricted to true
inter-vehicle distance <= d:

* AOR(aoi_th, d)  fraction of triples whose age of information exceeds
  aoi_th at the moment the controller reads its neighbour table
* PEOR(e_th, d)   fraction whose speed-corrected position estimate is
  off by more than e_th metres

A neighbour never heard from counts as exceeding every threshold.
"""

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_AOI_THRESHOLDS_MS = (25.0, 50.0, 100.0, 200.0)
DEFAULT_ERR_THRESHOLDS_M = (0.5, 1.0, 2.0, 4.0)
DEFAULT_DISTANCES_M = (50.0, 100.0, 200.0, math.inf)

EVENT_FIELDS = ("tick_ms", "observer", "neighbor", "dist_m", "aoi_ms", "err_m")


@dataclass(frozen=True)
class MetricGrid:
    aoi_ms: Sequence[float] = DEFAULT_AOI_THRESHOLDS_MS
    err_m: Sequence[float] = DEFAULT_ERR_THRESHOLDS_M
    dist_m: Sequence[float] = DEFAULT_DISTANCES_M


class AoiAccumulator:
    """Streaming counter of threshold exceedances on the metric grid."""

    def __init__(self, grid: MetricGrid = MetricGrid()):
        self.grid = grid
        self._aoi_th = np.asarray(grid.aoi_ms, dtype=np.float64)
        self._err_th = np.asarray(grid.err_m, dtype=np.float64)
        self._dist = np.asarray(grid.dist_m, dtype=np.float64)
        self.totals = np.zeros(len(grid.dist_m), dtype=np.int64)
        self.over_aoi = np.zeros((len(grid.aoi_ms), len(grid.dist_m)), dtype=np.int64)
        self.over_err = np.zeros((len(grid.err_m), len(grid.dist_m)), dtype=np.int64)

    def add_many(self, dist_m: np.ndarray, aoi_ms: np.ndarray,
                 err_m: np.ndarray) -> None:
        """Record a batch of triples; NaN age/error means no packet yet."""
        dist = np.asarray(dist_m, dtype=np.float64)
        aoi = np.where(np.isnan(aoi_ms), np.inf, np.asarray(aoi_ms, dtype=np.float64))
        err = np.where(np.isnan(err_m), np.inf, np.asarray(err_m, dtype=np.float64))
        for k, d in enumerate(self._dist):
            m = dist <= d
            self.totals[k] += int(m.sum())
            self.over_aoi[:, k] += (aoi[m][None, :] > self._aoi_th[:, None]).sum(axis=1)
            self.over_err[:, k] += (err[m][None, :] > self._err_th[:, None]).sum(axis=1)

    def add(self, dist_m: float, aoi_ms: Optional[float], err_m: Optional[float]) -> None:
        self.add_many(np.array([dist_m]),
                      np.array([math.nan if aoi_ms is None else aoi_ms]),
                      np.array([math.nan if err_m is None else err_m]))

    def _ratio(self, over: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.totals > 0, over / self.totals, np.nan)

    def aor(self) -> np.ndarray:
        """[len(aoi_ms), len(dist_m)] exceedance fractions; NaN when no events."""
        return self._ratio(self.over_aoi)

    def peor(self) -> np.ndarray:
        return self._ratio(self.over_err)


def _num_key(x: float) -> str:
    if math.isinf(x):
        return "inf"
    if float(x) == int(x):
        return str(int(x))
    return repr(float(x))


def summarize(acc: AoiAccumulator) -> dict:
    """JSON-ready nested mapping, keys in grid order (numeric, not lexical)."""
    g = acc.grid
    aor, peor = acc.aor(), acc.peor()

    def table(mat: np.ndarray, ths: Sequence[float]) -> dict:
        return {
            _num_key(th): {
                _num_key(d): (None if math.isnan(mat[i, k]) else float(mat[i, k]))
                for k, d in enumerate(g.dist_m)
            }
            for i, th in enumerate(ths)
        }

    return {
        "totals": {_num_key(d): int(acc.totals[k]) for k, d in enumerate(g.dist_m)},
        "aor": table(aor, g.aoi_ms),
        "peor": table(peor, g.err_m),
    }


def write_events_header(writer) -> None:
    writer.writerow(EVENT_FIELDS)


def recount_events(path: str, grid: MetricGrid = MetricGrid()) -> AoiAccumulator:
    """Rebuild the accumulator from a per-event CSV (the audit path).

    The streaming counters produced during a run must agree with this
    recount exactly; tests hold both routes together.
    """
    acc = AoiAccumulator(grid)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EVENT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"events file lacks columns: {sorted(missing)}")
        dist, aoi, err = [], [], []
        for row in reader:
            dist.append(float(row["dist_m"]))
            aoi.append(float(row["aoi_ms"]) if row["aoi_ms"] else math.nan)
            err.append(float(row["err_m"]) if row["err_m"] else math.nan)
    if dist:
        acc.add_many(np.array(dist), np.array(aoi), np.array(err))
    return acc


def objective_report(accels: Iterable[float], phis: Iterable[float],
                     dt: float) -> dict:
    """Decomposed control cost of one merging phase.

    consum = sum(a^2); comfort = sum(|da|)/dt + sum(|dphi|)/dt over
    consecutive control steps; total is their sum. Lower is smoother.
    """
    a = np.asarray(list(accels), dtype=np.float64)
    p = np.asarray(list(phis), dtype=np.float64)
    consum = float((a ** 2).sum()) if a.size else 0.0
    comfort = 0.0
    if a.size > 1:
        comfort += float(np.abs(np.diff(a)).sum()) / dt
    if p.size > 1:
        comfort += float(np.abs(np.diff(p)).sum()) / dt
    return {"total": consum + comfort, "consum": consum, "comfort": comfort}


def trajectory_objective(accels: Iterable[float], phis: Iterable[float],
                         dt: float) -> float:
    return objective_report(accels, phis, dt)["total"]
