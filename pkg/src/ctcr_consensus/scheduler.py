"""Delay scheduling: pick a componentwise larger delay pair that is stable and fast.

Delays can only be prolonged (by buffering), so the search runs over the
raster cells in the quadrant above the current pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ctcr_map import STABLE, StabilityMap
from .errors import InputError, NoStabilizingProlongationError
from .qpr_roots import DominantSurface, dominant_root

RECOVER = "recover-stability"
SPEED_UP = "speed-up"
OPTIMAL = "already-optimal"
TIE_TOL = 1e-12


@dataclass(frozen=True)
class ScheduleRecommendation:
    current: tuple[float, float]
    recommended: tuple[float, float]
    re_current: float
    re_recommended: float
    rationale: str
    margin: float  # distance of the recommended cell to the nearest curve

    def to_json(self) -> str:
        return json.dumps({
            "current": list(self.current),
            "recommended": list(self.recommended),
            "predicted_re_sdom": {"current": self.re_current, "recommended": self.re_recommended},
            "rationale": self.rationale,
            "margin": self.margin,
        }, indent=2)


def feasible_cells(smap: StabilityMap, surface: DominantSurface, current, margin_min: float) -> np.ndarray:
    """Mask of stable cells above ``current`` with curve distance >= margin_min."""
    t1, t2 = current
    ax = smap.axis
    quad = (ax[None, :] >= t1) & (ax[:, None] >= t2)
    return quad & (smap.classes == STABLE) & (smap.distance >= margin_min) & np.isfinite(surface.real)


def recommend_delays(smap: StabilityMap, surface: DominantSurface, current,
                     margin_min: float | None = None) -> ScheduleRecommendation:
    """Cell of minimal Re(s_dom) among feasible stable cells.

    Ties go to the least added delay (L1), then to the lexicographically
    smaller pair.  If the optimum lies within one cell of ``current`` the
    current pair is returned unchanged.
    """
    t1, t2 = map(float, current)
    if t1 < 0 or t2 < 0 or t1 > smap.tau_max or t2 > smap.tau_max:
        raise InputError(f"current delays {current} outside [0, {smap.tau_max}]^2")
    if surface.real.shape != smap.classes.shape:
        raise InputError("map and surface rasters differ in shape")
    if margin_min is None:
        margin_min = 3 * smap.h
    ok = feasible_cells(smap, surface, (t1, t2), margin_min)
    if not ok.any():
        raise NoStabilizingProlongationError(
            f"no stabilizing prolongation within horizon from ({t1:.6g}, {t2:.6g})")
    i2, i1 = np.nonzero(ok)
    ax = smap.axis
    re = surface.real[i2, i1]
    best = re.min()
    tied = np.nonzero(re <= best + TIE_TOL * max(1.0, abs(best)))[0]
    added = (ax[i1[tied]] - t1) + (ax[i2[tied]] - t2)
    order = np.lexsort((ax[i2[tied]], ax[i1[tied]], added))
    k = tied[order[0]]
    rec = (float(ax[i1[k]]), float(ax[i2[k]]))
    re_now = dominant_root(smap.factors, t1, t2).value.real
    stable_now = smap.classify(t1, t2) == "stable"
    if max(abs(rec[0] - t1), abs(rec[1] - t2)) <= smap.h and stable_now:
        return ScheduleRecommendation((t1, t2), (t1, t2), re_now, re_now, OPTIMAL,
                                      float(smap.distance[i2[k], i1[k]]))
    tag = SPEED_UP if stable_now else RECOVER
    return ScheduleRecommendation((t1, t2), rec, re_now, float(re[k]), tag,
                                  float(smap.distance[i2[k], i1[k]]))
