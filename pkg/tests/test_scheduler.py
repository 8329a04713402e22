import json

import numpy as np
import pytest

from ctcr_consensus.ctcr_map import STABLE, stability_map
from ctcr_consensus.errors import InputError, NoStabilizingProlongationError
from ctcr_consensus.scheduler import OPTIMAL, RECOVER, SPEED_UP, feasible_cells, recommend_delays

from conftest import H, POINTS, TAU_MAX


def test_recover_from_unstable_point(smap, surface):
    rec = recommend_delays(smap, surface, POINTS["b"])
    assert rec.rationale == RECOVER
    assert rec.recommended[0] >= 1.0 and rec.recommended[1] >= 2.5
    assert smap.classify(*rec.recommended) == "stable"
    assert rec.margin >= 3 * H
    assert rec.re_current > 0 > rec.re_recommended
    ok = feasible_cells(smap, surface, POINTS["b"], 3 * H)
    assert ok[smap.cell(*POINTS["c"])]


def test_speed_up_from_d(smap, surface):
    rec = recommend_delays(smap, surface, POINTS["d"])
    assert rec.rationale == SPEED_UP
    assert rec.re_recommended <= -0.05 < -0.04
    assert rec.re_recommended < rec.re_current
    # e lies in the feasible quadrant of d and is faster than d
    assert surface.at(*POINTS["e"]) < rec.re_current


def test_already_optimal_is_a_fixed_point(smap, surface):
    first = recommend_delays(smap, surface, POINTS["d"])
    again = recommend_delays(smap, surface, first.recommended)
    assert again.rationale == OPTIMAL
    assert again.recommended == first.recommended


def test_recommendation_never_shortens_delays(smap, surface, rng):
    for t1, t2 in rng.uniform(0, 3, (20, 2)):
        try:
            rec = recommend_delays(smap, surface, (t1, t2))
        except NoStabilizingProlongationError:
            continue
        assert rec.recommended[0] >= t1 and rec.recommended[1] >= t2
        assert smap.classes[smap.cell(*rec.recommended)] == STABLE


def test_optimum_is_minimal_over_feasible_set(smap, surface):
    rec = recommend_delays(smap, surface, POINTS["b"])
    ok = feasible_cells(smap, surface, POINTS["b"], 3 * H)
    assert rec.re_recommended == pytest.approx(np.min(surface.real[ok]))


def test_finer_grid_keeps_recommendation_stable(factors, delay_curves, smap, surface):
    fine = stability_map(factors, TAU_MAX, H / 2, curves=delay_curves)
    for name in ("b", "d"):
        rec = recommend_delays(smap, surface, POINTS[name])
        assert fine.classes[fine.cell(*rec.recommended)] == STABLE


def test_no_prolongation_available(smap, surface):
    with pytest.raises(NoStabilizingProlongationError, match="no stabilizing prolongation within horizon"):
        recommend_delays(smap, surface, POINTS["b"], margin_min=10.0)


def test_current_must_lie_on_the_map(smap, surface):
    with pytest.raises(InputError):
        recommend_delays(smap, surface, (-0.1, 1.0))
    with pytest.raises(InputError):
        recommend_delays(smap, surface, (1.0, 6.0))


def test_json_record(smap, surface):
    doc = json.loads(recommend_delays(smap, surface, POINTS["b"]).to_json())
    assert set(doc) == {"current", "recommended", "predicted_re_sdom", "rationale", "margin"}
    assert doc["current"] == [1.0, 2.5]
