import json
import math

import numpy as np
import pytest

from liouville_roa.conic import INFEASIBLE, OPTIMAL, ConicSolution
from liouville_roa.moments import lebesgue_moments_box
from liouville_roa.poly import Polynomial, parse_poly
from liouville_roa.relaxation import (Certificate, NotOptimal, OrderTooLow, SOSInfeasible,
                                      assemble, assemble_free_time, minimal_order,
                                      occupation_order, recover_certificate, verify_sos)
from liouville_roa.semialg import FREE, preprocess, spec_from_dict

from conftest import scaled, solved


def spec_of(data):
    return preprocess(spec_from_dict(data))[0]


STILL = {"n": 1, "T": 1.0, "dynamics": ["0"], "X": ["1 - x1^2"], "XT": ["1 - x1^2"]}


def row_index(layout, exponent):
    for i, a in enumerate(layout.liouville_monomials):
        if tuple(a) == tuple(exponent):
            return i
    raise KeyError(exponent)


def test_cubic_layout_counts():
    spec = scaled("cubic")[0]
    prob, layout = assemble(spec, 2)
    # the occupation block holds moments up to 2k - 1 + deg f = 6
    assert occupation_order(spec, 2) == 3
    assert layout.slots["y"].length == math.comb(2 + 6, 6)
    assert prob.num_vars == 28 + 3 * 5
    assert layout.num_liouville == math.comb(1 + 1 + 4, 4) == 15
    assert layout.num_domination == 5
    assert prob.num_eq == 20


def test_block_families():
    spec = scaled("cubic")[0]
    _, layout = assemble(spec, 3)
    names = {(slot, label) for slot, label, _ in layout.blocks}
    for slot in ("y", "y0", "yT", "yhat0"):
        assert (slot, "1") in names
    assert ("y", "t(1-t)") in names
    # in one dimension the ball constraint coincides with the box; X_T adds its own ball
    assert sum(1 for s, lab, _ in layout.blocks if s == "y") == 1 + 1 + 1
    assert sum(1 for s, lab, _ in layout.blocks if s == "yT") == 1 + 2
    for slot, label, order in layout.blocks:
        assert order >= 0


def test_lebesgue_solution_of_still_dynamics():
    spec = spec_of(STILL)
    k = 3
    prob, layout = assemble(spec, k)
    vec = np.zeros(prob.num_vars)
    for name, slot in layout.slots.items():
        if name == "yhat0":
            continue
        box = [(0.0, 1.0)] * (len(slot.variables) - 1) + [(-1.0, 1.0)] if "t" in slot.variables \
            else [(-1.0, 1.0)]
        vals = lebesgue_moments_box(box, slot.degree).values
        vec[slot.offset:slot.offset + slot.length] = vals
    assert np.abs(prob.A @ vec - prob.b).max() <= 1e-10


def test_time_row_balances_masses():
    spec = scaled("cubic")[0]
    prob, layout = assemble(spec, 2)
    row = prob.A.getrow(row_index(layout, (1, 0))).toarray().ravel() / layout.row_scale[
        row_index(layout, (1, 0))]
    nz = {int(j): row[j] for j in np.flatnonzero(row)}
    assert nz == {layout.slots["yT"].offset: 1.0, layout.slots["y"].offset: -1.0}
    assert prob.b[row_index(layout, (1, 0))] == 0.0


def test_free_time_changes_only_the_target_measure():
    spec = scaled("cubic")[0]
    fixed, lf = assemble(spec, 3)
    free, lr = assemble_free_time(spec, 3)
    assert lr.slots["yT"].length == math.comb(1 + 1 + 6, 6)
    assert lf.slots["yT"].length == math.comb(1 + 6, 6)
    assert ("yT", "t(1-t)") in {(s, lab) for s, lab, _ in lr.blocks}
    for i, a in enumerate(lf.liouville_monomials):
        if a[0] != 0:
            continue
        rf = fixed.A.getrow(i).toarray().ravel()
        rr = free.A.getrow(i).toarray().ravel()
        for name in ("y", "y0"):
            sf, sr = lf.slots[name], lr.slots[name]
            np.testing.assert_array_equal(rf[sf.offset:sf.offset + sf.length],
                                          rr[sr.offset:sr.offset + sr.length])


def test_order_too_low_names_minimum():
    spec = scaled("van_der_pol")[0]
    assert minimal_order(spec) == 2
    with pytest.raises(OrderTooLow, match="2"):
        assemble(spec, 1)


def test_singleton_target_uses_a_point_mass():
    spec = scaled("double_integrator")[0]
    _, layout = assemble(spec, 2)
    assert layout.slots["yT"].kind == "point-mass" and layout.slots["yT"].length == 1
    _, layout = assemble_free_time(spec.with_mode(FREE), 2)
    assert layout.slots["yT"].kind == "point-time"


def test_brockett_relaxation_size():
    spec = scaled("brockett")[0]
    prob, layout = assemble(spec, 3)
    assert layout.num_liouville == math.comb(1 + 3 + 6, 6)
    assert layout.num_domination == math.comb(3 + 6, 6)


# ---------------------------------------------------------------------------
# certificates

def test_weak_duality_and_objective_consistency():
    res = solved("cubic", 4)
    p, d = res.primal_objective, res.dual_objective
    assert p <= d + 1e-6 * (1 + abs(d))
    cert = res.certificate
    leb = res.layout.lebesgue
    total = sum(c * leb[a] for a, c in cert.w.items())
    assert total == pytest.approx(d, rel=1e-6)


def test_recovered_cubic_certificate_on_grid():
    cert = solved("cubic", 4).certificate
    x = np.linspace(-1, 1, 1001)[:, None]
    v0, w = cert.value_at_start(x), cert.w.evaluate(x)
    assert np.max(1 + v0 - w) <= 1e-6
    assert w.min() >= -1e-6
    assert cert.v.degree() <= 8 and cert.w.degree() <= 8


def test_recover_rejects_failed_solve():
    res = solved("cubic", 2)
    bad = ConicSolution(res.solution.y, res.solution.x, res.solution.Z, INFEASIBLE, 0, 0, 1, 1,
                        1, 3, "primal infeasible")
    with pytest.raises(NotOptimal):
        recover_certificate(res.layout, bad)
    with pytest.raises(NotOptimal):
        recover_certificate(res.layout, bad, accept_accuracy=1.0)


def test_certificate_serialisation_is_exact():
    cert = solved("cubic", 4).certificate
    again = Certificate.from_dict(json.loads(json.dumps(cert.to_dict())))
    assert again == cert


def test_sos_constant_certificate():
    spec = spec_of({"n": 1, "T": 1.0, "dynamics": ["x1^3"], "X": ["1 - x1^2"],
                    "XT": ["1 - x1^2"]})
    cert = Certificate(parse_poly("-t", ("t", "x1")), Polynomial.constant(("x1",), 2.0), 2)
    rep = verify_sos(cert, spec, raise_on_failure=False)
    assert rep["decrease"]["passed"]
    assert rep["nonnegativity"]["passed"]
    # v(1, x) = -1 is negative on the target
    assert not rep["terminal"]["passed"]
    with pytest.raises(SOSInfeasible):
        verify_sos(cert, spec)


def test_sos_recovered_cubic_certificate():
    res = solved("cubic", 4)
    rep = verify_sos(res.certificate, scaled("cubic")[0])
    tol = 1e-5 * res.certificate.coefficient_norm()
    for name in ("decrease", "domination", "terminal", "nonnegativity"):
        assert rep[name]["passed"] and rep[name]["residual"] <= tol


def test_monotone_in_order():
    d = [solved("cubic", k).dual_objective for k in (2, 3, 4)]
    for a, b in zip(d, d[1:]):
        assert b <= a + 1e-6 * (1 + abs(a))
    assert d[-1] >= 1.0 - 1e-6


def test_solution_status_recorded():
    cert = solved("cubic", 2).certificate
    assert cert.solver_status in (OPTIMAL, "NumericalFailure", "MaxIter")
    assert cert.accuracy <= 1e-6
