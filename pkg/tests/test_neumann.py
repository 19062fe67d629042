import math

import numpy as np
import pytest

from fvpkit import (Interval, Rectangle, SourceTerm, ValidationError, build_model,
                    check_neumann_bc, holder_gate, instability_experiment, verify_coercivity,
                    weyl_check)
from fvpkit.neumann import geometry_from_dict

# frozen oracle values (tests/oracles.py)
E9 = 8103.083927575384
ALPHA_RECT_256 = 1.0431035276087121


def test_interval_eigenvalues_and_weights():
    m = build_model(Interval(), 4)
    np.testing.assert_array_equal(m.eigenvalues, [0.0, 1.0, 4.0, 9.0])
    np.testing.assert_array_equal(np.diag(m.triple.gram_V)[:2], [1.0, 2.0])
    assert (m.operator.C3, m.operator.C4, m.operator.k) == (1.0, 1.0, 1.0)
    assert verify_coercivity(m.operator).passed
    m2 = build_model(Interval(2.0), 3)
    np.testing.assert_allclose(m2.eigenvalues, [0.0, (math.pi / 2) ** 2, math.pi ** 2])


def test_rectangle_eigenvalues_with_multiplicity():
    m = build_model(Rectangle(), 4)
    np.testing.assert_array_equal(m.eigenvalues, [0.0, 1.0, 1.0, 2.0])
    assert m.indices.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]
    m = build_model(Rectangle(math.pi, 2 * math.pi), 4)
    np.testing.assert_allclose(m.eigenvalues, [0.0, 0.25, 1.0, 1.0])


def test_build_model_validation():
    with pytest.raises(ValidationError):
        build_model(Interval(), 1)
    with pytest.raises(ValidationError):
        build_model(Interval(), 2.5)
    with pytest.raises(ValidationError):
        build_model(Interval(-1.0), 4)
    with pytest.raises(ValidationError):
        build_model(Rectangle(1.0, 0.0), 4)
    with pytest.raises(ValidationError):
        geometry_from_dict({"kind": "disk"})


def test_eigenfunctions_orthonormal():
    m = build_model(Interval(), 5)
    x = np.linspace(0, math.pi, 4001)
    E = np.stack([m.eigenfunction(j, x) for j in range(5)])
    from scipy.integrate import simpson
    G = simpson(E[:, None, :] * E[None, :, :], x=x, axis=-1)
    np.testing.assert_allclose(G, np.eye(5), atol=1e-10)
    r = build_model(Rectangle(), 3)
    assert r.eigenfunction(0, 0.3, 0.4) == pytest.approx(1 / math.pi)


def test_boundary_flux_vanishes_with_refinement():
    m = build_model(Interval(), 8)
    c = np.array([0.3, 1.0, -0.5, 0.2, 0.0, 0.1, 0.0, 0.05])
    coarse = check_neumann_bc(m, c, 64)
    fine = check_neumann_bc(m, c, 1024)
    assert max(fine) < max(coarse) / 10
    assert max(fine) < 0.05
    assert check_neumann_bc(m, np.zeros(8), 32) == (0.0, 0.0)
    with pytest.raises(ValidationError):
        check_neumann_bc(m, c, 16)
    with pytest.raises(ValidationError):
        check_neumann_bc(build_model(Rectangle(), 4), np.ones(4), 64)


def test_weyl_interval_and_rectangle():
    rep = weyl_check(build_model(Interval(), 64))
    assert rep.alpha == pytest.approx(2.0, abs=0.05)
    assert rep.passed and rep.expected == 2.0
    rect = weyl_check(build_model(Rectangle(), 256))
    assert rect.alpha == pytest.approx(ALPHA_RECT_256, abs=1e-10)
    assert rect.passed and rect.expected == 1.0


def test_weyl_needs_enough_modes():
    with pytest.raises(ValidationError, match="insufficient spectrum"):
        weyl_check(build_model(Interval(), 2))
    with pytest.raises(ValidationError):
        weyl_check(build_model(Interval(), 31))


def test_instability_growth():
    m = build_model(Interval(), 32)
    rows = instability_experiment(m, 1.0, [0, 1, 2, 3, 26, 27, 31])
    by_j = {r.j: r for r in rows}
    assert by_j[0].norm == 1.0
    assert by_j[3].norm == pytest.approx(E9, rel=1e-14)
    assert by_j[26].norm == pytest.approx(math.exp(676.0), rel=1e-12)
    assert by_j[27].overflowed and by_j[31].overflowed
    assert by_j[27].expected == math.inf
    with pytest.raises(ValidationError):
        instability_experiment(m, 1.0, [32])


def test_holder_gate_constant_and_lipschitz():
    t = np.linspace(0.0, 1.0, 33)
    g = holder_gate(SourceTerm(t, np.ones((33, 2))))
    assert g.passes and g.constant == 0.0
    g = holder_gate(SourceTerm(t, np.stack([t, 2 * t], axis=1)))
    assert g.passes
    assert g.sigma == pytest.approx(1.0)
    assert g.constant == pytest.approx(math.sqrt(5))


def test_holder_gate_square_root():
    t = np.linspace(0.0, 1.0, 257)
    g = holder_gate(SourceTerm(t, np.sqrt(t)[:, None]))
    assert g.sigma == pytest.approx(0.5, abs=0.05)
    assert g.passes


def test_holder_gate_rejects_jump_and_declared_violation():
    t = np.linspace(0.0, 1.0, 65)
    jump = (t >= 0.5).astype(float)[:, None]
    g = holder_gate(SourceTerm(t, jump, "constant"))
    assert g.sigma < 0.1 and not g.passes
    declared = SourceTerm(t, np.sqrt(t)[:, None], holder=(0.9, 1.0))
    assert not holder_gate(declared).passes
    with pytest.raises(ValidationError):
        holder_gate(SourceTerm([0.0, 1.0], [[0.0], [1.0]]))


def test_model_serialization():
    d = build_model(Rectangle(1.0, 2.0), 4).to_dict()
    assert d["geometry"] == {"kind": "rectangle", "Lx": 1.0, "Ly": 2.0}
    assert d["constants"] == {"C3": 1.0, "C4": 1.0, "k": 1.0}
