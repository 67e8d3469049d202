import numpy as np
import pytest

from nnspin.device import (DeviceOperators, TransmonSpec, collapse_operators,
                           computational_projector, control_operators,
                           drift_hamiltonian, embed_target, lowering_operator)
from nnspin.errors import InvalidInputError


def test_lowering_operator_weights():
    a = lowering_operator(4)
    n_op = a.conj().T @ a
    assert np.allclose(np.diag(n_op), [0, 1, 2, 3])
    assert a[0, 1] == 1.0 and a[2, 3] == pytest.approx(np.sqrt(3))


def test_drift_diagonal():
    spec = TransmonSpec()
    h = drift_hamiltonian(spec)
    n = np.arange(6)
    assert np.allclose(np.diag(h), -np.pi * 200.0 * n * (n - 1))
    assert h[0, 0] == 0.0 and h[1, 1] == 0.0  # rotating-frame degeneracy
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0


def test_control_operators_hermitian():
    qi, qq = control_operators(TransmonSpec())
    assert np.allclose(qi, qi.conj().T)
    assert np.allclose(qq, qq.conj().T)
    a = lowering_operator(6)
    assert np.allclose(qi, a + a.conj().T)
    assert np.allclose(qq, 1j * (a.conj().T - a))


def test_collapse_operator_rates():
    spec = TransmonSpec()
    c1, cphi = collapse_operators(spec)
    a = lowering_operator(6)
    assert np.allclose(c1, np.sqrt(1 / 30.0) * a)
    assert np.allclose(cphi, np.sqrt(1 / 50.0) * (a.conj().T @ a))


def test_collapse_channels_can_be_disabled():
    spec = TransmonSpec()
    assert len(collapse_operators(spec, t1_us=np.inf)) == 1
    assert len(collapse_operators(spec, t1_us=np.inf, t_phi_us=np.inf)) == 0


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        TransmonSpec(n_levels=3)
    with pytest.raises(InvalidInputError):
        TransmonSpec(anharmonicity_mhz=0.0)
    with pytest.raises(InvalidInputError):
        TransmonSpec(t1_us=-1.0)


def test_device_operators_bundle():
    ops = DeviceOperators.build(TransmonSpec(), with_noise=True)
    assert ops.n_levels == 6
    assert len(ops.collapse) == 2
    assert DeviceOperators.build(TransmonSpec(), with_noise=False).collapse == ()


def test_projector_idempotent():
    p = computational_projector(6)
    assert np.allclose(p @ p, p)
    assert np.trace(p).real == 4.0


def test_embed_target(vsd):
    from nnspin.hamiltonian import target_propagator
    u4 = target_propagator(vsd, 0.30)
    target, proj = embed_target(u4, TransmonSpec())
    assert target.shape == (6, 6)
    assert np.allclose(target[:4, :4], u4)
    assert np.allclose(target[4:, 4:], np.eye(2))
    with pytest.raises(InvalidInputError):
        embed_target(np.ones((4, 4)), TransmonSpec())
    with pytest.raises(InvalidInputError):
        embed_target(np.eye(3), TransmonSpec())
