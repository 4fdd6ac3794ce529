import numpy as np
import pytest

from dmrislice.dti import eig_sym3, fa_map, fit_dti, md_map, TensorVolume
from dmrislice.errors import Underdetermined
from dmrislice.phantom import fibonacci_directions
from dmrislice.volume import GradientTable, Volume4D

WM_EIG = np.array([1.7e-3, 0.3e-3, 0.3e-3])
# FA of (1.7, 0.3, 0.3)e-3 computed from the FA formula directly.
WM_FA = float(
    np.sqrt(0.5)
    * np.sqrt((WM_EIG[0] - WM_EIG[1]) ** 2 + (WM_EIG[1] - WM_EIG[2]) ** 2 + (WM_EIG[2] - WM_EIG[0]) ** 2)
    / np.sqrt((WM_EIG**2).sum())
)


def tensor_signal(d6, bvals, bvecs, s0=1.0):
    """Forward monoexponential signal for one tensor, the fit oracle."""
    dxx, dyy, dzz, dxy, dxz, dyz = d6
    quad = (
        bvecs[:, 0] ** 2 * dxx
        + bvecs[:, 1] ** 2 * dyy
        + bvecs[:, 2] ** 2 * dzz
        + 2 * bvecs[:, 0] * bvecs[:, 1] * dxy
        + 2 * bvecs[:, 0] * bvecs[:, 2] * dxz
        + 2 * bvecs[:, 1] * bvecs[:, 2] * dyz
    )
    return s0 * np.exp(-bvals * quad)


def _setup_fit(d6, n_dirs=88, b=1000.0, s0=1.0):
    dirs = fibonacci_directions(n_dirs)
    bvals = np.full(n_dirs, b)
    signal = tensor_signal(d6, bvals, dirs)
    dwi = Volume4D(np.broadcast_to(signal, (2, 2, 1, n_dirs)).copy())
    b0 = Volume4D(np.full((2, 2, 1, 1), s0))
    g = GradientTable(bvals, dirs)
    return dwi, b0, g


def test_fit_recovers_anisotropic_tensor():
    d6 = np.array([1.7e-3, 0.3e-3, 0.3e-3, 0.0, 0.0, 0.0])
    dwi, b0, g = _setup_fit(d6)
    t = fit_dti(dwi, b0, g)
    assert np.abs(t.d6 - d6).max() < 1e-10
    assert np.abs(t.s0 - 1.0).max() < 1e-10


def test_fit_isotropic():
    d = 3.0e-3
    d6 = np.array([d, d, d, 0.0, 0.0, 0.0])
    dwi, b0, g = _setup_fit(d6)
    t = fit_dti(dwi, b0, g)
    assert np.abs(t.d6[..., :3] - d).max() < 1e-10
    assert np.abs(t.d6[..., 3:]).max() < 1e-10


def test_fit_handles_zero_signal_sample():
    d6 = np.array([1.0e-3, 1.0e-3, 1.0e-3, 0.0, 0.0, 0.0])
    dwi, b0, g = _setup_fit(d6, n_dirs=30)
    data = dwi.data.copy()
    data[0, 0, 0, 5] = 0.0  # floored to 1e-6 internally, no error
    t = fit_dti(Volume4D(data), b0, g)
    assert np.isfinite(t.d6).all()


def test_fit_underdetermined():
    d6 = np.array([1.0e-3, 1.0e-3, 1.0e-3, 0.0, 0.0, 0.0])
    dwi, b0, g = _setup_fit(d6, n_dirs=5)
    with pytest.raises(Underdetermined):
        fit_dti(dwi, b0, g)


def test_eig_diagonal():
    lam, vec = eig_sym3(np.array([3.0, 2.0, 1.0, 0.0, 0.0, 0.0]))
    assert np.allclose(lam, [3.0, 2.0, 1.0], atol=1e-12)
    assert np.allclose(np.abs(vec), np.eye(3), atol=1e-10)


def test_eig_identity_degenerate():
    lam, vec = eig_sym3(np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]))
    assert np.allclose(lam, 1.0, atol=1e-14)
    assert np.allclose(vec @ vec.T, np.eye(3), atol=1e-10)


def test_eig_known_offdiagonal():
    # Dxx=Dyy=2, Dxy=1, Dzz=1: characteristic roots 3, 1, 1.
    lam, vec = eig_sym3(np.array([2.0, 2.0, 1.0, 1.0, 0.0, 0.0]))
    assert np.allclose(lam, [3.0, 1.0, 1.0], atol=1e-12)
    assert np.allclose(vec.T @ vec, np.eye(3), atol=1e-10)


def test_eig_matches_numpy_on_random_tensors():
    rng = np.random.default_rng(0)
    d6 = rng.standard_normal((200, 6))
    lam, vec = eig_sym3(d6)
    for i in range(d6.shape[0]):
        m = np.array(
            [
                [d6[i, 0], d6[i, 3], d6[i, 4]],
                [d6[i, 3], d6[i, 1], d6[i, 5]],
                [d6[i, 4], d6[i, 5], d6[i, 2]],
            ]
        )
        ref = np.sort(np.linalg.eigvalsh(m))[::-1]
        assert np.allclose(lam[i], ref, atol=1e-10 * max(1.0, np.abs(ref).max()))
        # eigenvector residuals
        for k in range(3):
            r = m @ vec[i][:, k] - lam[i][k] * vec[i][:, k]
            assert np.linalg.norm(r) < 1e-8
        assert np.allclose(vec[i].T @ vec[i], np.eye(3), atol=1e-10)


def test_eigensolver_trace_consistency():
    rng = np.random.default_rng(1)
    d6 = rng.standard_normal((500, 6))
    lam, _ = eig_sym3(d6)
    trace = d6[:, 0] + d6[:, 1] + d6[:, 2]
    assert np.abs(lam.sum(axis=1) - trace).max() < 1e-12 * max(1.0, np.abs(trace).max())


def _tensor_volume_from_eigs(lam):
    d6 = np.zeros((1, 1, 1, 6))
    d6[0, 0, 0, :3] = lam
    return TensorVolume(d6=d6, s0=np.ones((1, 1, 1)))


def test_fa_values():
    assert fa_map(_tensor_volume_from_eigs([1e-3, 1e-3, 1e-3])).data.ravel()[0] == pytest.approx(0.0, abs=1e-12)
    # trig eigenvalues are ~1e-9 accurate at the doubly degenerate stick limit
    assert fa_map(_tensor_volume_from_eigs([1.0, 0.0, 0.0])).data.ravel()[0] == pytest.approx(1.0, abs=1e-8)
    fa = fa_map(_tensor_volume_from_eigs(WM_EIG)).data.ravel()[0]
    assert fa == pytest.approx(WM_FA, abs=1e-12)
    assert fa == pytest.approx(0.7990, abs=1e-4)
    assert fa_map(_tensor_volume_from_eigs([0.0, 0.0, 0.0])).data.ravel()[0] == 0.0


def test_md_values():
    md = md_map(_tensor_volume_from_eigs(WM_EIG)).data.ravel()[0]
    assert md == pytest.approx(WM_EIG.mean(), abs=1e-12)
    assert md == pytest.approx(0.76667e-3, abs=1e-7)
    assert md_map(_tensor_volume_from_eigs([0, 0, 0])).data.ravel()[0] == 0.0
    assert md_map(_tensor_volume_from_eigs([1.0, 1.0, 1.0])).data.ravel()[0] == pytest.approx(1.0)


def test_fa_bounded_on_noisy_fits():
    rng = np.random.default_rng(2)
    d6 = rng.standard_normal((4, 4, 2, 6)) * 1e-3
    t = TensorVolume(d6=d6, s0=np.ones((4, 4, 2)))
    fa = fa_map(t).data
    assert fa.min() >= 0.0 and fa.max() <= 1.0 + 1e-12


def _random_rotation(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_rotation_equivariance_of_fa_md():
    rng = np.random.default_rng(3)
    lam = np.diag([1.7e-3, 0.3e-3, 0.3e-3])
    rot = _random_rotation(rng)
    d = rot @ lam @ rot.T
    d6 = np.array([d[0, 0], d[1, 1], d[2, 2], d[0, 1], d[0, 2], d[1, 2]])

    dwi_r, b0, g = _setup_fit(d6)
    dwi_0, _, _ = _setup_fit(np.array([1.7e-3, 0.3e-3, 0.3e-3, 0, 0, 0]))
    t_r = fit_dti(dwi_r, b0, g)
    t_0 = fit_dti(dwi_0, b0, g)
    assert np.abs(fa_map(t_r).data - fa_map(t_0).data).max() < 1e-8
    assert np.abs(md_map(t_r).data - md_map(t_0).data).max() < 1e-8
