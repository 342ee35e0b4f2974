"""Independent reference implementations used only by the tests."""

import numpy as np

SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)


def expm_eig(h, t):
    """exp(-2j pi h t) through a batched eigendecomposition."""
    w, v = np.linalg.eigh(h)
    ph = np.exp(-2j * np.pi * w * np.asarray(t)[..., None])
    return (v * ph[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def tree_product(mats):
    """Chronological product of (..., S, d, d) along axis -3 (index 0 first)."""
    while mats.shape[-3] > 1:
        n = mats.shape[-3]
        if n % 2:
            pad = np.broadcast_to(np.eye(mats.shape[-1], dtype=complex),
                                  mats.shape[:-3] + (1,) + mats.shape[-2:])
            mats = np.concatenate([mats, pad], axis=-3)
        mats = mats[..., 1::2, :, :] @ mats[..., 0::2, :, :]
    return mats[..., 0, :, :]


def lab_drive_propagator(larmor, a_par, a_perp, n_pi, tau, omega, rabi, phases,
                         first_ms, steps_per_period=200):
    """Time-stepped lab-frame propagation of one nuclear spin under DDrf.

    The lab Hamiltonian in segment k is
    w_m I_zb + rabi cos(b) [cos(2 pi w t + phi_k) I_xb + sin(2 pi w t + phi_k) I_yb]
    with the electron level alternating after each pi pulse.
    """
    other = 2.0 - first_ms  # 3/2 <-> 1/2
    total = np.eye(2, dtype=complex)
    for k in range(1, n_pi + 2):
        m = first_ms if k % 2 == 1 else other
        z, x = larmor + m * a_par, m * a_perp
        wm, b = np.hypot(z, x), np.arctan2(x, z)
        iz = np.cos(b) * SZ + np.sin(b) * SX
        ix = np.cos(b) * SX - np.sin(b) * SZ
        iy = SY
        t0 = 0.0 if k == 1 else (2 * k - 3) * tau
        t1 = 2 * n_pi * tau if k == n_pi + 1 else (2 * k - 1) * tau
        fmax = max(abs(wm), abs(omega), 1.0)
        n_steps = int(np.ceil((t1 - t0) * fmax * steps_per_period))
        dt = (t1 - t0) / n_steps
        tm = t0 + (np.arange(n_steps) + 0.5) * dt
        arg = 2 * np.pi * omega * tm + phases[k - 1]
        amp = rabi * np.cos(b)
        h = (wm * iz + amp * (np.cos(arg)[:, None, None] * ix + np.sin(arg)[:, None, None] * iy))
        total = tree_product(expm_eig(h, dt)) @ total
    return total


def hahn_echo_l(larmor, a_par, a_perp, tau):
    """Closed-form single-spin Hahn-echo (N = 1) coherence for the 3/2, 1/2 branches."""
    out = []
    for t in np.atleast_1d(tau):
        za, xa = larmor + 1.5 * a_par, 1.5 * a_perp
        zb, xb = larmor + 0.5 * a_par, 0.5 * a_perp
        wa, wb = np.hypot(za, xa), np.hypot(zb, xb)
        ba, bb = np.arctan2(xa, za), np.arctan2(xb, zb)
        alpha = ba - bb
        pa, pb = 2 * np.pi * wa * t, 2 * np.pi * wb * t
        out.append(1 - 2 * np.sin(alpha) ** 2 * np.sin(pa / 2) ** 2 * np.sin(pb / 2) ** 2)
    return np.array(out)


def brute_force_bath_signal(blocks_32, blocks_12, readout_phases, n_pi=0):
    """Full tensor-product readout: electron (|1/2>, |3/2>) times all nuclei.

    ``blocks_*`` are per-spin conditional 2x2 unitaries. Returns P(|3/2>)
    per readout phase with nuclei maximally mixed.
    """
    u32 = np.eye(1, dtype=complex)
    u12 = np.eye(1, dtype=complex)
    for a, b in zip(blocks_32, blocks_12):
        u32 = np.kron(u32, a)
        u12 = np.kron(u12, b)
    d = u32.shape[0]
    full = np.zeros((2 * d, 2 * d), dtype=complex)
    full[:d, :d] = u12
    full[d:, d:] = u32
    flip = np.linalg.matrix_power(np.array([[0, -1j], [-1j, 0]]), n_pi)
    full = np.kron(flip, np.eye(d)) @ full
    ry = np.array([[1, -1], [1, 1]], dtype=complex) / np.sqrt(2)
    psi_e = ry @ np.array([1, 0], dtype=complex)
    rho_n = np.eye(d) / d
    rho = np.kron(np.outer(psi_e, psi_e.conj()), rho_n)
    rho = full @ rho @ full.conj().T
    out = []
    for phi in readout_phases:
        gen = np.array([[0, np.exp(-1j * phi)], [np.exp(1j * phi), 0]])
        r = np.cos(np.pi / 4) * np.eye(2) - 1j * np.sin(np.pi / 4) * gen
        big = np.kron(r, np.eye(d))
        rf = big @ rho @ big.conj().T
        out.append(np.real(np.trace(rf[d:, d:])))
    return np.array(out)


def _embed(op, site, k):
    mats = [np.eye(2)] * k
    mats[site] = op
    out = np.eye(1)
    for m in mats:
        out = np.kron(out, m)
    return out


def full_cluster_coherence(hf, larmor, pair_tensors, n_pi, tau, state_bits):
    """Exact <s|V_12^dag V_32|s> for a few spins, built with explicit krons.

    ``hf`` is (K, 3) of (A_zz, A_xz, A_yz); ``pair_tensors`` maps (l, k) to a
    3x3 dipolar tensor. Periods tau, 2 tau, ..., tau with the electron
    flipping between them.
    """
    sx, sy, sz = SX, SY, SZ
    ops = (sx, sy, sz)
    k = len(hf)
    dip = np.zeros((2 ** k, 2 ** k), dtype=complex)
    for (l, m), t in pair_tensors.items():
        for i in range(3):
            for j in range(3):
                dip += t[i, j] * _embed(ops[i], l, k) @ _embed(ops[j], m, k)

    def ham(ms):
        h = dip.copy()
        for s in range(k):
            h += (larmor[s] + ms * hf[s, 0]) * _embed(sz, s, k)
            h += ms * hf[s, 1] * _embed(sx, s, k) + ms * hf[s, 2] * _embed(sy, s, k)
        return h

    hams = {1.5: ham(1.5), 0.5: ham(0.5)}
    other = {1.5: 0.5, 0.5: 1.5}
    lengths = [tau] + [2 * tau] * (n_pi - 1) + [tau]

    def sequence(first):
        u = np.eye(2 ** k, dtype=complex)
        level = first
        for length in lengths:
            u = expm_eig(hams[level], length) @ u
            level = other[level]
        return u

    psi = np.zeros(2 ** k)
    psi[int("".join(str(b) for b in state_bits), 2)] = 1.0
    return psi @ sequence(0.5).conj().T @ sequence(1.5) @ psi
