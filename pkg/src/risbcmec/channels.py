"""Channel generation: path loss, small-scale fading, RIS cascades."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario

# Spawn-key codes, one sub-stream per link (and per device where indexed)
# so adding devices never perturbs the draws of existing ones.
_POSITIONS = 0
_PB_WD = 1
_PB_RIS = 2
_RIS_WD = 3
_WD_MEC = 4
_WD_RIS = 5
_RIS_MEC = 6


def path_loss(distance, exponent):
    """Distance-law power gain d**(-exponent)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("distance must be positive")
    out = d ** (-float(exponent))
    return float(out) if np.isscalar(distance) else out


def draw_small_scale(kind, count, rng, rician_k_db=10.0):
    """Draw `count` unit-mean-square fading coefficients.

    "rayleigh" gives CN(0,1) entries. "rician" adds a deterministic
    all-ones line-of-sight part with power ratio 10**(rician_k_db/10)
    over the scattered part, normalized so E|x|^2 = 1.
    """
    count = int(count)
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.zeros(0, dtype=complex)
    scatter = (rng.standard_normal(count) + 1j * rng.standard_normal(count)) / np.sqrt(2.0)
    if kind == "rayleigh":
        return scatter
    if kind == "rician":
        k = 10.0 ** (float(rician_k_db) / 10.0)
        los = np.ones(count, dtype=complex)
        return np.sqrt(k / (k + 1.0)) * los + np.sqrt(1.0 / (k + 1.0)) * scatter
    raise ValueError(f"unknown fading kind {kind!r}")


@dataclass
class PhaseShifts:
    """Unit-modulus RIS coefficients."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=complex).ravel()
        if self.theta.size and np.max(np.abs(np.abs(self.theta) - 1.0)) > 1e-9:
            raise ValueError("phase-shift entries must be unit modulus")

    @property
    def n(self) -> int:
        return self.theta.size

    @classmethod
    def identity(cls, n) -> "PhaseShifts":
        return cls(np.ones(int(n), dtype=complex))

    @classmethod
    def from_angles(cls, angles) -> "PhaseShifts":
        return cls(np.exp(1j * np.asarray(angles, dtype=float).ravel()))


@dataclass
class ChannelSet:
    """One realization of every link in the network.

    g_* are the energy/backscatter downlink segments, h_* the offloading
    uplink segments. Vectors indexed by RIS element are length N, device
    matrices are (N, K) with one column per device.
    """

    g_PU: np.ndarray          # PB -> WD, (K,)
    g_PI: np.ndarray          # PB -> RIS, (N,)
    g_IU: np.ndarray          # RIS -> WD, (N, K)
    h_UM: np.ndarray          # WD -> MEC, (K,)
    h_UI: np.ndarray          # WD -> RIS, (N, K)
    h_IM: np.ndarray          # RIS -> MEC, (N,)
    wd_pos: np.ndarray = field(default=None)  # (K, 2), diagnostic only

    def __post_init__(self):
        self.g_PU = np.asarray(self.g_PU, dtype=complex).ravel()
        self.h_UM = np.asarray(self.h_UM, dtype=complex).ravel()
        self.g_PI = np.asarray(self.g_PI, dtype=complex).ravel()
        self.h_IM = np.asarray(self.h_IM, dtype=complex).ravel()
        self.g_IU = np.asarray(self.g_IU, dtype=complex).reshape(self.g_PI.size, -1)
        self.h_UI = np.asarray(self.h_UI, dtype=complex).reshape(self.h_IM.size, -1)
        k, n = self.g_PU.size, self.g_PI.size
        if self.h_UM.size != k or self.g_IU.shape != (n, k) or self.h_UI.shape != (n, k) \
                or self.h_IM.size != n:
            raise ValueError("inconsistent channel array shapes")
        if self.wd_pos is None:
            self.wd_pos = np.zeros((k, 2))
        else:
            self.wd_pos = np.asarray(self.wd_pos, dtype=float).reshape(k, 2)

    @property
    def K(self) -> int:
        return self.g_PU.size

    @property
    def N(self) -> int:
        return self.g_PI.size

    def without_ris(self) -> "ChannelSet":
        """Copy with all reflected segments zeroed (direct links only)."""
        z_n = np.zeros_like(self.g_PI)
        z_nk = np.zeros_like(self.g_IU)
        return ChannelSet(self.g_PU.copy(), z_n, z_nk, self.h_UM.copy(),
                          np.zeros_like(self.h_UI), np.zeros_like(self.h_IM),
                          wd_pos=self.wd_pos.copy())


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def generate_channels(scenario: Scenario, seed: int) -> ChannelSet:
    """Draw one channel realization for `scenario`.

    Device positions are uniform over the disc of radius wd_radius around
    wd_center. Every link has its own counter-derived stream; with
    fading="rician" the PB->RIS and RIS->MEC infrastructure links carry
    the line-of-sight component, all others stay Rayleigh.
    """
    sc = scenario
    k_dev, n = sc.K, sc.N
    rng_pos = _rng(seed, _POSITIONS)
    radii = sc.wd_radius * np.sqrt(rng_pos.random(k_dev))
    angles = 2.0 * np.pi * rng_pos.random(k_dev)
    wd_pos = np.stack([sc.wd_center[0] + radii * np.cos(angles),
                       sc.wd_center[1] + radii * np.sin(angles)], axis=1)

    pb = np.asarray(sc.pb_pos)
    mec = np.asarray(sc.mec_pos)
    ris = np.asarray(sc.ris_pos)
    d_pb_wd = np.linalg.norm(wd_pos - pb, axis=1)
    d_wd_mec = np.linalg.norm(wd_pos - mec, axis=1)
    d_ris_wd = np.linalg.norm(wd_pos - ris, axis=1)
    d_pb_ris = float(np.linalg.norm(ris - pb))
    d_ris_mec = float(np.linalg.norm(ris - mec))

    infra = sc.fading  # PB->RIS and RIS->MEC may be Rician
    amp_direct = np.sqrt(path_loss(d_pb_wd, sc.pl_exp_direct))
    g_PU = np.empty(k_dev, dtype=complex)
    h_UM = np.empty(k_dev, dtype=complex)
    g_IU = np.empty((n, k_dev), dtype=complex)
    h_UI = np.empty((n, k_dev), dtype=complex)
    for k in range(k_dev):
        g_PU[k] = amp_direct[k] * draw_small_scale("rayleigh", 1, _rng(seed, _PB_WD, k))[0]
        h_UM[k] = np.sqrt(path_loss(d_wd_mec[k], sc.pl_exp_direct)) \
            * draw_small_scale("rayleigh", 1, _rng(seed, _WD_MEC, k))[0]
        amp_r = np.sqrt(path_loss(d_ris_wd[k], sc.pl_exp_reflected))
        g_IU[:, k] = amp_r * draw_small_scale("rayleigh", n, _rng(seed, _RIS_WD, k))
        h_UI[:, k] = amp_r * draw_small_scale("rayleigh", n, _rng(seed, _WD_RIS, k))
    g_PI = np.sqrt(path_loss(d_pb_ris, sc.pl_exp_reflected)) \
        * draw_small_scale(infra, n, _rng(seed, _PB_RIS), sc.rician_k_db)
    h_IM = np.sqrt(path_loss(d_ris_mec, sc.pl_exp_reflected)) \
        * draw_small_scale(infra, n, _rng(seed, _RIS_MEC), sc.rician_k_db)
    return ChannelSet(g_PU, g_PI, g_IU, h_UM, h_UI, h_IM, wd_pos=wd_pos)


def cascaded_gains(channels: ChannelSet, theta):
    """Effective complex gains for each device under phase shifts theta.

    g_k = g_PU,k + g_PI^H diag(theta) g_IU[:,k]
    h_k = h_UM,k + h_UI[:,k]^H diag(theta) h_IM
    """
    th = theta.theta if isinstance(theta, PhaseShifts) else np.asarray(theta, dtype=complex).ravel()
    if th.size != channels.N:
        raise ValueError(f"theta has {th.size} entries, channels have N={channels.N}")
    if channels.N == 0:
        return channels.g_PU.copy(), channels.h_UM.copy()
    g = channels.g_PU + (np.conj(channels.g_PI) * th) @ channels.g_IU
    h = channels.h_UM + np.conj(channels.h_UI).T @ (th * channels.h_IM)
    return g, h
