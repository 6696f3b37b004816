"""Non-interacting-gas solver: two-level density-matrix equations coupled to
slowly-varying-envelope propagation on a space-time grid.

The medium is uniform, so after scaling the propagation coordinate by the
medium length the whole problem depends on a single optical-depth number:
the field obeys  dOmega/dzeta = -i*(sigma_ss/2)*rho01  (natural units,
zeta = z/L in [0,1]), which at steady state on resonance gives the
Beer-Lambert amplitude attenuation exp(-sigma_ss/2).

Everything is in local time t' = t - z/c; for sub-millimeter samples the
difference from lab time is irrelevant and outputs are labeled plain t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DerivedOpticalDepth, DomainError, PulseShape

DEFAULT_T_MAX = 8.0          # tau_a units
DEFAULT_STEPS_PER_TAU = 200  # RK4 time steps per tau_a
MAX_ALPHA_DZ = 0.05          # resolution guard on optical depth per z step


class StepSizeError(ValueError):
    """Time step outside the stable/accurate range."""


class ResolutionError(ValueError):
    """Spatial grid too coarse for the requested optical depth."""


@dataclass(frozen=True)
class FieldGrid:
    """Space-time samples of the drive field and density-matrix elements.

    Arrays are indexed [z, t].  z_points spans [0, L] (lambda_a units when a
    physical length is known, else L = 1), t_points spans [0, t_max] in
    tau_a units.
    """

    z_points: np.ndarray
    t_points: np.ndarray
    rabi: np.ndarray
    rho00: np.ndarray
    rho11: np.ndarray
    rho01: np.ndarray
    sigma_ss: float

    def validate(self, tol: float = 1e-9):
        trace = self.rho00 + self.rho11
        if np.max(np.abs(trace - 1.0)) > tol:
            raise AssertionError("two-level trace violated")
        excess = np.abs(self.rho01) ** 2 - self.rho00 * self.rho11
        if np.max(excess) > tol:
            raise AssertionError("coherence exceeds pure-state bound")


@dataclass(frozen=True)
class TransmissionTrace:
    """Paired input/output intensity traces (|Omega|^2, common normalization).

    u_input/u_output carry per-point 1-sigma uncertainties for count data;
    noiseless simulation traces leave them None.
    """

    t_points: np.ndarray
    intensity_input: np.ndarray
    intensity_output: np.ndarray
    u_input: np.ndarray | None = None
    u_output: np.ndarray | None = None


def evolve_density_matrix(rabi, detuning: float, dt: float, n_steps: int | None = None):
    """Integrate the two-level Bloch equations with classical RK4.

    rabi: callable t -> complex Omega (Gamma_a units), or a complex series
    sampled at t_k = k*dt (mid-step values are linearly interpolated).
    Starts from the ground state.  Returns (t, rho00, rho11, rho01).

    The coherence damps as -(1/2 + i*detuning)*rho01; populations exchange
    at the decay rate and through the drive term.
    """
    if dt <= 0 or dt > 0.1:
        raise StepSizeError("dt must satisfy 0 < dt <= tau_a/10")
    if callable(rabi):
        if n_steps is None:
            raise ValueError("n_steps is required with a callable drive")
        om = rabi
    else:
        series = np.asarray(rabi, dtype=complex)
        n_steps = len(series) - 1

        def om(t):
            x = t / dt
            i = min(int(x), n_steps - 1)
            frac = x - i
            return series[i] * (1.0 - frac) + series[i + 1] * frac

    t = np.arange(n_steps + 1) * dt
    r00 = np.empty(n_steps + 1)
    r11 = np.empty(n_steps + 1)
    r01 = np.empty(n_steps + 1, dtype=complex)
    y = np.array([1.0, 0.0, 0.0 + 0.0j], dtype=complex)
    damp = 0.5 + 1j * detuning

    def f(y, tt):
        o = om(tt)
        d00 = y[1] + 0.5j * (o * np.conj(y[2]) - np.conj(o) * y[2])
        d11 = -y[1] + 0.5j * (np.conj(o) * y[2] - o * np.conj(y[2]))
        d01 = -damp * y[2] + 0.5j * o * (y[1] - y[0])
        return np.array([d00, d11, d01])

    r00[0], r11[0], r01[0] = 1.0, 0.0, 0.0
    for k in range(n_steps):
        tt = t[k]
        k1 = f(y, tt)
        k2 = f(y + 0.5 * dt * k1, tt + 0.5 * dt)
        k3 = f(y + 0.5 * dt * k2, tt + 0.5 * dt)
        k4 = f(y + dt * k3, tt + dt)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        r00[k + 1] = y[0].real
        r11[k + 1] = y[1].real
        r01[k + 1] = y[2]
    return t, r00, r11, r01


def analytic_weak_field(t, z_over_length, sigma_ss: float, detuning: float = 0.0,
                        omega_in: float = 1.0):
    """Closed-form weak-field step response Omega(z,t').

    Omega(z,t') = Omega(0,t') * exp(-(alpha z/2)(1 - exp(-t'/2))) with
    alpha*L = sigma_ss.  Stated on resonance only; exact to first order in
    sigma_ss (the coherence is assumed to track the local instantaneous
    field, which neglects pulse reshaping at higher optical depth).
    """
    if detuning != 0.0:
        raise DomainError("the closed form is stated on resonance only")
    t = np.asarray(t, dtype=float)
    exponent = -(sigma_ss * z_over_length / 2.0) * (1.0 - np.exp(-t / 2.0))
    return omega_in * np.exp(exponent)


def _resolve_depth(depth) -> tuple[float, float]:
    if isinstance(depth, DerivedOpticalDepth):
        length = depth.propagation_length if depth.propagation_length > 0 else 1.0
        return depth.sigma_ss, length
    sigma_ss = float(depth)
    if sigma_ss < 0:
        raise DomainError("sigma_ss must be >= 0")
    return sigma_ss, 1.0


def default_z_steps(sigma_ss: float) -> int:
    return max(50, math.ceil(20.0 * sigma_ss))


def propagate_pulse(pulse: PulseShape, depth, t_max: float = DEFAULT_T_MAX,
                    steps_per_tau: int = DEFAULT_STEPS_PER_TAU,
                    z_steps: int | None = None) -> FieldGrid:
    """Solve the coupled Bloch/propagation system on a space-time grid.

    Method of lines: z is discretized (the field at each time level follows
    from the boundary drive plus a cumulative trapezoid of the coherence,
    which is the z march of the propagation equation), and the resulting
    coupled system for all z nodes is advanced in t with classical RK4.
    Boundary condition Omega(z=0, t) = pulse.envelope(t); uniform density.
    """
    sigma_ss, length = _resolve_depth(depth)
    if z_steps is None:
        z_steps = default_z_steps(sigma_ss)
    if z_steps < 1:
        raise ResolutionError("need at least one z step")
    if sigma_ss / z_steps > MAX_ALPHA_DZ:
        raise ResolutionError(
            f"alpha*dz = {sigma_ss / z_steps:.3g} > {MAX_ALPHA_DZ}; "
            "use >= 20 z-steps per unit optical depth")

    n_t = int(round(steps_per_tau * t_max))
    t = np.linspace(0.0, t_max, n_t + 1)
    dt = t[1] - t[0]
    nz = z_steps + 1
    dz = 1.0 / z_steps                      # zeta = z/L
    z = np.linspace(0.0, 1.0, nz) * length

    damp = 0.5 + 1j * pulse.detuning
    half_alpha = 0.5 * sigma_ss

    def field_profile(r01, boundary):
        # dOmega/dzeta = -i*(sigma_ss/2)*rho01, marched by cumulative trapezoid
        integ = np.empty(nz, dtype=complex)
        integ[0] = 0.0
        np.cumsum((r01[1:] + r01[:-1]) * (0.5 * dz), out=integ[1:])
        return boundary - 1j * half_alpha * integ

    def deriv(r00, r11, r01, boundary):
        om = field_profile(r01, boundary)
        cross = 0.5j * (om * np.conj(r01) - np.conj(om) * r01)
        d00 = r11 + cross
        d11 = -r11 - cross
        d01 = -damp * r01 + 0.5j * om * (r11 - r00)
        return d00, d11, d01

    r00 = np.ones(nz, dtype=complex)
    r11 = np.zeros(nz, dtype=complex)
    r01 = np.zeros(nz, dtype=complex)

    rabi = np.empty((nz, n_t + 1), dtype=complex)
    g00 = np.empty((nz, n_t + 1))
    g11 = np.empty((nz, n_t + 1))
    g01 = np.empty((nz, n_t + 1), dtype=complex)

    boundary = pulse.envelope(t)
    bnd_mid = pulse.envelope(t[:-1] + 0.5 * dt)

    rabi[:, 0] = field_profile(r01, boundary[0])
    g00[:, 0], g11[:, 0], g01[:, 0] = r00.real, r11.real, r01

    for k in range(n_t):
        b0, bm, b1 = boundary[k], bnd_mid[k], boundary[k + 1]
        k1 = deriv(r00, r11, r01, b0)
        k2 = deriv(r00 + 0.5 * dt * k1[0], r11 + 0.5 * dt * k1[1], r01 + 0.5 * dt * k1[2], bm)
        k3 = deriv(r00 + 0.5 * dt * k2[0], r11 + 0.5 * dt * k2[1], r01 + 0.5 * dt * k2[2], bm)
        k4 = deriv(r00 + dt * k3[0], r11 + dt * k3[1], r01 + dt * k3[2], b1)
        r00 = r00 + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        r11 = r11 + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        r01 = r01 + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        rabi[:, k + 1] = field_profile(r01, boundary[k + 1])
        g00[:, k + 1] = r00.real
        g11[:, k + 1] = r11.real
        g01[:, k + 1] = r01

    return FieldGrid(z_points=z, t_points=t, rabi=rabi, rho00=g00, rho11=g11,
                     rho01=g01, sigma_ss=sigma_ss)


def simulate_transmission(pulse: PulseShape, depth, t_max: float = DEFAULT_T_MAX,
                          steps_per_tau: int = DEFAULT_STEPS_PER_TAU,
                          z_steps: int | None = None) -> TransmissionTrace:
    """Full pipeline: propagate and return paired intensity traces.

    Intensities are |Omega|^2 normalized to the peak input, so I_input
    approaches 1 after the turn-on.
    """
    grid = propagate_pulse(pulse, depth, t_max=t_max, steps_per_tau=steps_per_tau,
                           z_steps=z_steps)
    scale = pulse.amplitude**2
    if scale == 0:
        raise DomainError("pulse amplitude must be positive for a transmission trace")
    i_in = np.abs(grid.rabi[0]) ** 2 / scale
    i_out = np.abs(grid.rabi[-1]) ** 2 / scale
    return TransmissionTrace(t_points=grid.t_points, intensity_input=i_in,
                             intensity_output=i_out)
