"""Constant-acceleration Kalman filter over image coordinates.

The state is ``[h, v, h', v', h'', v'']`` (pixels and derivatives); the
measurement is the detected bounding-box center ``(h, v)``. Operations are
pure state-in/state-out, so filters for disjoint tracklets can run from any
thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ImagePoint

STATE_DIM = 6
MEAS_DIM = 2


class GainSingular(ValueError):
    """Innovation covariance is numerically singular; no update possible."""


def transition_matrix(dt: float) -> np.ndarray:
    """State transition for the constant-acceleration model over one step."""
    h = 0.5 * dt * dt
    return np.array(
        [
            [1.0, 0.0, dt, 0.0, h, 0.0],
            [0.0, 1.0, 0.0, dt, 0.0, h],
            [0.0, 0.0, 1.0, 0.0, dt, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0, dt],
            [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ]
    )


def process_noise(dt: float, sigma_accel: float) -> np.ndarray:
    """Process noise for a white acceleration-increment disturbance.

    A random acceleration change of strength ``sigma_accel`` acts over the
    step, entering position as dt^2/2, velocity as dt, and acceleration
    directly. Both axes are independent.
    """
    g = np.array([0.5 * dt * dt, dt, 1.0])
    q_axis = sigma_accel * sigma_accel * np.outer(g, g)
    q = np.zeros((STATE_DIM, STATE_DIM))
    q[0::2, 0::2] = q_axis
    q[1::2, 1::2] = q_axis
    return q


@dataclass(frozen=True)
class KalmanParams:
    """Filter constants: step time, process/measurement noise, initial covariance."""

    dt: float
    q: np.ndarray
    r: np.ndarray
    sigma0: np.ndarray
    phi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "phi", transition_matrix(self.dt))

    @classmethod
    def defaults(
        cls,
        dt: float,
        sigma_accel: float = 50.0,
        meas_std: float = 5.0,
        pos_var: float = 100.0,
        deriv_var: float = 1000.0,
    ) -> "KalmanParams":
        """Default tuning: a few pixels of detector jitter, uninformative
        derivative priors that settle after a handful of frames."""
        sigma0 = np.diag([pos_var, pos_var, deriv_var, deriv_var, deriv_var, deriv_var]).astype(float)
        return cls(
            dt=dt,
            q=process_noise(dt, sigma_accel),
            r=np.diag([meas_std * meas_std, meas_std * meas_std]).astype(float),
            sigma0=sigma0,
        )


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray
    sigma: np.ndarray


def kf_init(z0: ImagePoint, params: KalmanParams) -> KalmanState:
    """Start a filter at the first measurement with zero derivatives."""
    x = np.zeros(STATE_DIM)
    x[0], x[1] = z0
    return KalmanState(x=x, sigma=params.sigma0.copy())


def kf_predict(s: KalmanState, params: KalmanParams) -> KalmanState:
    phi = params.phi
    x = phi @ s.x
    sigma = phi @ s.sigma @ phi.T + params.q
    return KalmanState(x=x, sigma=sigma)


def kf_update(s: KalmanState, z: ImagePoint, params: KalmanParams) -> KalmanState:
    """Correct with a measured box center.

    Raises:
        GainSingular: the 2x2 innovation covariance cannot be inverted.
    """
    sigma = s.sigma
    # H selects the first two state entries, so H @ sigma @ H.T is the
    # top-left 2x2 block and sigma @ H.T the first two columns.
    s00 = sigma[0, 0] + params.r[0, 0]
    s01 = sigma[0, 1] + params.r[0, 1]
    s10 = sigma[1, 0] + params.r[1, 0]
    s11 = sigma[1, 1] + params.r[1, 1]
    det = s00 * s11 - s01 * s10
    scale = max(abs(s00), abs(s11), 1.0)
    if not np.isfinite(det) or abs(det) < 1e-15 * scale * scale:
        raise GainSingular(f"innovation covariance singular (det={det:.3e})")

    inv = np.array([[s11, -s01], [-s10, s00]]) / det
    k = sigma[:, :2] @ inv
    innovation = np.array([z[0] - s.x[0], z[1] - s.x[1]])
    x = s.x + k @ innovation
    sigma_post = sigma - k @ sigma[:2, :]
    sigma_post = 0.5 * (sigma_post + sigma_post.T)
    return KalmanState(x=x, sigma=sigma_post)


def kf_position(s: KalmanState) -> ImagePoint:
    return ImagePoint(float(s.x[0]), float(s.x[1]))
