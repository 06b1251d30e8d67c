"""Separable moment-inequality models ``E[B M - C N] <= rho``.

A model supplies the matrices ``B(theta)``, ``C(theta)``, ``rho(theta)`` and
per-observation moment blocks ``M(W, theta)`` and ``N(W, theta, delta)``.
The nuisance parameter ``delta`` enters only through ``N``.
"""

import numpy as np


class MomentModel:
    """Base class; subclasses override the five building blocks.

    ``moments_depend_on_theta`` may be set to False when ``M`` and ``N`` do
    not vary with ``theta``, letting grid sweeps reuse the covariance.
    """

    moments_depend_on_theta = True

    def B(self, theta):
        raise NotImplementedError

    def C(self, theta):
        raise NotImplementedError

    def rho(self, theta):
        raise NotImplementedError

    def M(self, data, theta):
        raise NotImplementedError

    def N(self, data, theta, delta):
        raise NotImplementedError

    def moments(self, data, theta, delta):
        """Stacked ``p(W_i, theta, delta) = [M_i, N_i]``, shape ``(n, d_M + d_N)``."""
        M = np.atleast_2d(np.asarray(self.M(data, theta), dtype=float))
        N = np.atleast_2d(np.asarray(self.N(data, theta, delta), dtype=float))
        if M.shape[0] != N.shape[0]:
            if M.shape[1] == 0:
                M = np.zeros((N.shape[0], 0))
            else:
                raise ValueError("M and N disagree on the number of observations")
        return np.hstack([M, N])

    def constraints(self, theta):
        """``(A, rho)`` with ``A = [B, -C]`` so the restriction reads ``A kappa <= rho``."""
        B = np.atleast_2d(np.asarray(self.B(theta), dtype=float))
        C = np.atleast_2d(np.asarray(self.C(theta), dtype=float))
        rho = np.asarray(self.rho(theta), dtype=float).ravel()
        return np.hstack([B, -C]), rho


class CallableMomentModel(MomentModel):
    """Model assembled from plain callables.

    Parameters
    ----------
    B, C, rho : callable
        ``theta -> array``.
    M : callable
        ``(data, theta) -> (n, d_M)``.
    N : callable
        ``(data, theta, delta) -> (n, d_N)``.
    """

    def __init__(self, B, C, rho, M, N, moments_depend_on_theta=True):
        self._B, self._C, self._rho, self._M, self._N = B, C, rho, M, N
        self.moments_depend_on_theta = moments_depend_on_theta

    def B(self, theta):
        return self._B(theta)

    def C(self, theta):
        return self._C(theta)

    def rho(self, theta):
        return self._rho(theta)

    def M(self, data, theta):
        return self._M(data, theta)

    def N(self, data, theta, delta):
        return self._N(data, theta, delta)
