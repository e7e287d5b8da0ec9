"""Exact evaluation of the paper-form latent update for the L=1 hand case.

    K = [P^L; I] (P^L + Sigma)^-1
    delta = K (mu_obs - mu_pred)
    P_post = P_pred - K (P^L + Sigma) K^T

Run directly to print the result; the test suite imports ``evaluate``.
"""
import sympy as sp


def evaluate(p_lat=1, sigma=1, innovation=2, p_pred=None):
    p_lat, sigma, innovation = sp.Rational(p_lat), sp.Rational(sigma), sp.Rational(innovation)
    p_pred = sp.eye(2) if p_pred is None else sp.Matrix(p_pred)
    s = sp.Matrix([[p_lat + sigma]])
    gain = sp.Matrix([[p_lat], [1]]) * s.inv()
    delta = gain * sp.Matrix([[innovation]])
    p_post = p_pred - gain * s * gain.T
    return gain, delta, p_post


if __name__ == "__main__":
    k, d, p = evaluate()
    print("K =", k.T, "delta =", d.T, "P_post =", p.tolist())
