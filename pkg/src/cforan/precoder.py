"""Weighted-MMSE precoding with per-O-RU power control and dual ascent on
minimum-rate multipliers.

The downlink rate of user k is r_k = log2 det(I + Gamma_k) with the SINR
matrix Gamma_k built from effective channels Psi_{k,i} = sum_l H_{k,l} V_{i,l}.
One solver pass updates the receive filters U, the weight matrices W and the
precoders V in that order; V is refreshed one O-RU at a time (fixed index
order) so that every block update is an exact constrained minimizer and the
weighted-utility surrogate never decreases within a pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

from .config import PrecoderConfig
from .net_model import Association, ChannelSet

UtilityKind = Literal["sum_rate", "sum_log_rate", "energy_saving"]


class NumericError(RuntimeError):
    pass


@dataclass
class UtilitySpec:
    """Objective + constraints of the precoding subproblem."""

    kind: UtilityKind = "sum_rate"
    r_min_mbps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    p_max_w: float = 1.0
    dual_step: float = 0.05             # zeta_k per Mbps of violation

    def r_min_for(self, num_users: int) -> np.ndarray:
        r = np.atleast_1d(np.asarray(self.r_min_mbps, dtype=float))
        if r.size == 0:
            return np.zeros(num_users)
        if r.size == 1:
            return np.full(num_users, float(r[0]))
        if r.size != num_users:
            raise ValueError("r_min length does not match user count")
        return r


@dataclass
class PrecodingState:
    V: np.ndarray                       # (K, L, n_tx, n_streams) complex
    U: np.ndarray                       # (K, n_rx, n_streams) complex
    W: np.ndarray                       # (K, n_streams, n_streams) complex
    mu: np.ndarray                      # (K,) >= 0
    alpha: np.ndarray                   # (K,) > 0
    rates: np.ndarray                   # (K,) bit/s/Hz
    rate_mbps: np.ndarray               # (K,)
    converged: bool = False
    iterations: int = 0

    def per_oru_power(self) -> np.ndarray:
        return np.einsum("klts,klts->l", self.V, np.conj(self.V)).real


def effective_matrices(channels: ChannelSet, assoc: Association,
                       V: np.ndarray) -> np.ndarray:
    """Psi[k, i] = sum over serving O-RUs l of user i of H[k,l] @ V[i,l]."""
    H = channels.H
    if V.shape[:2] != H.shape[:2] or V.shape[2] != H.shape[3]:
        raise ValueError(f"precoder shape {V.shape} inconsistent with channels {H.shape}")
    # V is zero outside serving sets, so the full sum over l is exact.
    return np.matmul(H[:, None], V[None]).sum(axis=2)


def sinr_and_rate(psi: np.ndarray, noise_variance: float
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Per-user SINR matrix and rate r_k = log2 det(I + Gamma_k)."""
    if noise_variance <= 0:
        raise ValueError("noise variance must be positive")
    if not np.all(np.isfinite(psi)):
        raise NumericError("non-finite effective matrices")
    num_users, _, n_rx, _ = psi.shape
    eye = np.eye(n_rx, dtype=complex)
    # sum_i Psi_ki Psi_ki^H as one batched product over the stacked columns
    stacked = psi.transpose(0, 2, 1, 3).reshape(num_users, n_rx, -1)
    outer = stacked @ stacked.conj().transpose(0, 2, 1)
    diag = np.arange(num_users)
    psi_kk = psi[diag, diag]
    signal = psi_kk @ psi_kk.conj().transpose(0, 2, 1)
    interf = outer - signal + noise_variance * eye[None]
    gamma = signal @ np.linalg.inv(interf)
    # log det via the Hermitian forms: det(I + S J^-1) = det(J + S)/det(J)
    _, ld_full = np.linalg.slogdet(interf + signal)
    _, ld_noise = np.linalg.slogdet(interf)
    rates = np.maximum(0.0, (ld_full - ld_noise) / np.log(2.0))
    return gamma, rates


def priority_weights(rates: np.ndarray, mu: np.ndarray, spec: UtilitySpec,
                     cfg: PrecoderConfig | None = None) -> np.ndarray:
    """alpha_k = U'_k(r_k) + mu_k, clamped to [alpha_floor, alpha_cap].

    U' is 1 for sum-rate, 1/max(r, floor) for sum-log-rate and 0 for the
    energy-saving objective (rates enter only through the constraints).
    """
    cfg = cfg or PrecoderConfig()
    rates = np.asarray(rates, dtype=float)
    if spec.kind == "sum_rate":
        deriv = np.ones_like(rates)
    elif spec.kind == "sum_log_rate":
        deriv = 1.0 / np.maximum(rates, cfg.rate_floor)
    elif spec.kind == "energy_saving":
        deriv = np.zeros_like(rates)
    else:
        raise ValueError(f"unknown utility kind {spec.kind!r}")
    return np.clip(deriv + np.asarray(mu, dtype=float), cfg.alpha_floor, cfg.alpha_cap)


def dual_ascent_update(mu: np.ndarray, rates_mbps: np.ndarray,
                       spec: UtilitySpec) -> np.ndarray:
    """mu_k <- max(0, mu_k + zeta_k (R_min_k - r_k)), projected on mu >= 0."""
    mu = np.asarray(mu, dtype=float)
    r_min = spec.r_min_for(mu.size)
    return np.maximum(0.0, mu + spec.dual_step * (r_min - np.asarray(rates_mbps)))


def initial_precoders(channels: ChannelSet, assoc: Association,
                      p_max_w: float, n_streams: int) -> np.ndarray:
    """Strongest right-singular-vector beams, equal power split per O-RU."""
    H = channels.H
    num_users, num_orus, _, n_tx = H.shape
    V = np.zeros((num_users, num_orus, n_tx, n_streams), dtype=complex)
    for l in range(num_orus):
        served = assoc.served_sets[l]
        if not served:
            continue
        per_user = p_max_w / len(served)
        for k in served:
            _, _, vh = np.linalg.svd(H[k, l])
            basis = vh.conj().T[:, :n_streams]
            V[k, l] = basis * np.sqrt(per_user / n_streams)
    return V


def _solve_oru_block(A: np.ndarray, b: np.ndarray, p_budget: float,
                     cfg: PrecoderConfig) -> np.ndarray:
    """min over V of sum_k [V_k^H A V_k - 2 Re tr(V_k^H b_k)] s.t. power <= p.

    A is Hermitian PSD and shared by all users of the O-RU, so the KKT
    solution is V_k = (A + xi I)^-1 b_k with xi >= 0 found by bisection on
    the eigen-decomposed power curve.
    """
    eigval, eigvec = np.linalg.eigh(A)
    eigval = np.maximum(eigval, 0.0)
    bt = np.matmul(eigvec.conj().T[None], b)             # rotated rhs (k, m, s)
    b2 = (np.abs(bt) ** 2).sum(axis=(0, 2))              # per eigen-mode mass
    tot = float(b2.sum())
    scale = float(eigval.max()) if eigval.size else 0.0
    # scalar lists: the bisection below runs dozens of evaluations
    lam_list = [float(v) for v in eigval]
    b2_list = [float(v) for v in b2]

    def power(xi: float) -> float:
        acc = 0.0
        for lam_m, b2_m in zip(lam_list, b2_list):
            d = lam_m + xi
            if d > 0.0:
                acc += b2_m / (d * d)
        return acc

    def solution(xi: float) -> np.ndarray:
        denom = eigval + xi
        inv = np.zeros_like(denom)
        np.divide(1.0, denom, out=inv, where=denom > 1e-14 * max(scale, 1.0))
        return np.matmul((eigvec * inv[None, :])[None], bt)

    if tot <= 0.0:
        return np.zeros_like(b)

    null = eigval <= 1e-12 * max(scale, 1.0)
    unbounded = bool(np.any(null)) and float(b2[null].sum()) > 1e-18 * tot
    if not unbounded and power(0.0) <= p_budget * (1.0 + cfg.power_bisect_rel_tol):
        return solution(0.0)

    # bracket: power(xi) <= tot / xi^2, so xi_hi below always lands feasible
    lo = 0.0
    hi = np.sqrt(tot / p_budget) + 1e-30
    guard = 0
    while power(hi) > p_budget and guard < 80:
        hi *= 2.0
        guard += 1
    if power(hi) > p_budget:
        raise NumericError("power bisection failed to bracket the budget "
                           f"(budget={p_budget}, power={power(hi)})")
    xi = hi
    for _ in range(cfg.power_bisect_max_iters):
        mid = 0.5 * (lo + hi)
        p_mid = power(mid)
        if abs(p_mid - p_budget) <= cfg.power_bisect_rel_tol * p_budget:
            xi = mid
            break
        if p_mid > p_budget:
            lo = mid
        else:
            hi = mid
        xi = hi                                   # feasible side
    return solution(xi)


def wmmse_iteration(state: PrecodingState, channels: ChannelSet,
                    assoc: Association, spec: UtilitySpec,
                    z: np.ndarray | None = None,
                    cfg: PrecoderConfig | None = None) -> PrecodingState:
    """One U -> W -> V pass with priority weights frozen.

    Inactive O-RUs keep zero precoders; active ones satisfy their power
    budget exactly (complementary slackness via bisection on xi_l).
    """
    cfg = cfg or PrecoderConfig()
    H = channels.H
    num_users, num_orus, n_rx, n_tx = H.shape
    n_streams = state.V.shape[-1]
    sigma2 = channels.noise_variance
    alpha = state.alpha
    if z is None:
        z = np.ones(num_orus)

    psi = effective_matrices(channels, assoc, state.V)

    # receive filters: U_k = (sum_i Psi_ki Psi_ki^H + sigma^2 I)^-1 Psi_kk
    eye_r = np.eye(n_rx, dtype=complex)
    stacked = psi.transpose(0, 2, 1, 3).reshape(num_users, n_rx, -1)
    cov = stacked @ stacked.conj().transpose(0, 2, 1) + sigma2 * eye_r[None]
    diag = np.arange(num_users)
    psi_kk = psi[diag, diag]
    U = np.linalg.solve(cov, psi_kk)

    # weights: W_k = (I - U_k^H Psi_kk)^-1, symmetrized against drift
    eye_s = np.eye(n_streams, dtype=complex)
    W = np.linalg.inv(eye_s[None] - U.conj().transpose(0, 2, 1) @ psi_kk)
    W = 0.5 * (W + np.conj(np.swapaxes(W, 1, 2)))

    UW = U @ W                                            # also equals (W U^H)^H
    alpha_x = alpha[:, None, None] * (UW @ U.conj().transpose(0, 2, 1))
    H_herm = H.conj().transpose(0, 1, 3, 2)               # (K, L, n_tx, n_rx)
    # HX[i, l] = alpha_i H_il^H X_i and A_l = sum_i HX[i, l] H_il
    HX = H_herm @ alpha_x[:, None]
    A_all = np.matmul(HX, H).sum(axis=0)
    A_all = 0.5 * (A_all + np.conj(np.swapaxes(A_all, 1, 2)))

    # precoders, one O-RU at a time; Psi kept current so each block update
    # is exact given all previously refreshed blocks
    V = state.V.copy()
    psi_cur = psi.copy()
    for l in range(num_orus):
        if not z[l] or not assoc.served_sets[l]:
            if np.any(V[:, l]):
                psi_cur -= np.matmul(H[:, l][:, None], V[:, l][None]).reshape(psi_cur.shape)
                V[:, l] = 0.0
            continue
        served = list(assoc.served_sets[l])
        A = A_all[l]
        # b_kl = alpha_k H_kl^H (W U^H)^H - sum_i alpha_i H_il^H X_i Z_ikl
        # with Z_ikl = Psi_ik - H_il V_kl, and the V_kl part folding into A V_kl
        direct = alpha[served, None, None] * (H_herm[served, l] @ UW[served])
        cross = np.tensordot(HX[:, l], psi_cur[:, served],
                             axes=([0, 2], [0, 2])).transpose(1, 0, 2)
        v_old = V[served, l]
        b = direct - cross + A[None] @ v_old
        v_new = _solve_oru_block(A, b, spec.p_max_w, cfg)
        V[served, l] = v_new
        psi_cur[:, served] += np.matmul(H[:, l][:, None], (v_new - v_old)[None])

    _, rates = sinr_and_rate(psi_cur, sigma2)
    rate_mbps = rates * channels.bandwidth_hz / 1e6
    return replace(state, V=V, U=U, W=W, rates=rates, rate_mbps=rate_mbps)


def initial_state(channels: ChannelSet, assoc: Association, spec: UtilitySpec,
                  cfg: PrecoderConfig | None = None) -> PrecodingState:
    cfg = cfg or PrecoderConfig()
    num_users, num_orus, n_rx, n_tx = channels.H.shape
    n_streams = min(n_rx, n_tx)
    V = initial_precoders(channels, assoc, spec.p_max_w, n_streams)
    mu = np.zeros(num_users)
    alpha = priority_weights(np.zeros(num_users), mu, spec, cfg)
    state = PrecodingState(
        V=V,
        U=np.zeros((num_users, n_rx, n_streams), dtype=complex),
        W=np.tile(np.eye(n_streams, dtype=complex), (num_users, 1, 1)),
        mu=mu, alpha=alpha,
        rates=np.zeros(num_users), rate_mbps=np.zeros(num_users),
    )
    psi = effective_matrices(channels, assoc, V)
    _, rates = sinr_and_rate(psi, channels.noise_variance)
    state.rates = rates
    state.rate_mbps = rates * channels.bandwidth_hz / 1e6
    state.alpha = priority_weights(rates, mu, spec, cfg)
    return state


def solve(channels: ChannelSet, assoc: Association, spec: UtilitySpec,
          z: np.ndarray | None = None,
          warm_start: Optional[PrecodingState] = None,
          cfg: PrecoderConfig | None = None,
          update_weights: bool = True,
          alpha: np.ndarray | None = None,
          mu: np.ndarray | None = None,
          log: Optional[list] = None) -> PrecodingState:
    """Alternate WMMSE passes with priority-weight and dual updates until the
    rates settle.

    With update_weights=False the multipliers and weights stay as provided
    (the coordination agents own them); only the inner supremum is solved.
    Convergence: max rate change below rate_tol for `patience` consecutive
    passes, or a single change below rate_tol/10 (fixed-point fast exit).
    A warm start whose first pass already stays below rate_tol counts as a
    confirmed fixed point. Non-convergence is flagged, not fatal.
    """
    cfg = cfg or PrecoderConfig()
    num_users, num_orus = channels.H.shape[:2]
    if z is None:
        z = np.ones(num_orus)
    z = np.asarray(z)

    if warm_start is not None:
        state = replace(warm_start, converged=False, iterations=0)
        state.V = state.V.copy()
        # zero out precoders at now-inactive or no-longer-serving O-RUs
        mask = np.zeros((num_users, num_orus), dtype=bool)
        for k, serving in enumerate(assoc.serving_sets):
            for l in serving:
                mask[k, l] = bool(z[l])
        state.V[~mask] = 0.0
    else:
        state = initial_state(channels, assoc, spec, cfg)
        state.V[:, ~z.astype(bool)] = 0.0
        if update_weights:
            state.mu = np.zeros(num_users)
            state.alpha = priority_weights(state.rates, state.mu, spec, cfg)
    if mu is not None:
        state.mu = np.asarray(mu, dtype=float).copy()
    if alpha is not None:
        state.alpha = np.asarray(alpha, dtype=float).copy()

    r_min = spec.r_min_for(num_users)
    rescues = np.zeros(num_users, dtype=int)
    streak = 0
    prev = state.rate_mbps.copy()
    for it in range(1, cfg.max_iters + 1):
        state = wmmse_iteration(state, channels, assoc, spec, z, cfg)
        if update_weights:
            state.mu = dual_ascent_update(state.mu, state.rate_mbps, spec)
            state.alpha = priority_weights(state.rates, state.mu, spec, cfg)
            # a constrained user whose precoder collapsed to zero sits in a
            # degenerate fixed point (U_k = 0 keeps V_k = 0 forever); re-seed
            # its beams so the dual ascent has something to amplify
            trapped = (state.rates < 1e-9) & (r_min > 0) & (rescues < 3)
            if np.any(trapped):
                fresh = initial_precoders(channels, assoc, 0.05 * spec.p_max_w,
                                          state.V.shape[-1])
                for k in np.flatnonzero(trapped):
                    state.V[k] = fresh[k]
                    rescues[k] += 1
                state = wmmse_iteration(state, channels, assoc, spec, z, cfg)
        change = float(np.max(np.abs(state.rate_mbps - prev))) if prev.size else 0.0
        prev = state.rate_mbps.copy()
        if log is not None:
            log.append({"iteration": it, "rate_mbps": state.rate_mbps.tolist(),
                        "power_w": state.per_oru_power().tolist(),
                        "mu": state.mu.tolist(), "max_change": change})
        fast_exit = change < cfg.rate_tol_mbps / 10.0 and (it >= 2 or warm_start is not None)
        warm_confirm = warm_start is not None and it == 1 and change < cfg.rate_tol_mbps
        if fast_exit or warm_confirm:
            state.converged = True
            state.iterations = it
            return state
        streak = streak + 1 if change < cfg.rate_tol_mbps else 0
        if streak >= cfg.patience:
            state.converged = True
            state.iterations = it
            return state
    state.converged = False
    state.iterations = cfg.max_iters
    return state
