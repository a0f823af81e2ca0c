"""Hot per-iteration kernels of the Gibbs sweep.

Everything here is numba-compatible and compiled with @njit unless
PERFTRAJ_NUMBA=0, in which case the identical code runs as plain numpy
(slower but bit-for-bit the same draws, since numba's Generator methods
reproduce numpy's streams).  Small-matrix Cholesky work is hand-rolled:
the blocks are tiny (tens of rows) and explicit loops keep both modes
on the same arithmetic.
"""

import numpy as np

from ._jit import maybe_jit

JITTER_STEPS = (0.0, 1e-10, 1e-8, 1e-6)


@maybe_jit
def _cholesky_inplace(A, L):
    """Lower Cholesky of symmetric A into L; False on non-PD pivot."""
    k = A.shape[0]
    for i in range(k):
        for j in range(k):
            L[i, j] = 0.0
    for i in range(k):
        for j in range(i + 1):
            s = A[i, j]
            for m in range(j):
                s -= L[i, m] * L[j, m]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return True


@maybe_jit
def _chol_jitter(A, L):
    """Cholesky with escalating diagonal jitter; True on success."""
    k = A.shape[0]
    scale = 0.0
    for i in range(k):
        scale += A[i, i]
    scale = max(scale / max(k, 1), 1e-300)
    for jit in JITTER_STEPS:
        if jit > 0.0:
            for i in range(k):
                A[i, i] += jit * scale
        if _cholesky_inplace(A, L):
            return True
    return False


@maybe_jit
def _forward_solve(L, b, x):
    k = L.shape[0]
    for i in range(k):
        s = b[i]
        for j in range(i):
            s -= L[i, j] * x[j]
        x[i] = s / L[i, i]


@maybe_jit
def _back_solve_t(L, b, x):
    """Solve L^T x = b for lower-triangular L."""
    k = L.shape[0]
    for i in range(k - 1, -1, -1):
        s = b[i]
        for j in range(i + 1, k):
            s -= L[j, i] * x[j]
        x[i] = s / L[i, i]


@maybe_jit
def _precision_draw(rng, L, lin, out):
    """Draw N(Q^-1 lin, Q^-1) given the Cholesky factor L of Q."""
    k = L.shape[0]
    tmp = np.empty(k)
    mean = np.empty(k)
    _forward_solve(L, lin, tmp)
    _back_solve_t(L, tmp, mean)
    zvec = np.empty(k)
    for i in range(k):
        zvec[i] = rng.standard_normal()
    noise = np.empty(k)
    _back_solve_t(L, zvec, noise)
    for i in range(k):
        out[i] = mean[i] + noise[i]


@maybe_jit
def _trend_precision(i, K, seas_ptr, omega_mu, omega_eta, sigma2_mu,
                     sigma2_eta, Lam):
    """Random-walk prior precision of athlete i's K season-start values:
    Phi^T Psi^-1 Phi with Psi = diag(omega_mu*s2_mu, omega_eta_s*s2_eta)."""
    d = np.empty(K)
    d[0] = 1.0 / (omega_mu[i] * sigma2_mu)
    for j in range(1, K):
        d[j] = 1.0 / (omega_eta[seas_ptr[i] + j - 1] * sigma2_eta)
    for a in range(K):
        for b in range(K):
            Lam[a, b] = 0.0
    for k in range(K):
        Lam[k, k] += d[k]
        if k + 1 < K:
            Lam[k, k] += d[k + 1]
            Lam[k, k + 1] -= d[k + 1]
            Lam[k + 1, k] -= d[k + 1]


@maybe_jit
def athlete_sweep(rng, i_start, i_end,
                  y, A, X, C, zfrac, obs_off, seas_ptr, srow_off, knot_ptr, S,
                  delta, zeta, alpha, kappa, omega, sigma2_i,
                  sigma2_mu, sigma2_eta, omega_mu, omega_eta,
                  lambda2, tau2, c2, d2, beta,
                  beta_i, beta_is, F):
    """Joint update of (beta_i, F_i) then each beta_is, athletes
    i_start..i_end-1.  Marginalizes the season-level coefficients out of
    the (beta_i, F_i) draw, then redraws them from their Gaussian
    conditionals.  Mutates beta_i, beta_is, F in place."""
    G = C.shape[1]
    nd = A.shape[1]
    p = X.shape[1]
    c_alpha = alpha / np.sqrt(1.0 + alpha * alpha)
    ok = True
    for i in range(i_start, i_end):
        K = S[i] + 1
        dim = G + K
        Q1 = np.zeros((dim, dim))
        P1 = np.zeros(dim)
        for g in range(G):
            prec = 1.0 / (tau2[i] * d2[g])
            Q1[g, g] = prec
            P1[g] = prec * beta[g]
        Lam = np.empty((K, K))
        _trend_precision(i, K, seas_ptr, omega_mu, omega_eta, sigma2_mu,
                         sigma2_eta, Lam)
        for a in range(K):
            for b in range(K):
                Q1[G + a, G + b] += Lam[a, b]

        for s in range(S[i]):
            rlo = srow_off[seas_ptr[i] + s]
            rhi = srow_off[seas_ptr[i] + s + 1]
            ns = rhi - rlo
            if ns == 0:
                continue
            V = np.empty((ns, ns))
            for a in range(ns):
                for b in range(a + 1):
                    acc = 0.0
                    for g in range(G):
                        acc += C[rlo + a, g] * c2[g] * C[rlo + b, g]
                    V[a, b] = lambda2[i] * acc
                    V[b, a] = V[a, b]
                V[a, a] += sigma2_i[i] * omega[rlo + a]
            LV = np.empty((ns, ns))
            if not _chol_jitter(V, LV):
                ok = False
                continue
            U = np.zeros((ns, dim))
            r = np.empty(ns)
            for a in range(ns):
                row = rlo + a
                for g in range(G):
                    U[a, g] = C[row, g]
                U[a, G + s] = 1.0 - zfrac[row]
                U[a, G + s + 1] = zfrac[row]
                pred = 0.0
                for k in range(nd):
                    pred += A[row, k] * delta[k]
                for k in range(p):
                    pred += X[row, k] * zeta[k]
                r[a] = y[row] - pred - c_alpha * kappa[row]
            # Q1 += U^T V^-1 U, P1 += U^T V^-1 r via columnwise solves
            tmp = np.empty(ns)
            col = np.empty(ns)
            VinvU = np.empty((ns, dim))
            for j in range(dim):
                for a in range(ns):
                    col[a] = U[a, j]
                _forward_solve(LV, col, tmp)
                _back_solve_t(LV, tmp, col)
                for a in range(ns):
                    VinvU[a, j] = col[a]
            for a in range(ns):
                for jrow in range(dim):
                    ua = U[a, jrow]
                    if ua != 0.0:
                        for jcol in range(dim):
                            Q1[jrow, jcol] += ua * VinvU[a, jcol]
            _forward_solve(LV, r, tmp)
            _back_solve_t(LV, tmp, col)
            for jrow in range(dim):
                acc = 0.0
                for a in range(ns):
                    acc += U[a, jrow] * col[a]
                P1[jrow] += acc

        L1 = np.empty((dim, dim))
        if not _chol_jitter(Q1, L1):
            ok = False
            continue
        draw = np.empty(dim)
        _precision_draw(rng, L1, P1, draw)
        for g in range(G):
            beta_i[i, g] = draw[g]
        for k in range(K):
            F[knot_ptr[i] + k] = draw[G + k]

        # Season-level coefficients given the fresh (beta_i, F_i).
        for s in range(S[i]):
            Q2 = np.zeros((G, G))
            lin = np.empty(G)
            for g in range(G):
                prec = 1.0 / (lambda2[i] * c2[g])
                Q2[g, g] = prec
                lin[g] = prec * beta_i[i, g]
            rlo = srow_off[seas_ptr[i] + s]
            rhi = srow_off[seas_ptr[i] + s + 1]
            for row in range(rlo, rhi):
                w = 1.0 / (sigma2_i[i] * omega[row])
                pred = 0.0
                for k in range(nd):
                    pred += A[row, k] * delta[k]
                for k in range(p):
                    pred += X[row, k] * zeta[k]
                trend = (1.0 - zfrac[row]) * F[knot_ptr[i] + s] \
                    + zfrac[row] * F[knot_ptr[i] + s + 1]
                resid = y[row] - pred - c_alpha * kappa[row] - trend
                for g in range(G):
                    cg = C[row, g]
                    if cg != 0.0:
                        lin[g] += w * cg * resid
                        for h in range(G):
                            Q2[g, h] += w * cg * C[row, h]
            L2 = np.empty((G, G))
            if not _chol_jitter(Q2, L2):
                ok = False
                continue
            bdraw = np.empty(G)
            _precision_draw(rng, L2, lin, bdraw)
            for g in range(G):
                beta_is[seas_ptr[i] + s, g] = bdraw[g]
    return ok


@maybe_jit
def population_stats(y, A, X, C, zfrac, obs_off, seas_ptr, srow_off, knot_ptr,
                     S, row_season_global, kappa, omega, sigma2_i, alpha,
                     sigma2_mu, sigma2_eta, omega_mu, omega_eta,
                     beta, beta_is, sigma2_beta, delta_prec, Kmax):
    """Sufficient statistics of the marginalized population update.

    The season-start values F_i are integrated out of the joint update of
    gamma = (delta, zeta, beta): returns the posterior precision Pstar and
    linear term Qlin of gamma, plus the per-athlete pieces (R, T, and the
    Cholesky factors of the F-conditional precisions) needed to redraw
    every F_i once gamma is drawn.
    """
    G = C.shape[1]
    nd = A.shape[1]
    p = X.shape[1]
    nfree = nd + p
    q = nfree + G
    M = S.shape[0]
    c_alpha = alpha / np.sqrt(1.0 + alpha * alpha)

    Pstar = np.zeros((q, q))
    Qlin = np.zeros(q)
    for k in range(nfree):
        Pstar[k, k] = delta_prec
    for g in range(G):
        Pstar[nfree + g, nfree + g] = 1.0 / sigma2_beta[g]

    tot_knots = knot_ptr[M]
    R_flat = np.zeros((tot_knots, q))
    T_flat = np.zeros(tot_knots)
    psi_chol = np.zeros((M, Kmax, Kmax))
    ok = True

    u = np.empty(q)
    for i in range(M):
        K = S[i] + 1
        k0 = knot_ptr[i]
        UWU = np.zeros((q, q))
        UWr = np.zeros(q)
        ZWZ = np.zeros((K, K))
        Psi = np.empty((K, K))
        _trend_precision(i, K, seas_ptr, omega_mu, omega_eta, sigma2_mu,
                         sigma2_eta, Psi)
        for row in range(obs_off[i], obs_off[i + 1]):
            w = 1.0 / (sigma2_i[i] * omega[row])
            for k in range(nd):
                u[k] = A[row, k]
            for k in range(p):
                u[nd + k] = X[row, k]
            resid = y[row] - c_alpha * kappa[row]
            sg = row_season_global[row]
            for g in range(G):
                u[nfree + g] = C[row, g]
                resid -= C[row, g] * (beta_is[sg, g] - beta[g])
            s_local = sg - seas_ptr[i]
            w0 = 1.0 - zfrac[row]
            w1 = zfrac[row]
            for a in range(q):
                ua = u[a] * w
                if ua != 0.0:
                    for b in range(q):
                        UWU[a, b] += ua * u[b]
                    UWr[a] += ua * resid
                R_flat[k0 + s_local, a] += w * w0 * u[a]
                R_flat[k0 + s_local + 1, a] += w * w1 * u[a]
            T_flat[k0 + s_local] += w * w0 * resid
            T_flat[k0 + s_local + 1] += w * w1 * resid
            ZWZ[s_local, s_local] += w * w0 * w0
            ZWZ[s_local, s_local + 1] += w * w0 * w1
            ZWZ[s_local + 1, s_local] += w * w1 * w0
            ZWZ[s_local + 1, s_local + 1] += w * w1 * w1
        for a in range(K):
            for b in range(K):
                Psi[a, b] += ZWZ[a, b]
        Lpsi = np.empty((K, K))
        if not _chol_jitter(Psi, Lpsi):
            ok = False
            continue
        for a in range(K):
            for b in range(K):
                psi_chol[i, a, b] = Lpsi[a, b]
        # Pstar += UWU - R^T Psi^-1 R; Qlin += UWr - R^T Psi^-1 T
        tmp = np.empty(K)
        col = np.empty(K)
        for j in range(q):
            for a in range(K):
                col[a] = R_flat[k0 + a, j]
            _forward_solve(Lpsi, col, tmp)
            _back_solve_t(Lpsi, tmp, col)
            for jrow in range(q):
                acc = 0.0
                for a in range(K):
                    acc += R_flat[k0 + a, jrow] * col[a]
                Pstar[jrow, j] -= acc
            acct = 0.0
            for a in range(K):
                acct += T_flat[k0 + a] * col[a]
            Qlin[j] -= acct
        for a in range(q):
            for b in range(q):
                Pstar[a, b] += UWU[a, b]
            Qlin[a] += UWr[a]
    return Pstar, Qlin, R_flat, T_flat, psi_chol, ok


@maybe_jit
def redraw_trend_values(rng, gamma, R_flat, T_flat, psi_chol, knot_ptr, S, F):
    """Redraw every athlete's season-start values from the Gaussian
    conditional given the freshly drawn population block gamma."""
    M = S.shape[0]
    q = gamma.shape[0]
    for i in range(M):
        K = S[i] + 1
        k0 = knot_ptr[i]
        lin = np.empty(K)
        for a in range(K):
            acc = T_flat[k0 + a]
            for j in range(q):
                acc -= R_flat[k0 + a, j] * gamma[j]
            lin[a] = acc
        L = psi_chol[i, :K, :K].copy()
        draw = np.empty(K)
        _precision_draw(rng, L, lin, draw)
        for a in range(K):
            F[k0 + a] = draw[a]


# ---------------------------------------------------------------------------
# generalized inverse Gaussian draws
#
# Two-parameter form: density proportional to x^(lam-1) exp(-omega(x+1/x)/2)
# with lam >= 0, omega > 0.  Three exact-rejection regimes: ratio-of-uniforms
# with mode shift (large lam or omega), plain ratio-of-uniforms, and a
# three-piece envelope (uniform / power / exponential) for lam < 1 with
# small omega, where the plain ROU acceptance rate collapses.

@maybe_jit
def _gig_logq(x, lam, omega):
    return (lam - 1.0) * np.log(x) - 0.5 * omega * (x + 1.0 / x)


@maybe_jit
def _gig_mode(lam, omega):
    if lam >= 1.0:
        return (np.sqrt((lam - 1.0) ** 2 + omega * omega) + (lam - 1.0)) / omega
    return omega / (np.sqrt((1.0 - lam) ** 2 + omega * omega) + (1.0 - lam))


@maybe_jit
def _gig_rou_noshift(rng, lam, omega):
    m = _gig_mode(lam, omega)
    lgm = _gig_logq(m, lam, omega)
    # maximizer of x^2 * quasi-density, for the u-bound
    xp = (np.sqrt((lam + 1.0) ** 2 + omega * omega) + (lam + 1.0)) / omega
    log_ratio = np.log(xp) + 0.5 * (_gig_logq(xp, lam, omega) - lgm)
    for _ in range(10000):
        u = rng.uniform(0.0, 1.0)
        v = rng.uniform(0.0, 1.0)
        if v <= 0.0:
            continue
        x = np.exp(log_ratio) * u / v
        if 2.0 * np.log(v) <= _gig_logq(x, lam, omega) - lgm:
            return x
    return m


@maybe_jit
def _gig_rou_shift(rng, lam, omega):
    m = _gig_mode(lam, omega)
    lgm = _gig_logq(m, lam, omega)
    # stationary points of (x - m) * sqrt(quasi-density): cubic roots
    a = -(m + 2.0 * (lam + 1.0) / omega)
    b = 2.0 * (lam - 1.0) * m / omega - 1.0
    c = m
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    arg = -q / (2.0 * np.sqrt(-((p / 3.0) ** 3)))
    arg = min(max(arg, -1.0), 1.0)
    fi = np.arccos(arg)
    fak = 2.0 * np.sqrt(-p / 3.0)
    y1 = fak * np.cos(fi / 3.0) - a / 3.0
    y2 = fak * np.cos(fi / 3.0 + 4.0 * np.pi / 3.0) - a / 3.0
    uplus = (y1 - m) * np.exp(0.5 * (_gig_logq(y1, lam, omega) - lgm))
    uminus = (y2 - m) * np.exp(0.5 * (_gig_logq(y2, lam, omega) - lgm))
    for _ in range(10000):
        u = rng.uniform(uminus, uplus)
        v = rng.uniform(0.0, 1.0)
        if v <= 0.0:
            continue
        x = u / v + m
        if x > 0.0 and 2.0 * np.log(v) <= _gig_logq(x, lam, omega) - lgm:
            return x
    return m


@maybe_jit
def _gig_three_piece(rng, lam, omega):
    """lam in [0, 1), small omega: uniform envelope below x0, power-law
    envelope on (x0, 2/omega], exponential tail beyond."""
    m = _gig_mode(lam, omega)
    lgm = _gig_logq(m, lam, omega)
    x0 = omega / (1.0 - lam)
    xs = max(x0, 2.0 / omega)
    # piece areas relative to the mode value
    a0 = x0
    if xs > x0:
        if lam > 0.0:
            a1 = np.exp(-omega - lgm) * (xs**lam - x0**lam) / lam
        else:
            a1 = np.exp(-omega - lgm) * np.log(xs / x0)
    else:
        a1 = 0.0
    a2 = np.exp((lam - 1.0) * np.log(xs) - 0.5 * omega * xs - lgm) \
        * 2.0 / omega
    total = a0 + a1 + a2
    for _ in range(10000):
        w = rng.uniform(0.0, 1.0) * total
        u = rng.uniform(0.0, 1.0)
        if u <= 0.0:
            continue
        if w <= a0:
            x = x0 * w / a0
            if x <= 0.0:
                continue
            logacc = _gig_logq(x, lam, omega) - lgm
        elif w <= a0 + a1:
            if lam > 0.0:
                x = (x0**lam + (w - a0) / a1 * (xs**lam - x0**lam)) ** (1.0 / lam)
            else:
                x = x0 * np.exp((w - a0) / a1 * np.log(xs / x0))
            logacc = -0.5 * omega * (x + 1.0 / x) + omega
        else:
            x = xs + 2.0 / omega * rng.exponential(1.0)
            logacc = (lam - 1.0) * np.log(x / xs) - 0.5 * omega / x
        if np.log(u) <= logacc:
            return x
    return m


@maybe_jit
def _gig_gamma_envelope(rng, lam, omega):
    """lam > 0 with omega near 0: the density is a Gamma(lam, omega/2)
    kernel damped by exp(-omega/(2x)); exact rejection with the gamma
    envelope (acceptance -> 1 as omega -> 0).  The ROU constructions
    degrade numerically in this regime."""
    for _ in range(100000):
        y = rng.gamma(lam, 2.0 / omega)
        if y < 1e-300:
            continue
        u = rng.uniform(0.0, 1.0)
        if u <= 0.0:
            continue
        if np.log(u) <= -0.5 * omega / y:
            return y
    return 2.0 * lam / omega


@maybe_jit
def gig_two_param(rng, lam, omega):
    """One draw with density proportional to x^(lam-1) e^(-omega(x+1/x)/2);
    lam may be negative (handled by the 1/x symmetry)."""
    lam_abs = abs(lam)
    if omega < 1e-6 and lam_abs > 0.0:
        x = _gig_gamma_envelope(rng, lam_abs, omega)
    elif lam_abs > 2.0 or omega > 3.0:
        x = _gig_rou_shift(rng, lam_abs, omega)
    elif lam_abs >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        x = _gig_rou_noshift(rng, lam_abs, omega)
    else:
        x = _gig_three_piece(rng, lam_abs, omega)
    if lam < 0.0:
        return 1.0 / x
    return x


@maybe_jit
def gig_vector(rng, lam, chi, psi, out):
    """Elementwise GIG(lam, chi, psi) draws for strictly interior
    parameters (chi > 0, psi > 0).  Output floored at 1e-300 so
    deeply shrunk draws cannot underflow the positivity invariant."""
    for i in range(lam.shape[0]):
        omega = np.sqrt(chi[i] * psi[i])
        scale = np.sqrt(chi[i] / psi[i])
        out[i] = max(scale * gig_two_param(rng, lam[i], omega), 1e-300)
