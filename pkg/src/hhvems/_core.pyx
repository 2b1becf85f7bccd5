# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the hybrid-vehicle horizon problem.

Mirrors control_model, cost, qp, solver_ddp and solver_sgdm for a single
HHVProblem whose parameters arrive flattened by kernels.pack().
"""
import numpy as np

from libc.math cimport asin, cos, fabs, fmax, fmin, pow, sin, sqrt
from libc.float cimport DBL_EPSILON

cdef enum:
    NX = 4
    NU = 2
    NPRM = 57
    QN = 8           # max QP variables (2 inputs + 4 slacks, padded)
    QM = 16          # max QP rows

cdef double TWO_PI = 6.283185307179586


cdef struct Prm:
    double m_veh, C_d, C_r, rho, g, r, k1, k2_lo, k2_hi, v_sw, I_eng, Vm_max, p_floor
    double pmu0, pmu1, pmu2, pkap1, pkap2
    double mmu0, mmu1, mmu2, mkap1, mkap2
    double V_ha, p_ha, gam, p_lp, CL, m1, m2
    double c0, c1, c11, c2, c3, t0, t1, t2, P_max
    double K1, K2, K3, b0, b1, b2
    double n_min, n_max, p_min, p_max, u1_min, u1_max, u2_min, u2_max
    double p_set, dt, sgain
    int use_pen
    int nk
    double zeta, glo, ghi
    double* ga
    double* gc


cdef int load(const double[::1] prm, const double[::1] grade, Prm* P) except -1:
    if prm.shape[0] != NPRM:
        raise ValueError(f"expected {NPRM} parameters, got {prm.shape[0]}")
    cdef const double* a = &prm[0]
    P.m_veh, P.C_d, P.C_r, P.rho, P.g, P.r = a[0], a[1], a[2], a[3], a[4], a[5]
    P.k1, P.k2_lo, P.k2_hi, P.v_sw, P.I_eng, P.Vm_max, P.p_floor = a[6], a[7], a[8], a[9], a[10], a[11], a[12]
    P.pmu0, P.pmu1, P.pmu2, P.pkap1, P.pkap2 = a[13], a[14], a[15], a[16], a[17]
    P.mmu0, P.mmu1, P.mmu2, P.mkap1, P.mkap2 = a[18], a[19], a[20], a[21], a[22]
    P.V_ha, P.p_ha, P.gam, P.p_lp, P.CL, P.m1, P.m2 = a[23], a[24], a[25], a[26], a[27], a[28], a[29]
    P.c0, P.c1, P.c11, P.c2, P.c3 = a[30], a[31], a[32], a[33], a[34]
    P.t0, P.t1, P.t2, P.P_max = a[35], a[36], a[37], a[38]
    P.K1, P.K2, P.K3, P.b0, P.b1, P.b2 = a[39], a[40], a[41], a[42], a[43], a[44]
    P.n_min, P.n_max, P.p_min, P.p_max = a[45], a[46], a[47], a[48]
    P.u1_min, P.u1_max, P.u2_min, P.u2_max = a[49], a[50], a[51], a[52]
    P.p_set, P.dt, P.sgain = a[53], a[54], a[55]
    P.use_pen = 1 if a[56] != 0.0 else 0
    cdef int nk = <int>grade[0]
    cdef int i
    P.nk = 0
    if nk > 0:
        if grade.shape[0] != 4 + 2 * nk:
            raise ValueError("malformed grade array")
        for i in range(nk):
            if grade[4 + i] != 0.0:
                P.nk = nk
                break
        P.zeta, P.glo, P.ghi = grade[1], grade[2], grade[3]
        P.ga = <double*>&grade[4]
        P.gc = <double*>&grade[4 + nk]
    return 0


# ---------------------------------------------------------------- static maps

cdef inline double sgn(double a) noexcept nogil:
    return (a > 0) - (a < 0)


cdef inline double k2of(Prm* P, double v) noexcept nogil:
    return P.k2_lo if v < P.v_sw else P.k2_hi


cdef inline double tmax(Prm* P, double n) noexcept nogil:
    cdef double poly = P.t0 + P.t1 * n + P.t2 * n * n
    cdef double cap = P.P_max / fmax(n, 1e-9)
    return fmax(fmin(poly, cap), 0.0)


cdef inline double tmax_dn(Prm* P, double n) noexcept nogil:
    cdef double poly = P.t0 + P.t1 * n + P.t2 * n * n
    cdef double nn = fmax(n, 1e-9)
    if poly <= P.P_max / nn:
        return P.t1 + 2 * P.t2 * n
    return -P.P_max / (nn * nn)


cdef inline double fuel_poly(Prm* P, double n, double T) noexcept nogil:
    return P.c0 + P.c1 * n + P.c11 * n * n + P.c2 * n * T + P.c3 * T * T


cdef inline double capac(Prm* P, double p) noexcept nogil:
    p = fmax(p, 0.0)
    return P.V_ha * pow(P.p_ha, 1 / P.gam) / (P.gam * pow(p + P.p_lp, 1 + 1 / P.gam)) + P.CL


cdef inline double capac_dp(Prm* P, double p) noexcept nogil:
    if not p > 0.0:
        return 0.0
    return -(1 + 1 / P.gam) * P.V_ha * pow(P.p_ha, 1 / P.gam) / (P.gam * pow(p + P.p_lp, 2 + 1 / P.gam))


cdef void grade_eval(Prm* P, double ell, double* phi, double* dphi) noexcept nogil:
    if P.nk == 0:
        phi[0] = 0.0
        dphi[0] = 0.0
        return
    cdef double lc = fmin(fmax(ell, P.glo), P.ghi)
    cdef double s = 0.0, cv = 0.0, d, q
    cdef int i
    for i in range(P.nk):
        d = lc - P.gc[i]
        q = 1.0 + P.zeta * d * d
        s += P.ga[i] * P.zeta * d / sqrt(q)
        d = ell - P.gc[i]
        q = 1.0 + P.zeta * d * d
        cv += P.ga[i] * P.zeta / (q * sqrt(q))
    if ell < P.glo or ell > P.ghi:
        cv = 0.0
    s = fmax(-0.999, fmin(0.999, s))
    phi[0] = asin(s)
    dphi[0] = cv / sqrt(1.0 - s * s)


# ---------------------------------------------------------------- dynamics

cdef void rhs_jac(Prm* P, double* x, double* u, double w, double* f, double* A, double* B) noexcept nogil:
    cdef double ell = x[0], v = x[1], n = x[2], p = x[3]
    cdef double T = P.m1 * u[0], Vp = P.m2 * u[1]
    cdef double phi, dphi
    grade_eval(P, ell, &phi, &dphi)
    cdef double k2 = k2of(P, v), r = P.r
    cdef double F = P.m_veh * w + 0.5 * P.C_d * P.rho * v * v + P.m_veh * P.g * (
        P.C_r * cos(phi) + sin(phi))
    cdef double dF_dv = P.C_d * P.rho * v
    cdef double dF_dl = P.m_veh * P.g * (cos(phi) - P.C_r * sin(phi)) * dphi
    cdef double nm = k2 * v / r
    cdef double Mm = P.mmu0 + P.mmu1 * p + P.mmu2 * fabs(nm)
    cdef bint floored = p <= P.p_floor
    cdef double pf = P.p_floor if floored else p
    cdef double Vm_raw = TWO_PI / pf * (F * r / k2 + Mm)
    cdef double Vm = fmin(fmax(Vm_raw, -P.Vm_max), P.Vm_max)
    cdef double dVm_dp = 0.0, dVm_dv = 0.0, dVm_dl = 0.0
    if fabs(Vm_raw) < P.Vm_max:
        dVm_dp = (0.0 if floored else -Vm_raw / pf) + TWO_PI / pf * P.mmu1
        dVm_dv = TWO_PI / pf * (dF_dv * r / k2 + P.mmu2 * k2 / r * sgn(nm))
        dVm_dl = TWO_PI / pf * (r / k2) * dF_dl
    cdef double k1 = P.k1, I = P.I_eng
    cdef double Mp = P.pmu0 + P.pmu1 * p + P.pmu2 * fabs(n)
    cdef double ndot = (T - k1 * Vp * p / TWO_PI - k1 * Mp) / I
    cdef double Qp = P.pkap1 * p + P.pkap2 * p * fabs(Vp)
    cdef double Qm = P.mkap1 * p + P.mkap2 * p * fabs(Vm)
    cdef double Nflow = k1 * Vp * n / TWO_PI - k2 * Vm * v / (TWO_PI * r) - Qp - Qm
    cdef double C = capac(P, p), Cp = capac_dp(P, p)
    f[0] = v
    f[1] = w
    f[2] = ndot
    f[3] = Nflow / C
    cdef int i
    for i in range(NX * NX):
        A[i] = 0.0
    for i in range(NX * NU):
        B[i] = 0.0
    A[0 * NX + 1] = 1.0
    A[2 * NX + 2] = -k1 * P.pmu2 * sgn(n) / I
    A[2 * NX + 3] = -(k1 * Vp / TWO_PI + k1 * P.pmu1) / I
    cdef double gm = k2 * v / (TWO_PI * r) + P.mkap2 * p * sgn(Vm)
    A[3 * NX + 0] = -gm * dVm_dl / C
    A[3 * NX + 1] = (-k2 * Vm / (TWO_PI * r) - gm * dVm_dv) / C
    A[3 * NX + 2] = k1 * Vp / TWO_PI / C
    cdef double dN_dp = (-gm * dVm_dp - P.pkap1 - P.pkap2 * fabs(Vp) - P.mkap1
                         - P.mkap2 * fabs(Vm))
    A[3 * NX + 3] = dN_dp / C - Nflow * Cp / (C * C)
    B[2 * NU + 0] = P.m1 / I
    B[2 * NU + 1] = -k1 * P.m2 * p / (TWO_PI * I)
    B[3 * NU + 1] = (k1 * P.m2 * n / TWO_PI - P.pkap2 * p * P.m2 * sgn(Vp)) / C


cdef void step_jac(Prm* P, double* x, double* u, double w, double* xn, double* Fx,
                   double* Fu) noexcept nogil:
    """Second-order Taylor step; Fx, Fu may be NULL when only the state is wanted."""
    cdef double f[NX]
    cdef double A[NX * NX]
    cdef double B[NX * NU]
    cdef double dt = P.dt, h = 0.5 * P.dt * P.dt, s
    cdef int a, b, k
    rhs_jac(P, x, u, w, f, A, B)
    for a in range(NX):
        s = 0.0
        for k in range(NX):
            s += A[a * NX + k] * f[k]
        xn[a] = x[a] + dt * f[a] + h * s
    if Fx == NULL:
        return
    for a in range(NX):
        for b in range(NX):
            s = 0.0
            for k in range(NX):
                s += A[a * NX + k] * A[k * NX + b]
            Fx[a * NX + b] = (1.0 if a == b else 0.0) + dt * A[a * NX + b] + h * s
        for b in range(NU):
            s = 0.0
            for k in range(NX):
                s += A[a * NX + k] * B[k * NU + b]
            Fu[a * NU + b] = dt * B[a * NU + b] + h * s


# ---------------------------------------------------------------- cost

cdef void pstar(Prm* P, double* x, double w, double* ps, double* dps) noexcept nogil:
    cdef double phi, dphi
    grade_eval(P, x[0], &phi, &dphi)
    cdef double v = x[1], k2 = k2of(P, v), r = P.r
    cdef double F = P.m_veh * w + 0.5 * P.C_d * P.rho * v * v + P.m_veh * P.g * (
        P.C_r * cos(phi) + sin(phi))
    cdef double preq = P.sgain * (F * r / k2 + P.mmu0 + P.mmu2 * k2 * v / r)
    cdef int i
    for i in range(NX):
        dps[i] = 0.0
    if preq > P.p_set:
        ps[0] = preq
        dps[1] = P.sgain * (r / k2 * P.C_d * P.rho * v + P.mmu2 * k2 / r)
        dps[0] = P.sgain * r / k2 * P.m_veh * P.g * (cos(phi) - P.C_r * sin(phi)) * dphi
    else:
        ps[0] = P.p_set


cdef double partials(Prm* P, double* x, double* xn, double* u, double w, double* gx,
                     double* gxn, double* gu) noexcept nogil:
    cdef double n = x[2], p = x[3], T = P.m1 * u[0]
    cdef double r1 = xn[2] - n
    cdef double g = P.K1 * r1 * r1 + P.K2 * fuel_poly(P, n, T)
    cdef int i
    for i in range(NX):
        gx[i] = 0.0
        gxn[i] = 0.0
    gu[0] = 0.0
    gu[1] = 0.0
    gxn[2] = 2 * P.K1 * r1
    gx[2] = -2 * P.K1 * r1 + P.K2 * (P.c1 + 2 * P.c11 * n + P.c2 * T)
    gu[0] = P.K2 * P.m1 * (P.c2 * n + 2 * P.c3 * T)
    cdef double ps
    cdef double dps[NX]
    pstar(P, x, w, &ps, dps)
    cdef double dp = fmin(p - ps, 0.0)
    g += P.K3 * dp * dp
    gx[3] += 2 * P.K3 * dp
    for i in range(NX):
        gx[i] -= 2 * P.K3 * dp * dps[i]
    if P.use_pen:
        g += penalty_grad(P, n, p, u, &gx[2], gu)
    return g


cdef double penalty_grad(Prm* P, double n, double p, double* u, double* gn,
                         double* gu) noexcept nogil:
    """Adds the penalty slopes into gn[0], gn[1] (n, p) and gu; returns the value."""
    cdef double hi = fmax(n - P.n_max, 0.0), lo = fmax(P.n_min - n, 0.0)
    cdef double Bv = P.b0 * (hi * hi + lo * lo)
    cdef double dn = 2 * P.b0 * (hi - lo)
    hi = 1e-5 * fmax(p - P.p_max, 0.0)
    lo = 1e-5 * fmax(P.p_min - p, 0.0)
    Bv += P.b0 * (hi * hi + lo * lo)
    gn[1] += 2e-5 * P.b0 * (hi - lo)
    cdef double lims[4]
    lims[0], lims[1], lims[2], lims[3] = P.u1_min, P.u1_max, P.u2_min, P.u2_max
    cdef double uh, ul, e
    cdef int k
    for k in range(NU):
        uh = fmax(u[k] - lims[2 * k + 1], 0.0)
        ul = fmax(lims[2 * k] - u[k], 0.0)
        Bv += P.b1 * (uh * uh + ul * ul)
        gu[k] += 2 * P.b1 * (uh - ul)
    e = fmax(u[0] - tmax(P, n) / P.m1, 0.0)
    Bv += P.b2 * e * e
    gu[0] += 2 * P.b2 * e
    dn -= 2 * P.b2 * e * tmax_dn(P, n) / P.m1
    gn[0] += dn
    return Bv


cdef void fuel_hessian_psd(Prm* P, double* h) noexcept nogil:
    """(n, u1) fuel Hessian with the negative eigenvalue clipped."""
    cdef double a = P.K2 * 2 * P.c11, b = P.K2 * P.c2 * P.m1, d = P.K2 * 2 * P.c3 * P.m1 * P.m1
    cdef double mid = 0.5 * (a + d), rad = sqrt(0.25 * (a - d) * (a - d) + b * b)
    cdef double lam1 = mid + rad, lam2 = mid - rad, vx, vy, nrm
    if lam2 >= 0.0:
        h[0], h[1], h[2] = a, b, d
        return
    if lam1 <= 0.0:
        h[0], h[1], h[2] = 0.0, 0.0, 0.0
        return
    if b != 0.0:
        vx, vy = b, lam1 - a
    elif a >= d:
        vx, vy = 1.0, 0.0
    else:
        vx, vy = 0.0, 1.0
    nrm = vx * vx + vy * vy
    h[0], h[1], h[2] = lam1 * vx * vx / nrm, lam1 * vx * vy / nrm, lam1 * vy * vy / nrm


cdef double expansion(Prm* P, double* x, double* xn, double* u, double w, double* Fx,
                      double* Fu, double* gx, double* gu, double* gxx, double* guu,
                      double* gux) noexcept nogil:
    cdef double gx0[NX]
    cdef double gxn[NX]
    cdef double gu0[NU]
    cdef double g = partials(P, x, xn, u, w, gx0, gxn, gu0)
    cdef int a, b
    cdef double s
    for b in range(NX):
        s = gx0[b]
        for a in range(NX):
            s += Fx[a * NX + b] * gxn[a]
        gx[b] = s
    for b in range(NU):
        s = gu0[b]
        for a in range(NX):
            s += Fu[a * NU + b] * gxn[a]
        gu[b] = s
    cdef double rx[NX]
    cdef double ru[NU]
    for a in range(NX):
        rx[a] = Fx[2 * NX + a]
    rx[2] -= 1.0
    ru[0] = Fu[2 * NU + 0]
    ru[1] = Fu[2 * NU + 1]
    cdef double c = 2 * P.K1
    for a in range(NX):
        for b in range(NX):
            gxx[a * NX + b] = c * rx[a] * rx[b]
    for a in range(NU):
        for b in range(NU):
            guu[a * NU + b] = c * ru[a] * ru[b]
        for b in range(NX):
            gux[a * NX + b] = c * ru[a] * rx[b]
    cdef double hf[3]
    fuel_hessian_psd(P, hf)
    gxx[2 * NX + 2] += hf[0]
    gux[0 * NX + 2] += hf[1]
    guu[0] += hf[2]
    cdef double ps
    cdef double e[NX]
    pstar(P, x, w, &ps, e)
    if x[3] < ps:
        for a in range(NX):
            e[a] = -e[a]
        e[3] += 1.0
        for a in range(NX):
            for b in range(NX):
                gxx[a * NX + b] += 2 * P.K3 * e[a] * e[b]
    return g


# ---------------------------------------------------------------- small dense QP

cdef int gauss_solve(double* K, double* rhs, int n) noexcept nogil:
    """Solve K z = rhs in place (rhs <- z) by partial pivoting. -1 when singular."""
    cdef int i, j, k, piv
    cdef double m, t
    for k in range(n):
        piv = k
        m = fabs(K[k * n + k])
        for i in range(k + 1, n):
            if fabs(K[i * n + k]) > m:
                m = fabs(K[i * n + k])
                piv = i
        if m == 0.0:
            return -1
        if piv != k:
            for j in range(n):
                t = K[k * n + j]
                K[k * n + j] = K[piv * n + j]
                K[piv * n + j] = t
            t = rhs[k]
            rhs[k] = rhs[piv]
            rhs[piv] = t
        for i in range(k + 1, n):
            m = K[i * n + k] / K[k * n + k]
            if m != 0.0:
                for j in range(k, n):
                    K[i * n + j] -= m * K[k * n + j]
                rhs[i] -= m * rhs[k]
    for i in range(n - 1, -1, -1):
        t = rhs[i]
        for j in range(i + 1, n):
            t -= K[i * n + j] * rhs[j]
        rhs[i] = t / K[i * n + i]
    return 0


cdef int eqp(double* H, double* g, double* D, int* work, int nw, int n, double* p,
             double* lam) noexcept nogil:
    cdef double K[(QN + QM) * (QN + QM)]
    cdef double rhs[QN + QM]
    cdef int dim = n + nw, i, j
    for i in range(dim * dim):
        K[i] = 0.0
    for i in range(n):
        for j in range(n):
            K[i * dim + j] = H[i * n + j]
        rhs[i] = -g[i]
    for i in range(nw):
        for j in range(n):
            K[j * dim + n + i] = D[work[i] * n + j]
            K[(n + i) * dim + j] = D[work[i] * n + j]
        rhs[n + i] = 0.0
    if gauss_solve(K, rhs, dim) != 0:
        return -1
    for i in range(n):
        p[i] = rhs[i]
    for i in range(nw):
        lam[i] = rhs[n + i]
    return 0


cdef bint independent(double* D, int* rows, int k, int n) noexcept nogil:
    """Gram-Schmidt rank test of k rows."""
    cdef double Q[QN * QN]
    cdef double nrm0, nrm, s
    cdef int i, j, l
    for i in range(k):
        nrm0 = 0.0
        for l in range(n):
            Q[i * n + l] = D[rows[i] * n + l]
            nrm0 += Q[i * n + l] * Q[i * n + l]
        for j in range(i):
            s = 0.0
            for l in range(n):
                s += Q[i * n + l] * Q[j * n + l]
            for l in range(n):
                Q[i * n + l] -= s * Q[j * n + l]
        nrm = 0.0
        for l in range(n):
            nrm += Q[i * n + l] * Q[i * n + l]
        if nrm <= 1e-24 * nrm0 or nrm == 0.0:
            return False
        nrm = sqrt(nrm)
        for l in range(n):
            Q[i * n + l] /= nrm
    return True


cdef void active_set(double* H, double* q, double* D, double* c, double* z, int n, int m) noexcept nogil:
    """Primal active-set iterations from the feasible start held in z."""
    cdef int work[QN + 1]
    cdef int nw = 0, i, j, it, block, imin
    cdef double g[QN]
    cdef double p[QN]
    cdef double lam[QN]
    cdef double s, pmax, zmax, alpha, Dp, a, lmin
    cdef bint inwork
    for i in range(m):
        s = -c[i]
        for j in range(n):
            s += D[i * n + j] * z[j]
        if fabs(s) <= 1e-12 * (1.0 + fabs(c[i])) and nw < n:
            work[nw] = i
            if independent(D, work, nw + 1, n):
                nw += 1
    for it in range(200):
        for i in range(n):
            s = q[i]
            for j in range(n):
                s += H[i * n + j] * z[j]
            g[i] = s
        if eqp(H, g, D, work, nw, n, p, lam) != 0:
            return
        pmax = 0.0
        zmax = 0.0
        for i in range(n):
            pmax = fmax(pmax, fabs(p[i]))
            zmax = fmax(zmax, fabs(z[i]))
        if pmax <= 1e-12 * (1.0 + zmax):
            if nw == 0:
                return
            imin = 0
            lmin = lam[0]
            for i in range(1, nw):
                if lam[i] < lmin:
                    lmin = lam[i]
                    imin = i
            if lmin >= -1e-12:
                return
            for i in range(imin, nw - 1):
                work[i] = work[i + 1]
            nw -= 1
            continue
        alpha = 1.0
        block = -1
        for i in range(m):
            inwork = False
            for j in range(nw):
                if work[j] == i:
                    inwork = True
            if inwork:
                continue
            Dp = 0.0
            s = c[i]
            for j in range(n):
                Dp += D[i * n + j] * p[j]
                s -= D[i * n + j] * z[j]
            if Dp <= 1e-14:
                continue
            a = fmax(s, 0.0) / Dp
            if a < alpha:
                alpha = a
                block = i
        for i in range(n):
            z[i] += alpha * p[i]
        if block >= 0 and nw < QN:
            work[nw] = block
            nw += 1


cdef bint feasible2(double* D, double* c, int m, double* z) noexcept nogil:
    """Feasible point of {D z <= c} in the plane by vertex search."""
    cdef double cand[2]
    cdef int i, j, stage
    cdef double nrm, det
    # candidates: origin, row projections, then pairwise vertices
    cand[0] = 0.0
    cand[1] = 0.0
    if _feas(D, c, m, cand):
        z[0], z[1] = cand[0], cand[1]
        return True
    for i in range(m):
        nrm = D[2 * i] * D[2 * i] + D[2 * i + 1] * D[2 * i + 1]
        if nrm > 0:
            cand[0] = D[2 * i] * (c[i] / nrm)
            cand[1] = D[2 * i + 1] * (c[i] / nrm)
            if _feas(D, c, m, cand):
                z[0], z[1] = cand[0], cand[1]
                return True
    for i in range(m):
        for j in range(i + 1, m):
            det = D[2 * i] * D[2 * j + 1] - D[2 * i + 1] * D[2 * j]
            if fabs(det) > 1e-14:
                cand[0] = (c[i] * D[2 * j + 1] - D[2 * i + 1] * c[j]) / det
                cand[1] = (D[2 * i] * c[j] - c[i] * D[2 * j]) / det
                if _feas(D, c, m, cand):
                    z[0], z[1] = cand[0], cand[1]
                    return True
    return False


cdef inline bint _feas(double* D, double* c, int m, double* z) noexcept nogil:
    cdef int i
    for i in range(m):
        if D[2 * i] * z[0] + D[2 * i + 1] * z[1] - c[i] > 1e-9 * (1.0 + fabs(c[i])):
            return False
    return True


cdef int relaxed_qp(double* H, double* q, double* Dx, double* cx, int m, double* lo,
                    double* hi, double rho, double* du, double* slack) noexcept nogil:
    """Stage QP with L1-soft state rows; mirrors qp.relaxed_stage_qp for two inputs."""
    cdef double D[QM * QN]
    cdef double c[QM]
    cdef double z[QN]
    cdef double Hz[QN * QN]
    cdef double qz[QN]
    cdef double u0[NU]
    cdef int i, j, mh = m + 2 * NU, n
    cdef bint ok
    if lo[0] > hi[0] or lo[1] > hi[1]:
        return -1
    for i in range(NU):
        u0[i] = fmin(fmax(0.0, lo[i]), hi[i])
    for i in range(mh * NU):
        D[i] = 0.0
    for i in range(m):
        D[2 * i] = Dx[2 * i]
        D[2 * i + 1] = Dx[2 * i + 1]
        c[i] = cx[i]
    D[2 * m] = 1.0
    D[2 * (m + 1) + 1] = 1.0
    D[2 * (m + 2)] = -1.0
    D[2 * (m + 3) + 1] = -1.0
    c[m], c[m + 1], c[m + 2], c[m + 3] = hi[0], hi[1], -lo[0], -lo[1]
    ok = True
    for i in range(m):
        if Dx[2 * i] * u0[0] + Dx[2 * i + 1] * u0[1] > cx[i]:
            ok = False
    if ok:
        z[0], z[1] = u0[0], u0[1]
    else:
        ok = feasible2(D, c, mh, z)
    if ok:
        active_set(H, q, D, c, z, NU, mh)
        du[0], du[1] = z[0], z[1]
        slack[0] = 0.0
        return 0
    n = NU + m
    for i in range(n * n):
        Hz[i] = 0.0
    Hz[0], Hz[1], Hz[n], Hz[n + 1] = H[0], H[1], H[2], H[3]
    for i in range(m):
        Hz[(NU + i) * n + NU + i] = 1e-6
        qz[NU + i] = rho
    qz[0], qz[1] = q[0], q[1]
    mh = 2 * m + 2 * NU
    for i in range(mh * n):
        D[i] = 0.0
    for i in range(m):
        D[i * n + 0] = Dx[2 * i]
        D[i * n + 1] = Dx[2 * i + 1]
        D[i * n + NU + i] = -1.0
        c[i] = cx[i]
        D[(m + i) * n + NU + i] = -1.0
        c[m + i] = 0.0
    D[(2 * m) * n + 0] = 1.0
    D[(2 * m + 1) * n + 1] = 1.0
    D[(2 * m + 2) * n + 0] = -1.0
    D[(2 * m + 3) * n + 1] = -1.0
    c[2 * m], c[2 * m + 1], c[2 * m + 2], c[2 * m + 3] = hi[0], hi[1], -lo[0], -lo[1]
    z[0], z[1] = u0[0], u0[1]
    for i in range(m):
        z[NU + i] = fmax(Dx[2 * i] * u0[0] + Dx[2 * i + 1] * u0[1] - cx[i], 0.0)
    active_set(Hz, qz, D, c, z, n, mh)
    du[0], du[1] = z[0], z[1]
    slack[0] = 0.0
    for i in range(m):
        slack[0] = fmax(slack[0], z[NU + i])
    return 0


# ---------------------------------------------------------------- DDP sweep

cdef void floor_solve(double* Quu, double delta) noexcept nogil:
    """Symmetrise the 2x2 block and lift its smallest eigenvalue to delta."""
    cdef double a = Quu[0], d = Quu[3], b = 0.5 * (Quu[1] + Quu[2])
    cdef double lam = 0.5 * (a + d) - sqrt(0.25 * (a - d) * (a - d) + b * b)
    cdef double guard = 8.0 * DBL_EPSILON * (fabs(a) + fabs(d) + 2.0 * fabs(b))
    cdef double tau = fmax(0.0, delta + guard - lam)
    Quu[0] = a + tau
    Quu[3] = d + tau
    Quu[1] = b
    Quu[2] = b


cdef inline void solve2(double* M, double* b, double* out) noexcept nogil:
    cdef double det = M[0] * M[3] - M[1] * M[2]
    out[0] = (M[3] * b[0] - M[1] * b[1]) / det
    out[1] = (M[0] * b[1] - M[2] * b[0]) / det


def ddp_sweep(const double[::1] prm, const double[::1] grade, const double[::1] x0,
              const double[:, ::1] Xhat, const double[:, ::1] Uhat,
              const double[:, ::1] Wb, const double[:, ::1] Pb,
              const double[:, ::1] Wf, const double[:, ::1] Pf,
              double delta, double rho, bint forward=True):
    """One backward/forward sweep. Returns (X, U, max_slack).

    With forward=False only the backward pass runs and the stage blocks
    (Quu, Qu, Qux) are returned instead; used for timing.
    """
    cdef Prm P
    load(prm, grade, &P)
    cdef int N = Uhat.shape[0], Jb = Wb.shape[1], Jf = Wf.shape[1]
    if Xhat.shape[0] != N + 1 or Wb.shape[0] < N or Wf.shape[0] < N:
        raise ValueError("inconsistent horizon shapes")
    QuuA = np.empty((N, 4))
    QuA = np.empty((N, 2))
    QuxA = np.empty((N, 8))
    X_out = np.empty((N + 1, NX))
    U_out = np.empty((N, NU))
    cdef double[:, ::1] Quu_s = QuuA, Qu_s = QuA, Qux_s = QuxA
    cdef double[:, ::1] X = X_out, U = U_out
    cdef double Vx[NX]
    cdef double Vxx[NX * NX]
    cdef double anchor[NX]
    cdef double x[NX]
    cdef double u[NU]
    cdef double xn[NX]
    cdef double Fx[NX * NX]
    cdef double Fu[NX * NU]
    cdef double gx[NX]
    cdef double gu[NU]
    cdef double gxx[NX * NX]
    cdef double guu[NU * NU]
    cdef double gux[NU * NX]
    cdef double Vxj[NX]
    cdef double Qx[NX]
    cdef double Qu[NU]
    cdef double Qxx[NX * NX]
    cdef double Quu[NU * NU]
    cdef double Qux[NU * NX]
    cdef double VF[NX * NX]
    cdef double VFu[NX * NU]
    cdef double Kg[NX * NU]
    cdef double tmp[NU]
    cdef double sol[NU]
    cdef double pj, s, worst = 0.0, sl
    cdef int n, j, a, b, k
    cdef int rc
    cdef double Dc[8]
    cdef double cc[4]
    cdef double lo[NU]
    cdef double hi[NU]
    cdef double Fbar[NX]
    cdef double Fubar[NX * NU]
    cdef double du[NU]
    cdef double q[NU]
    cdef double xs[NX]
    cdef double u1_hi

    with nogil:
        for a in range(NX):
            Vx[a] = 0.0
            anchor[a] = Xhat[N, a]
            for b in range(NX):
                Vxx[a * NX + b] = 0.0
        for n in range(N - 1, -1, -1):
            for a in range(NX):
                x[a] = Xhat[n, a]
                Qx[a] = 0.0
                for b in range(NX):
                    Qxx[a * NX + b] = 0.0
            u[0], u[1] = Uhat[n, 0], Uhat[n, 1]
            for a in range(NU):
                Qu[a] = 0.0
                for b in range(NU):
                    Quu[a * NU + b] = 0.0
                for b in range(NX):
                    Qux[a * NX + b] = 0.0
            for j in range(Jb):
                pj = Pb[n, j]
                if not pj > 0:
                    continue
                step_jac(&P, x, u, Wb[n, j], xn, Fx, Fu)
                expansion(&P, x, xn, u, Wb[n, j], Fx, Fu, gx, gu, gxx, guu, gux)
                for a in range(NX):
                    s = Vx[a]
                    for b in range(NX):
                        s += Vxx[a * NX + b] * (xn[b] - anchor[b])
                    Vxj[a] = s
                # VF = Vxx Fx, VFu = Vxx Fu
                for a in range(NX):
                    for b in range(NX):
                        s = 0.0
                        for k in range(NX):
                            s += Vxx[a * NX + k] * Fx[k * NX + b]
                        VF[a * NX + b] = s
                    for b in range(NU):
                        s = 0.0
                        for k in range(NX):
                            s += Vxx[a * NX + k] * Fu[k * NU + b]
                        VFu[a * NU + b] = s
                for b in range(NX):
                    s = gx[b]
                    for a in range(NX):
                        s += Fx[a * NX + b] * Vxj[a]
                    Qx[b] += pj * s
                    for k in range(NX):
                        s = gxx[b * NX + k]
                        for a in range(NX):
                            s += Fx[a * NX + b] * VF[a * NX + k]
                        Qxx[b * NX + k] += pj * s
                for b in range(NU):
                    s = gu[b]
                    for a in range(NX):
                        s += Fu[a * NU + b] * Vxj[a]
                    Qu[b] += pj * s
                    for k in range(NU):
                        s = guu[b * NU + k]
                        for a in range(NX):
                            s += Fu[a * NU + b] * VFu[a * NU + k]
                        Quu[b * NU + k] += pj * s
                    for k in range(NX):
                        s = gux[b * NX + k]
                        for a in range(NX):
                            s += Fu[a * NU + b] * VF[a * NX + k]
                        Qux[b * NX + k] += pj * s
            for a in range(NX):
                for b in range(a + 1, NX):
                    s = 0.5 * (Qxx[a * NX + b] + Qxx[b * NX + a])
                    Qxx[a * NX + b] = s
                    Qxx[b * NX + a] = s
            floor_solve(Quu, delta)
            # K = Quu^-1 Qux (column by column), Vx = Qx - Qux' Quu^-1 Qu
            for b in range(NX):
                tmp[0], tmp[1] = Qux[b], Qux[NX + b]
                solve2(Quu, tmp, sol)
                Kg[b], Kg[NX + b] = sol[0], sol[1]
            solve2(Quu, Qu, sol)
            for a in range(NX):
                Vx[a] = Qx[a] - (Qux[a] * sol[0] + Qux[NX + a] * sol[1])
                for b in range(NX):
                    Vxx[a * NX + b] = Qxx[a * NX + b] - (Qux[a] * Kg[b] + Qux[NX + a] * Kg[NX + b])
            for a in range(NX):
                for b in range(a + 1, NX):
                    s = 0.5 * (Vxx[a * NX + b] + Vxx[b * NX + a])
                    Vxx[a * NX + b] = s
                    Vxx[b * NX + a] = s
            for a in range(NX):
                anchor[a] = x[a]
            for a in range(4):
                Quu_s[n, a] = Quu[a]
            Qu_s[n, 0], Qu_s[n, 1] = Qu[0], Qu[1]
            for a in range(8):
                Qux_s[n, a] = Qux[a]

        # forward pass
        for a in range(NX):
            X[0, a] = x0[a]
        for n in range(N if forward else 0):
            for a in range(NX):
                xs[a] = X[n, a] - Xhat[n, a]
            for a in range(NU):
                s = Qu_s[n, a]
                for b in range(NX):
                    s += Qux_s[n, a * NX + b] * xs[b]
                q[a] = s
            for a in range(NX):
                x[a] = X[n, a]
            u[0], u[1] = Uhat[n, 0], Uhat[n, 1]
            for a in range(NX):
                Fbar[a] = 0.0
                for b in range(NU):
                    Fubar[a * NU + b] = 0.0
            for j in range(Jf):
                pj = Pf[n, j]
                if not pj > 0:
                    continue
                step_jac(&P, x, u, Wf[n, j], xn, Fx, Fu)
                for a in range(NX):
                    Fbar[a] += pj * xn[a]
                    for b in range(NU):
                        Fubar[a * NU + b] += pj * Fu[a * NU + b]
            # rows: n <= n_max, -n <= -n_min, p <= p_max, -p <= -p_min (p in bar)
            for b in range(NU):
                Dc[0 * 2 + b] = Fubar[2 * NU + b]
                Dc[1 * 2 + b] = -Fubar[2 * NU + b]
                Dc[2 * 2 + b] = 1e-5 * Fubar[3 * NU + b]
                Dc[3 * 2 + b] = -1e-5 * Fubar[3 * NU + b]
            cc[0] = P.n_max - Fbar[2]
            cc[1] = -P.n_min + Fbar[2]
            cc[2] = 1e-5 * P.p_max - 1e-5 * Fbar[3]
            cc[3] = -1e-5 * P.p_min + 1e-5 * Fbar[3]
            u1_hi = fmax(tmax(&P, x[2]) / P.m1, P.u1_min)
            lo[0] = P.u1_min - u[0]
            lo[1] = P.u2_min - u[1]
            hi[0] = fmin(u1_hi, P.u1_max) - u[0]
            hi[1] = P.u2_max - u[1]
            for a in range(4):
                Quu[a] = Quu_s[n, a]
            rc = relaxed_qp(Quu, q, Dc, cc, 4, lo, hi, rho, du, &sl)
            if rc != 0:
                with gil:
                    raise ValueError("empty input box")
            worst = fmax(worst, sl)
            U[n, 0] = u[0] + du[0]
            U[n, 1] = u[1] + du[1]
            u[0], u[1] = U[n, 0], U[n, 1]
            for a in range(NX):
                X[n + 1, a] = 0.0
            for j in range(Jf):
                pj = Pf[n, j]
                if not pj > 0:
                    continue
                step_jac(&P, x, u, Wf[n, j], xn, NULL, NULL)
                for a in range(NX):
                    X[n + 1, a] += pj * xn[a]
    if not forward:
        return QuuA, QuA, QuxA
    return X_out, U_out, worst


# ---------------------------------------------------------------- SGDM

cdef double path_gradient(Prm* P, double* x0, double* U, double* w, int N, double* grad,
                          double* Xs, double* Fxs, double* Fus, double* gxs,
                          double* gxns) noexcept nogil:
    """Horizon cost of one demand path and its gradient by the adjoint recursion."""
    cdef double J = 0.0
    cdef double mu[NX]
    cdef double lam[NX]
    cdef double s
    cdef int n, a, b
    for a in range(NX):
        Xs[a] = x0[a]
    for n in range(N):
        step_jac(P, &Xs[n * NX], &U[n * NU], w[n], &Xs[(n + 1) * NX], &Fxs[n * NX * NX],
                 &Fus[n * NX * NU])
        J += partials(P, &Xs[n * NX], &Xs[(n + 1) * NX], &U[n * NU], w[n], &gxs[n * NX],
                      &gxns[n * NX], &grad[n * NU])
    for a in range(NX):
        mu[a] = 0.0
    for n in range(N - 1, -1, -1):
        for a in range(NX):
            lam[a] = gxns[n * NX + a] + mu[a]
        for b in range(NU):
            s = 0.0
            for a in range(NX):
                s += Fus[n * NX * NU + a * NU + b] * lam[a]
            grad[n * NU + b] += s
        for b in range(NX):
            s = gxs[n * NX + b]
            for a in range(NX):
                s += Fxs[n * NX * NX + a * NX + b] * lam[a]
            mu[b] = s
    return J


def sgdm_solve(const double[::1] prm, const double[::1] grade, const double[::1] x0, int i0,
               const double[:, ::1] U0, const double[:, ::1] V0, const double[:, ::1] omegas,
               const double[:, ::1] Pm, const double[::1] levels, int K, double gamma0,
               double eps, double mu, int warmup):
    """K Nesterov iterations on fixed random streams. Returns (U, V)."""
    cdef Prm P
    load(prm, grade, &P)
    cdef int N = U0.shape[0], S = Pm.shape[0], nstream = omegas.shape[0]
    if nstream < 1 or (N > 1 and omegas.shape[1] < N - 1):
        raise ValueError("random streams too short for the horizon")
    if not 0 <= i0 < S:
        raise ValueError("initial demand index out of range")
    U_out = np.array(U0, dtype=float)
    V_out = np.array(V0, dtype=float)
    cdf_a = np.cumsum(np.asarray(Pm), axis=1)
    cdf_a[:, -1] = 1.0
    cdef double[:, ::1] cdf = np.ascontiguousarray(cdf_a)
    cdef double[:, ::1] U = U_out, V = V_out
    work = np.empty(N * (NU * 2 + NX * 3 + NX * NX + NX * NU) + NX + N)
    cdef double[::1] wv = work
    cdef double* look = &wv[0]
    cdef double* grad = look + N * NU
    cdef double* Xs = grad + N * NU
    cdef double* Fxs = Xs + (N + 1) * NX
    cdef double* Fus = Fxs + N * NX * NX
    cdef double* gxs = Fus + N * NX * NU
    cdef double* gxns = gxs + N * NX
    cdef double* w = gxns + N * NX
    cdef double xz[NX]
    cdef int k, n, i, j, lo_, hi_, mid
    cdef double om, gam
    for i in range(NX):
        xz[i] = x0[i]
    with nogil:
        for k in range(1, K + 1):
            i = i0
            w[0] = levels[i]
            for n in range(N - 1):
                om = omegas[(k - 1) % nstream, n]
                # first j with cdf[i, j] >= om
                lo_ = 0
                hi_ = S
                while lo_ < hi_:
                    mid = (lo_ + hi_) // 2
                    if cdf[i, mid] < om:
                        lo_ = mid + 1
                    else:
                        hi_ = mid
                i = lo_ if lo_ < S else S - 1
                w[n + 1] = levels[i]
            for n in range(N):
                for j in range(NU):
                    look[n * NU + j] = U[n, j] + mu * V[n, j]
            path_gradient(&P, xz, look, w, N, grad, Xs, Fxs, Fus, gxs, gxns)
            if k <= warmup:
                gam = gamma0
            else:
                gam = gamma0 / (1.0 + (k - warmup - 1) * eps)
            for n in range(N):
                for j in range(NU):
                    V[n, j] = mu * V[n, j] - gam * grad[n * NU + j]
                    U[n, j] = U[n, j] + V[n, j]
    return U_out, V_out


def path_cost_gradient(const double[::1] prm, const double[::1] grade, const double[::1] x0,
                       const double[:, ::1] U, const double[::1] w):
    """(grad (N,2), J) of one demand path; exposed for equivalence tests."""
    cdef Prm P
    load(prm, grade, &P)
    cdef int N = U.shape[0]
    if w.shape[0] < N:
        raise ValueError("demand path shorter than the horizon")
    g = np.empty((N, NU))
    Uc = np.ascontiguousarray(U)
    scratch = np.empty((N + 1) * NX + N * (NX * NX + NX * NU + 2 * NX))
    cdef double[:, ::1] gv = g
    cdef double[:, ::1] uv = Uc
    cdef double[::1] sv = scratch
    cdef double xz[NX]
    cdef int i
    for i in range(NX):
        xz[i] = x0[i]
    cdef double* Xs = &sv[0]
    cdef double* Fxs = Xs + (N + 1) * NX
    cdef double* Fus = Fxs + N * NX * NX
    cdef double* gxs = Fus + N * NX * NU
    cdef double* gxns = gxs + N * NX
    J = path_gradient(&P, xz, &uv[0, 0], <double*>&w[0], N, &gv[0, 0], Xs, Fxs, Fus, gxs, gxns)
    return g, J


def model_step(const double[::1] prm, const double[::1] grade, const double[::1] x,
               const double[::1] u, double w):
    """Single step with Jacobians: (x_next (4,), Fx (4,4), Fu (4,2))."""
    cdef Prm P
    load(prm, grade, &P)
    xn = np.empty(NX)
    Fx = np.empty((NX, NX))
    Fu = np.empty((NX, NU))
    cdef double[::1] xv = xn
    cdef double[:, ::1] fxv = Fx
    cdef double[:, ::1] fuv = Fu
    cdef double xx[NX]
    cdef double uu[NU]
    cdef int i
    for i in range(NX):
        xx[i] = x[i]
    uu[0], uu[1] = u[0], u[1]
    step_jac(&P, xx, uu, w, &xv[0], &fxv[0, 0], &fuv[0, 0])
    return xn, Fx, Fu


def stage_expansion(const double[::1] prm, const double[::1] grade, const double[::1] x,
                    const double[::1] u, double w):
    """(g, gx, gu, gxx, guu, gux) of one stage; exposed for equivalence tests."""
    cdef Prm P
    load(prm, grade, &P)
    cdef double xx[NX]
    cdef double uu[NU]
    cdef double xn[NX]
    cdef double Fx[NX * NX]
    cdef double Fu[NX * NU]
    gx = np.empty(NX)
    gu = np.empty(NU)
    gxx = np.empty((NX, NX))
    guu = np.empty((NU, NU))
    gux = np.empty((NU, NX))
    cdef double[::1] a = gx
    cdef double[::1] b = gu
    cdef double[:, ::1] c = gxx
    cdef double[:, ::1] d = guu
    cdef double[:, ::1] e = gux
    cdef int i
    for i in range(NX):
        xx[i] = x[i]
    uu[0], uu[1] = u[0], u[1]
    step_jac(&P, xx, uu, w, xn, Fx, Fu)
    g = expansion(&P, xx, xn, uu, w, Fx, Fu, &a[0], &b[0], &c[0, 0], &d[0, 0], &e[0, 0])
    return g, gx, gu, gxx, guu, gux
