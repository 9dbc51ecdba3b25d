"""Fused forward/backward kernel over a mini-batch.

This is the hot loop of training: per sample it runs the full prediction
chain (context softmax, type softmax, per-feature inner products) and, when
asked, backpropagates the squared-error residual into per-table gradient
accumulators. The function is written in array-and-scalar style so the exact
same source runs two ways:

* jitted with ``numba.njit`` (default when numba is importable), or
* as plain Python over numpy arrays (the fallback path).

Select the path with the ``CAFATA_BACKEND`` environment variable
(``auto`` | ``numba`` | ``numpy``) or per call via ``backend=``. Both paths
execute the same arithmetic sample by sample, so results are deterministic
within a backend; see ``benchmarks/bench_kernels.py`` for the speed gap.

Variant codes: 0 full context-aware, 1 context-free, 2 context-aware with
uniform type importance, 3 context-free uniform, 4 plain matrix
factorization.
"""

from __future__ import annotations

import math
import os

import numpy as np

ENV_BACKEND = "CAFATA_BACKEND"

VARIANT_CODES = {
    "ca-fata": 0,
    "fata": 1,
    "avg-ca-fata": 2,
    "avg-fata": 3,
    "mf": 4,
}


def _fused_forward_backward(
    U, F, C, T, A, IT,
    rows, user_idx, item_idx, target,
    sit_ptr, sit_factor, sit_cond,
    item_type_ptr, slot_type, slot_feat_ptr, slot_feat,
    slope, variant, max_sit, max_types,
    compute_grad,
    gU, gF, gC, gT, gA, gI,
    tU, tF, tC, tT, tA, tI,
    preds,
):
    d = U.shape[1]
    use_ctx = variant == 0 or variant == 2
    uniform = variant == 2 or variant == 3
    is_mf = variant == 4

    pi = np.empty(max_sit)
    beta = np.empty(max_sit)
    dpi = np.empty(max_sit)
    rho = np.empty(max_types)
    gamma = np.empty(max_types)
    contr = np.empty(max_types)
    ucs = np.empty(d)
    G = np.empty(d)
    uextra = np.empty(d)

    sse = 0.0
    for jj in range(rows.shape[0]):
        s = rows[jj]
        ui = user_idx[s]
        it = item_idx[s]

        if is_mf:
            r = 0.0
            for k in range(d):
                r += U[ui, k] * IT[it, k]
            preds[jj] = r
            err = r - target[s]
            sse += err * err
            if compute_grad:
                g = 2.0 * err
                for k in range(d):
                    gU[ui, k] += g * IT[it, k]
                    gI[it, k] += g * U[ui, k]
                tU[ui] = True
                tI[it] = True
            continue

        s0 = sit_ptr[s]
        nf = sit_ptr[s + 1] - s0
        if use_ctx and nf > 0:
            # factor importances: softmax over LeakyReLU(<u, cf>)
            mx = -1e300
            for j in range(nf):
                fj = sit_factor[s0 + j]
                b = 0.0
                for k in range(d):
                    b += U[ui, k] * F[fj, k]
                beta[j] = b
                a = b if b > 0.0 else slope * b
                pi[j] = a
                if a > mx:
                    mx = a
            den = 0.0
            for j in range(nf):
                e = math.exp(pi[j] - mx)
                pi[j] = e
                den += e
            for j in range(nf):
                pi[j] /= den
            for k in range(d):
                acc = 0.0
                for j in range(nf):
                    acc += pi[j] * C[sit_cond[s0 + j], k]
                ucs[k] = U[ui, k] + acc
        else:
            for k in range(d):
                ucs[k] = U[ui, k]

        ts0 = item_type_ptr[it]
        nt = item_type_ptr[it + 1] - ts0
        if uniform:
            for kk in range(nt):
                rho[kk] = 1.0 / nt
        else:
            # type importances: softmax over LeakyReLU(<u_cs, t>)
            mx = -1e300
            for kk in range(nt):
                tid = slot_type[ts0 + kk]
                gsc = 0.0
                for k in range(d):
                    gsc += ucs[k] * T[tid, k]
                gamma[kk] = gsc
                a = gsc if gsc > 0.0 else slope * gsc
                rho[kk] = a
                if a > mx:
                    mx = a
            den = 0.0
            for kk in range(nt):
                e = math.exp(rho[kk] - mx)
                rho[kk] = e
                den += e
            for kk in range(nt):
                rho[kk] /= den

        rhat = 0.0
        for kk in range(nt):
            f0 = slot_feat_ptr[ts0 + kk]
            nfk = slot_feat_ptr[ts0 + kk + 1] - f0
            csum = 0.0
            for mm in range(nfk):
                fid = slot_feat[f0 + mm]
                p = 0.0
                for k in range(d):
                    p += ucs[k] * A[fid, k]
                csum += p
            contr[kk] = csum / nfk
            rhat += rho[kk] * contr[kk]
        preds[jj] = rhat
        err = rhat - target[s]
        sse += err * err

        if not compute_grad:
            continue

        g = 2.0 * err
        for k in range(d):
            G[k] = 0.0
        # features: dL/dat = g * (rho_t / n_t) * u_cs, and their share of dL/du_cs
        for kk in range(nt):
            f0 = slot_feat_ptr[ts0 + kk]
            nfk = slot_feat_ptr[ts0 + kk + 1] - f0
            coef = rho[kk] / nfk
            for mm in range(nfk):
                fid = slot_feat[f0 + mm]
                for k in range(d):
                    gA[fid, k] += g * coef * ucs[k]
                    G[k] += coef * A[fid, k]
                tA[fid] = True
        if not uniform:
            # softmax Jacobian: d rhat / d gamma_k = rho_k (contr_k - rhat)
            for kk in range(nt):
                tid = slot_type[ts0 + kk]
                dgam = rho[kk] * (contr[kk] - rhat)
                if gamma[kk] <= 0.0:
                    dgam *= slope
                for k in range(d):
                    gT[tid, k] += g * dgam * ucs[k]
                    G[k] += dgam * T[tid, k]
                tT[tid] = True
        if use_ctx and nf > 0:
            sum_dpipi = 0.0
            for j in range(nf):
                cj = sit_cond[s0 + j]
                dp = 0.0
                for k in range(d):
                    dp += G[k] * C[cj, k]
                dpi[j] = dp
                sum_dpipi += dp * pi[j]
            for k in range(d):
                uextra[k] = 0.0
            for j in range(nf):
                fj = sit_factor[s0 + j]
                cj = sit_cond[s0 + j]
                da = pi[j] * (dpi[j] - sum_dpipi)
                db = da if beta[j] > 0.0 else da * slope
                for k in range(d):
                    gF[fj, k] += g * db * U[ui, k]
                    gC[cj, k] += g * pi[j] * G[k]
                    uextra[k] += db * F[fj, k]
                tF[fj] = True
                tC[cj] = True
            for k in range(d):
                gU[ui, k] += g * (G[k] + uextra[k])
        else:
            for k in range(d):
                gU[ui, k] += g * G[k]
        tU[ui] = True
    return sse


_IMPLS = {"numpy": _fused_forward_backward}

try:
    from numba import njit

    _IMPLS["numba"] = njit(cache=True)(_fused_forward_backward)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def active_backend(override: str | None = None) -> str:
    """Resolve the kernel backend from the override or environment."""
    choice = (override or os.environ.get(ENV_BACKEND, "auto")).lower()
    if choice == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"invalid backend {choice!r} (auto, numba or numpy)")
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return choice


def fused_forward_backward(*args, backend: str | None = None):
    return _IMPLS[active_backend(backend)](*args)
