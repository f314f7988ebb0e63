"""Hot SGD loops for MF and BPR.

Every random quantity (visit order, replaced indices, dropout multipliers,
negatives) is drawn beforehand by the caller, so these loops are pure
functions of their inputs. They mutate the embedding matrices in place and
return the summed per-step loss. Reductions are written as explicit scalar
loops so the compiled and interpreted paths round identically.
"""

import math

import numpy as np

from sse_rec._accel import jit


@jit
def mf_sgd_epoch(U, V, ku, ki, ratings, su, si, lr, lam, batch):
    """Squared-loss SGD over rows ``(ku[t], ki[t], ratings[t])``.

    ``su``/``si`` hold per-step dropout multipliers; pass arrays with zero
    rows to disable dropout. Gradients of a minibatch are taken at the
    parameters current at the start of that batch and averaged.
    """
    n = ku.shape[0]
    d = U.shape[1]
    drop = su.shape[0] > 0
    gu = np.zeros((batch, d))
    gv = np.zeros((batch, d))
    total = 0.0
    start = 0
    while start < n:
        stop = min(start + batch, n)
        for t in range(start, stop):
            a = ku[t]
            b = ki[t]
            pred = 0.0
            reg = 0.0
            for f in range(d):
                uf = U[a, f]
                vf = V[b, f]
                if drop:
                    uf = uf * su[t, f]
                    vf = vf * si[t, f]
                pred += uf * vf
                reg += U[a, f] * U[a, f] + V[b, f] * V[b, f]
            e = pred - ratings[t]
            total += e * e + lam * reg
            row = t - start
            for f in range(d):
                if drop:
                    gu[row, f] = 2.0 * e * V[b, f] * si[t, f] * su[t, f] + 2.0 * lam * U[a, f]
                    gv[row, f] = 2.0 * e * U[a, f] * su[t, f] * si[t, f] + 2.0 * lam * V[b, f]
                else:
                    gu[row, f] = 2.0 * e * V[b, f] + 2.0 * lam * U[a, f]
                    gv[row, f] = 2.0 * e * U[a, f] + 2.0 * lam * V[b, f]
        step = lr / (stop - start)
        for t in range(start, stop):
            a = ku[t]
            b = ki[t]
            row = t - start
            for f in range(d):
                U[a, f] = U[a, f] - step * gu[row, f]
                V[b, f] = V[b, f] - step * gv[row, f]
        start = stop
    return total


@jit
def bpr_sgd_epoch(U, V, ku, kp, kn, su, sp, sn, lr, lam, batch):
    """Pairwise logistic-loss SGD over triples ``(ku[t], kp[t], kn[t])``."""
    n = ku.shape[0]
    d = U.shape[1]
    drop = su.shape[0] > 0
    gu = np.zeros((batch, d))
    gp = np.zeros((batch, d))
    gn = np.zeros((batch, d))
    total = 0.0
    start = 0
    while start < n:
        stop = min(start + batch, n)
        for t in range(start, stop):
            a = ku[t]
            b = kp[t]
            c = kn[t]
            x = 0.0
            reg = 0.0
            for f in range(d):
                uf = U[a, f]
                pf = V[b, f]
                nf = V[c, f]
                if drop:
                    uf = uf * su[t, f]
                    pf = pf * sp[t, f]
                    nf = nf * sn[t, f]
                x += uf * pf - uf * nf
                reg += U[a, f] * U[a, f] + V[b, f] * V[b, f] + V[c, f] * V[c, f]
            # softplus(-x) and sigmoid(-x) without overflow
            if x >= 0.0:
                z = math.exp(-x)
                loss = math.log1p(z)
                s = z / (1.0 + z)
            else:
                z = math.exp(x)
                loss = -x + math.log1p(z)
                s = 1.0 / (1.0 + z)
            total += loss + lam * reg
            row = t - start
            for f in range(d):
                uf = U[a, f]
                pf = V[b, f]
                nf = V[c, f]
                if drop:
                    gu[row, f] = -s * (pf * sp[t, f] - nf * sn[t, f]) * su[t, f] + 2.0 * lam * uf
                    gp[row, f] = -s * uf * su[t, f] * sp[t, f] + 2.0 * lam * pf
                    gn[row, f] = s * uf * su[t, f] * sn[t, f] + 2.0 * lam * nf
                else:
                    gu[row, f] = -s * (pf - nf) + 2.0 * lam * uf
                    gp[row, f] = -s * uf + 2.0 * lam * pf
                    gn[row, f] = s * uf + 2.0 * lam * nf
        step = lr / (stop - start)
        for t in range(start, stop):
            a = ku[t]
            b = kp[t]
            c = kn[t]
            row = t - start
            for f in range(d):
                U[a, f] = U[a, f] - step * gu[row, f]
                V[b, f] = V[b, f] - step * gp[row, f]
                V[c, f] = V[c, f] - step * gn[row, f]
        start = stop
    return total
