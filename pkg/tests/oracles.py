"""Slow, independent reference implementations used by the tests.

Everything here works on full matrices built from explicit index loops and
permutation matrices, so it shares no kernels with the package.
"""

import itertools

import numpy as np


def bits(x, n):
    return [(x >> (n - 1 - k)) & 1 for k in range(n)]


def index(bs):
    out = 0
    for b in bs:
        out = (out << 1) | b
    return out


def perm_matrix(order, n):
    """P|x> = |y> with y_k = x_{order[k]}."""
    dim = 1 << n
    p = np.zeros((dim, dim))
    for x in range(dim):
        b = bits(x, n)
        p[index([b[q] for q in order]), x] = 1.0
    return p


def embed(op, targets, n):
    """Full 2**n matrix of ``op`` acting on ``targets`` (in that order)."""
    targets = list(targets)
    rest = [q for q in range(n) if q not in targets]
    p = perm_matrix(targets + rest, n)
    return p.T @ np.kron(op, np.eye(1 << len(rest))) @ p


def partial_trace_loops(rho, keep, n):
    """Reduced matrix on ``keep`` by summing over the traced-out bits."""
    keep = list(keep)
    gone = [q for q in range(n) if q not in keep]
    dk = 1 << len(keep)
    out = np.zeros((dk, dk), dtype=complex)
    for i in range(dk):
        for j in range(dk):
            bi, bj = bits(i, len(keep)), bits(j, len(keep))
            for e in range(1 << len(gone)):
                be = bits(e, len(gone))
                row, col = [0] * n, [0] * n
                for q, b in zip(keep, bi):
                    row[q] = b
                for q, b in zip(keep, bj):
                    col[q] = b
                for q, b in zip(gone, be):
                    row[q] = col[q] = b
                out[i, j] += rho[index(row), index(col)]
    return out


def choi_fidelity(kraus, u):
    """<Φ_U| (1 ⊗ E)(|Φ><Φ|) |Φ_U> with |Φ> = Σ|ii>/sqrt(D)."""
    dim = u.shape[0]
    phi = np.eye(dim).reshape(-1) / np.sqrt(dim)
    rho = np.outer(phi, phi.conj())
    out = sum(np.kron(np.eye(dim), k) @ rho @ np.kron(np.eye(dim), k).conj().T for k in kraus)
    target = np.kron(np.eye(dim), u) @ phi
    return float(np.real(target.conj() @ out @ target))


def swap_matrix(reg_a, reg_b, n):
    order = list(range(n))
    for x, y in zip(reg_a, reg_b):
        order[x], order[y] = y, x
    return perm_matrix(order, n)


def protocol(u, kraus, m, d, phi0, basis, psi, choi, cj):
    """Probabilities and conditional input states for every outcome.

    Layout: control, [reference], input, then per auxiliary [reference] + active.
    Returns ``{(control, aux_tuple): (prob, subnormalized_state)}``.
    """
    nc = int(np.ceil(np.log2(d))) if d > 1 else 0
    pos = nc
    regs = {}

    def take(name, w):
        nonlocal pos
        regs[name] = list(range(pos, pos + w))
        pos += w

    if cj:
        take("r", m)
    take("a", m)
    for k in range(1, d):
        if choi:
            take(f"rb{k}", m)
        take(f"b{k}", m)
    n = pos

    control = np.zeros(1 << nc, dtype=complex)
    control[:d] = 1 / np.sqrt(d)
    state = control
    state = np.kron(state, psi)
    for _ in range(1, d):
        state = np.kron(state, phi0)
    rho = np.outer(state, state.conj())

    cs = np.zeros((1 << n, 1 << n), dtype=complex)
    for c in range(1 << nc):
        proj = np.zeros((1 << nc, 1 << nc))
        proj[c, c] = 1
        full_proj = embed(proj, list(range(nc)), n)
        if 1 <= c < d:
            cs += full_proj @ swap_matrix(regs["a"], regs[f"b{c}"], n)
        else:
            cs += full_proj
    rho = cs @ rho @ cs.conj().T
    for name in ["a"] + [f"b{k}" for k in range(1, d)]:
        uf = embed(u, regs[name], n)
        rho = uf @ rho @ uf.conj().T
        rho = sum(embed(k, regs[name], n) @ rho @ embed(k, regs[name], n).conj().T for k in kraus)
    rho = cs @ rho @ cs.conj().T

    measured = list(range(nc))
    for k in range(1, d):
        measured += (regs[f"rb{k}"] if choi else []) + regs[f"b{k}"]
    rest = [q for q in range(n) if q not in measured]
    p = perm_matrix(measured + rest, n)
    rho = (p @ rho @ p.T).reshape(1 << len(measured), 1 << len(rest), 1 << len(measured), 1 << len(rest))

    out = {}
    for c in range(d):
        cvec = np.zeros(1 << nc, dtype=complex)
        cvec[:d] = np.exp(2j * np.pi * np.arange(d) * c / d) / np.sqrt(d)
        for aux in itertools.product(range(len(basis)), repeat=d - 1):
            v = cvec
            for e in aux:
                v = np.kron(v, basis[e])
            sub = np.einsum("i,iajb,j->ab", v.conj(), rho, v)
            out[(c, aux)] = (float(np.real(np.trace(sub))), sub)
    return out
