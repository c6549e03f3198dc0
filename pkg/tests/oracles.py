"""Independent reference implementations used only by the tests."""

from __future__ import annotations

from collections import deque
from itertools import combinations

import numpy as np

KIND_ORDER = {"terminal": 0, "local": 1, "global": 2}


def brute_force_edges(G, R, t, h):
    """Enumerate port-graph edges from first principles.

    Ports are labelled (group, router-in-group, kind, index) and numbered by
    sorting the labels; links are derived pairwise rather than by slot loops.
    """
    labels = []
    for g in range(G):
        for r in range(R):
            labels += [(g, r, 0, i) for i in range(t)]
            labels += [(g, r, 1, i) for i in range(R - 1)]
            labels += [(g, r, 2, i) for i in range(h)]
    labels.sort()
    ids = {lab: i for i, lab in enumerate(labels)}
    edges = set()
    # every pair of ports on one router
    by_router = {}
    for lab in labels:
        by_router.setdefault(lab[:2], []).append(ids[lab])
    for ports in by_router.values():
        edges |= {tuple(sorted(p)) for p in combinations(ports, 2)}
    # local: router a's local port to b is the index of b among a's peers
    for g in range(G):
        for a in range(R):
            for b in range(R):
                if a < b:
                    pa = ids[(g, a, 1, b - 1)]
                    pb = ids[(g, b, 1, a)]
                    edges.add(tuple(sorted((pa, pb))))
    # global: group g reaches group g+d (mod G) through its (d-1)-th global slot
    for g1 in range(G):
        for g2 in range(g1 + 1, G):
            d = g2 - g1
            s1 = d - 1
            s2 = (G - d) - 1
            p1 = ids[(g1, s1 // h, 2, s1 % h)]
            p2 = ids[(g2, s2 // h, 2, s2 % h)]
            edges.add(tuple(sorted((p1, p2))))
    return len(labels), edges


def dense_normalized(n, edges):
    a = np.eye(n)
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    d = a.sum(axis=1)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = a[i, j] / np.sqrt(d[i] * d[j])
    return out


def bfs_hops(n, edges, src):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    dist = [None] * n
    dist[src] = 0
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] is None:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def numeric_grad(f, param, eps=1e-6):
    """Central finite differences of scalar f() w.r.t. every entry of ``param`` (in place)."""
    import torch

    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    g = grad.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        fp = f().item()
        flat[i] = old - eps
        fm = f().item()
        flat[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return grad


def gradient_rel_error(module, loss_fn, params, eps=1e-6):
    """max over params of ||analytic - numeric|| / max(||analytic||, ||numeric||, tiny)."""
    import torch

    module.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.detach().clone()
        with torch.no_grad():
            numeric = numeric_grad(loss_fn, p, eps)
        denom = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
        worst = max(worst, (analytic - numeric).norm().item() / denom)
    return worst


def handwritten_gru(x, h, Wx_r, Wh_r, b_r, Wx_u, Wh_u, b_u, Wx_c, Wh_c, b_c):
    sig = lambda z: 1 / (1 + np.exp(-z))
    r = sig(x @ Wx_r + h @ Wh_r + b_r)
    u = sig(x @ Wx_u + h @ Wh_u + b_u)
    c = np.tanh(x @ Wx_c + (r * h) @ Wh_c + b_c)
    return u * h + (1 - u) * c
