"""Independent reference implementations used by the test suite.

Nothing here imports benthoscan internals; each oracle recomputes its
quantity from the definition by brute force or in extended precision.
"""

from __future__ import annotations

import mpmath
import numpy as np
from numba import njit


# --- taxonomy -----------------------------------------------------------------

def random_taxonomy_entries(rng: np.random.Generator, n_nodes: int, p_code: float = 0.7) -> list[dict]:
    """Flat taxonomy records: each new node hangs off a uniformly chosen earlier node."""
    entries = [{"node_id": "1", "parent": None, "code": "", "name": "root"}]
    n_children: dict[str, int] = {"1": 0}
    for i in range(1, n_nodes):
        parent = entries[int(rng.integers(0, len(entries)))]["node_id"]
        n_children[parent] += 1
        nid = f"{parent}.{n_children[parent]}"
        n_children[nid] = 0
        code = f"C{i:03d}" if rng.random() < p_code else ""
        entries.append({"node_id": nid, "parent": parent, "code": code, "name": f"n{i}"})
    return entries


def subtree_codes(entries: list[dict], node_id: str) -> set[str]:
    """Codes of every record whose parent chain passes through ``node_id``."""
    parent = {e["node_id"]: e["parent"] for e in entries}
    out = set()
    for e in entries:
        cur = e["node_id"]
        while cur is not None:
            if cur == node_id:
                if e["code"]:
                    out.add(e["code"])
                break
            cur = parent[cur]
    return out


def policy_sets(entries: list[dict], codes: list[str], node_id: str) -> dict[str, set[int]]:
    """Label indices per set definition, by direct filtering."""
    parent = {e["node_id"]: e["parent"] for e in entries}
    under_node = subtree_codes(entries, node_id)
    under_parent = subtree_codes(entries, parent[node_id]) if parent[node_id] else set()
    pos = {i for i, c in enumerate(codes) if c in under_node}
    inclusive = {i for i, c in enumerate(codes) if c not in under_node}
    sibling = {i for i, c in enumerate(codes) if c in under_parent and c not in under_node}
    return {"pos": pos, "inclusive": inclusive, "sibling": sibling}


# --- linear SVM -----------------------------------------------------------------

def dual_qp(X: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """Solve max 1'a - a'Qa/2, 0 <= a <= C with cvxopt; returns augmented w (bias last)."""
    from cvxopt import matrix, solvers

    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    n = X.shape[0]
    Q = (y[:, None] * Xa) @ (y[:, None] * Xa).T
    P = matrix(Q + 1e-12 * np.eye(n))
    q = matrix(-np.ones(n))
    G = matrix(np.vstack([-np.eye(n), np.eye(n)]))
    h = matrix(np.concatenate([np.zeros(n), np.full(n, c)]))
    solvers.options.update({"show_progress": False, "abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12, "maxiters": 200})
    sol = solvers.qp(P, q, G, h)
    alpha = np.asarray(sol["x"]).ravel()
    return Xa.T @ (alpha * y)


def primal_qp(X: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """Solve min (|w|^2 + b^2)/2 + C sum(xi) s.t. y(w.x + b) >= 1 - xi, xi >= 0 over (w, b, xi)."""
    from cvxopt import matrix, solvers

    n, d = X.shape
    m = d + 1 + n
    P = np.zeros((m, m))
    P[: d + 1, : d + 1] = np.eye(d + 1)
    P[d + 1:, d + 1:] = 1e-12 * np.eye(n)
    q = np.concatenate([np.zeros(d + 1), np.full(n, c)])
    # -y_i (w.x_i + b) - xi_i <= -1 ; -xi <= 0
    G1 = np.hstack([-(y[:, None] * X), -y[:, None], -np.eye(n)])
    G2 = np.hstack([np.zeros((n, d + 1)), -np.eye(n)])
    G = np.vstack([G1, G2])
    h = np.concatenate([-np.ones(n), np.zeros(n)])
    solvers.options.update({"show_progress": False, "abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12, "maxiters": 200})
    sol = solvers.qp(matrix(P), matrix(q), matrix(G), matrix(h))
    return np.asarray(sol["x"]).ravel()[: d + 1]


def separable_instance(rng: np.random.Generator, n: int, gap: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """2-d points in [-1, 1]^2 labelled by a random line, none closer than ``gap`` to it."""
    angle = rng.uniform(0, 2 * np.pi)
    normal = np.array([np.cos(angle), np.sin(angle)])
    offset = rng.uniform(-0.3, 0.3)
    pts, labels = [], []
    while len(pts) < n:
        p = rng.uniform(-1, 1, size=2)
        s = p @ normal + offset
        if abs(s) < gap:
            continue
        pts.append(p)
        labels.append(1.0 if s > 0 else -1.0)
        # both classes must be present
        if len(pts) == n and len(set(labels)) < 2:
            pts.pop()
            labels.pop()
    return np.array(pts), np.array(labels)


def naive_dot(w, b, x) -> float:
    total = 0.0
    for wi, xi in zip(w, x):
        total += float(wi) * float(xi)
    return total + float(b)


# --- pooling --------------------------------------------------------------------

@njit(cache=True)
def triple_loop_max(block):
    h, w, c = block.shape
    out = np.empty(c, dtype=block.dtype)
    for k in range(c):
        best = block[0, 0, k]
        for i in range(h):
            for j in range(w):
                if block[i, j, k] > best:
                    best = block[i, j, k]
        out[k] = best
    return out


def naive_crop(image: np.ndarray, x: int, y: int, size: int = 224) -> np.ndarray:
    h, w = image.shape[:2]
    out = np.empty((size, size, image.shape[2]), dtype=image.dtype)
    half = size // 2
    for r in range(size):
        for c in range(size):
            yy = min(max(y - half + r, 0), h - 1)
            xx = min(max(x - half + c, 0), w - 1)
            out[r, c] = image[yy, xx]
    return out


# --- metrics --------------------------------------------------------------------

def confusion_report(predictions, truth) -> dict:
    """Per-class counts and scores from nested loops over the sample pairs."""
    classes = sorted(set(predictions) | set(truth), key=str)
    out = {"per_class": {}}
    correct = 0
    for p, t in zip(predictions, truth):
        if p == t:
            correct += 1
    out["accuracy"] = correct / len(truth)
    f1s = []
    for cls in classes:
        tp = fp = fn = tn = 0
        for p, t in zip(predictions, truth):
            if p == cls and t == cls:
                tp += 1
            elif p == cls:
                fp += 1
            elif t == cls:
                fn += 1
            else:
                tn += 1
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out["per_class"][str(cls)] = dict(tp=tp, fp=fp, fn=fn, tn=tn, precision=precision, recall=recall, f1=f, support=tp + fn)
        if tp + fn:
            f1s.append(f)
    total = 0.0
    for f in f1s:
        total += f
    out["mean_f1"] = total / len(f1s)
    return out


def t_test_reference(d, dps: int = 40) -> tuple[float, float]:
    """t statistic and two-sided p by quadrature of the Student t density."""
    with mpmath.workdps(dps):
        d = [mpmath.mpf(float(v)) for v in d]
        n = len(d)
        mean = mpmath.fsum(d) / n
        var = mpmath.fsum((v - mean) ** 2 for v in d) / (n - 1)
        t = mean / mpmath.sqrt(var / n)
        nu = mpmath.mpf(n - 1)
        norm = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))
        pdf = lambda s: norm * (1 + s * s / nu) ** (-(nu + 1) / 2)
        tail = mpmath.quad(pdf, [abs(t), abs(t) + 10, mpmath.inf])
        return float(t), float(2 * tail)


# --- regression -----------------------------------------------------------------

def normal_equations(x, y, dps: int = 50) -> dict[str, float]:
    """Intercept, slope and R^2 from the 2x2 normal equations in extended precision."""
    with mpmath.workdps(dps):
        xs = [mpmath.mpf(float(v)) for v in x]
        ys = [mpmath.mpf(float(v)) for v in y]
        n = len(xs)
        A = mpmath.matrix([[n, mpmath.fsum(xs)], [mpmath.fsum(xs), mpmath.fsum(v * v for v in xs)]])
        rhs = mpmath.matrix([mpmath.fsum(ys), mpmath.fsum(a * b for a, b in zip(xs, ys))])
        b0, b1 = mpmath.lu_solve(A, rhs)
        ybar = mpmath.fsum(ys) / n
        ss_res = mpmath.fsum((yv - b0 - b1 * xv) ** 2 for xv, yv in zip(xs, ys))
        ss_tot = mpmath.fsum((yv - ybar) ** 2 for yv in ys)
        r2 = 1 - ss_res / ss_tot if ss_tot else mpmath.mpf(0)
        return {"intercept": float(b0), "slope": float(b1), "r_squared": float(r2)}
