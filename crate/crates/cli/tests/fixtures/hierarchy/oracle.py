#!/usr/bin/env python3
"""Brute-force reference values for the hierarchy fixture.

Recomputes ingest, sessions, the three distributions (dense linear solves)
and the comparison metrics straight from access.log and edges.tsv, and
writes expected.json. Run from anywhere:

    python3 oracle.py
"""

import json
import math
import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
ALPHA = 0.85
DELTA = 1800
BINS = 50
CONTENT_TYPE = "text/html"
BOT = ["crawl", "slurp", "spider", "bot"]
ADMIN = ["preview", "edit.jsp", "action=edit", "upload", "/rss", "rss.jsp", "rss.xml", "rss.rdf", "/feed"]


def normalize(url):
    url = url.split("#", 1)[0]
    path, _, query = url.partition("?")
    has_query = "?" in url
    if "://" in path:
        scheme, rest = path.split("://", 1)
        slash = rest.find("/")
        authority, p = (rest, "") if slash < 0 else (rest[:slash], rest[slash:])
        user, at, host = authority.rpartition("@")
        host = host.lower()
        while host.startswith("www."):
            host = host[4:]
        out = scheme.lower() + "://" + user + at + host + p.rstrip("/")
    else:
        out = path.rstrip("/") or ("/" if path else "")
    return out + ("?" + query if has_query else "")


def ingest(path):
    drops = dict(total=0, kept=0, parse_error=0, wrong_content_type=0, bad_response_code=0,
                 admin_path=0, bot_user_agent=0, self_referrer=0)
    kept = []
    for raw in open(path, encoding="utf-8").read().split("\n"):
        if not raw.strip():
            continue
        drops["total"] += 1
        cols = raw.split("\t")
        try:
            assert len(cols) == 9
            ts, code = int(cols[2]), int(cols[5])
            assert ts >= 0
        except (AssertionError, ValueError):
            drops["parse_error"] += 1
            continue
        key, target, ctype, ref, ua = cols[1], normalize(cols[4]), cols[6], cols[7], cols[8]
        ref = None if ref.strip() in ("", "-") else normalize(ref.strip())
        if not ctype.strip().lower().startswith(CONTENT_TYPE):
            reason = "wrong_content_type"
        elif code != 200:
            reason = "bad_response_code"
        elif any(p in target.lower() or (ref is not None and p in ref.lower()) for p in ADMIN):
            reason = "admin_path"
        elif any(b in ua.lower() for b in BOT):
            reason = "bot_user_agent"
        elif ref == target:
            reason = "self_referrer"
        else:
            reason = "kept"
        drops[reason] += 1
        if reason == "kept":
            kept.append((key, ts, target, ref))
    return kept, drops


def sessions(kept):
    order, groups = [], {}
    for key, ts, target, ref in kept:
        if key not in groups:
            order.append(key)
            groups[key] = []
        groups[key].append((ts, target, ref))
    out = []
    for key in order:
        visits = sorted(groups[key], key=lambda v: v[0])
        cur = [visits[0]]
        for v in visits[1:]:
            prev = cur[-1][0]
            if v[0] - prev > DELTA or v[0] // 86400 != prev // 86400:
                out.append(cur)
                cur = []
            cur.append(v)
        out.append(cur)
    return out


def is_bot(s):
    missing = sum(1 for v in s if v[2] is None)
    return len(s) >= 4 and missing > 0.5 * len(s)


def stationary(nodes, weight):
    """pi proportional to (I - alpha P)^-1 1 with P = W D^-1, d_jj = 1 for dangling j."""
    n = len(nodes)
    W = np.zeros((n, n))
    for (j, i), w in weight.items():
        W[i, j] = w
    k = W.sum(axis=0)
    P = W / np.where(k > 0, k, 1.0)
    y = np.linalg.solve(np.eye(n) - ALPHA * P, np.ones(n))
    return dict(zip(nodes, (y / y.sum()).tolist()))


def gini(values):
    x = np.sort(np.array(values, dtype=float))
    n = len(x)
    i = np.arange(1, n + 1)
    return float(((2 * i - n - 1) * x).sum() / (n * x.sum()))


def lorenz(values):
    x = np.sort(np.array(values, dtype=float))
    c = np.cumsum(x) / x.sum()
    pts = [(0.0, 0.0)] + [((k + 1) / len(x), float(c[k])) for k in range(len(x))]
    pts[-1] = (1.0, 1.0)
    return pts


def pearson(a, b):
    a, b = np.array(a), np.array(b)
    da, db = a - a.mean(), b - b.mean()
    return float((da * db).sum() / math.sqrt((da * da).sum() * (db * db).sum()))


def heatmap(a, b):
    def edges(v):
        lo, hi = math.log10(min(v)), math.log10(max(v))
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi

    (xl, xh), (yl, yh) = edges(a), edges(b)
    cells = {}
    for x, y in zip(a, b):
        xi = min(max(int(math.floor((math.log10(x) - xl) / (xh - xl) * BINS)), 0), BINS - 1)
        yi = min(max(int(math.floor((math.log10(y) - yl) / (yh - yl) * BINS)), 0), BINS - 1)
        cells[(xi, yi)] = cells.get((xi, yi), 0) + 1
    return sorted([xi, yi, c] for (xi, yi), c in cells.items())


def main():
    nodes, out_edges = [], {}
    for line in open(os.path.join(HERE, "edges.tsv")):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        s, t = line.split("\t")[:2]
        for u in (s, t):
            if u not in out_edges:
                nodes.append(u)
                out_edges[u] = []
        if t not in out_edges[s]:
            out_edges[s].append(t)
    edge_set = {(s, t) for s in nodes for t in out_edges[s]}

    kept, drops = ingest(os.path.join(HERE, "access.log"))
    all_sessions = sessions(kept)
    good = [s for s in all_sessions if not is_bot(s)]

    trans, teleports = {}, 0
    for s in good:
        for (_, u, _), (_, v, _) in zip(s, s[1:]):
            if (u, v) in edge_set:
                trans[(u, v)] = trans.get((u, v), 0) + 1
            else:
                teleports += 1
    visited = {v[1] for s in good for v in s}
    views = {}
    for _, _, target, _ in kept:
        views[target] = views.get(target, 0) + 1

    index = {u: i for i, u in enumerate(nodes)}
    uniform = stationary(nodes, {(index[s], index[t]): 1.0 for s, t in edge_set})

    prag_w = {}
    for s, t in edge_set:
        if s in visited and t in visited:
            c = trans.get((s, t), 0)
            prag_w[(s, t)] = 1.0 + (1.0 + math.log(c) if c > 0 else 0.0)
    kept_nodes = [u for u in nodes if any(u in e for e in prag_w)]
    pidx = {u: i for i, u in enumerate(kept_nodes)}
    pragmatic = stationary(kept_nodes, {(pidx[s], pidx[t]): w for (s, t), w in prag_w.items()})

    total_views = sum(views.values())
    lateral = {u: c / total_views for u, c in views.items()}

    dists = {"uniform": uniform, "pragmatic": pragmatic, "lateral": lateral}
    models = {}
    for label, d in dists.items():
        pos = [p for p in d.values() if p > 0]
        models[label] = {"support_size": len(pos), "gini": gini(pos), "lorenz": lorenz(pos)}
    pairs = {}
    labels = list(dists)
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = dists[labels[i]], dists[labels[j]]
            common = [u for u in a if a[u] > 0 and b.get(u, 0) > 0]
            sa = sum(a[u] for u in common)
            sb = sum(b[u] for u in common)
            xa = [a[u] / sa for u in common]
            xb = [b[u] / sb for u in common]
            pairs[f"{labels[i]}_{labels[j]}"] = {
                "common_support_size": len(common),
                "pearson": pearson(xa, xb),
                "ratios": {u: x / y for u, x, y in zip(common, xa, xb)},
                "heatmap": heatmap(xa, xb),
            }

    expected = {
        "alpha": ALPHA,
        "drops": drops,
        "sessions": {
            "sessions": len(good),
            "bot_sessions": len(all_sessions) - len(good),
            "transitions": sum(trans.values()),
            "distinct_transitions": len(trans),
            "teleportations": teleports,
            "visited_pages": len(visited),
            "page_views": total_views,
        },
        "transitions": sorted([s, t, c] for (s, t), c in trans.items()),
        "distributions": dists,
        "models": models,
        "pairs": pairs,
    }
    with open(os.path.join(HERE, "expected.json"), "w") as f:
        json.dump(expected, f, indent=1, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
