"""Loop-based reference computations shared by the tests."""
import math

import numpy as np


def naive_softmax(x):
    e = [math.exp(v - max(x)) for v in x]
    return [v / sum(e) for v in e]


def oracle_layer(edges, n_users, H, W, prompts=None):
    """Node-by-node propagation written with explicit loops.

    ``prompts[u]`` is ``(features, degrees)`` of user ``u``'s prompt nodes.
    """
    n = len(H)
    out = np.zeros_like(H)
    nbrs = {k: [] for k in range(n)}
    for u, i in edges:
        nbrs[u].append(n_users + i)
        nbrs[n_users + i].append(u)
    deg = {k: len(v) for k, v in nbrs.items()}
    for node in range(n):
        h = W["W_U"] @ H[node]
        agg = np.zeros(H.shape[1])
        if nbrs[node]:
            q = W["W_Q"] @ H[node]
            w = naive_softmax([q @ (W["W_K"] @ H[j]) for j in nbrs[node]])
            for wj, j in zip(w, nbrs[node]):
                agg += wj * (W["W_V"] @ H[j])
        if prompts is not None and node < n_users:
            feats, degs = prompts[node]
            if feats:
                n_j = sum(deg[j] for j in nbrs[node])
                n_r = sum(max(d, 1) for d in degs)
                lam = n_r / (n_j + n_r)
                q = W["W_Q"] @ H[node]
                w = naive_softmax([q @ (W["W_K"] @ f) for f in feats])
                pagg = sum(wr * (W["P_V"] @ f) for wr, f in zip(w, feats))
                agg = (1 - lam) * agg + lam * pagg
        out[node] = h + agg
    return out


def oracle_encode(edges, n_users, tensors, n_layers):
    H = np.vstack([tensors["user_embeddings"], tensors["item_embeddings"]])
    layers = [H]
    for layer in range(n_layers):
        W = {w: tensors[f"layer{layer}.{w}"] for w in ("W_Q", "W_K", "W_V", "W_U")}
        H = oracle_layer(edges, n_users, H, W)
        layers.append(H)
    mean = sum(layers) / len(layers)
    return mean[:n_users], mean[n_users:]


def oracle_infonce(view_a, view_b, nodes, tau):
    """Mean over ``nodes`` of -log softmax of the positive among all in-batch nodes."""
    total = 0.0
    for q in nodes:
        logits = [float(view_a[q] @ view_b[k]) / tau for k in nodes]
        m = max(logits)
        log_den = m + math.log(sum(math.exp(v - m) for v in logits))
        total += log_den - logits[nodes.index(q)]
    return total / len(nodes)
