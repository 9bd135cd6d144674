"""Independent brute-force oracles for loss and metric checks.

Everything here is deliberately written with plain Python scalar loops
(math module only, no torch, no vectorization) so the oracles share no code
path with the implementations they verify.
"""

import math


def mse_oracle(recons, targets, reduction="mean"):
    """Pixel-loop MSE over two equally shaped nested arrays."""
    flat_r = _flatten(recons)
    flat_t = _flatten(targets)
    assert len(flat_r) == len(flat_t)
    total = 0.0
    for a, b in zip(flat_r, flat_t):
        total += (a - b) ** 2
    return total / len(flat_r) if reduction == "mean" else total


def _flatten(arr):
    out = []
    stack = [arr]
    while stack:
        item = stack.pop()
        try:
            stack.extend(reversed(list(item)))
        except TypeError:
            out.append(float(item))
    return out


def cross_entropy_oracle(logit_groups, labels):
    """Sum over groups of batch-mean negative log softmax probability."""
    total = 0.0
    for logits in logit_groups:
        group_sum = 0.0
        for row, label in zip(logits, labels):
            row = [float(v) for v in row]
            m = max(row)
            lse = m + math.log(sum(math.exp(v - m) for v in row))
            group_sum += lse - row[int(label)]
        total += group_sum / len(labels)
    return total


def euclidean_oracle(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += (float(x) - float(y)) ** 2
    return math.sqrt(total)


def batch_hard_triplet_oracle(feats, labels, margin, anchor_reduction="mean"):
    """Exhaustive hardest-positive/hardest-negative search per anchor."""
    n = len(feats)
    labels = [int(l) for l in labels]
    hinges = []
    for a in range(n):
        d_ap, d_an = None, None
        for j in range(n):
            if j == a:
                continue
            d = euclidean_oracle(feats[a], feats[j])
            if labels[j] == labels[a]:
                d_ap = d if d_ap is None else max(d_ap, d)
            else:
                d_an = d if d_an is None else min(d_an, d)
        if d_ap is None or d_an is None:
            continue
        hinges.append(max(0.0, d_ap - d_an + margin))
    assert hinges, "no valid anchor"
    total = sum(hinges)
    return total / len(hinges) if anchor_reduction == "mean" else total


def triplet_oracle(feature_groups, labels, margin, anchor_reduction="mean"):
    return sum(batch_hard_triplet_oracle(g, labels, margin, anchor_reduction)
               for g in feature_groups)


def cmc_map_oracle(query_feats, gallery_feats, query_ids, gallery_ids,
                   query_cams=None, gallery_cams=None, filter_same_camera=False):
    """Loop-everything CMC curve and mean average precision.

    Ranking: ascending Euclidean distance, ties broken by gallery index.
    With filtering on, gallery entries sharing identity and camera with the
    query are dropped. Queries without any remaining positive are skipped.
    The CMC length is the shortest filtered gallery over valid queries.
    """
    per_query_rankings = []
    for qi in range(len(query_feats)):
        scored = []
        for gi in range(len(gallery_feats)):
            if filter_same_camera and gallery_ids[gi] == query_ids[qi] \
                    and gallery_cams[gi] == query_cams[qi]:
                continue
            scored.append((euclidean_oracle(query_feats[qi], gallery_feats[gi]), gi))
        scored.sort()
        per_query_rankings.append([gi for _, gi in scored])

    cmc_rows, aps = [], []
    cmc_len = None
    for qi, ranking in enumerate(per_query_rankings):
        matches = [1 if gallery_ids[gi] == query_ids[qi] else 0 for gi in ranking]
        num_rel = sum(matches)
        if num_rel == 0:
            continue
        cmc_len = len(ranking) if cmc_len is None else min(cmc_len, len(ranking))
        first = matches.index(1)
        cmc_rows.append([0.0] * first + [1.0] * (len(ranking) - first))
        ap = 0.0
        hits = 0
        for pos, m in enumerate(matches):
            if m:
                hits += 1
                ap += hits / (pos + 1)
        aps.append(ap / num_rel)

    if not aps:
        return [], float("nan"), 0
    cmc = []
    for k in range(cmc_len):
        cmc.append(sum(row[k] for row in cmc_rows) / len(cmc_rows))
    mean_ap = sum(aps) / len(aps)
    return cmc, mean_ap, len(aps)


def central_difference_gradients(loss_fn, params, h=1e-6):
    """Finite-difference gradient of a scalar loss w.r.t. flat parameter lists.

    params is a list of 1-D mutable sequences (views into model parameters);
    loss_fn() must re-evaluate the loss at the current parameter values.
    Yields (param_index, element_index, fd_gradient).
    """
    for pi, flat in enumerate(params):
        for i in range(len(flat)):
            old = float(flat[i])
            flat[i] = old + h
            hi = loss_fn()
            flat[i] = old - h
            lo = loss_fn()
            flat[i] = old
            yield pi, i, (hi - lo) / (2.0 * h)
