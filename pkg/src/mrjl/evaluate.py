"""Gallery/query feature extraction, ranking, and CMC/mAP metrics.

In unknown-resolution mode every image, gallery or query, runs through the
same pipeline: reconstruct, then extract and concatenate both branch
features. In known-resolution mode gallery images skip the HR reconstruction
(the original image feeds the HR branch directly) while queries keep the full
pipeline. Retrieval ranks gallery entries by Euclidean distance on the joint
feature (ties broken by gallery index) and reports CMC and mAP under the
standard same-identity-same-camera filtering protocol.
"""

from __future__ import annotations

import dataclasses
import json
import random
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import ImageRecord, load_or_scan
from .dffn import DFFN, BRANCH_DIM, BranchConfig
from .errors import DataError
from .images import load_image
from .rrn import RRN, RRNConfig
from .trainer import TrainConfig, _tupled

MODES = ("unknown", "known")
SUBSETS = ("joint", "hr_only", "lr_only")

_SUBSET_SLICES = {
    "joint": slice(None),
    "hr_only": slice(0, BRANCH_DIM),
    "lr_only": slice(BRANCH_DIM, 2 * BRANCH_DIM),
}


@dataclasses.dataclass
class EvalModels:
    rrn: RRN
    dffn: DFFN
    checkpoint_id: str


def load_models(checkpoint_path: str | Path) -> EvalModels:
    payload = ckpt.load_checkpoint(checkpoint_path)
    rrn = RRN(RRNConfig(**_tupled_rrn(payload["rrn_config"])))
    dffn = DFFN(BranchConfig(**_tupled_rrn(payload["branch_config"])))
    rrn.load_state_dict(payload["model"]["rrn"])
    dffn.load_state_dict(payload["model"]["dffn"])
    rrn.eval()
    dffn.eval()
    return EvalModels(rrn, dffn, ckpt.checkpoint_id(checkpoint_path, payload))


def _tupled_rrn(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _load_batch(records: Sequence[ImageRecord], root: Path) -> torch.Tensor:
    return torch.stack([load_image(root / r.path).data for r in records])


@torch.no_grad()
def extract_features(records: Sequence[ImageRecord], root: str | Path,
                     models: EvalModels, mode: str = "unknown",
                     batch_size: int = 16) -> np.ndarray:
    """Joint features (n, 3072) in record order.

    mode "unknown" treats every image identically; mode "known" feeds gallery
    images directly into the HR branch (no HR reconstruction) while still
    reconstructing their LR version, and processes queries as unknown.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    root = Path(root)
    missing = [str(root / r.path) for r in records if not (root / r.path).is_file()]
    if missing:
        from .errors import IngestionError
        raise IngestionError(f"{len(missing)} image files missing", paths=missing)

    rows = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        x = _load_batch(chunk, root)
        recon_hr, recon_lr = models.rrn(x)
        if mode == "known":
            as_gallery = torch.tensor([r.split == "gallery" for r in chunk])
            hr_in = torch.where(as_gallery[:, None, None, None], x, recon_hr)
        else:
            hr_in = recon_hr
        rows.append(models.dffn.joint_features(hr_in, recon_lr).numpy())
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, 2 * BRANCH_DIM))


def subset_columns(features: np.ndarray, subset: str) -> np.ndarray:
    if subset not in SUBSETS:
        raise ValueError(f"subset must be one of {SUBSETS}, got {subset!r}")
    return features[:, _SUBSET_SLICES[subset]]


# ---------------------------------------------------------------------------
# Ranking and metrics
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class RetrievalResult:
    """Per-query rankings plus aggregate CMC and mAP.

    ranked_indices[i] lists gallery indices for query i, nearest first, after
    junk filtering; cmc[k-1] is the Rank-k accuracy over valid queries (those
    with at least one positive); queries without positives are skipped.
    """

    ranked_indices: list[np.ndarray]
    ranked_distances: list[np.ndarray]
    cmc: np.ndarray
    map: float
    n_valid_queries: int

    def rank_k(self, k: int) -> float:
        if len(self.cmc) == 0:
            return float("nan")
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def rank(query_feats: np.ndarray, gallery_feats: np.ndarray,
         query_ids: Sequence[int], gallery_ids: Sequence[int],
         query_cams: Sequence[int] | None = None,
         gallery_cams: Sequence[int] | None = None,
         filter_same_camera: bool = True) -> RetrievalResult:
    """Euclidean ranking with deterministic index tie-break, CMC and mAP.

    With filtering on, gallery entries sharing both identity and camera with
    the query are dropped from that query's ranking (standard protocol).
    """
    q = np.asarray(query_feats, dtype=np.float64)
    g = np.asarray(gallery_feats, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: query {q.shape} vs gallery {g.shape}")
    q_ids = np.asarray(query_ids)
    g_ids = np.asarray(gallery_ids)
    if filter_same_camera and (query_cams is None or gallery_cams is None):
        raise ValueError("camera ids are required when filter_same_camera is on")
    q_cams = np.asarray(query_cams) if query_cams is not None else None
    g_cams = np.asarray(gallery_cams) if gallery_cams is not None else None

    ranked_idx, ranked_dist = [], []
    per_query_cmc, per_query_ap = [], []
    cmc_len = None

    for i in range(q.shape[0]):
        diff = g - q[i]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        order = np.argsort(dist, kind="stable")
        if filter_same_camera:
            junk = (g_ids[order] == q_ids[i]) & (g_cams[order] == q_cams[i])
            order = order[~junk]
        ranked_idx.append(order)
        ranked_dist.append(dist[order])

        matches = g_ids[order] == q_ids[i]
        num_rel = int(matches.sum())
        if num_rel == 0:
            continue
        cmc_len = len(order) if cmc_len is None else min(cmc_len, len(order))

        hits = np.cumsum(matches)
        first = int(np.argmax(matches))
        cmc_row = np.zeros(len(order))
        cmc_row[first:] = 1.0
        per_query_cmc.append(cmc_row)

        ap = 0.0
        for pos in np.flatnonzero(matches):
            ap += hits[pos] / (pos + 1)
        per_query_ap.append(ap / num_rel)

    if not per_query_ap:
        return RetrievalResult(ranked_idx, ranked_dist, np.zeros(0), float("nan"), 0)

    cmc = np.zeros(cmc_len)
    for row in per_query_cmc:
        cmc += row[:cmc_len]
    cmc /= len(per_query_cmc)
    mean_ap = sum(per_query_ap) / len(per_query_ap)
    return RetrievalResult(ranked_idx, ranked_dist, cmc, mean_ap, len(per_query_ap))


def rank_single_shot(query_feats, gallery_feats, query_ids, gallery_ids,
                     query_cams=None, gallery_cams=None,
                     filter_same_camera: bool = False, trials: int = 10,
                     seed: int = 0) -> RetrievalResult:
    """Single-gallery-shot protocol: per trial keep one random gallery image
    per identity, then average CMC/mAP over trials."""
    rng = random.Random(seed)
    g_ids = np.asarray(gallery_ids)
    by_id: dict[int, list[int]] = {}
    for idx, gid in enumerate(g_ids):
        by_id.setdefault(int(gid), []).append(idx)

    cmc_sum, map_sum, cmc_len, last = None, 0.0, None, None
    for _ in range(max(1, trials)):
        keep = sorted(rng.choice(idxs) for idxs in by_id.values())
        keep = np.asarray(keep)
        res = rank(query_feats, np.asarray(gallery_feats)[keep],
                   query_ids, g_ids[keep],
                   query_cams, np.asarray(gallery_cams)[keep] if gallery_cams is not None else None,
                   filter_same_camera)
        last = res
        cmc_len = len(res.cmc) if cmc_len is None else min(cmc_len, len(res.cmc))
        cmc_sum = res.cmc[:cmc_len] if cmc_sum is None else cmc_sum[:cmc_len] + res.cmc[:cmc_len]
        map_sum += res.map
    n = max(1, trials)
    return RetrievalResult(last.ranked_indices, last.ranked_distances,
                           cmc_sum / n, map_sum / n, last.n_valid_queries)


# ---------------------------------------------------------------------------
# End-to-end evaluation
# ---------------------------------------------------------------------------

def evaluate(root: str | Path, models: EvalModels, mode: str = "unknown",
             subset: str = "joint", filter_same_camera: bool = True,
             protocol: str = "multishot", trials: int = 10,
             records: Sequence[ImageRecord] | None = None) -> dict:
    """One evaluation row: extract, rank, aggregate."""
    root = Path(root)
    if records is None:
        records = load_or_scan(root)
    gallery = [r for r in records if r.split == "gallery"]
    query = [r for r in records if r.split == "query"]
    if not gallery or not query:
        raise DataError(f"dataset under {root} needs non-empty gallery and query splits")

    feats_g = extract_features(gallery, root, models, mode)
    feats_q = extract_features(query, root, models, mode)
    feats_g = subset_columns(feats_g, subset)
    feats_q = subset_columns(feats_q, subset)

    kwargs = dict(
        query_ids=[r.identity for r in query], gallery_ids=[r.identity for r in gallery],
        query_cams=[r.camera for r in query], gallery_cams=[r.camera for r in gallery],
        filter_same_camera=filter_same_camera,
    )
    if protocol == "singleshot":
        result = rank_single_shot(feats_q, feats_g, trials=trials, **kwargs)
    elif protocol == "multishot":
        result = rank(feats_q, feats_g, **kwargs)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")

    return {
        "mode": mode,
        "subset": subset,
        "rank1": result.rank_k(1),
        "rank5": result.rank_k(5),
        "rank10": result.rank_k(10),
        "map": result.map,
        "n_query": len(query),
        "n_gallery": len(gallery),
        "checkpoint_id": models.checkpoint_id,
    }


def evaluate_grid(root, models, modes: Sequence[str] = ("unknown",),
                  subsets: Sequence[str] = ("joint",), **kwargs) -> list[dict]:
    """Subset/mode sweep from one checkpoint, no retraining.

    The subset sweep reuses one feature extraction per mode: the single-branch
    rows are column slices of the joint feature matrix.
    """
    rows = []
    for mode in modes:
        for subset in subsets:
            rows.append(evaluate(root, models, mode=mode, subset=subset, **kwargs))
    return rows


def format_report(rows: Sequence[dict]) -> str:
    header = f"{'mode':<9} {'subset':<9} {'Rank-1':>7} {'Rank-5':>7} {'Rank-10':>8} {'mAP':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['mode']:<9} {r['subset']:<9} {r['rank1']:>7.3f} {r['rank5']:>7.3f} "
            f"{r['rank10']:>8.3f} {r['map']:>7.3f}"
        )
    return "\n".join(lines)


def write_report(rows: Sequence[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = rows[0] if len(rows) == 1 else {"rows": list(rows)}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Feature matrix dumps: text header "n_rows n_cols dtype", then raw row-major bytes
# ---------------------------------------------------------------------------

def save_features(path: str | Path, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"{arr.shape[0]} {arr.shape[1]} {arr.dtype.name}\n".encode("ascii"))
        fh.write(arr.tobytes())


def load_features(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 3:
            raise DataError(f"bad feature dump header in {path}")
        n, m, dtype = int(header[0]), int(header[1]), header[2]
        data = np.frombuffer(fh.read(), dtype=np.dtype(dtype))
    if data.size != n * m:
        raise DataError(f"feature dump {path} truncated: expected {n * m} values, got {data.size}")
    return data.reshape(n, m)
