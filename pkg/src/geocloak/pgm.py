"""Pairwise geometric re-ranking of retrieval shortlists.

Stage 1 votes each tentative correspondence's rotation and log-scale
change into a coarse 2-D histogram and keeps only correspondences near
the peak's mean transform. Stage 2 checks every surviving pair: the
vector between two query keypoints must map onto the vector between
their database counterparts under the voted rotation and scale. The
candidate's geometric score is the number of consistent pairs; a
correspondence consistent with at least two others counts as an inlier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .features import FeatureSet, Keypoint
from .index import BowIndex, RankedMatch

THETA_BIN = math.pi / 8.0
LOG_SCALE_BIN = 0.2
THETA_TOL = math.pi / 8.0
LOG_SCALE_TOL = 0.2
PAIR_THETA_TOL = math.pi / 8.0
PAIR_LOG_SCALE_TOL = 0.25
MIN_PAIR_LENGTH_PX = 2.0
MIN_INLIER_SUPPORT = 2
_TWO_PI = 2.0 * math.pi


class Correspondence(NamedTuple):
    query: Keypoint
    db: Keypoint
    hamming: int


@dataclass(frozen=True)
class PgmScore:
    inliers: int
    consistent_pairs: int
    rotation: float  # voted rotation estimate, radians
    log_scale: float  # voted ln(scale) estimate


def tentative_correspondences(
    matches: Sequence[tuple[int, int, int]],
    query_keypoints: np.ndarray,
    db_keypoints: np.ndarray,
) -> list[Correspondence]:
    """Greedy one-to-one selection by ascending Hamming distance.

    ``matches`` rows are (query idx, db keypoint ref, hamming) as produced
    by the index; ties resolve by (query idx, db keypoint ref).
    """
    used_q: set[int] = set()
    used_db: set[int] = set()
    out: list[Correspondence] = []
    for qi, ref, h in sorted(matches, key=lambda m: (m[2], m[0], m[1])):
        if qi in used_q or ref in used_db:
            continue
        used_q.add(qi)
        used_db.add(ref)
        out.append(
            Correspondence(
                Keypoint(*(float(v) for v in query_keypoints[qi])),
                Keypoint(*(float(v) for v in db_keypoints[ref])),
                int(h),
            )
        )
    return out


def _circular_diff(a, b):
    """Signed smallest angle a - b, in (-pi, pi]."""
    return np.pi - np.mod(np.pi - (a - b), _TWO_PI)


def pgm_score(corrs: Sequence[Correspondence]) -> PgmScore:
    """Score a correspondence set by pairwise geometric consistency."""
    if len(corrs) < 2:
        return PgmScore(0, 0, 0.0, 0.0)
    qx = np.array([c.query.x for c in corrs])
    qy = np.array([c.query.y for c in corrs])
    dx = np.array([c.db.x for c in corrs])
    dy = np.array([c.db.y for c in corrs])
    dtheta = np.mod(
        np.array([c.db.orientation - c.query.orientation for c in corrs]), _TWO_PI
    )
    dsigma = np.log(np.array([c.db.scale / c.query.scale for c in corrs]))

    # Stage 1: coarse rotation/log-scale voting.
    tbin = np.minimum((dtheta / THETA_BIN).astype(np.int64), int(_TWO_PI / THETA_BIN) - 1)
    sbin = np.floor(dsigma / LOG_SCALE_BIN).astype(np.int64)
    votes: dict[tuple[int, int], list[int]] = {}
    for i, key in enumerate(zip(tbin.tolist(), sbin.tolist())):
        votes.setdefault(key, []).append(i)
    peak_key = min(votes, key=lambda k: (-len(votes[k]), k))
    members = votes[peak_key]
    theta_star = float(np.mean(dtheta[members]))
    sigma_star = float(np.mean(dsigma[members]))
    keep = (np.abs(_circular_diff(dtheta, theta_star)) <= THETA_TOL) & (
        np.abs(dsigma - sigma_star) <= LOG_SCALE_TOL
    )
    idx = np.flatnonzero(keep)
    if idx.size < 2:
        return PgmScore(0, 0, theta_star, sigma_star)

    # Stage 2: pairwise vector consistency among survivors.
    i_idx, j_idx = np.triu_indices(idx.size, k=1)
    a, b = idx[i_idx], idx[j_idx]
    vqx, vqy = qx[b] - qx[a], qy[b] - qy[a]
    vdx, vdy = dx[b] - dx[a], dy[b] - dy[a]
    len_q = np.hypot(vqx, vqy)
    len_db = np.hypot(vdx, vdy)
    valid = (len_q >= MIN_PAIR_LENGTH_PX) & (len_db > 0.0)
    angle_ok = np.zeros(a.shape[0], dtype=bool)
    scale_ok = np.zeros(a.shape[0], dtype=bool)
    if valid.any():
        rot = _circular_diff(
            np.arctan2(vdy[valid], vdx[valid]) - np.arctan2(vqy[valid], vqx[valid]),
            theta_star,
        )
        angle_ok[valid] = np.abs(rot) <= PAIR_THETA_TOL
        scale_ok[valid] = (
            np.abs(np.log(len_db[valid] / len_q[valid]) - sigma_star) <= PAIR_LOG_SCALE_TOL
        )
    consistent = valid & angle_ok & scale_ok
    support = np.zeros(len(corrs), dtype=np.int64)
    np.add.at(support, a[consistent], 1)
    np.add.at(support, b[consistent], 1)
    inliers = int((support >= MIN_INLIER_SUPPORT).sum())
    return PgmScore(inliers, int(consistent.sum()), theta_star, sigma_star)


def score_candidate(candidate: RankedMatch, query: FeatureSet, index: BowIndex) -> PgmScore:
    """Geometric score of one shortlist candidate against the query."""
    corrs = tentative_correspondences(
        candidate.matches, query.keypoints, index.keypoints_of(candidate.image_id)
    )
    return pgm_score(corrs)


def rerank(
    candidates: Sequence[RankedMatch], query: FeatureSet, index: BowIndex
) -> list[RankedMatch]:
    """Reorder a shortlist by geometric consistency.

    Candidates with a positive pair count come first, ordered by
    (pair count desc, original score desc, image id asc); zero-score
    candidates follow in their original relative order.
    """
    scored = [
        replace(cand, pgm_pairs=score_candidate(cand, query, index).consistent_pairs)
        for cand in candidates
    ]
    positive = [c for c in scored if c.pgm_pairs > 0]
    zero = [c for c in scored if c.pgm_pairs <= 0]
    positive.sort(key=lambda c: (-c.pgm_pairs, -c.score, c.image_id))
    return positive + zero
