"""Training objective over a mini-batch of projected document pairs.

Two parts, combined additively:

  * a bidirectional margin ranking loss: for each anchor document, its own
    image/text pair must score higher (by the margin) than sampled negatives
    that share no category with it, in both query directions;
  * temporal soft constraints over in-batch positives (documents sharing at
    least one category): temporally correlated positives should have high
    cross-modality similarity (C1) and temporally uncorrelated ones low
    similarity (C2), each averaged over the positive set.

Cross-modality similarity is the harmonic mean of the two cross dot
products, clamped to [0, 1]. Temporal correlation values are precomputed
constants; gradients flow only through the projections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .projection import ProjectionModel


@dataclass(frozen=True)
class ObjectiveConfig:
    margin: float = 1.0
    lam: float = 1.0
    epsilon: float = 1e-8
    negatives_per_anchor: int = 1

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0 < self.epsilon <= 1e-6:
            raise ValueError("epsilon must be in (0, 1e-6]")
        if self.negatives_per_anchor < 1:
            raise ValueError("negatives_per_anchor must be >= 1")


@dataclass
class BatchPlan:
    """Sampled negatives and positive sets for one mini-batch.

    All indices are batch-local. ``sim_temp`` holds one array per anchor,
    aligned with ``positives``; it is None when no temporal model is in play.
    """

    negatives_text: list[np.ndarray]
    negatives_image: list[np.ndarray]
    positives: list[np.ndarray]
    sim_temp: list[np.ndarray] | None = None
    skipped_anchors: int = 0

    def __len__(self):
        return len(self.positives)


def build_batch_plan(label_sets, rng, negatives_per_anchor=1, sim_temp_fn=None) -> BatchPlan:
    """Sample per-anchor negatives and collect in-batch positives.

    Negatives are drawn uniformly (without replacement) from batch members
    sharing no category with the anchor; anchors with an empty negative pool
    are skipped for the ranking term and counted. ``sim_temp_fn(i, j)`` is
    evaluated on batch-local indices for every (anchor, positive) pair.
    """
    n = len(label_sets)
    neg_text, neg_image, positives = [], [], []
    sims = [] if sim_temp_fn is not None else None
    skipped = 0
    for i in range(n):
        pool = np.array(
            [j for j in range(n) if not (label_sets[i] & label_sets[j])], dtype=np.intp
        )
        if pool.size == 0:
            skipped += 1
            chosen_t = np.empty(0, dtype=np.intp)
            chosen_i = np.empty(0, dtype=np.intp)
        else:
            k = min(negatives_per_anchor, pool.size)
            chosen_t = rng.choice(pool, size=k, replace=False)
            chosen_i = rng.choice(pool, size=k, replace=False)
        neg_text.append(chosen_t)
        neg_image.append(chosen_i)
        pos = np.array(
            [j for j in range(n) if j != i and (label_sets[i] & label_sets[j])],
            dtype=np.intp,
        )
        positives.append(pos)
        if sims is not None:
            sims.append(np.array([sim_temp_fn(i, j) for j in pos], dtype=np.float64))
    return BatchPlan(
        negatives_text=neg_text,
        negatives_image=neg_image,
        positives=positives,
        sim_temp=sims,
        skipped_anchors=skipped,
    )


# ---------------------------------------------------------------------------
# Similarity and constraint algebra


def sim_cmod_value(s_ij, s_ji, epsilon=1e-8):
    """Harmonic-mean cross-modality similarity from the two cross dot products.

    Negative dot products are clamped to 0 first, keeping the result in
    [0, 1] so the (1 - sim) complements in the constraints stay well-posed.
    """
    a = np.maximum(np.asarray(s_ij, dtype=np.float64), 0.0)
    b = np.maximum(np.asarray(s_ji, dtype=np.float64), 0.0)
    return 2.0 * a * b / (a + b + epsilon)


def sim_cmod(model: ProjectionModel, img_i, txt_i, img_j, txt_j, epsilon=1e-8) -> float:
    """Document-level cross-modality similarity under the current model."""
    pi, pj = model.project_images(img_i), model.project_images(img_j)
    ti, tj = model.project_texts(txt_i), model.project_texts(txt_j)
    return float(sim_cmod_value(pi @ tj, ti @ pj, epsilon))


def constraint_penalty(sim_temp_vals, sim_cmod_vals):
    """C1 and C2 violation terms averaged over one anchor's positive set."""
    t = np.asarray(sim_temp_vals, dtype=np.float64)
    s = np.asarray(sim_cmod_vals, dtype=np.float64)
    if t.size == 0:
        return 0.0, 0.0
    c1 = float(np.mean(t * (1.0 - s)))
    c2 = float(np.mean((1.0 - t) * s))
    return c1, c2


@dataclass
class LossBreakdown:
    total: float = 0.0
    ranking: float = 0.0
    temporal: float = 0.0  # unweighted sum of per-anchor C1+C2
    skipped_anchors: int = 0
    active_hinges: int = 0


def loss_terms_from_projections(proj_img, proj_txt, plan: BatchPlan, cfg: ObjectiveConfig,
                                include_temporal=True):
    """Loss value and gradients w.r.t. the projected batch.

    proj_img and proj_txt are (n, D) unit-row matrices. Returns
    (LossBreakdown, d_proj_img, d_proj_txt).
    """
    A = np.asarray(proj_img, dtype=np.float64)
    B = np.asarray(proj_txt, dtype=np.float64)
    n = A.shape[0]
    S = A @ B.T  # S[i, j] = image_i . text_j
    G = np.zeros_like(S)  # dL/dS
    out = LossBreakdown(skipped_anchors=plan.skipped_anchors)

    m = cfg.margin
    for i in range(n):
        s_pos = S[i, i]
        for j in plan.negatives_text[i]:
            hinge = m - s_pos + S[i, j]
            if hinge > 0.0:
                out.ranking += hinge
                out.active_hinges += 1
                G[i, i] -= 1.0
                G[i, j] += 1.0
        for j in plan.negatives_image[i]:
            hinge = m - s_pos + S[j, i]
            if hinge > 0.0:
                out.ranking += hinge
                out.active_hinges += 1
                G[i, i] -= 1.0
                G[j, i] += 1.0

    if include_temporal and cfg.lam > 0.0:
        if plan.sim_temp is None:
            raise ValueError("temporal term requested but plan has no sim_temp values")
        eps = cfg.epsilon
        for i in range(n):
            J = plan.positives[i]
            if J.size == 0:
                continue
            t = plan.sim_temp[i]
            a_raw = S[i, J]
            b_raw = S[J, i]
            a = np.maximum(a_raw, 0.0)
            b = np.maximum(b_raw, 0.0)
            denom = a + b + eps
            s_cm = 2.0 * a * b / denom
            c1, c2 = constraint_penalty(t, s_cm)
            out.temporal += c1 + c2
            # d(C1+C2)/d(s_cm) = (1 - 2 t) / |J|, weighted by lambda
            w = cfg.lam * (1.0 - 2.0 * t) / J.size
            ds_da = 2.0 * b * (b + eps) / denom**2
            ds_db = 2.0 * a * (a + eps) / denom**2
            G[i, J] += w * ds_da * (a_raw > 0.0)
            G[J, i] += w * ds_db * (b_raw > 0.0)

    out.total = out.ranking + cfg.lam * out.temporal
    dA = G @ B
    dB = G.T @ A
    return out, dA, dB


# ---------------------------------------------------------------------------
# Model-level entry points


def _through_model(image_feats, text_vecs, plan, model, cfg, include_temporal):
    proj_img, cache_img = model.image_net.forward(image_feats)
    proj_txt, cache_txt = model.text_net.forward(text_vecs)
    breakdown, dA, dB = loss_terms_from_projections(
        proj_img, proj_txt, plan, cfg, include_temporal=include_temporal
    )
    grads_img, _ = model.image_net.backward(cache_img, dA)
    grads_txt, _ = model.text_net.backward(cache_txt, dB)
    return breakdown, {"image": grads_img, "text": grads_txt}


def ranking_loss(image_feats, text_vecs, plan, model, cfg):
    """Bidirectional margin ranking loss only, with parameter gradients."""
    return _through_model(image_feats, text_vecs, plan, model, cfg, include_temporal=False)


def total_loss(image_feats, text_vecs, plan, model, cfg):
    """Ranking loss plus lambda-weighted temporal penalty, with gradients."""
    return _through_model(image_feats, text_vecs, plan, model, cfg, include_temporal=True)
