"""Sequential next-item losses, prototype pooling, corruption and the
bilinear infomax discriminator.

All functions work on batched tensors laid out on the merged timeline:
``(batch, length, dim)`` representations and ``(batch, length)`` index
tensors. Losses are sums (not means) over target positions / sequences.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

PROB_FLOOR = 1e-7
_LOG_LO = math.log(PROB_FLOOR)
_LOG_HI = math.log1p(-PROB_FLOOR)


class NonFiniteError(FloatingPointError):
    pass


def check_finite(name: str, t: torch.Tensor) -> None:
    if not torch.isfinite(t).all():
        bad = (~torch.isfinite(t)).sum().item()
        raise NonFiniteError(f"{name}: {bad} of {t.numel()} entries are NaN/Inf (shape {tuple(t.shape)})")


def clamped_log(log_p: torch.Tensor) -> torch.Tensor:
    """``log(clamp(p, 1e-7, 1 - 1e-7))`` given ``log p``."""
    return log_p.clamp(_LOG_LO, _LOG_HI)


def prediction_logits(h_view: torch.Tensor | None, h_merged: torch.Tensor | None, weight: torch.Tensor):
    # h_view @ W + h_merged @ W; either side may be dropped (cross-only or single-only scoring).
    if h_view is None:
        return h_merged @ weight
    if h_merged is None:
        return h_view @ weight
    return (h_view + h_merged) @ weight


def single_prediction_probs(h_view, h_merged, weight) -> torch.Tensor:
    check_finite("h_view", h_view)
    check_finite("h_merged", h_merged)
    return torch.softmax(prediction_logits(h_view, h_merged, weight), dim=-1)


def target_masks(merged: torch.Tensor, lengths: torch.Tensor, n_x: int) -> dict[str, torch.Tensor]:
    """Position t is an X target iff ``merged[t+1]`` exists and lies in X.

    Returns domain-local next-item indices (zero where masked) and boolean
    masks, each shaped like ``merged``; the final column is always masked.
    """
    batch, length = merged.shape
    nxt = torch.zeros_like(merged)
    nxt[:, :-1] = merged[:, 1:]
    pos = torch.arange(length, device=merged.device).expand(batch, length)
    has_next = pos + 1 < lengths.unsqueeze(1)
    mask_x = has_next & (nxt < n_x)
    mask_y = has_next & (nxt >= n_x)
    return {
        "next_x": torch.where(mask_x, nxt, torch.zeros_like(nxt)),
        "mask_x": mask_x,
        "next_y": torch.where(mask_y, nxt - n_x, torch.zeros_like(nxt)),
        "mask_y": mask_y,
    }


def _nll(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if logits.shape[0] == 0:
        return logits.sum() * 0.0
    logp = clamped_log(torch.log_softmax(logits, dim=-1))
    return -logp.gather(1, targets.unsqueeze(1)).sum()


def single_domain_loss(h_view, h_merged, weight, targets, mask) -> torch.Tensor:
    """Sum of ``-log softmax(h_view W + h W)[next]`` over masked positions."""
    return _nll(prediction_logits(h_view[mask], h_merged[mask], weight), targets[mask])


def cross_domain_loss(h_merged, w_x, w_y, targets: dict[str, torch.Tensor]) -> torch.Tensor:
    """Each target is scored by a softmax over its own domain only."""
    lx = _nll(h_merged[targets["mask_x"]] @ w_x, targets["next_x"][targets["mask_x"]])
    ly = _nll(h_merged[targets["mask_y"]] @ w_y, targets["next_y"][targets["mask_y"]])
    return lx + ly


def length_mask(lengths: torch.Tensor, length: int) -> torch.Tensor:
    return torch.arange(length, device=lengths.device).unsqueeze(0) < lengths.unsqueeze(1)


def single_prototype(h_view: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Mean over every real position of the view (batch padding excluded)."""
    m = length_mask(lengths, h_view.shape[1]).to(h_view.dtype).unsqueeze(-1)
    return (h_view * m).sum(1) / lengths.to(h_view.dtype).unsqueeze(1)


def cross_prototype(h_merged: torch.Tensor, domain_mask: torch.Tensor) -> torch.Tensor:
    """Mean of merged-sequence rows at the positions selected by ``domain_mask``."""
    counts = domain_mask.sum(1)
    if (counts == 0).any():
        raise ValueError(f"{int((counts == 0).sum())} sequence(s) have no item of the requested domain")
    m = domain_mask.to(h_merged.dtype).unsqueeze(-1)
    return (h_merged * m).sum(1) / counts.to(h_merged.dtype).unsqueeze(1)


def corrupt(
    merged: torch.Tensor,
    keep_domain: str,
    n_x: int,
    n_y: int,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Keep ``keep_domain`` items, replace every other-domain item.

    ``corrupt(S, "X")`` yields true X items with uniformly drawn Y items in
    the Y slots; pads, positions and domain tags are preserved. Draws are
    with replacement and may coincide with the true item.
    """
    pad = n_x + n_y
    is_x = merged < n_x
    is_y = (merged >= n_x) & (merged < pad)
    out = merged.clone()
    if keep_domain == "X":
        slots, low, high = is_y, n_x, pad
    elif keep_domain == "Y":
        slots, low, high = is_x, 0, n_x
    else:
        raise ValueError(f"domain must be X or Y, got {keep_domain!r}")
    draws = torch.randint(low, high, merged.shape, generator=generator, device=merged.device)
    out[slots] = draws[slots]
    return out


def discriminator_logits(o_single, o_cross, w_disc) -> torch.Tensor:
    return ((o_single @ w_disc) * o_cross).sum(-1)


def discriminate(o_single, o_cross, w_disc) -> torch.Tensor:
    return torch.sigmoid(discriminator_logits(o_single, o_cross, w_disc))


def infomax_loss(o_single, o_cross_pos, o_cross_neg, w_disc) -> torch.Tensor:
    """Binary cross-entropy over one positive and one corrupted pair per row."""
    pos = discriminator_logits(o_single, o_cross_pos, w_disc)
    neg = discriminator_logits(o_single, o_cross_neg, w_disc)
    return -(clamped_log(F.logsigmoid(pos)) + clamped_log(F.logsigmoid(-neg))).sum()


def total_loss(lam: float, l_cross, l_single_x, l_single_y, l_disc_x, l_disc_y):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"harmonic factor must lie in [0, 1], got {lam}")
    return lam * (l_cross + l_single_x + l_single_y) + (1.0 - lam) * (l_disc_x + l_disc_y)
