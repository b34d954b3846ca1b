"""SI-SDR metric/loss, permutation-invariant assignment, combined objective.

The training objective keeps the visually-guided estimates pinned to
their references positionally and lets the remaining, unguided
estimates find their best assignment:

    total = mean_{i<P} L(est_i, ref_i) + min_perm mean_j L(est_{P+j}, ref_{P+perm(j)})

Both terms use the negative SI-SDR in dB. All functions are
differentiable through torch.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import torch

from .errors import InvalidInputError

EPS = 1e-8


def _as_signal(x) -> torch.Tensor:
    t = torch.as_tensor(x)
    if t.dim() != 1 or t.numel() == 0:
        raise InvalidInputError(f"expected a non-empty 1-D signal, got shape {tuple(t.shape)}")
    return t


def si_sdr(est, ref, zero_mean: bool = False, eps: float = EPS) -> torch.Tensor:
    """Scale-invariant signal-to-distortion ratio of est against ref, in dB.

    The estimate is projected onto the reference; the value is the
    energy ratio of that projection to the residual. Both energies are
    floored by eps relative to the estimate's own energy, which bounds
    the perfect-reconstruction and orthogonal singularities without
    breaking scale invariance. zero_mean subtracts means first; off by
    default.
    """
    est, ref = _as_signal(est), _as_signal(ref)
    if est.shape != ref.shape:
        raise InvalidInputError(f"length mismatch: est {est.shape[0]} vs ref {ref.shape[0]}")
    if zero_mean:
        est = est - est.mean()
        ref = ref - ref.mean()
    ref_energy = (ref * ref).sum()
    if ref_energy.item() == 0.0:
        raise InvalidInputError("reference signal is identically zero")
    target = (est * ref).sum() / ref_energy * ref
    residual = est - target
    floor = eps * (est * est).sum() + torch.finfo(est.dtype if est.is_floating_point()
                                                 else torch.float32).tiny
    ratio = ((target * target).sum() + floor) / ((residual * residual).sum() + floor)
    return 10.0 * torch.log10(ratio)


def si_sdr_loss(est, ref, zero_mean: bool = False) -> torch.Tensor:
    return -si_sdr(est, ref, zero_mean=zero_mean)


def si_sdr_improvement(est, ref, mix) -> torch.Tensor:
    """SI-SDR gain of the estimate over using the raw mixture, in dB."""
    return si_sdr(est, ref) - si_sdr(mix, ref)


def _stack(signals) -> torch.Tensor:
    if torch.is_tensor(signals):
        if signals.dim() != 2:
            raise InvalidInputError(f"expected [m, T] signals, got shape {tuple(signals.shape)}")
        return signals
    return torch.stack([_as_signal(s) for s in signals])


def pit_min_loss(ests, refs, zero_mean: bool = False) -> tuple[torch.Tensor, tuple[int, ...]]:
    """Best-permutation mean SI-SDR loss and its assignment.

    ests/refs are m signals each; the search over all m! assignments is
    exhaustive (m <= 5 in practice, 120 candidates). Ties keep the
    lexicographically smallest permutation; perm[i] is the reference
    index paired with estimate i.
    """
    if len(ests) != len(refs):
        raise InvalidInputError(f"count mismatch: {len(ests)} estimates vs {len(refs)} references")
    m = len(ests)
    if m == 0:
        return torch.zeros(()), ()
    est_t, ref_t = _stack(ests), _stack(refs)
    # pairwise loss matrix [m, m]: row = estimate, column = reference
    pair = [[si_sdr_loss(est_t[i], ref_t[j], zero_mean=zero_mean) for j in range(m)]
            for i in range(m)]
    scores = [[float(x.detach()) for x in row] for row in pair]
    best_perm, best_value = None, None
    for perm in permutations(range(m)):
        value = sum(scores[i][j] for i, j in enumerate(perm)) / m
        if best_value is None or value < best_value:
            best_value, best_perm = value, perm
    loss = sum(pair[i][j] for i, j in enumerate(best_perm)) / m
    return loss, best_perm


@dataclass
class LossBreakdown:
    """Guided + PIT terms of the training objective for one sample."""

    guided_loss: torch.Tensor
    pit_loss: torch.Tensor
    pit_permutation: tuple
    total: torch.Tensor


def combined_loss(ests, refs, n_visual: int, zero_mean: bool = False) -> LossBreakdown:
    """Hybrid objective: positional loss for the first n_visual pairs,
    permutation-invariant loss for the rest.

    refs[0:n_visual] must correspond positionally to the visually-guided
    estimates; that ordering is the renderer's contract.
    """
    if len(ests) != len(refs):
        raise InvalidInputError(f"count mismatch: {len(ests)} estimates vs {len(refs)} references")
    n = len(ests)
    if not 0 <= n_visual <= n:
        raise InvalidInputError(f"n_visual={n_visual} outside [0, {n}]")
    if n_visual > 0:
        guided = sum(si_sdr_loss(ests[i], refs[i], zero_mean=zero_mean)
                     for i in range(n_visual)) / n_visual
    else:
        guided = torch.zeros(())
    pit, perm = pit_min_loss(ests[n_visual:], refs[n_visual:], zero_mean=zero_mean)
    return LossBreakdown(guided_loss=guided, pit_loss=pit,
                         pit_permutation=perm, total=guided + pit)
