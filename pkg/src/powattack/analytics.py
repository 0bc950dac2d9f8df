"""Closed-form race rules, attack Markov chains and trace estimators.

The Markov chains are embedded jump chains: one step per block discovery
anywhere in the network. Transition probabilities follow from the mining
power shares under exponential block discovery.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .chain import SYSTEM

TIE_TOL = 1e-12


class Winner(enum.Enum):
    ATTACKER = "attacker"
    RATIONAL = "rational"
    POOL = "pool"
    AUTHENTIC = "authentic"
    TIE = "tie"


class InvalidPowers(ValueError):
    pass


class NotStochastic(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class NonUnique(NoConvergence):
    """The chain has more than one stationary distribution."""


class EmptyChain(ValueError):
    pass


class DefenseDisabled(ValueError):
    pass


def _check_fraction(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


def _compare(left: float, right: float, hi: Winner, lo: Winner) -> Winner:
    if math.isclose(left, right, rel_tol=0.0, abs_tol=TIE_TOL):
        return Winner.TIE
    return hi if left > right else lo


# --- race rules -----------------------------------------------------------------


def bdos_race_sides(beta: float, alpha_v: float, alt_branch: bool = False) -> tuple[float, float]:
    """Power behind the attacker's block and behind the rational block."""
    _check_fraction("beta", beta)
    _check_fraction("alpha_v", alpha_v)
    rival = (1 - beta) * alpha_v if alt_branch else (1 - beta) * (1 - alpha_v)
    return beta * alpha_v, rival


def race_winner_eq1(beta: float, alpha_v: float, alt_branch: bool = False) -> Winner:
    """Winner of the header-withholding race with every rational miner mining.

    ``alt_branch`` evaluates the rival side as ``(1 - beta) * alpha_v`` instead
    of the written ``(1 - beta) * (1 - alpha_v)``.
    """
    a, h = bdos_race_sides(beta, alpha_v, alt_branch)
    return _compare(a, h, Winner.ATTACKER, Winner.RATIONAL)


def race_winner_eq2(beta: float, alpha_v_minus_i: float, alt_branch: bool = False) -> Winner:
    """Same race once miner ``i`` has stopped; its power is already subtracted."""
    return race_winner_eq1(beta, alpha_v_minus_i, alt_branch)


def race_winner_eq3(alpha_self: float, alpha_auth: float) -> Winner:
    _check_fraction("alpha_self", alpha_self)
    _check_fraction("alpha_auth", alpha_auth)
    return _compare(alpha_self, alpha_auth, Winner.POOL, Winner.AUTHENTIC)


def loss_miners_eq4(rho: float, alpha_mv: float) -> float:
    _check_fraction("rho", rho)
    _check_fraction("alpha_mv", alpha_mv)
    return rho * alpha_mv


def loss_attacker_eq5(z: float, alpha_A: float) -> float:
    _check_fraction("z", z)
    _check_fraction("alpha_A", alpha_A)
    return z * alpha_A


# --- Markov chains ----------------------------------------------------------------


@dataclass(frozen=True)
class MarkovModel:
    name: str
    states: tuple[str, ...]
    transitions: np.ndarray
    # expected reward per step out of each state
    attacker_reward: Optional[np.ndarray] = None
    honest_reward: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        P = np.asarray(self.transitions, dtype=float)
        n = len(self.states)
        if P.shape != (n, n):
            raise NotStochastic(f"transition matrix must be {n}x{n}, got {P.shape}")
        if (P < -1e-12).any():
            raise NotStochastic("negative transition probability")
        if not np.allclose(P.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise NotStochastic(f"rows must sum to 1: {P.sum(axis=1)}")
        object.__setattr__(self, "transitions", np.clip(P, 0.0, None))

    def to_dict(self) -> dict:
        return {
            "model": self.name,
            "states": list(self.states),
            "transition_matrix": self.transitions.tolist(),
        }


def stationary(model: MarkovModel, method: str = "direct", tol: float = 1e-10,
               max_iter: int = 100_000) -> np.ndarray:
    """Stationary distribution ``pi`` with ``pi P = pi`` and ``sum(pi) = 1``."""
    P = model.transitions
    n = P.shape[0]
    A = P.T - np.eye(n)
    if np.linalg.matrix_rank(A, tol=1e-10) < n - 1:
        raise NonUnique(f"{model.name}: stationary distribution is not unique")
    if method == "direct":
        M = A.copy()
        M[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = np.linalg.solve(M, b)
    elif method == "power":
        pi = np.full(n, 1.0 / n)
        # lazy chain: same stationary vector, no periodicity
        L = 0.5 * (P + np.eye(n))
        for _ in range(max_iter):
            nxt = pi @ L
            if np.abs(nxt - pi).max() < tol * 1e-2:
                pi = nxt
                break
            pi = nxt
        else:
            raise NoConvergence(f"{model.name}: power iteration did not converge")
    else:
        raise ValueError(f"unknown method {method!r}")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.abs(pi @ P - pi).max() >= tol:
        raise NoConvergence(f"{model.name}: residual above {tol}")
    return pi


def build_bdos_chain(alpha_A: float, alpha_v: float, beta: float,
                     miner_i_stops: bool = False, alpha_i: float = 0.0) -> MarkovModel:
    """Three-state chain of the header-withholding attack.

    States: 0 no attack block, 1 attacker header out, 2 race after a rational
    block. ``alpha_v`` is the power of every non-attacking miner. With
    ``miner_i_stops`` a rational miner of power ``alpha_i`` stops mining while
    a header is outstanding.
    """
    for name, x in (("alpha_A", alpha_A), ("alpha_v", alpha_v), ("beta", beta), ("alpha_i", alpha_i)):
        if not 0.0 <= x <= 1.0:
            raise InvalidPowers(f"{name} must lie in [0, 1]")
    if abs(alpha_A + alpha_v - 1.0) > 1e-9:
        raise InvalidPowers("alpha_A + alpha_v must equal 1")
    if alpha_i > alpha_v + 1e-12:
        raise InvalidPowers("alpha_i cannot exceed alpha_v")
    mining_in_1 = alpha_v - (alpha_i if miner_i_stops else 0.0)
    a1 = alpha_A + mining_in_1
    P = np.zeros((3, 3))
    att = np.zeros(3)
    hon = np.zeros(3)
    P[0, 1], P[0, 0] = alpha_A, alpha_v
    hon[0] = alpha_v
    if a1 > 0:
        P[1, 2] = mining_in_1 / a1
        P[1, 1] = alpha_A / a1
        att[1] = alpha_A / a1
    else:
        P[1, 1] = 1.0
    P[2, 0] = 1.0
    pA, pB, pH = alpha_A, beta * alpha_v, (1 - beta) * alpha_v
    att[2] = 2 * pA + pB
    hon[2] = pB + 2 * pH
    return MarkovModel("bdos", ("0", "1", "2"), P, att, hon)


def build_selfish_chain(alpha_self: float, beta: float) -> MarkovModel:
    """Four-state chain of selfish mining; state 3 lumps every lead of two or more.

    Inside state 3 the lead is geometrically distributed in the long run, so
    the chance that the lead is exactly two is ``(1 - 2a) / (1 - a)`` and the
    lumped exit probability to state 0 is ``1 - 2a`` (zero once ``a >= 1/2``).
    """
    a = alpha_self
    if not 0.0 <= a <= 1.0 or not 0.0 <= beta <= 1.0:
        raise InvalidPowers("alpha_self and beta must lie in [0, 1]")
    h = 1.0 - a
    q = max(0.0, (1 - 2 * a) / h) if h > 0 else 0.0  # P(lead == 2 | lead >= 2)
    P = np.zeros((4, 4))
    P[0, 0], P[0, 1] = h, a
    P[1, 2], P[1, 3] = h, a
    P[2, 0] = 1.0
    P[3, 0] = h * q
    P[3, 3] = 1.0 - h * q
    att = np.array([0.0, 0.0, 2 * a + beta * h, h * (2 * q + (1 - q))])
    hon = np.array([h, 0.0, beta * h + 2 * (1 - beta) * h, 0.0])
    return MarkovModel("selfish", ("0", "1", "2", "3"), P, att, hon)


def predicted_attacker_share(model: MarkovModel, pi: Optional[np.ndarray] = None) -> float:
    """Long-run fraction of main-chain blocks that belong to the attacker."""
    if model.attacker_reward is None:
        raise ValueError(f"{model.name} carries no reward structure")
    pi = stationary(model) if pi is None else pi
    att = float(pi @ model.attacker_reward)
    hon = float(pi @ model.honest_reward)
    if att + hon <= 0:
        return 0.0
    return att / (att + hon)


def model_report(model: MarkovModel) -> dict:
    pi = stationary(model)
    out = model.to_dict()
    out["stationary"] = pi.tolist()
    if model.attacker_reward is not None:
        out["predictions"] = {"attacker_share": predicted_attacker_share(model, pi)}
    return out


def model_for_scenario(scenario) -> Optional[MarkovModel]:
    """Markov chain matching a scenario's attack, or None for honest networks."""
    att = scenario.attacker
    if att is None:
        return None
    if att.strategy == "selfish":
        return build_selfish_chain(att.power, scenario.beta)
    stopping = sum(m.power for m in scenario.miners
                   if m.strategy == "rational" and scenario.policy_for(m).stop_when_header_seen)
    return build_bdos_chain(att.power, scenario.honest_power, scenario.beta,
                            miner_i_stops=stopping > 0, alpha_i=stopping)


# --- trace estimators -------------------------------------------------------------


def revenue_from_trace(trace) -> dict[int, float]:
    """Each miner's share of the full blocks on the final main chain."""
    counts = trace.blocks_on_main
    total = sum(counts)
    if total == 0:
        raise EmptyChain("main chain holds no full blocks")
    return {k: c / total for k, c in enumerate(counts)}


def occupancy_from_trace(trace, n_states: int) -> np.ndarray:
    """Fraction of block discoveries made while the attack was in each state."""
    occ = np.zeros(n_states)
    for s, c in trace.occupancy.items():
        occ[s] = c
    total = occ.sum()
    if total == 0:
        raise EmptyChain("trace holds no block discoveries")
    return occ / total


@dataclass(frozen=True)
class LossEstimate:
    windows: int
    rho_hat: float
    z_hat: Optional[float]
    loss_miners_hat: float
    loss_attacker_hat: Optional[float]
    honest_wasted: float
    attacker_wasted: Optional[float]


def estimate_losses(trace) -> LossEstimate:
    """Window-failure frequencies and wasted work from a defended run.

    ``rho_hat`` (``z_hat``) is the fraction of closed windows in which honest
    miners (the attacker) got no full block accepted on the public chain. The
    wasted-work fractions are counted separately, from the final main chain: a
    window's share of a party's work is lost when no block that party found
    inside it survives. Blocks belong to the window ``(opened, closed]`` that
    contains their creation time.
    """
    s = trace.scenario
    if not s.defense_enabled:
        raise DefenseDisabled("loss estimates need a run with the defense enabled")
    windows = [w for w in trace.windows if w.closed_at is not None]
    if not windows:
        raise EmptyChain("no window closed during the run")
    closes = [w.closed_at for w in windows]
    att = s.attacker
    att_id = att.id if att else None
    n = len(windows)
    completed = {"h": [False] * n, "a": [False] * n}
    survived = {"h": [False] * n, "a": [False] * n}
    main = set(trace.main_chain)
    tree = trace.tree
    for b in tree.blocks.values():
        if b.miner == SYSTEM:
            continue
        k = bisect_left(closes, b.created_at)
        if k >= n:
            continue
        side = "a" if b.miner == att_id else "h"
        if b.is_full and b.published_at is not None:
            completed[side][k] = True
        if b.id in main:
            survived[side][k] = True
    alpha_mv = s.honest_power
    rho = 1 - sum(completed["h"]) / n
    honest_wasted = alpha_mv * (n - sum(survived["h"])) / n
    if att is None:
        z = loss_a = attacker_wasted = None
    else:
        z = 1 - sum(completed["a"]) / n
        loss_a = loss_attacker_eq5(z, att.power)
        attacker_wasted = att.power * (n - sum(survived["a"])) / n
    return LossEstimate(n, rho, z, loss_miners_eq4(rho, alpha_mv), loss_a, honest_wasted, attacker_wasted)


def max_extension_gap(trace) -> float:
    t = trace.extension_times
    return max((b - a for a, b in zip(t, t[1:])), default=0.0)


def l1(p: Sequence[float], q: Sequence[float]) -> float:
    return float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def summarize(trace) -> dict:
    """Summary metrics of a run, as plain JSON-ready values."""
    s = trace.scenario
    out: dict = {
        "scenario": s.name,
        "attack": s.attack,
        "seed": s.seed,
        "stop_reason": trace.stop_reason,
        "end_time": trace.end_time,
        "main_chain_height": len(trace.main_chain) - 1,
        "blocks_found": trace.blocks_found,
        "blocks_on_main": trace.blocks_on_main,
        "blocks_discarded": trace.blocks_discarded,
        "dummy_blocks": trace.dummy_blocks,
        "dummy_blocks_on_main": sum(trace.tree.blocks[i].is_dummy for i in trace.main_chain),
        "headers_discarded": trace.headers_discarded,
        "rejected_blocks": len(trace.rejected),
        "max_extension_gap": max_extension_gap(trace),
        "races": len(trace.races),
        "races_won_by_attacker": sum(1 for r in trace.races if r.attacker_won),
        "first_header_at": trace.first_header_at,
    }
    try:
        out["shares"] = [v for _, v in sorted(revenue_from_trace(trace).items())]
    except EmptyChain:
        out["shares"] = None
    gaps = np.diff([trace.tree.blocks[i].published_at for i in trace.main_chain])
    out["mean_interblock"] = float(gaps.mean()) if len(gaps) else None
    model = model_for_scenario(s)
    if model is not None and trace.occupancy:
        occ = occupancy_from_trace(trace, len(model.states))
        out["occupancy"] = occ.tolist()
        try:
            pi = stationary(model)
            out["stationary"] = pi.tolist()
            out["occupancy_l1"] = l1(occ, pi)
            out["attacker_share_markov"] = predicted_attacker_share(model, pi)
        except NoConvergence:
            out["stationary"] = None
    if s.defense_enabled:
        try:
            est = estimate_losses(trace)
            out["losses"] = {
                "windows": est.windows, "rho_hat": est.rho_hat, "z_hat": est.z_hat,
                "loss_miners": est.loss_miners_hat, "loss_attacker": est.loss_attacker_hat,
                "honest_wasted": est.honest_wasted, "attacker_wasted": est.attacker_wasted,
            }
        except EmptyChain:
            out["losses"] = None
    return out
