"""Sequential and parallel composition of protocol runs.

Joint states are kept as direct sums, exactly like single-run key states:
a joint entry is keyed by ``(slots, eve)``, where ``slots`` holds one
``(k_A, k_B)`` pair per run and ``eve`` is the concatenation of every run's
Eve label. Later runs may depend on earlier transcripts: a run is given as
a closure that receives the Eve history so far and returns the artifacts
for that history.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import BadConfig, BadEffect, DimensionOverflow, DimMismatch, NumericalError
from .keystates import (
    KeyedCQState,
    alice_secrecy_terms,
    l1_distance,
    replace_keys,
    secrecy_epsilon,
    security_epsilon,
)
from .protocol import RunArtifacts
from .statekit import (
    DEFAULT_TOLERANCES,
    KrausChannel,
    as_matrix,
    eigvalsh,
    schatten_1_norm,
    symmetrize,
)

RunLike = Union[RunArtifacts, KeyedCQState]
Closure = Callable[[str], RunLike]
JointEntries = dict[tuple[tuple[tuple[str, str], ...], str], np.ndarray]

DEFAULT_MAX_ENTRIES = 2_000_000
HISTORY_SEP = "||"


def _state(x: RunLike) -> KeyedCQState:
    return x.final_state if isinstance(x, RunArtifacts) else x


def _as_closure(run) -> Closure:
    if callable(run):
        return run
    return lambda history, _run=run: _run


@dataclass
class CompositionReport:
    kind: str
    component_epsilons: list[float]
    combined_epsilon_measured: float
    combined_epsilon_bound: float
    details: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return max(0.0, self.combined_epsilon_bound - self.combined_epsilon_measured)

    def within_bound(self, tol: float = 1e-9) -> bool:
        return self.combined_epsilon_measured <= self.combined_epsilon_bound + tol

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "component_epsilons": list(self.component_epsilons),
            "combined_epsilon_measured": self.combined_epsilon_measured,
            "combined_epsilon_bound": self.combined_epsilon_bound,
            "slack": self.slack,
            "details": self.details,
        }


class _History:
    """Runs closures once per distinct Eve history and keeps the results."""

    def __init__(self, closure: Closure):
        self.closure = closure
        self.cache: dict[str, KeyedCQState] = {}

    def __call__(self, history: str) -> KeyedCQState:
        if history not in self.cache:
            self.cache[history] = _state(self.closure(history))
        return self.cache[history]


def _extend(joint: JointEntries, run: _History, max_entries: int) -> JointEntries:
    out: JointEntries = {}
    for (slots, hist), op in joint.items():
        state = run(hist)
        for (ka, kb, eve), op2 in state.items():
            key = (slots + ((ka, kb),), f"{hist}{HISTORY_SEP}{eve}" if hist else eve)
            new = np.kron(op, op2)
            out[key] = out[key] + new if key in out else new
        if len(out) > max_entries:
            raise DimensionOverflow(f"joint state exceeds {max_entries} entries")
    return out


def joint_state(runs: Sequence, max_entries: int = DEFAULT_MAX_ENTRIES) -> tuple[JointEntries, list[_History]]:
    """Assemble the joint direct-sum state of several (possibly adaptive) runs."""
    histories = [_History(_as_closure(r)) for r in runs]
    joint: JointEntries = {((), ""): np.ones((1, 1))}
    for h in histories:
        joint = _extend(joint, h, max_entries)
    return joint, histories


def replace_slot(joint: Mapping, j: int) -> JointEntries:
    """Apply the single-run key replacer to slot ``j`` of a joint state.

    The other slots are folded into the rest label, so the replacer keeps
    them as classical side information.
    """
    folded = {}
    for (slots, eve), op in joint.items():
        ka, kb = slots[j]
        folded[(ka, kb, (slots[:j], slots[j + 1:], eve))] = op
    out: JointEntries = {}
    for (ka, kb, (before, after, eve)), op in replace_keys(folded).items():
        out[(before + ((ka, kb),) + after, eve)] = op
    return out


def replace_all(joint: Mapping) -> JointEntries:
    """Replacer acting on every key register of a joint state."""
    n = len(next(iter(joint))[0]) if joint else 0
    out = dict(joint)
    for j in range(n):
        out = replace_slot(out, j)
    return out


def _component_epsilon(run: _History, fn) -> tuple[float, float]:
    """Worst-case and average figure of a run over the histories realized."""
    values = [fn(s) for s in run.cache.values()]
    return max(values), float(np.mean(values))


# --- independent-product mode -----------------------------------------------


def _round_sig(x: float) -> float:
    return float(f"{x:.13e}")


def _distance_pairs(state: KeyedCQState) -> dict[tuple[float, float], int]:
    """Multiset of (real, ideal) weights over the union of entries."""
    real = state.entries
    ideal = replace_keys(real)
    out: dict[tuple[float, float], int] = defaultdict(int)
    for key in real.keys() | ideal.keys():
        p = float(real[key][0, 0].real) if key in real else 0.0
        q = float(ideal[key][0, 0].real) if key in ideal else 0.0
        out[(_round_sig(p), _round_sig(q))] += 1
    return out


def _product_distance(pairs: Sequence[dict[tuple[float, float], int]]) -> float:
    """``|| P_1 x ... x P_n - Q_1 x ... x Q_n ||_1`` on compressed multisets."""
    acc: dict[tuple[float, float], int] = {(1.0, 1.0): 1}
    for nxt in pairs:
        new: dict[tuple[float, float], int] = defaultdict(int)
        for (p1, q1), c1 in acc.items():
            for (p2, q2), c2 in nxt.items():
                new[(_round_sig(p1 * p2), _round_sig(q1 * q2))] += c1 * c2
        acc = new
    return float(sum(c * abs(p - q) for (p, q), c in acc.items()))


# --- public operations ------------------------------------------------------


def sequential_compose(runs: Sequence, mode: str = "exact",
                       max_entries: int = DEFAULT_MAX_ENTRIES) -> CompositionReport:
    """Security of running several protocols one after another.

    Args:
        runs: closures ``history -> RunArtifacts | KeyedCQState`` (or plain
            artifacts for non-adaptive runs), in execution order.
        mode: ``"exact"`` enumerates the joint state; ``"independent"``
            treats runs as a product and needs classical Eve registers.
        max_entries: ceiling on joint entries.

    Returns:
        Report comparing ``|| rho - R'[rho] ||_1`` with the sum of the
        per-run security figures.
    """
    if len(runs) < 2:
        raise BadConfig("composition needs at least two runs")
    if mode == "independent":
        states = [_state(_as_closure(r)("")) for r in runs]
        if any(s.dim_E != 1 for s in states):
            mode = "exact"
        else:
            comps = [security_epsilon(s) for s in states]
            measured = _product_distance([_distance_pairs(s) for s in states])
            return CompositionReport("sequential", comps, measured, float(sum(comps)),
                                     {"mode": "independent", "runs": len(runs)})
    if mode != "exact":
        raise BadConfig(f"unknown composition mode {mode!r}")
    joint, histories = joint_state(runs, max_entries)
    comps, avgs = zip(*(_component_epsilon(h, security_epsilon) for h in histories))
    measured = l1_distance(joint, replace_all(joint))
    return CompositionReport(
        "sequential", list(comps), measured, float(sum(comps)),
        {"mode": "exact", "runs": len(runs), "joint_entries": len(joint),
         "history_averaged_epsilons": list(avgs),
         "histories_per_run": [len(h.cache) for h in histories]},
    )


def _omega(slots) -> bool:
    return all(len(ka) > 0 for ka, _ in slots)


def composite_secrecy(joint: Mapping, on_omega: bool = False) -> float:
    """Secrecy of Alice's concatenated key given Eve and all length labels.

    Lengths are public, so each length class ``(l_1, l_2, ...)`` is its own
    block. With ``on_omega`` only branches where every run produced a key
    are kept.
    """
    entries = {}
    for (slots, eve), op in joint.items():
        if on_omega and not _omega(slots):
            continue
        lengths = tuple(len(ka) for ka, _ in slots)
        key = ("".join(ka for ka, _ in slots), "", (lengths, eve))
        entries[key] = entries[key] + op if key in entries else op
    return float(sum(alice_secrecy_terms(entries).values()))


def chain_terms(joint: Mapping) -> dict[str, float]:
    """Two-step triangle decomposition of the two-run secrecy on Omega.

    ``first``: ``|| rho_{K1 K2 E and Omega} - tau_{K1} x rho_{K2 E and Omega} ||_1``.
    ``second``: ``|| rho_{K2 E and Omega} - tau_{K2} x rho_{E and Omega} ||_1``
    with the first key traced out.
    """
    first, second = {}, {}
    for (slots, eve), op in joint.items():
        if not _omega(slots):
            continue
        (ka1, _), (ka2, _) = slots
        k1 = (ka1, "", (ka2, len(ka1), eve))
        first[k1] = first[k1] + op if k1 in first else op
        k2 = (ka2, "", (len(ka1), eve))
        second[k2] = second[k2] + op if k2 in second else op
    return {
        "first": float(sum(alice_secrecy_terms(first).values())),
        "second": float(sum(alice_secrecy_terms(second).values())),
    }


def first_chain_term_conditional(joint: Mapping) -> float:
    """The chain's first term computed through the normalized state on Omega.

    Equals ``Pr[Omega]`` times the distance of the conditional state, and
    must agree with ``chain_terms(joint)["first"]``.
    """
    omega = {k: v for k, v in joint.items() if _omega(k[0])}
    p = float(sum(np.trace(v).real for v in omega.values()))
    if p <= 0.0:
        return 0.0
    cond = {k: v / p for k, v in omega.items()}
    return p * chain_terms(cond)["first"]


def parallel_compose(run1, run2, max_entries: int = DEFAULT_MAX_ENTRIES) -> CompositionReport:
    """Secrecy of the concatenated key of two runs sharing one adversary.

    ``run2`` may be a closure of run 1's Eve label, which lets Eve feed what
    she learned in the first run into her second attack.
    """
    joint, (h1, h2) = joint_state([run1, run2], max_entries)
    e1, _ = _component_epsilon(h1, secrecy_epsilon)
    e2, avg2 = _component_epsilon(h2, secrecy_epsilon)
    chain = chain_terms(joint)
    measured_omega = composite_secrecy(joint, on_omega=True)
    return CompositionReport(
        "parallel", [e1, e2], measured_omega, e1 + e2,
        {
            "joint_entries": len(joint),
            "chain_first": chain["first"],
            "chain_second": chain["second"],
            "chain_first_conditional": first_chain_term_conditional(joint),
            "secrecy_all_branches": composite_secrecy(joint),
            "omega_probability": float(sum(np.trace(v).real for k, v in joint.items() if _omega(k[0]))),
            "history_averaged_epsilon_2": avg2,
            "histories_run_2": len(h2.cache),
        },
    )


@dataclass(frozen=True)
class EventGap:
    p_real: float
    p_ideal: float
    gap: float
    bound: float

    def to_json(self) -> dict:
        return {"p_real": self.p_real, "p_ideal": self.p_ideal, "gap": self.gap, "bound": self.bound}


def check_effect(effect, dim: int, tol: float = DEFAULT_TOLERANCES.psd) -> np.ndarray:
    lam = as_matrix(effect)
    if lam.shape != (dim, dim):
        raise DimMismatch(f"effect of shape {lam.shape} on a {dim}-dim output")
    if np.abs(lam - lam.conj().T).max(initial=0.0) > DEFAULT_TOLERANCES.herm:
        raise BadEffect("effect is not Hermitian")
    lam = symmetrize(lam)
    w = eigvalsh(lam)
    if w[0] < -tol or w[-1] > 1 + tol:
        raise BadEffect(f"effect spectrum [{w[0]:.3g}, {w[-1]:.3g}] outside [0, 1]")
    return lam


def event_probability_gap(rho_real, rho_ideal, ch: KrausChannel, effect,
                          tol: float = 1e-10) -> EventGap:
    """Probability gap of an event observed after processing both states.

    Raises:
        BadEffect: if the effect is not between 0 and the identity.
        NumericalError: if the gap exceeds the trace-distance bound.
    """
    a, b = as_matrix(rho_real), as_matrix(rho_ideal)
    if a.shape != b.shape:
        raise DimMismatch(f"{a.shape} vs {b.shape}")
    if a.shape[0] != ch.dim_in:
        raise DimMismatch(f"channel input {ch.dim_in} vs state dimension {a.shape[0]}")
    lam = check_effect(effect, ch.dim_out)
    p_real = float(np.trace(lam @ ch.apply(a)).real)
    p_ideal = float(np.trace(lam @ ch.apply(b)).real)
    bound = 0.5 * schatten_1_norm(a - b)
    gap = p_real - p_ideal
    if gap > bound + tol:
        raise NumericalError(f"event gap {gap} exceeds trace distance {bound}")
    return EventGap(p_real, p_ideal, gap, bound)


def transcript_copying_attack(cfg, n_rounds: int | None = None) -> Callable[[str], RunArtifacts]:
    """Second-run closure for an Eve who reuses run 1's announced bases.

    She guesses that Alice repeats her first-run basis string and attacks
    with a fixed-basis intercept-resend on that guess.
    """
    from .protocol import AttackModel, parse_label, run_protocol

    cache: dict[str, RunArtifacts] = {}

    def closure(history: str) -> RunArtifacts:
        bases = parse_label(history.split(HISTORY_SEP)[-1]).get("a", "")
        n = n_rounds or cfg.n_rounds
        guess = (bases + "Z" * n)[:n]
        if guess not in cache:
            cache[guess] = run_protocol(cfg, AttackModel.fixed_basis_guess(guess))
        return cache[guess]

    return closure
