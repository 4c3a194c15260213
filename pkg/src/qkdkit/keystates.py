"""Classical-quantum key states and the security evaluators defined on them.

A :class:`KeyedCQState` is a direct sum over key-length pairs ``(lA, lB)``.
Inside each block, every pair of key values ``(kA, kB)`` carries a
subnormalized operator on Eve's system. Eve's system may itself have a
classical part (her transcript of public messages): entries are therefore
keyed by ``(kA, kB, eve)`` where ``eve`` labels an orthogonal sector of
Eve's space and the operator lives on the ``dim_E``-dimensional quantum
part. States without a classical Eve part use ``eve = ""``.

Because all classical registers are orthogonal, every 1-norm below is an
exact sum of per-entry 1-norms. Nothing divides by a block probability.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .errors import BadDistribution, DimMismatch, InvalidState, ParseError, UnsupportedLengths
from .statekit import (
    DEFAULT_TOLERANCES,
    Tolerances,
    eigvalsh,
    operator_from_json,
    operator_to_json,
    random_density,
    schatten_1_norm,
    symmetrize,
)

MAX_KEY_LENGTH = 16
MAX_DIM_E = 256

Entries = dict[tuple[str, str, Hashable], np.ndarray]


@dataclass(frozen=True, order=True)
class KeyLengthPair:
    l_A: int
    l_B: int

    def __post_init__(self):
        if self.l_A < 0 or self.l_B < 0:
            raise InvalidState("key lengths must be nonnegative")
        if not (self.l_A == self.l_B or self.l_A == 0 or self.l_B == 0):
            raise InvalidState(f"({self.l_A}, {self.l_B}) is not an admissible length pair")

    @property
    def symmetric(self) -> bool:
        return self.l_A == self.l_B


def _is_bits(s: str) -> bool:
    return isinstance(s, str) and all(c in "01" for c in s)


def all_keys(length: int) -> list[str]:
    return [format(i, f"0{length}b") if length else "" for i in range(2**length)]


def _norm1(m: np.ndarray) -> float:
    if m.shape == (1, 1):
        return abs(float(m[0, 0].real))
    return schatten_1_norm(m)


def _trace(m: np.ndarray) -> float:
    return float(np.trace(m).real)


class KeyedCQState:
    """Final state of Alice's key, Bob's key and Eve's side information.

    Args:
        entries: mapping ``(kA, kB)`` or ``(kA, kB, eve)`` to a positive
            semi-definite ``dim_E x dim_E`` matrix (a scalar is accepted
            when ``dim_E == 1``).
        dim_E: dimension of Eve's quantum register.
        validate: run the PSD and normalization checks.
    """

    def __init__(self, entries: Mapping, dim_E: int = 1, tol: Tolerances = DEFAULT_TOLERANCES,
                 validate: bool = True, max_key_length: int = MAX_KEY_LENGTH,
                 max_dim_E: int = MAX_DIM_E):
        if dim_E < 1 or dim_E > max_dim_E:
            raise DimMismatch(f"dim_E={dim_E} outside [1, {max_dim_E}]")
        self.dim_E = int(dim_E)
        self.tol = tol
        store: Entries = {}
        for key, op in entries.items():
            if len(key) == 2:
                key = (key[0], key[1], "")
            ka, kb, eve = key
            m = np.asarray(op, dtype=complex)
            if m.ndim == 0:
                m = m.reshape(1, 1)
            if validate:
                if not (_is_bits(ka) and _is_bits(kb)):
                    raise InvalidState(f"keys must be bitstrings, got {ka!r}, {kb!r}")
                if max(len(ka), len(kb)) > max_key_length:
                    raise InvalidState(f"key length exceeds {max_key_length}")
                KeyLengthPair(len(ka), len(kb))
                if m.shape != (self.dim_E, self.dim_E):
                    raise DimMismatch(f"Eve operator shape {m.shape} != ({dim_E}, {dim_E})")
            m = symmetrize(m)
            m.setflags(write=False)
            store[(ka, kb, eve)] = m
        self._entries = store
        if validate:
            self._validate()

    def _validate(self) -> None:
        total = 0.0
        for key, m in self._entries.items():
            if self.dim_E == 1:
                low = float(m[0, 0].real)
            else:
                low = float(eigvalsh(m)[0])
            if low < -self.tol.psd * (1.0 + _norm1(m)):
                raise InvalidState(f"Eve operator for {key} is not positive semi-definite")
            total += _trace(m)
        if abs(total - 1.0) > self.tol.trace:
            raise InvalidState(f"total trace {total:.12g} differs from 1")

    @property
    def entries(self) -> Entries:
        return dict(self._entries)

    def items(self):
        return self._entries.items()

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def blocks(self) -> dict[KeyLengthPair, Entries]:
        out: dict[KeyLengthPair, Entries] = defaultdict(dict)
        for (ka, kb, eve), m in self._entries.items():
            out[KeyLengthPair(len(ka), len(kb))][(ka, kb, eve)] = m
        return dict(sorted(out.items()))

    def block_probabilities(self) -> dict[KeyLengthPair, float]:
        return {lp: sum(_trace(m) for m in blk.values()) for lp, blk in self.blocks.items()}

    def total_trace(self) -> float:
        return sum(_trace(m) for m in self._entries.values())

    def acceptance_probability(self) -> float:
        """Probability that both parties hold a key of positive length."""
        return float(sum(p for lp, p in self.block_probabilities().items() if lp.l_A > 0 and lp.l_B > 0))

    @property
    def symmetric_abort(self) -> bool:
        return all(lp.symmetric for lp in self.blocks)

    def key_distribution(self) -> dict[tuple[str, str], float]:
        """Joint distribution of the two keys, Eve traced out."""
        dist: dict[tuple[str, str], float] = defaultdict(float)
        for (ka, kb, _), m in self._entries.items():
            dist[(ka, kb)] += _trace(m)
        return dict(dist)

    def map_eve(self, channel) -> KeyedCQState:
        """Apply a channel to every Eve operator.

        ``channel`` is a :class:`KrausChannel` or any ``ndarray -> ndarray``
        callable acting on unnormalized operators.
        """
        fn = channel.apply if hasattr(channel, "apply") else channel
        out = {k: np.asarray(fn(np.array(m))) for k, m in self._entries.items()}
        dim = next(iter(out.values())).shape[0]
        return KeyedCQState(out, dim, self.tol)

    def to_json(self) -> dict:
        blocks = []
        for lp, blk in self.blocks.items():
            items = []
            for (ka, kb, eve), m in blk.items():
                item = {"kA": ka, "kB": kb}
                if eve != "":
                    item["eve"] = str(eve)
                item["op"] = operator_to_json(m)
                items.append(item)
            blocks.append({"lA": lp.l_A, "lB": lp.l_B, "entries": items})
        return {"dim_E": self.dim_E, "blocks": blocks}

    @classmethod
    def from_json(cls, obj, tol: Tolerances = DEFAULT_TOLERANCES) -> KeyedCQState:
        try:
            dim_E = int(obj["dim_E"])
            entries = {}
            for blk in obj["blocks"]:
                la, lb = int(blk["lA"]), int(blk["lB"])
                for item in blk["entries"]:
                    ka, kb = item["kA"], item["kB"]
                    if len(ka) != la or len(kb) != lb:
                        raise InvalidState(f"key values {ka!r}/{kb!r} do not match block ({la}, {lb})")
                    key = (ka, kb, item.get("eve", ""))
                    if key in entries:
                        raise InvalidState(f"duplicate entry {key}")
                    entries[key] = operator_from_json(item["op"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidState):
                raise
            raise ParseError(f"malformed key-state JSON: {exc}") from exc
        return cls(entries, dim_E, tol)

    @classmethod
    def from_distribution(cls, dist: Mapping[tuple[str, str], float]) -> KeyedCQState:
        """Purely classical state with trivial Eve from a joint key distribution."""
        return cls({(ka, kb, ""): np.array([[p]]) for (ka, kb), p in dist.items()}, 1)


# --- generic kernels on entry dictionaries ----------------------------------
# ``rest`` is any hashable label for everything that is neither key; compose
# reuses these kernels with the other run's keys folded into ``rest``.


def replace_keys(entries: Mapping) -> Entries:
    """Key-replacer map on raw entries.

    Within each length block the keys are swapped for an ideal pair
    (uniform, perfectly correlated when both are produced) tensored with the
    block's marginal on everything else.
    """
    marg: dict[tuple[int, int, Hashable], np.ndarray] = {}
    for (ka, kb, rest), m in entries.items():
        k = (len(ka), len(kb), rest)
        marg[k] = marg[k] + m if k in marg else np.array(m)
    out: Entries = {}
    for (la, lb, rest), m in marg.items():
        if la == 0 and lb == 0:
            out[("", "", rest)] = m
        elif lb == 0:
            for k in all_keys(la):
                out[(k, "", rest)] = m / 2**la
        elif la == 0:
            for k in all_keys(lb):
                out[("", k, rest)] = m / 2**lb
        else:
            for k in all_keys(la):
                out[(k, k, rest)] = m / 2**la
    return out


def l1_distance(a: Mapping, b: Mapping) -> float:
    """1-norm of the difference of two direct-sum operators."""
    total = 0.0
    for key in a.keys() | b.keys():
        if key in a and key in b:
            total += _norm1(a[key] - b[key])
        else:
            total += _norm1(a[key] if key in a else b[key])
    return total


def alice_secrecy_terms(entries: Mapping) -> dict[int, float]:
    """Per-length terms of Alice's secrecy, summed over subnormalized blocks.

    For each Alice key length ``l`` this is
    ``|| rho_{K_A^l E and Omega_l} - tau_l (x) rho_{E and Omega_l} ||_1``,
    with Bob's key traced out.
    """
    ka_e: dict[tuple[str, Hashable], np.ndarray] = {}
    e_marg: dict[tuple[int, Hashable], np.ndarray] = {}
    for (ka, kb, rest), m in entries.items():
        k = (ka, rest)
        ka_e[k] = ka_e[k] + m if k in ka_e else np.array(m)
        k2 = (len(ka), rest)
        e_marg[k2] = e_marg[k2] + m if k2 in e_marg else np.array(m)
    terms: dict[int, float] = defaultdict(float)
    for (la, rest), m in e_marg.items():
        if la == 0:
            terms[0] += 0.0
            continue
        scaled = m / 2**la
        for k in all_keys(la):
            op = ka_e.get((k, rest))
            terms[la] += _norm1(scaled if op is None else op - scaled)
    return dict(sorted(terms.items()))


# --- public evaluators ------------------------------------------------------


def key_replacer(state: KeyedCQState) -> KeyedCQState:
    """Ideal counterpart of ``state``: same block weights and Eve marginals, perfect keys."""
    return KeyedCQState(replace_keys(state._entries), state.dim_E, state.tol, validate=False)


def security_epsilon(state: KeyedCQState) -> float:
    """``|| rho_real - R[rho_real] ||_1`` computed blockwise."""
    return l1_distance(state._entries, replace_keys(state._entries))


def _symmetric_pairs(state: KeyedCQState) -> dict[tuple[str, str], float]:
    return {k: p for k, p in state.key_distribution().items() if len(k[0]) == len(k[1]) > 0}


def mismatch_probability(state: KeyedCQState) -> float:
    """``Pr[K_A != K_B and l > 0]`` over blocks where both parties hold a key.

    Asymmetric blocks ``(l, 0)`` and ``(0, l)`` are not counted: only a
    produced pair of keys can disagree.
    """
    return float(sum(p for (ka, kb), p in _symmetric_pairs(state).items() if ka != kb))


def correctness_epsilon(state: KeyedCQState) -> float:
    """``|| rho_{K_A K_B} - rho_hat_{K_A K_B} ||_1`` with Bob's key replaced by Alice's.

    Only blocks where both keys are produced change under the replacement.
    """
    dist = _symmetric_pairs(state)
    p_alice: dict[str, float] = defaultdict(float)
    for (ka, _), p in dist.items():
        p_alice[ka] += p
    total = float(sum(p for (ka, kb), p in dist.items() if ka != kb))
    for ka, pa in p_alice.items():
        total += abs(dist.get((ka, ka), 0.0) - pa)
    return total


def secrecy_terms(state: KeyedCQState) -> dict[int, float]:
    return alice_secrecy_terms(state._entries)


def secrecy_epsilon(state: KeyedCQState) -> float:
    """Alice's secrecy: ``sum_l Pr[Omega_l] || rho_{K_A^l E|l} - tau (x) rho_{E|l} ||_1``."""
    return float(sum(secrecy_terms(state).values()))


def fixed_length_secrecy(state: KeyedCQState, L: int) -> float:
    """Secrecy of a protocol whose Alice key length is either 0 or ``L``.

    Evaluated in the conditional form ``Pr[Omega] * || rho_{.|Omega} - ... ||_1``
    so the prefactor is explicit; ``Pr[Omega] = 0`` gives 0.

    Raises:
        UnsupportedLengths: if the state holds Alice keys of another length.
    """
    lengths = {len(ka) for (ka, _, _) in state._entries}
    if not lengths <= {0, L}:
        raise UnsupportedLengths(f"state has Alice key lengths {sorted(lengths)}, expected subset of (0, {L})")
    accepted = {k: m for k, m in state._entries.items() if len(k[0]) == L and L > 0}
    p_omega = sum(_trace(m) for m in accepted.values())
    if p_omega <= 0.0:
        return 0.0
    conditional = {k: m / p_omega for k, m in accepted.items()}
    return p_omega * alice_secrecy_terms(conditional).get(L, 0.0)


def combine_parts(eps_cor: float, eps_sec: float) -> float:
    """Security parameter implied by correctness and secrecy: their sum.

    Both figures are unhalved 1-norms and lie in ``[0, 2]``. The raw sum is
    clamped to 2; as a bound on a probability only ``min(sum, 1)`` is
    meaningful.
    """
    if not (0.0 <= eps_cor <= 2.0 and 0.0 <= eps_sec <= 2.0):
        raise ValueError("both parameters must lie in [0, 2]")
    return min(eps_cor + eps_sec, 2.0)


@dataclass
class SecurityReport:
    epsilon_security: float
    epsilon_correctness: float
    epsilon_secrecy_alice: float
    mismatch_probability: float
    acceptance_probability: float
    per_length_terms: dict[int, float] = field(default_factory=dict)
    symmetric_abort: bool = True

    @property
    def combined_bound(self) -> float:
        return self.epsilon_correctness + self.epsilon_secrecy_alice

    def to_json(self) -> dict:
        return {
            "epsilon_security": self.epsilon_security,
            "epsilon_correctness": self.epsilon_correctness,
            "epsilon_secrecy_alice": self.epsilon_secrecy_alice,
            "mismatch_probability": self.mismatch_probability,
            "acceptance_probability": self.acceptance_probability,
            "per_length_terms": {str(k): v for k, v in self.per_length_terms.items()},
            "symmetric_abort": self.symmetric_abort,
            "combined_bound": self.combined_bound,
        }


def security_report(state: KeyedCQState) -> SecurityReport:
    terms = secrecy_terms(state)
    return SecurityReport(
        epsilon_security=security_epsilon(state),
        epsilon_correctness=correctness_epsilon(state),
        epsilon_secrecy_alice=float(sum(terms.values())),
        mismatch_probability=mismatch_probability(state),
        acceptance_probability=state.acceptance_probability(),
        per_length_terms=terms,
        symmetric_abort=state.symmetric_abort,
    )


# --- per-value criterion and guessing bound --------------------------------


def _check_distribution(dist) -> tuple[np.ndarray, int]:
    p = np.asarray(dist, dtype=float)
    n = p.size
    l = n.bit_length() - 1
    if n < 1 or 2**l != n:
        raise BadDistribution(f"length {n} is not a power of two")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise BadDistribution("not a probability vector")
    return p, l


def yuen_check(dist, eps: float) -> bool:
    """Whether ``|P(k) - 2^-l| <= eps 2^-l`` holds for every key value ``k``."""
    p, l = _check_distribution(dist)
    return bool(np.all(np.abs(p - 2.0**-l) <= eps * 2.0**-l + 1e-15))


def yuen_counterexample(l: int, eps: float) -> np.ndarray:
    """``P(k) = (1 - eps) 2^-l + eps [k = 0]``: uniform except with probability ``eps``."""
    if not 0.0 <= eps <= 1.0:
        raise BadDistribution("eps must be in [0, 1]")
    p = np.full(2**l, (1.0 - eps) * 2.0**-l)
    p[0] += eps
    return p


def distance_to_uniform(dist) -> float:
    p, l = _check_distribution(dist)
    return 0.5 * float(np.abs(p - 2.0**-l).sum())


def max_guess_probability(dist) -> float:
    p, _ = _check_distribution(dist)
    return float(p.max())


def per_value_deviation(rho, sigma) -> float:
    """Single-number form of the per-value criterion for diagonal states.

    ``max_k |rho_kk / sigma_kk - 1|``; against a uniform ``sigma`` this is
    ``2^l max_k |P(k) - 2^-l|``. Infinite when ``rho`` has weight outside
    the support of ``sigma``.
    """
    a = np.real(np.diag(np.asarray(rho)))
    b = np.real(np.diag(np.asarray(sigma)))
    out = 0.0
    for x, y in zip(a, b):
        if y <= 1e-15:
            if x > 1e-15:
                return float("inf")
            continue
        out = max(out, abs(x / y - 1.0))
    return out


# --- random states for property tests ---------------------------------------


def random_keyed_state(rng: np.random.Generator, max_length: int = 3, dim_E: int = 2,
                       symmetric: bool = True, n_blocks: int | None = None,
                       classical: bool = False) -> KeyedCQState:
    """Random valid state over a few length blocks.

    With ``symmetric`` only blocks ``(l, l)`` (and the abort block) appear.
    Each present key pair gets a random Ginibre operator on Eve, so keys are
    generically correlated with Eve and with each other.
    """
    lengths = list(range(0, max_length + 1))
    pairs = [(l, l) for l in lengths]
    if not symmetric:
        pairs += [(l, 0) for l in lengths[1:]] + [(0, l) for l in lengths[1:]]
    n_blocks = n_blocks or int(rng.integers(1, len(pairs) + 1))
    chosen = [pairs[i] for i in rng.choice(len(pairs), size=min(n_blocks, len(pairs)), replace=False)]
    dim = 1 if classical else dim_E
    entries = {}
    for la, lb in chosen:
        for ka in all_keys(la):
            for kb in all_keys(lb):
                if rng.random() < 0.3 and la + lb > 0:
                    continue
                if dim == 1:
                    op = np.array([[rng.random()]])
                else:
                    op = random_density(dim, rng, rank=int(rng.integers(1, dim + 1))) * rng.random()
                entries[(ka, kb, "")] = op
    if not entries:
        entries[("", "", "")] = np.eye(dim) / dim
    total = sum(_trace(m) for m in entries.values())
    entries = {k: m / total for k, m in entries.items()}
    return KeyedCQState(entries, dim)


def random_key_distribution(rng: np.random.Generator, l: int) -> dict[tuple[str, str], float]:
    keys = all_keys(l)
    w = rng.random((len(keys), len(keys))) ** 3
    w /= w.sum()
    return {(a, b): float(w[i, j]) for i, a in enumerate(keys) for j, b in enumerate(keys)}
