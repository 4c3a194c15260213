"""Exact simulation of a small prepare-and-measure BB84-style protocol.

Every source of classical randomness (Alice's bits and bases, Bob's bases,
Eve's coins and measurement outcomes, Bob's outcomes) is enumerated with its
exact probability, so the output is the complete final classical-quantum
state rather than a sample. The stages are:

1. quantum phase: per round, Alice prepares ``|a>`` in basis ``alpha``, Eve's
   attack acts on the qubit in transit, Bob measures in basis ``beta``;
2. classical communication: bases are announced and sifted, a test subset is
   announced and compared against the abort threshold, Alice announces the
   parity of her raw key and Bob aborts on a parity mismatch;
3. post-processing: both raw keys are compressed by the same public Toeplitz
   hash.

Eve reads every public message, so her register holds the full transcript
plus whatever her attack recorded. The authenticated channel is perfect:
Eve reads it but cannot modify it, hence all aborts are symmetric.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import BadConfig, DimensionOverflow, DimMismatch
from .keystates import KeyedCQState
from .statekit import KrausChannel, Povm, projector

Z, X = 0, 1
_BASIS_CHARS = "ZX"
_HADAMARD = np.array([[1, 1], [1, -1]]) / np.sqrt(2)

DEFAULT_MAX_BRANCHES = 2_000_000
MAX_ROUNDS = 8


def basis_vector(bit: int, basis: int) -> np.ndarray:
    v = np.zeros(2, dtype=complex)
    v[bit] = 1.0
    return _HADAMARD @ v if basis == X else v


def basis_state(bit: int, basis: int) -> np.ndarray:
    return projector(basis_vector(bit, basis))


def basis_measurement(basis: int) -> Povm:
    return Povm([basis_state(0, basis), basis_state(1, basis)])


def parse_bases(spec) -> tuple[int, ...]:
    """Accept ``"ZXZ"``, ``"010"`` or a sequence of 0/1."""
    if isinstance(spec, str):
        out = []
        for c in spec.upper():
            if c in "Z0":
                out.append(Z)
            elif c in "X1":
                out.append(X)
            else:
                raise BadConfig(f"bad basis character {c!r}")
        return tuple(out)
    return tuple(int(b) for b in spec)


def bases_str(bases: Iterable[int]) -> str:
    return "".join(_BASIS_CHARS[b] for b in bases)


# --- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class KeyLengthRule:
    """Output key length as a function of the run's public statistics.

    ``kind="sifted"``: ``l = max(0, sifted - tested - 1 - leak_budget)``.
    ``kind="fixed"``: ``l = length`` when the raw key leaves room for it
    after the parity bit and ``leak_budget``, otherwise the run aborts.
    """

    kind: str = "sifted"
    leak_budget: int = 0
    length: int = 0

    def __post_init__(self):
        if self.kind not in ("sifted", "fixed"):
            raise BadConfig(f"unknown key length rule {self.kind!r}")
        if self.leak_budget < 0 or self.length < 0:
            raise BadConfig("leak_budget and length must be nonnegative")

    def __call__(self, passed: bool, sifted: int, tested: int) -> int:
        if not passed:
            return 0
        room = sifted - tested - 1 - self.leak_budget
        if self.kind == "sifted":
            return max(0, room)
        return self.length if room >= self.length else 0


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol parameters.

    Args:
        n_rounds: number of quantum signals (1 to 8).
        test_fraction: fraction of sifted rounds (rounded down) disclosed
            for error estimation; the first sifted rounds are used.
        qber_abort_threshold: abort when the observed error rate exceeds it.
        key_length_rule: see :class:`KeyLengthRule`.
        seed: public seed of the privacy-amplification hash.
        sifting: ``"delayed"`` (default; Bob keeps the qubits until Alice's
            basis announcement and measures in her basis) or ``"random"``
            (Bob picks bases uniformly, mismatched rounds are discarded).
        max_branches: enumeration ceiling.
    """

    n_rounds: int
    test_fraction: Fraction = Fraction(0)
    qber_abort_threshold: float = 0.0
    key_length_rule: KeyLengthRule = field(default_factory=KeyLengthRule)
    seed: int = 0
    sifting: str = "delayed"
    max_branches: int = DEFAULT_MAX_BRANCHES

    def __post_init__(self):
        object.__setattr__(self, "test_fraction", Fraction(self.test_fraction))
        if not 1 <= self.n_rounds <= MAX_ROUNDS:
            raise BadConfig(f"n_rounds must be in [1, {MAX_ROUNDS}]")
        if not 0 <= self.test_fraction <= 1:
            raise BadConfig("test_fraction must be in [0, 1]")
        if not 0.0 <= self.qber_abort_threshold <= 1.0:
            raise BadConfig("qber_abort_threshold must be in [0, 1]")
        if self.sifting not in ("random", "delayed"):
            raise BadConfig(f"unknown sifting mode {self.sifting!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["test_fraction"] = str(self.test_fraction)
        return d

    @classmethod
    def from_json(cls, obj: Mapping) -> ProtocolConfig:
        try:
            rule = obj.get("key_length_rule", {})
            return cls(
                n_rounds=int(obj["n_rounds"]),
                test_fraction=Fraction(str(obj.get("test_fraction", "0"))),
                qber_abort_threshold=float(obj.get("qber_abort_threshold", 0.0)),
                key_length_rule=KeyLengthRule(**rule) if isinstance(rule, Mapping) else rule,
                seed=int(obj.get("seed", 0)),
                sifting=str(obj.get("sifting", "delayed")),
                max_branches=int(obj.get("max_branches", DEFAULT_MAX_BRANCHES)),
            )
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, BadConfig):
                raise
            raise BadConfig(f"malformed protocol config: {exc}") from exc


ATTACK_KINDS = ("passive_depolarizing", "intercept_resend", "fixed_basis_guess", "block_all")


@dataclass(frozen=True)
class AttackModel:
    """Eve's strategy on the quantum channel.

    - ``passive_depolarizing``: qubits pass through a depolarizing channel
      of strength ``p``; Eve learns nothing beyond the transcript.
    - ``intercept_resend``: Eve measures each qubit and resends her
      outcome. ``basis_rule`` is ``"random"`` (a fresh uniform basis per
      round, recorded by Eve) or a fixed basis string.
    - ``fixed_basis_guess``: intercept-resend with the basis string
      ``bases`` guessed in advance.
    - ``block_all``: nothing reaches Bob.
    """

    kind: str
    p: float = 0.0
    basis_rule: str = "random"
    bases: str = ""

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise BadConfig(f"unknown attack {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise BadConfig("depolarizing probability must be in [0, 1]")

    @classmethod
    def passive_depolarizing(cls, p: float) -> AttackModel:
        return cls("passive_depolarizing", p=p)

    @classmethod
    def intercept_resend(cls, basis_rule: str = "random") -> AttackModel:
        return cls("intercept_resend", basis_rule=basis_rule)

    @classmethod
    def fixed_basis_guess(cls, bases) -> AttackModel:
        return cls("fixed_basis_guess", bases=bases_str(parse_bases(bases)))

    @classmethod
    def block_all(cls) -> AttackModel:
        return cls("block_all")

    @property
    def passive(self) -> bool:
        return self.kind == "passive_depolarizing"

    def guessed_bases(self, n_rounds: int) -> tuple[int, ...] | None:
        """Eve's basis per round, or ``None`` when she picks at random."""
        if self.kind == "fixed_basis_guess":
            spec = self.bases
        elif self.kind == "intercept_resend" and self.basis_rule != "random":
            spec = self.basis_rule
        else:
            return None
        bases = parse_bases(spec)
        if len(bases) == 1:
            bases = bases * n_rounds
        if len(bases) != n_rounds:
            raise BadConfig(f"need {n_rounds} guessed bases, got {len(bases)}")
        return bases

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v not in ("", None)}

    @classmethod
    def from_json(cls, obj: Mapping) -> AttackModel:
        try:
            return cls(
                kind=str(obj["kind"]),
                p=float(obj.get("p", 0.0)),
                basis_rule=str(obj.get("basis_rule", "random")),
                bases=bases_str(parse_bases(obj.get("bases", ""))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, BadConfig):
                raise
            raise BadConfig(f"malformed attack: {exc}") from exc


# --- quantum phase ----------------------------------------------------------


def snap_dyadic(p: float, bits: int = 16, tol: float = 1e-13) -> float:
    """Remove roundoff from probabilities that are exact dyadic rationals.

    BB84 Born probabilities are multiples of 1/2 whenever the channel is
    noiseless; snapping keeps honest acceptance at exactly 1.
    """
    q = round(p * 2**bits) / 2**bits
    return q if abs(p - q) < tol else p


@dataclass(frozen=True)
class RoundOutcome:
    """One classical outcome of a single round and its probability.

    ``a`` and ``b`` are ``None`` on rounds that sifting discards (their
    values never leave Alice's and Bob's labs and are summed over);
    ``b`` is also ``None`` when nothing was detected.
    """

    prob: float
    alpha: int
    beta: int
    eve: str
    a: int | None
    b: int | None
    detected: bool = True


def attack_instrument(attack: AttackModel, guess: int | None) -> list[tuple[str, KrausChannel]] | None:
    """Eve's action on one qubit as labelled trace-non-increasing branches.

    Each branch is a map acting on the transit qubit only; the label is what
    Eve writes into her own register. ``None`` means the qubit is blocked.
    """
    if attack.kind == "block_all":
        return None
    if attack.kind == "passive_depolarizing":
        return [("", KrausChannel.depolarizing(attack.p))]
    gammas = [guess] if guess is not None else [Z, X]
    weight = 1.0 / np.sqrt(len(gammas))
    branches = []
    for g in gammas:
        for e in (0, 1):
            # measure in basis g, record (g, e), resend the post-measurement state
            k = weight * basis_state(e, g)
            branches.append((f"{_BASIS_CHARS[g]}{e}", KrausChannel([k], trace_preserving=False)))
    return branches


def round_table(attack: AttackModel, sifting: str, guess: int | None = None) -> list[RoundOutcome]:
    """Exact joint distribution of one round's classical outcomes."""
    instrument = attack_instrument(attack, guess)
    merged: dict[tuple, float] = defaultdict(float)
    bob_bases = {"random": (Z, X), "delayed": None}[sifting]
    for alpha in (Z, X):
        for a in (0, 1):
            p_alice = 0.25
            rho = basis_state(a, alpha)
            betas = (alpha,) if bob_bases is None else bob_bases
            p_beta = 1.0 / len(betas)
            if instrument is None:
                for beta in betas:
                    merged[(alpha, beta, "", None, None, False)] += p_alice * p_beta
                continue
            for label, ch in instrument:
                out = ch.apply(rho)
                for beta in betas:
                    probs = basis_measurement(beta).probabilities(out)
                    for b in (0, 1):
                        p = p_alice * p_beta * snap_dyadic(float(probs[b]))
                        if p <= 0.0:
                            continue
                        if alpha == beta:
                            merged[(alpha, beta, label, a, b, True)] += p
                        else:
                            merged[(alpha, beta, label, None, None, True)] += p
    return [RoundOutcome(p, *key) for key, p in merged.items() if p > 1e-300]


# --- classical post-processing ----------------------------------------------


def gf2_rank(matrix: np.ndarray) -> int:
    m = (np.asarray(matrix, dtype=np.uint8) & 1).copy()
    rank = 0
    rows, cols = m.shape
    for c in range(cols):
        pivot = next((r for r in range(rank, rows) if m[r, c]), None)
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(rows):
            if r != rank and m[r, c]:
                m[r] ^= m[rank]
        rank += 1
        if rank == rows:
            break
    return rank


def toeplitz_matrix(bits: Sequence[int], l: int, r: int) -> np.ndarray:
    """Binary ``l x r`` Toeplitz matrix ``T[i, j] = bits[i - j + r - 1]``."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size != l + r - 1 and not (l == 0 or r == 0):
        raise DimMismatch(f"need {l + r - 1} seed bits, got {bits.size}")
    i = np.arange(l)[:, None]
    j = np.arange(r)[None, :]
    return bits[i - j + r - 1] if l and r else np.zeros((l, r), dtype=np.uint8)


_HASH_CACHE: dict[tuple[int, int, int], tuple[np.ndarray, str]] = {}


def toeplitz_hash(r: int, l: int, seed: int) -> tuple[np.ndarray, str]:
    """Public seeded hash from ``r`` raw bits to ``l`` key bits.

    Seeds are drawn until the hash rows together with the all-ones row are
    linearly independent over GF(2), so the output is uniform and
    independent of the announced parity whenever the raw key is uniform.
    """
    if l == 0:
        return np.zeros((0, r), dtype=np.uint8), ""
    if l + 1 > r:
        raise DimMismatch(f"cannot hash {r} bits to {l} bits next to a parity bit")
    key = (r, l, seed)
    if key not in _HASH_CACHE:
        for attempt in itertools.count():
            rng = np.random.default_rng([seed, r, l, attempt])
            bits = rng.integers(0, 2, size=l + r - 1, dtype=np.uint8)
            t = toeplitz_matrix(bits, l, r)
            if gf2_rank(np.vstack([t, np.ones((1, r), dtype=np.uint8)])) == l + 1:
                _HASH_CACHE[key] = (t, "".join(map(str, bits)))
                break
    return _HASH_CACHE[key]


def apply_hash(matrix: np.ndarray, bits: str) -> str:
    if matrix.shape[0] == 0:
        return ""
    v = np.fromiter((int(c) for c in bits), dtype=np.int64, count=len(bits))
    return "".join(str(int(x)) for x in (matrix.astype(np.int64) @ v) % 2)


def privacy_amplification(raw_block: Mapping, hash_matrix) -> dict:
    """Map raw keys through a binary linear hash.

    Args:
        raw_block: ``(raw_A, raw_B, eve) -> operator`` (or ``(raw_A, raw_B)``).
        hash_matrix: ``l x r`` binary matrix with ``r`` the raw key length.

    Returns:
        The hashed block; Eve operators of colliding raw keys are summed.
    """
    t = np.asarray(hash_matrix, dtype=np.uint8)
    if t.ndim != 2:
        raise DimMismatch("hash matrix must be 2-d")
    out: dict = {}
    for key, op in raw_block.items():
        ka, kb = key[0], key[1]
        if len(ka) != t.shape[1] or len(kb) != t.shape[1]:
            raise DimMismatch(f"raw keys of length {len(ka)}/{len(kb)} vs hash width {t.shape[1]}")
        new = (apply_hash(t, ka), apply_hash(t, kb)) + tuple(key[2:])
        out[new] = out[new] + op if new in out else op
    return out


@dataclass(frozen=True)
class BranchResult:
    key_a: str
    key_b: str
    label: str
    accepted: bool


def process_branch(cfg: ProtocolConfig, rounds: Sequence[RoundOutcome]) -> BranchResult:
    """Classical phase of one fully specified branch."""
    alphas = "".join(_BASIS_CHARS[r.alpha] for r in rounds)
    betas = "".join(_BASIS_CHARS[r.beta] for r in rounds)
    eve = "".join(r.eve for r in rounds)
    missed = "".join(str(i) for i, r in enumerate(rounds) if not r.detected)
    sifted = [r for r in rounds if r.a is not None and r.b is not None]
    m = math.floor(cfg.test_fraction * len(sifted))
    tested, raw = sifted[:m], sifted[m:]
    ta = "".join(str(r.a) for r in tested)
    tb = "".join(str(r.b) for r in tested)
    parts = [f"a={alphas}"]
    if cfg.sifting == "random":
        parts.append(f"b={betas}")
    if missed:
        parts.append(f"nd={missed}")
    parts += [f"ta={ta}", f"tb={tb}"]
    if eve:
        parts.append(f"ev={eve}")

    errors = sum(r.a != r.b for r in tested)
    qber = errors / m if m else 0.0
    if qber > cfg.qber_abort_threshold:
        return BranchResult("", "", "|".join(parts + ["st=abort-test"]), False)
    raw_a = "".join(str(r.a) for r in raw)
    raw_b = "".join(str(r.b) for r in raw)
    par = raw_a.count("1") % 2
    parts.append(f"par={par}")
    if raw_b.count("1") % 2 != par:
        return BranchResult("", "", "|".join(parts + ["st=abort-parity"]), False)
    l = cfg.key_length_rule(True, len(sifted), m)
    if l == 0:
        return BranchResult("", "", "|".join(parts + ["st=abort-short"]), False)
    t, seed_bits = toeplitz_hash(len(raw), l, cfg.seed)
    parts += ["st=ok", f"h={seed_bits}"]
    return BranchResult(apply_hash(t, raw_a), apply_hash(t, raw_b), "|".join(parts), True)


def parse_label(label: str) -> dict[str, str]:
    """Split an Eve transcript label into its ``key=value`` fields."""
    out = {}
    for part in label.split("|"):
        k, _, v = part.partition("=")
        out[k] = v
    return out


# --- drivers ----------------------------------------------------------------


@dataclass
class RunArtifacts:
    final_state: KeyedCQState
    transcript: list[dict]
    acceptance_probability: float
    config: ProtocolConfig | None = None
    attack: AttackModel | None = None

    def to_json(self) -> dict:
        return {
            "config": None if self.config is None else self.config.to_json(),
            "attack": None if self.attack is None else self.attack.to_json(),
            "acceptance_probability": self.acceptance_probability,
            "final_state": self.final_state.to_json(),
            "transcript": self.transcript,
        }


def round_tables(cfg: ProtocolConfig, attack: AttackModel) -> list[list[RoundOutcome]]:
    guesses = attack.guessed_bases(cfg.n_rounds)
    return [round_table(attack, cfg.sifting, None if guesses is None else guesses[i])
            for i in range(cfg.n_rounds)]


def run_protocol(cfg: ProtocolConfig, attack: AttackModel) -> RunArtifacts:
    """Enumerate every branch and assemble the exact final key state.

    Raises:
        DimensionOverflow: when the branch count exceeds ``cfg.max_branches``.
    """
    tables = round_tables(cfg, attack)
    n_branches = math.prod(len(t) for t in tables)
    if n_branches > cfg.max_branches:
        raise DimensionOverflow(f"{n_branches} branches exceed the ceiling {cfg.max_branches}")
    acc: dict[tuple[str, str, str], float] = defaultdict(float)
    for combo in itertools.product(*tables):
        p = math.prod(r.prob for r in combo)
        res = process_branch(cfg, combo)
        acc[(res.key_a, res.key_b, res.label)] += p
    state = KeyedCQState({k: np.array([[p]]) for k, p in acc.items()}, 1)
    transcript: dict[str, float] = defaultdict(float)
    for (_, _, label), p in acc.items():
        transcript[label] += p
    return RunArtifacts(
        final_state=state,
        transcript=[{"label": k, "probability": v} for k, v in sorted(transcript.items())],
        acceptance_probability=state.acceptance_probability(),
        config=cfg,
        attack=attack,
    )


@dataclass(frozen=True)
class CompletenessEstimate:
    rate: float
    ci_low: float
    ci_high: float
    trials: int
    exact: float

    def to_json(self) -> dict:
        return asdict(self)


def clopper_pearson(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    alpha = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


def estimate_completeness(cfg: ProtocolConfig, attack: AttackModel, trials: int = 1000,
                          seed: int = 0) -> CompletenessEstimate:
    """Monte-Carlo acceptance frequency on an honest (non-intercepting) channel.

    Runs are sampled round by round from the exact per-round distribution
    and pushed through the same classical processing as the enumerator. The
    exact acceptance probability is returned alongside for cross-checking.
    """
    if attack.kind not in ("passive_depolarizing", "block_all"):
        raise BadConfig("completeness is defined for passive channels only")
    if trials < 1:
        raise BadConfig("trials must be positive")
    rng = np.random.default_rng(seed)
    tables = round_tables(cfg, attack)
    weights = [np.array([r.prob for r in t]) for t in tables]
    weights = [w / w.sum() for w in weights]
    hits = 0
    for _ in range(trials):
        combo = [t[rng.choice(len(t), p=w)] for t, w in zip(tables, weights)]
        hits += process_branch(cfg, combo).accepted
    lo, hi = clopper_pearson(hits, trials)
    exact = run_protocol(cfg, attack).acceptance_probability
    return CompletenessEstimate(hits / trials, lo, hi, trials, exact)
