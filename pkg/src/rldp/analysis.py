"""Markov-chain model of RLNC delivery over probabilistic broadcasting.

The number of copies ``X`` a destination receives is modelled as a binomial
mixed with an extra point mass ``phi`` at zero. The rank of the
destination's decoding matrix after each native addition is a
time-inhomogeneous Markov chain whose marginals give the expected delivery
rate of RLNC; XOR-style coding delivers iff at least one copy arrives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .topology import TopologySnapshot, generate_rgg, hop_distances


@dataclass(frozen=True)
class CopyPmf:
    phi: float
    omega_eff: float
    n: int
    masses: np.ndarray

    def __getitem__(self, k: int) -> float:
        if 0 <= k <= self.n:
            return float(self.masses[k])
        return 0.0

    def tail(self, k: int) -> float:
        """P{X >= k}."""
        k = max(k, 0)
        if k > self.n:
            return 0.0
        return float(self.masses[k:].sum())


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


def effective_omega(omega: float, rho: float = 0.0) -> float:
    _check_prob("omega", omega)
    _check_prob("rho", rho)
    return omega * (1.0 - rho)


def copy_pmf(phi: float, omega_eff: float, n: int) -> CopyPmf:
    """Copy-count pmf: ``phi`` mass at zero, otherwise Binomial(n, omega_eff).

    Includes the binomial coefficient so that the masses are a distribution.
    """
    _check_prob("phi", phi)
    _check_prob("omega_eff", omega_eff)
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n!r}")
    q = 1.0 - omega_eff
    masses = np.array(
        [(1.0 - phi) * comb(n, k) * omega_eff**k * q ** (n - k) for k in range(n + 1)]
    )
    masses[0] += phi
    return CopyPmf(phi, omega_eff, n, masses)


def fit_phi(empirical_p0: float, omega_eff: float, n: int) -> float:
    """Solve phi + (1 - phi)(1 - omega_eff)^n = p0 for phi, clamped to [0, 1]."""
    _check_prob("empirical_p0", empirical_p0)
    _check_prob("omega_eff", omega_eff)
    base = (1.0 - omega_eff) ** n
    if base >= 1.0:
        raise ValueError("degenerate fit: (1 - omega_eff)^n == 1 leaves phi undetermined")
    phi = (empirical_p0 - base) / (1.0 - base)
    return min(1.0, max(0.0, phi))


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def transition_matrix(k: int, pmf: CopyPmf, g: int) -> np.ndarray:
    """Rank transition matrix over states 0..g for the interval (k-1, k].

    Rows for states that cannot occur yet (i >= k) and every row once
    k > g are identity rows.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k!r}")
    size = g + 1
    pi = np.eye(size)
    if k > g:
        return pi
    n = pmf.n
    for i in range(k):
        pi[i, i] = 0.0
        for j in range(i, k):
            if j - i <= n:
                pi[i, j] = pmf[j - i]
        if k - i <= n:
            pi[i, k] = pmf.tail(k - i)
    return pi


@dataclass
class MarkovModel:
    g: int
    pmf: CopyPmf
    # marginals[k, i] = P{Z_k = i}, k = 0..g
    marginals: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, pmf: CopyPmf, g: int) -> "MarkovModel":
        if g < 1:
            raise ValueError(f"generation size must be >= 1, got {g!r}")
        marg = np.zeros((g + 1, g + 1))
        marg[0, 0] = 1.0
        for k in range(1, g + 1):
            marg[k] = marg[k - 1] @ transition_matrix(k, pmf, g)
        return cls(g, pmf, marg)

    def full_rank_probs(self) -> np.ndarray:
        """P{Z_k = k} for k = 1..g."""
        k = np.arange(1, self.g + 1)
        return self.marginals[k, k]


def delivery_from_full_rank(p_full: np.ndarray) -> float:
    """Combine P{Z_k = k}, k = 1..g, into the expected delivery rate."""
    p_full = np.asarray(p_full, dtype=float)
    g = len(p_full)
    total = 0.0
    none_after = 1.0
    for k in range(g, 0, -1):
        total += k * float(p_full[k - 1]) * none_after
        none_after *= 1.0 - p_full[k - 1]
    return total / g


def expected_delivery_rlnc(model: MarkovModel) -> float:
    return delivery_from_full_rank(model.full_rank_probs())


def expected_delivery_xor(pmf: CopyPmf) -> float:
    return 1.0 - pmf[0]


def delivery_rates(phi: float, omega: float, rho: float, n: int, g: int) -> tuple[float, float]:
    """(D_R, D_X) for one parameter point."""
    pmf = copy_pmf(phi, effective_omega(omega, rho), n)
    return expected_delivery_rlnc(MarkovModel.build(pmf, g)), expected_delivery_xor(pmf)


def delivery_table(phis, omegas, rhos, ns, g: int) -> list[dict]:
    rows = []
    for phi in phis:
        for omega in omegas:
            for rho in rhos:
                for n in ns:
                    d_r, d_x = delivery_rates(phi, omega, rho, n, g)
                    rows.append(
                        {"phi": phi, "omega": omega, "rho": rho, "n": n, "g": g, "D_R": d_r, "D_X": d_x}
                    )
    return rows


# -- empirical copy distribution ---------------------------------------------


def copies_from_source(
    snap: TopologySnapshot, source: int, omega: float, rho: float, rng: np.random.Generator
) -> np.ndarray:
    """Copies of one uncoded probabilistic broadcast received by every node.

    The source always transmits; every other node transmits once, on first
    reception, with probability ``omega``. Each (transmission, receiver) link
    fails independently with probability ``rho``. Since a node transmits at
    most once, the outcome does not depend on event timing, so the broadcast
    is resolved as a percolation over directed links.
    """
    n = snap.n
    adj = snap.adjacency
    forwards = rng.random(n) < omega
    forwards[source] = True
    # each directed link is used at most once; draw all outcomes up front
    link_ok = adj & (rng.random((n, n)) >= rho)
    reached = np.zeros(n, dtype=bool)
    reached[source] = True
    copies = np.zeros(n, dtype=np.int64)
    frontier = [source]
    while frontier:
        nxt = []
        for x in frontier:
            if not forwards[x]:
                continue
            got = link_ok[x]
            copies += got
            new = np.flatnonzero(got & ~reached)
            reached[new] = True
            nxt.extend(new.tolist())
        frontier = nxt
    return copies


@dataclass
class CopyStratum:
    omega: float
    a_hat: float
    hops: int
    degree: int
    counts: np.ndarray

    @property
    def samples(self) -> int:
        return int(self.counts.sum())

    def empirical(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def mc_copy_distribution(
    a_hat: float,
    omega: float,
    rho: float,
    n_trials: int,
    rng: np.random.Generator,
    n_nodes: int = 100,
    all_destinations: bool = True,
) -> dict[tuple[int, int], CopyStratum]:
    """Empirical copy-count pmfs stratified by (hop distance, |N(d)|).

    Each trial draws a fresh RGG and a random source. With
    ``all_destinations`` every other node is recorded as a destination
    (same per-stratum expectation as one random destination per trial,
    lower variance); otherwise one destination is drawn per trial.
    Unreachable destinations are skipped.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    strata: dict[tuple[int, int], CopyStratum] = {}
    for _ in range(n_trials):
        snap = generate_rgg(n_nodes, a_hat, 1.0, rng)
        s = int(rng.integers(n_nodes))
        if all_destinations:
            dests = np.array([v for v in range(n_nodes) if v != s])
        else:
            d = int(rng.integers(n_nodes - 1))
            dests = np.array([d + (d >= s)])
        copies = copies_from_source(snap, s, omega, rho, rng)
        hops = hop_distances(snap, s)
        degs = snap.degrees()
        for d in dests:
            h = int(hops[d])
            if h < 0:
                continue
            key = (h, int(degs[d]))
            st = strata.get(key)
            if st is None:
                st = strata[key] = CopyStratum(omega, a_hat, h, key[1], np.zeros(key[1] + 1, dtype=np.int64))
            st.counts[copies[d]] += 1
    return strata


@dataclass
class ValidationStats:
    omega: float
    a_hat: float
    hops: int
    degree: int
    samples: int
    empirical: np.ndarray
    phi: float
    d_tv: float


def validate_stratum(st: CopyStratum, rho: float = 0.0) -> ValidationStats:
    """Fit phi to the stratum's zero mass and measure the model's d_TV."""
    emp = st.empirical()
    w = effective_omega(st.omega, rho)
    phi = fit_phi(float(emp[0]), w, st.degree)
    model = copy_pmf(phi, w, st.degree)
    return ValidationStats(
        st.omega, st.a_hat, st.hops, st.degree, st.samples, emp, phi, total_variation(emp, model.masses)
    )
