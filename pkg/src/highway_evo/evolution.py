"""(1+1)-EA with Rechenberg mutation-rate control and a niching branch.

One parent, one child per generation.  The child is produced by per-bit
flip mutation (resampled until it differs from the parent, since a clone
evaluation is a wasted generation) and replaces the parent whenever its
fitness is no worse.  Fitness is minimized throughout.

Two extensions sit on top of the plain elitist loop:

* Rechenberg rate control: over non-overlapping windows of ``G``
  generations, count successful replacements ``g``.  At the window end the
  flip probability is doubled when ``g/G >= 1/5`` (the boundary counts as
  success-rich) and halved otherwise, clamped to ``[1/N^2, 0.5]``.

* Niching: when a child is worse than its parent, it is still accepted
  with probability ``eta``.  The displaced parent is saved, and the worse
  child is optimized as a branch for ``kappa`` generations (the accepting
  generation counts as the first; no second branch can start while one is
  active).  When the branch ends, the branch parent survives only if it is
  strictly better than the saved parent; otherwise the saved parent is
  restored.  The best-ever record is elitist either way: only the current
  parent may worsen, never the record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Bits = np.ndarray  # 1-d uint8 array of 0/1 values

# byte-value 0/1 -> ASCII '0'/'1'; fast path for history strings
_BIT_CHARS = bytes([48, 49]) + bytes(254)


def _bits_str(bits: Bits) -> str:
    return bits.tobytes().translate(_BIT_CHARS).decode("ascii")


@dataclass
class MutationRate:
    """Per-bit flip probability with hard clamp bounds."""

    sigma: float
    sigma_min: float
    sigma_max: float = 0.5

    def clamp(self) -> None:
        self.sigma = min(max(self.sigma, self.sigma_min), self.sigma_max)


@dataclass
class RechenbergState:
    """Success counters for one adaptation window.

    ``enabled=False`` freezes the mutation rate (the "simple" EA variant);
    counters then stay untouched.
    """

    window_size: int = 10
    tau: float = 0.5
    success_count: int = 0
    generations_in_window: int = 0
    enabled: bool = True


@dataclass
class NichingState:
    eta: float = 0.1
    kappa: int = 10
    active: bool = False
    saved_parent: Bits | None = None
    saved_fitness: float = math.inf
    remaining_generations: int = 0


@dataclass
class HistoryRecord:
    """One row per fitness evaluation; all values are post-generation."""

    generation: int
    eval_fitness: float
    parent_fitness: float
    best_fitness: float
    sigma: float
    niching_active: bool
    genotype_bits: str


RunHistory = list[HistoryRecord]


@dataclass
class EAState:
    parent: Bits
    parent_fitness: float
    mutation: MutationRate
    rechenberg: RechenbergState
    niching: NichingState
    rng: np.random.Generator
    generation: int = 0
    best: Bits | None = None
    best_fitness: float = math.inf
    history: RunHistory = field(default_factory=list)


@dataclass(frozen=True)
class EAConfig:
    """Run parameters.  Defaults follow the reference study settings."""

    n_bits: int = 20
    generations: int = 30
    sigma_init: float | None = None      # None -> 1/N
    sigma_min: float | None = None       # None -> 1/N^2
    sigma_max: float = 0.5
    window_size: int = 10                # Rechenberg G
    tau: float = 0.5
    eta: float = 0.1
    kappa: int = 10
    adapt_mutation: bool = True
    target_fitness: float | None = None  # optional early stop for synthetic runs

    def validate(self) -> None:
        if self.n_bits < 1:
            raise ValueError(f"n_bits must be >= 1, got {self.n_bits}")
        if self.generations < 0:
            raise ValueError(f"generations must be >= 0, got {self.generations}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        sigma0 = self.sigma_init if self.sigma_init is not None else 1.0 / self.n_bits
        if not 0.0 < sigma0 <= 0.5:
            raise ValueError(f"initial sigma must be in (0, 0.5], got {sigma0}")


def random_bits(n: int, rng: np.random.Generator) -> Bits:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def mutate(parent: Bits, sigma: float, rng: np.random.Generator) -> Bits:
    """Flip each bit independently with probability ``sigma``.

    Resamples until the child differs from the parent in at least one bit;
    terminates with probability 1 for any sigma > 0.
    """
    n = parent.shape[0]
    while True:
        mask = rng.random(n) < sigma
        if mask.any():
            return parent ^ mask


def rechenberg_update(state: RechenbergState, rate: MutationRate,
                      was_success: bool) -> None:
    """Advance the success window; adapt and clamp sigma at the window end."""
    if not state.enabled:
        return
    state.generations_in_window += 1
    if was_success:
        state.success_count += 1
    if state.generations_in_window == state.window_size:
        if state.success_count / state.window_size >= 0.2:
            rate.sigma /= state.tau
        else:
            rate.sigma *= state.tau
        rate.clamp()
        state.success_count = 0
        state.generations_in_window = 0


def _resolve_niching(state: EAState) -> None:
    """End the branch: keep the branch parent only if strictly better."""
    niche = state.niching
    if not niche.active:
        return
    if niche.saved_fitness <= state.parent_fitness:
        state.parent = niche.saved_parent
        state.parent_fitness = niche.saved_fitness
    niche.active = False
    niche.saved_parent = None
    niche.saved_fitness = math.inf
    niche.remaining_generations = 0


def ea_step(state: EAState, fitness) -> EAState:
    """Execute one generation in place and return the state.

    Order: resolve an expired niching branch, mutate and evaluate, select
    (elitist, ties accepted), possibly open a niching branch on a worse
    child, adapt the mutation rate, then update the record and history.
    """
    niche = state.niching
    if niche.active:
        niche.remaining_generations -= 1
        if niche.remaining_generations == 0:
            _resolve_niching(state)

    child = mutate(state.parent, state.mutation.sigma, state.rng)
    child_fitness = float(fitness(child))

    # A failed evaluation carries a +inf sentinel and is never accepted,
    # not even by the niching draw.
    finite = math.isfinite(child_fitness)
    was_success = finite and child_fitness <= state.parent_fitness
    if was_success:
        state.parent = child
        state.parent_fitness = child_fitness
    elif (finite and not niche.active and niche.eta > 0.0
          and state.rng.random() < niche.eta):
        niche.saved_parent = state.parent
        niche.saved_fitness = state.parent_fitness
        niche.active = True
        niche.remaining_generations = niche.kappa
        state.parent = child
        state.parent_fitness = child_fitness

    rechenberg_update(state.rechenberg, state.mutation, was_success)

    if child_fitness < state.best_fitness:
        state.best = child
        state.best_fitness = child_fitness
    state.generation += 1
    state.history.append(HistoryRecord(
        generation=state.generation,
        eval_fitness=child_fitness,
        parent_fitness=state.parent_fitness,
        best_fitness=state.best_fitness,
        sigma=state.mutation.sigma,
        niching_active=niche.active,
        genotype_bits=_bits_str(child),
    ))
    return state


def init_state(config: EAConfig, fitness, rng: np.random.Generator) -> EAState:
    """Draw and evaluate the random initial parent (history row 0)."""
    parent = random_bits(config.n_bits, rng)
    parent_fitness = float(fitness(parent))
    sigma0 = config.sigma_init if config.sigma_init is not None else 1.0 / config.n_bits
    sigma_min = (config.sigma_min if config.sigma_min is not None
                 else 1.0 / config.n_bits ** 2)
    state = EAState(
        parent=parent,
        parent_fitness=parent_fitness,
        mutation=MutationRate(sigma=sigma0, sigma_min=sigma_min,
                              sigma_max=config.sigma_max),
        rechenberg=RechenbergState(window_size=config.window_size,
                                   tau=config.tau,
                                   enabled=config.adapt_mutation),
        niching=NichingState(eta=config.eta, kappa=config.kappa),
        rng=rng,
    )
    state.best = parent
    state.best_fitness = parent_fitness
    state.history.append(HistoryRecord(
        generation=0,
        eval_fitness=parent_fitness,
        parent_fitness=parent_fitness,
        best_fitness=parent_fitness,
        sigma=sigma0,
        niching_active=False,
        genotype_bits=_bits_str(parent),
    ))
    return state


def run_ea(config: EAConfig, fitness, seed: int) -> tuple[EAState, RunHistory]:
    """Run the configured number of generations from a fresh random parent.

    A branch still active when the budget (or the optional fitness target)
    ends the run is resolved before returning, so the returned parent is
    always the better of branch end and saved parent.  Total fitness
    evaluations: 1 + executed generations, one history row each.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    state = init_state(config, fitness, rng)
    target = config.target_fitness
    for _ in range(config.generations):
        if target is not None and state.parent_fitness <= target:
            break
        ea_step(state, fitness)
    _resolve_niching(state)
    return state, state.history
