"""Posterior sampling for density estimation and classification under the
constrained deep prior.

The sampler is a systematic-scan preconditioned Crank-Nicolson chain over
the layer components: proposals z' = sqrt(1 - beta^2) z + beta xi with xi a
fresh unconstrained prior draw leave the Gaussian reference invariant, the
constraint indicator enters the prior density relative to that reference,
so proposals violating the constraints are rejected outright and the
remaining acceptance ratio is the likelihood ratio.  log_post traces store
the log likelihood, which is the log posterior density with respect to the
constrained prior.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .composition import DeepGPSpec, compose
from .grids import GridFunction, GridSpec, trapezoid_weights
from .sampling import (
    check_constraints,
    component_sampler,
    rejection_sample_layer,
    rng_from,
)


def log_likelihood_density(layers, data: np.ndarray, eval_grid: GridSpec) -> float:
    """Sum of log p at the data points with p the exponential-link density of
    the composed latent; the normalizer is the trapezoid integral on eval_grid."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.size == 0:
        return 0.0
    z_grid = compose(layers, eval_grid.points())
    zmax = float(np.max(z_grid))
    lognorm = zmax + math.log(float(trapezoid_weights(eval_grid) @ np.exp(z_grid - zmax)))
    z_data = compose(layers, data)
    return float(np.sum(z_data) - data.shape[0] * lognorm)


def log_likelihood_classif(layers, U: np.ndarray, V: np.ndarray) -> float:
    """Bernoulli log likelihood under the logistic link of the composed latent."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.asarray(V, dtype=float).ravel()
    if U.size == 0:
        return 0.0
    if V.size != U.shape[0]:
        raise ValueError("labels do not match design points")
    if np.any((V != 0.0) & (V != 1.0)):
        raise ValueError("labels must be 0 or 1")
    z = compose(layers, U)
    # log f = -log(1+e^-z), log(1-f) = -z - log(1+e^-z)
    log_f = -np.logaddexp(0.0, -z)
    log_1mf = -z + log_f
    return float(np.sum(V * log_f + (1.0 - V) * log_1mf))


@dataclass
class PosteriorChain:
    """Thinned constrained states with their log-posterior trace."""

    spec: DeepGPSpec
    states: list = field(repr=False)
    log_post: np.ndarray
    acceptance: dict
    betas: dict
    seed: int
    iters: int
    burnin: int
    thin: int

    def __post_init__(self):
        if len(self.states) and not np.all(np.isfinite(self.log_post)):
            raise ValueError("log posterior trace contains non-finite values")


def pcn_step(state, spec: DeepGPSpec, h: int, i: int, beta: float, rng,
             loglik_fn, current_loglik: float):
    """One pCN update of component (h, i); returns (state, loglik, accepted).

    The proposal is rejected outright when it violates the component's
    constraints, otherwise accepted with probability min(1, exp(delta)).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("proposal scale must lie in (0,1)")
    layer = spec.layers[h]
    sampler = component_sampler(layer.kernels[i], layer.grid)
    xi = sampler.draw(rng, 1)[0]
    proposal = math.sqrt(1.0 - beta * beta) * state[h][i].values + beta * xi
    fn = GridFunction(layer.grid, proposal)
    if not check_constraints(fn, layer, i).passed:
        return state, current_loglik, False
    new_state = [list(comps) for comps in state]
    new_state[h][i] = fn
    new_loglik = loglik_fn(new_state)
    if math.log(max(rng.random(), 1e-300)) < new_loglik - current_loglik:
        return new_state, new_loglik, True
    return state, current_loglik, False


def run_mcmc(
    spec: DeepGPSpec,
    data,
    task: str,
    iters: int,
    burnin: int,
    thin: int,
    seed: int,
    beta0: float = 0.08,
    eval_grid: GridSpec | None = None,
    target_acceptance: float = 0.25,
    init_attempts: int = 200_000,
) -> PosteriorChain:
    """Systematic-scan pCN over all components.

    The proposal scale of each component is tuned multiplicatively toward
    the target acceptance during burnin and frozen afterwards.  Every thin-th
    post-burnin state is stored; stored states always satisfy the
    constraints (asserted at store time).
    """
    if task == "density":
        X = np.atleast_2d(np.asarray(data, dtype=float))
        grid = eval_grid or GridSpec(spec.input_dim, spec.layers[0].grid.points_per_axis)
        loglik_fn = lambda st: log_likelihood_density(st, X, grid)
    elif task == "classification":
        U, V = data
        loglik_fn = lambda st: log_likelihood_classif(st, U, V)
    else:
        raise ValueError("task must be 'density' or 'classification'")

    rng = rng_from(seed)
    state = []
    for h, layer in enumerate(spec.layers):
        comps, _ = rejection_sample_layer(layer, int(rng_from(seed, 100 + h).integers(2**31)),
                                          max_attempts=init_attempts)
        state.append(comps)
    loglik = loglik_fn(state)

    pairs = [(h, i) for h, layer in enumerate(spec.layers) for i in range(layer.d_out)]
    betas = {pair: beta0 for pair in pairs}
    accepted = {pair: 0 for pair in pairs}
    proposed = {pair: 0 for pair in pairs}
    window = {pair: [0, 0] for pair in pairs}  # accepted, proposed in tuning window

    states = []
    trace = []
    for it in range(iters):
        tuning = it < burnin
        for pair in pairs:
            h, i = pair
            state, loglik, acc = pcn_step(state, spec, h, i, betas[pair], rng, loglik_fn, loglik)
            if tuning:
                window[pair][0] += int(acc)
                window[pair][1] += 1
                if window[pair][1] == 25:
                    rate = window[pair][0] / 25.0
                    betas[pair] = float(
                        np.clip(betas[pair] * math.exp(0.6 * (rate - target_acceptance)),
                                1e-4, 0.9999)
                    )
                    window[pair] = [0, 0]
            else:
                accepted[pair] += int(acc)
                proposed[pair] += 1
        if not tuning and (it - burnin) % thin == 0:
            for h, layer in enumerate(spec.layers):
                for i in range(layer.d_out):
                    assert check_constraints(state[h][i], layer, i).passed
            states.append([list(comps) for comps in state])
            trace.append(loglik)
    if iters == 0:
        states.append([list(comps) for comps in state])
        trace.append(loglik)

    rates = {
        pair: (accepted[pair] / proposed[pair] if proposed[pair] else math.nan)
        for pair in pairs
    }
    return PosteriorChain(
        spec=spec,
        states=states,
        log_post=np.asarray(trace),
        acceptance=rates,
        betas=betas,
        seed=seed,
        iters=iters,
        burnin=burnin,
        thin=thin,
    )


def posterior_radius(chain: PosteriorChain, truth, q: float, task: str = "density",
                     u_law=None) -> float:
    """q-quantile over stored states of the divergence to the truth:
    Hellinger distance for densities, L2(U) distance for classification."""
    from .models import classify_from_latent, density_from_latent, hellinger, l2_U

    if not chain.states:
        raise ValueError("chain holds no states")
    grid = truth.grid
    pts = grid.points()
    divs = []
    for state in chain.states:
        z = GridFunction(grid, compose(state, pts))
        if task == "density":
            divs.append(hellinger(density_from_latent(z), truth))
        else:
            divs.append(l2_U(classify_from_latent(z), truth, u_law=u_law))
    return float(np.quantile(np.asarray(divs), q))


# ---------------------------------------------------------------------------
# persistence: one CSV per stored state plus an index file
# ---------------------------------------------------------------------------


def save_chain(chain: PosteriorChain, directory) -> None:
    """Write states as state_<k>_layer<h>_comp<i>.csv plus index.csv with
    the trace; resumable by load_chain against the same spec."""
    os.makedirs(directory, exist_ok=True)
    index_path = os.path.join(directory, "index.csv")
    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "log_post", "files"])
        for k, (state, lp) in enumerate(zip(chain.states, chain.log_post)):
            files = []
            for h, comps in enumerate(state):
                for i, fn in enumerate(comps):
                    name = f"state_{k:06d}_layer{h}_comp{i}.csv"
                    fn.to_csv(os.path.join(directory, name))
                    files.append(name)
            writer.writerow([k, repr(float(lp)), ";".join(files)])


def load_chain_states(directory, spec: DeepGPSpec):
    """Read back (states, log_post) written by save_chain."""
    index_path = os.path.join(directory, "index.csv")
    states = []
    trace = []
    with open(index_path, newline="") as fh:
        for row in csv.DictReader(fh):
            files = row["files"].split(";")
            state = []
            pos = 0
            for layer in spec.layers:
                comps = []
                for _ in range(layer.d_out):
                    comps.append(GridFunction.from_csv(os.path.join(directory, files[pos])))
                    pos += 1
                state.append(comps)
            states.append(state)
            trace.append(float(row["log_post"]))
    return states, np.asarray(trace)
