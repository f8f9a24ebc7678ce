"""Structural causal model over environment variables and its discovery loop.

Structural parameters ``eta`` give edge probabilities sigmoid(eta[i, j]) for
"j causes i"; functional parameters are one softmax MLP per effect variable
whose input is the one-hot encoding of all variables at time t, with the
blocks of non-parents zeroed. A variable always sees its own previous value.
The Action variable is exogenous: it is never modelled as an effect.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .env import EnvVarSchema, VarKind
from .graphs import CausalGraph
from .numeric import DenseNet, Trainer, forward, log_likelihood

log = logging.getLogger(__name__)


@dataclass
class ScmHyper:
    T: int = 50
    Fs: int = 1000
    Qs: int = 100
    K: int = 25
    batch: int = 256
    edge_threshold: float = 0.8
    lr_theta: float = 5e-3
    lr_eta: float = 5e-2
    hidden: int = 128
    n_layers: int = 3
    screen_alpha: float = 1e-4
    confirm_alpha: float = 1e-2

    def __post_init__(self):
        for name in ("T", "Fs", "Qs", "K", "batch", "hidden", "n_layers"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.5 < self.edge_threshold < 1:
            raise ValueError("edge_threshold must lie in (0.5, 1)")


HOLDOUT_EVERY = 4


class InterventionDataset:
    """Adjacent-step pairs keyed by the intervened variable."""

    def __init__(self, M: int):
        self.M = M
        self._pairs: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        self._cache: dict = {}

    def add(self, target: int, x_t, x_t1) -> None:
        self._pairs.setdefault(int(target), []).append(
            (np.asarray(x_t, dtype=np.int64).copy(), np.asarray(x_t1, dtype=np.int64).copy()))
        self._cache.clear()

    def extend(self, target: int, pairs) -> None:
        for x_t, x_t1 in pairs:
            self.add(target, x_t, x_t1)
        if target not in self._pairs:
            self._pairs[int(target)] = []

    def keys(self) -> list[int]:
        return sorted(self._pairs)

    def count(self, target: int) -> int:
        return len(self._pairs.get(target, ()))

    def __len__(self) -> int:
        return sum(len(v) for v in self._pairs.values())

    def arrays(self, target: int):
        key = ("arr", target)
        if key not in self._cache:
            pairs = self._pairs.get(target, [])
            if pairs:
                self._cache[key] = (np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))
            else:
                self._cache[key] = (np.zeros((0, self.M), np.int64), np.zeros((0, self.M), np.int64))
        return self._cache[key]

    def split(self, target, part: str):
        """Deterministic split: every ``HOLDOUT_EVERY``-th pair is held out."""
        key = ("split", target, part)
        if key not in self._cache:
            x_t, x_t1 = self.pooled() if target is None else self.arrays(target)
            held = (np.arange(len(x_t)) % HOLDOUT_EVERY) == HOLDOUT_EVERY - 1
            sel = held if part == "holdout" else ~held
            self._cache[key] = (x_t[sel], x_t1[sel])
        return self._cache[key]

    def pooled(self):
        key = ("pooled",)
        if key not in self._cache:
            parts = [self.arrays(j) for j in self.keys()]
            if parts:
                self._cache[key] = (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
            else:
                self._cache[key] = (np.zeros((0, self.M), np.int64), np.zeros((0, self.M), np.int64))
        return self._cache[key]

    def encoded(self, schema: EnvVarSchema, target=None, part=None) -> np.ndarray:
        key = ("enc", target, part)
        if key not in self._cache:
            if part is not None:
                x_t = self.split(target, part)[0]
            else:
                x_t = self.pooled()[0] if target is None else self.arrays(target)[0]
            self._cache[key] = schema.one_hot(x_t) if len(x_t) else np.zeros((0, schema.cardinalities.sum()))
        return self._cache[key]

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for j in self.keys():
                for x_t, x_t1 in self._pairs[j]:
                    f.write(json.dumps({"target": j, "x_t": x_t.tolist(), "x_t1": x_t1.tolist()}) + "\n")

    @classmethod
    def from_jsonl(cls, path, M: int | None = None) -> "InterventionDataset":
        records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if M is None:
            if not records:
                raise ValueError("cannot infer M from an empty file")
            M = len(records[0]["x_t"])
        ds = cls(M)
        for r in records:
            ds.add(r["target"], r["x_t"], r["x_t1"])
        return ds


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class ScmParams:
    def __init__(self, schema: EnvVarSchema, hyper: ScmHyper | None = None, rng=None, zero_init=False):
        self.schema = schema
        self.hyper = hyper or ScmHyper()
        rng = np.random.default_rng(rng)
        M = schema.M
        self.eta = np.zeros((M, M))
        cards = schema.cardinalities
        self.block = np.repeat(np.arange(M), cards)
        self.input_dim = int(cards.sum())
        self.effects = [v for v in range(M) if v != schema.action_id]
        h = self.hyper.hidden
        self.thetas: list[DenseNet | None] = [None] * M
        self.trainers: list[Trainer | None] = [None] * M
        for i in self.effects:
            dims = [self.input_dim] + [h] * (self.hyper.n_layers - 1) + [int(cards[i])]
            self.thetas[i] = DenseNet.create(dims, "softmax", rng, zero=zero_init)
            self.trainers[i] = Trainer(self.thetas[i], self.hyper.lr_theta)
        self.diagnostics: list[str] = []

    @property
    def M(self) -> int:
        return self.schema.M

    def sigma(self) -> np.ndarray:
        s = sigmoid(self.eta)
        np.fill_diagonal(s, 0.0)
        return s

    def mask_inputs(self, i: int, onehot: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Zero the one-hot blocks of non-parents of ``i``.

        ``rows`` holds configuration row i: shape (M,) or one row per sample.
        """
        keep = np.asarray(rows)[..., self.block].astype(np.float64)
        keep[..., self.block == i] = 1.0
        return onehot * keep


def sample_configuration(eta, rng, size=None) -> np.ndarray:
    """Edge-wise Bernoulli(sigmoid(eta)) draw; the diagonal is always 1."""
    eta = np.asarray(eta, dtype=float)
    shape = eta.shape if size is None else (size, *eta.shape)
    c = (rng.random(shape) < sigmoid(eta)).astype(np.int64)
    idx = np.arange(eta.shape[0])
    c[..., idx, idx] = 1
    return c


def predict_var(params: ScmParams, i: int, config, x_t) -> np.ndarray:
    """Distribution of X_i at t+1 under ``config`` (an (M, M) matrix)."""
    if params.thetas[i] is None:
        raise ValueError(f"variable {i} is exogenous and has no generating function")
    x_t = np.asarray(x_t)
    single = x_t.ndim == 1
    onehot = params.schema.one_hot(x_t)
    config = np.asarray(config)
    row = config[i] if config.ndim == 2 else config[:, i]
    probs = forward(params.thetas[i], params.mask_inputs(i, onehot, row))
    return probs[0] if single else probs


def function_learning_step(params: ScmParams, hyper: ScmHyper, data: InterventionDataset, S_IV, rng) -> float:
    """One Adam step on every generating function; ``eta`` is left alone.

    Batches come from the pooled data of all intervened variables; each sample
    gets its own configuration row drawn from sigmoid(eta).
    """
    x_t, x_t1 = data.split(None, "train")
    n = len(x_t)
    if n == 0 or not any(data.count(j) for j in S_IV):
        params.diagnostics.append("function_learning_step: empty dataset")
        log.warning("function learning skipped: no data")
        return float("nan")
    onehot = data.encoded(params.schema, None, "train")
    sig = sigmoid(params.eta)
    losses = []
    for i in params.effects:
        idx = rng.integers(0, n, size=hyper.batch)
        rows = (rng.random((hyper.batch, params.M)) < sig[i]).astype(np.int64)
        inputs = params.mask_inputs(i, onehot[idx], rows)
        losses.append(params.trainers[i].step(inputs, x_t1[idx, i]))
    return float(np.mean(losses))


def reinforce_gradient(sigma_ij: float, c_k, log_lik_k) -> float:
    """Score-function estimate for one edge.

    ``c_k``: (K,) edge indicators of the K draws. ``log_lik_k``: (K,) total
    log-likelihood of the batch under each draw, or (K, N) per-sample values
    that are summed over the batch. Weights are the batch likelihoods
    normalised over the draws (max-shifted in log space).
    """
    ll = np.asarray(log_lik_k, dtype=float)
    if ll.ndim == 2:
        ll = ll.sum(axis=1)
    w = np.exp(ll - ll.max())
    w /= w.sum()
    return float(np.sum((sigma_ij - np.asarray(c_k, dtype=float)) * w))


def structure_learning_step(params: ScmParams, hyper: ScmHyper, data: InterventionDataset, rng,
                            S_IV=None) -> np.ndarray:
    """One score-function update of the columns of the intervened variables.

    Column j uses only the data collected while intervening on j; the update is
    eta_ij <- eta_ij - lr_eta * g_ij for every effect i != j. Thetas are not touched.
    """
    if hyper.K < 2:
        raise ValueError("K must be >= 2")
    columns = data.keys() if S_IV is None else [j for j in sorted(S_IV) if data.count(j)]
    sig = sigmoid(params.eta)
    for j in columns:
        x_t, x_t1 = data.split(j, "holdout")
        n = len(x_t)
        if n == 0:
            params.diagnostics.append(f"no held-out data for column {j}")
            continue
        onehot = data.encoded(params.schema, j, "holdout")
        idx = rng.integers(0, n, size=hyper.batch)
        oh = onehot[idx]
        configs = sample_configuration(params.eta, rng, size=hyper.K)
        for i in params.effects:
            if i == j:
                continue
            inputs = params.mask_inputs(i, oh[None, :, :], configs[:, i][:, None, :])
            ll = log_likelihood(params.thetas[i], inputs.reshape(-1, params.input_dim),
                                np.tile(x_t1[idx, i], hyper.K)).reshape(hyper.K, -1)
            if not np.all(np.isfinite(ll)):
                params.diagnostics.append(f"non-finite likelihood for edge {j}->{i}; skipped")
                continue
            g = reinforce_gradient(sig[i, j], configs[:, i, j], ll)
            params.eta[i, j] -= hyper.lr_eta * g
    return params.eta


def conditional_dependence_screen(schema: EnvVarSchema, data: InterventionDataset, graph: CausalGraph,
                                  S_IV, alpha: float = 1e-4) -> CausalGraph:
    """Flags unintervened variables that look like parents in observational terms.

    For every effect i outside ``S_IV`` and every candidate cause j outside
    ``S_IV`` a G-test checks X_{i,t+1} _||_ X_{j,t} given X_{i,t} and the
    asserted parents of i. Returned edges are suspicions only: they gate which
    variables count as controllable candidates, never the learned graph.
    """
    x_t, x_t1 = data.pooled()
    M = schema.M
    a = np.zeros((M, M), dtype=np.int64)
    if len(x_t) == 0:
        return CausalGraph(a, schema.names)
    cards = schema.cardinalities
    S_IV = set(S_IV)
    action = schema.action_id
    for i in range(M):
        if i in S_IV or i == action:
            continue
        cond = sorted(set(graph.parents(i)) | {i})
        ctx = np.ravel_multi_index(x_t[:, cond].T, cards[cond]) if cond else np.zeros(len(x_t), int)
        for j in range(M):
            if j in S_IV or j == i or j == action:
                continue
            g, dof = _g_statistic(ctx, x_t[:, j], x_t1[:, i])
            if dof > 0 and stats.chi2.sf(g, dof) < alpha:
                a[i, j] = 1
    return CausalGraph(a, schema.names)


def confirm_edges(schema: EnvVarSchema, data: InterventionDataset, graph: CausalGraph,
                  alpha: float = 1e-2) -> tuple[CausalGraph, list[tuple[int, int]]]:
    """Drops asserted edges without conditional-dependence support.

    Edge j -> i survives when a G-test on the pooled data rejects
    X_{i,t+1} _||_ X_{j,t} given X_{i,t} and the other asserted parents of i.
    Returns the filtered graph and the dropped (cause, effect) pairs.
    """
    x_t, x_t1 = data.pooled()
    a = graph.adjacency.copy()
    dropped = []
    if len(x_t) == 0:
        return graph, dropped
    cards = schema.cardinalities
    for j, i in graph.edges():
        cond = sorted((set(graph.parents(i)) - {j}) | {i})
        ctx = np.ravel_multi_index(x_t[:, cond].T, cards[cond])
        g, dof = _g_statistic(ctx, x_t[:, j], x_t1[:, i])
        if dof == 0 or stats.chi2.sf(g, dof) >= alpha:
            a[i, j] = 0
            dropped.append((j, i))
    return CausalGraph(a, graph.names), dropped


def _g_statistic(ctx, x, y):
    """G statistic and degrees of freedom for x _||_ y | ctx over observed strata."""
    g = 0.0
    dof = 0
    for c in np.unique(ctx):
        sel = ctx == c
        xs, ys = x[sel], y[sel]
        xv, xi = np.unique(xs, return_inverse=True)
        yv, yi = np.unique(ys, return_inverse=True)
        if len(xv) < 2 or len(yv) < 2:
            continue
        table = np.zeros((len(xv), len(yv)))
        np.add.at(table, (xi, yi), 1)
        expected = table.sum(1, keepdims=True) * table.sum(0, keepdims=True) / table.sum()
        nz = table > 0
        g += 2.0 * np.sum(table[nz] * np.log(table[nz] / expected[nz]))
        dof += (len(xv) - 1) * (len(yv) - 1)
    return g, dof


@dataclass
class DiscoveryResult:
    graph: CausalGraph
    sigma: np.ndarray
    suspected: CausalGraph | None = None
    nll_history: list[float] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def gating_graph(self) -> CausalGraph:
        """Asserted edges plus observational suspicions."""
        if self.suspected is None:
            return self.graph
        return CausalGraph(np.maximum(self.graph.adjacency, self.suspected.adjacency), self.graph.names)


def threshold_graph(params: ScmParams, S_IV, threshold: float) -> CausalGraph:
    sig = params.sigma()
    a = (sig > threshold).astype(np.int64)
    allowed = np.zeros(params.M, dtype=bool)
    allowed[list(S_IV)] = True
    a[:, ~allowed] = 0
    a[params.schema.action_id, :] = 0
    return CausalGraph(a, params.schema.names)


def discover(params: ScmParams, hyper: ScmHyper, data: InterventionDataset, S_IV, rng=None,
             screen: bool = True) -> DiscoveryResult:
    """T rounds of (Fs function steps, Qs structure steps), then threshold.

    Only causes in ``S_IV`` can be asserted. Never raises on poor convergence;
    the raw sigmoid(eta) matrix is returned for inspection.
    """
    rng = np.random.default_rng(rng)
    S_IV = sorted(S_IV)
    start = len(params.diagnostics)
    history = []
    for _ in range(hyper.T):
        for _ in range(hyper.Fs):
            history.append(function_learning_step(params, hyper, data, S_IV, rng))
        for _ in range(hyper.Qs):
            structure_learning_step(params, hyper, data, rng, S_IV)
    graph = threshold_graph(params, S_IV, hyper.edge_threshold)
    if screen:
        graph, dropped = confirm_edges(params.schema, data, graph, hyper.confirm_alpha)
        params.diagnostics += [f"edge {j}->{i} above threshold but unsupported; dropped" for j, i in dropped]
    sig = params.sigma()
    suspected = conditional_dependence_screen(params.schema, data, graph, S_IV, hyper.screen_alpha) if screen else None
    return DiscoveryResult(graph, sig, suspected, history[-hyper.Fs:] if hyper.Fs else [],
                           params.diagnostics[start:])
