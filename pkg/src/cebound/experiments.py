"""Experiment runner: configs, training loops, metric logs, and grid tools.

One :func:`run` call trains one model under one objective and writes

* ``metrics.csv``: one row per logged iteration, columns :data:`METRIC_COLUMNS`;
* ``checkpoint.json``: networks, optimizer moments and the training RNG state;
* ``config.json``: the resolved config;
* ``heatmap.csv``: encoder features on a grid, for 2-D data with 1-D features.

Logged values are computed on an evaluation set with noise drawn from
``default_rng([seed, 7919, iteration])``, so they do not depend on how the run
got to that iteration.  The ``cost`` column always holds the run's own
objective evaluated there; ``bound`` holds the matching upper bound where one
exists.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines, bounds, data, losses
from .linalg_ad import NonFiniteError, Tensor, exp, matmul, mul, square, tsum
from .nn import (
    MlpNetwork, OptimizerState, PriorSpec, load_checkpoint, mixture_decode, mlp_forward,
    optimizer_step, sample_prior, save_checkpoint,
)

SELECTORS = (
    "kl", "nip", "nuclear", "elbo_nuclear", "cond_nip", "max_bound",
    "s_mi", "r_mi", "mine_s", "mine_r", "ae_mse",
)
MDN_SELECTORS = ("kl", "nip", "nuclear")
ENCODER_SELECTORS = ("max_bound", "s_mi", "r_mi", "mine_s", "mine_r")
DECODER_SELECTORS = ("cond_nip", "ae_mse")
METRIC_COLUMNS = (
    "iteration", "cost", "bound", "gap", "inner", "q_norm", "p_cond_norm",
    "shannon_mi", "renyi_mi", "best_cost",
)
REQUIRED_VARIANCES = {
    "kl": ("v_p", "v_q"),
    "nip": ("v_p", "v_q"),
    "nuclear": ("v_X",),
    "elbo_nuclear": ("v_X", "v_Y"),
    "cond_nip": ("v_X", "v_q", "v_Y"),
    "ae_mse": ("v_X", "v_Y"),
}
HIGHDIM = 50  # at and above this data dimension the relative forms are logged
EVAL_SALT = 7919


class ExperimentError(RuntimeError):
    """A run failed; the message names the run and the iteration."""


@dataclass
class ExperimentConfig:
    loss: str
    seed: int
    dataset: dict
    model: dict = field(default_factory=dict)
    variances: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    iterations: int = 20_000
    batch_size: int = 256
    log_every: int = 100
    eval: dict = field(default_factory=dict)
    out_dir: str = "runs/default"
    name: str = "run"
    max_bound_cap: int = 10_000
    checkpoint_every: int = 0
    resume_from: str | None = None

    def __post_init__(self):
        if self.loss not in SELECTORS:
            raise ValueError(f"unknown loss selector {self.loss!r}; expected one of {SELECTORS}")
        if self.seed is None or isinstance(self.seed, bool) or int(self.seed) != self.seed:
            raise ValueError("an integer seed is required")
        self.seed = int(self.seed)
        if not isinstance(self.dataset, dict) or "kind" not in self.dataset:
            raise ValueError("dataset needs a 'kind'")
        need = REQUIRED_VARIANCES.get(self.loss, ("v_X", "v_Y"))
        missing = [k for k in need if k not in self.variances]
        if missing:
            raise ValueError(f"loss {self.loss!r} needs variances {missing}")
        for k, v in self.variances.items():
            if not (isinstance(v, (int, float)) and v > 0):
                raise ValueError(f"variance {k} must be a positive number")
        if self.iterations < 0 or self.batch_size < 2 or self.log_every < 1:
            raise ValueError("iterations >= 0, batch_size >= 2 and log_every >= 1 are required")
        if self.loss == "ae_mse" and int(self.model.get("K", 1)) != 1:
            raise ValueError("ae_mse uses a single decoder output (K = 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path, env=None) -> ExperimentConfig:
    """Read a JSON config and apply ``CEBOUND_SEED`` / ``CEBOUND_OUT`` overrides."""
    d = json.loads(Path(path).read_text())
    return apply_env_overrides(d, os.environ if env is None else env)


def apply_env_overrides(d: dict, env) -> ExperimentConfig:
    d = dict(d)
    if env.get("CEBOUND_SEED"):
        d["seed"] = int(env["CEBOUND_SEED"])
    if env.get("CEBOUND_OUT"):
        d["out_dir"] = env["CEBOUND_OUT"]
    return ExperimentConfig.from_dict(d)


@dataclass
class RunArtifacts:
    metrics_csv: Path
    checkpoint: Path
    config_echo: Path
    heatmap_csv: Path | None = None
    summary: dict = field(default_factory=dict)
    reports: list = field(default_factory=list, repr=False)
    nets: dict = field(default_factory=dict, repr=False)


# -- data ----------------------------------------------------------------------
@dataclass
class _RunData:
    X: np.ndarray
    Y: np.ndarray | None  # given conditioning values (walks); None means "encode X"
    dataset: data.Dataset | None = None


def build_data(spec: dict, seed: int) -> _RunData:
    spec = dict(spec)
    kind = spec.pop("kind")
    dseed = spec.pop("seed", seed)
    if kind == "WALK":
        walks = data.simulate_random_walk(spec.get("trials", 300), spec.get("length", 100), dseed)
        prev, nxt = walks.transitions()
        return _RunData(nxt, prev)
    if kind == "IMAGE":
        count = spec.get("count", 800)
        path = spec.get("path")
        ds = data.load_idx_subset(path, count) if path else data.image_surrogate(count, seed=dseed)
        return _RunData(ds.samples, None, ds)
    ds = data.gen_toy(kind, spec.get("n"), dseed, spec.get("params"))
    return _RunData(ds.samples, None, ds)


# -- models -----------------------------------------------------------------------
class _Models:
    """Networks and optimizers for one selector."""

    def __init__(self, cfg: ExperimentConfig, d_x: int, d_cond: int | None, rng):
        m = cfg.model
        hidden = list(m.get("hidden", [128, 128, 128]))
        enc_hidden = list(m.get("encoder_hidden", hidden))
        dec_hidden = list(m.get("decoder_hidden", hidden))
        act = m.get("activation", "tanh")
        self.d_y = int(m.get("d_y", 1)) if d_cond is None else d_cond
        self.K = int(m.get("K", 1))
        self.mode = m.get("decode_mode", "input")
        self.enumerate = bool(m.get("enumerate", False))
        self.trainable = bool(m.get("trainable_params", False))
        self.prior = PriorSpec.from_dict(m.get("prior"))
        self.d_x = d_x
        self.nets: dict[str, MlpNetwork] = {}
        self.critic = None
        loss = cfg.loss
        if loss in MDN_SELECTORS:
            if self.prior.dim == 0:
                self.prior = PriorSpec("uniform", d_x)
            self.nets["generator"] = MlpNetwork(
                [self.prior.dim, *hidden, d_x], act, m.get("decoder_output", "linear"), rng)
            return
        if d_cond is None:
            self.nets["encoder"] = MlpNetwork([d_x, *enc_hidden, self.d_y], act, m.get("encoder_output", "tanh"), rng)
        if loss == "elbo_nuclear":
            if self.prior.dim == 0:
                self.prior = PriorSpec("uniform", self.d_y)
            if self.prior.dim != self.d_y:
                raise ValueError("the ELBO variation needs a prior as wide as the feature")
            self.nets["decoder"] = MlpNetwork([self.d_y, *dec_hidden, d_x], act, m.get("decoder_output", "linear"), rng)
        elif loss in DECODER_SELECTORS:
            head = d_x + (d_x + 1 if self.trainable else 0)
            if self.mode == "output":
                widths = [self.d_y, *dec_hidden, self.K * head]
            else:
                if self.K > 1 and self.prior.dim == 0:
                    raise ValueError("K > 1 in input mode needs a prior")
                widths = [self.d_y + self.prior.dim, *dec_hidden, head]
            skip = bool(m.get("decoder_skip", False))
            if skip and (self.trainable or self.d_y != d_x or self.prior.dim):
                raise ValueError("decoder_skip needs plain heads of the conditioning width and no prior")
            self.nets["decoder"] = MlpNetwork(widths, act, m.get("decoder_output", "linear"), rng, skip=skip)
        elif loss in ("mine_s", "mine_r"):
            variant = "shannon" if loss == "mine_s" else "renyi"
            self.critic = baselines.MineEstimator(d_x, self.d_y, m.get("critic_hidden", (64, 64)), variant, rng)
            self.nets["critic"] = self.critic.network

    def make_optimizers(self, cfg):
        kw = {k: cfg.optimizer[k] for k in ("beta1", "beta2", "eps") if k in cfg.optimizer}
        lr = cfg.optimizer.get("lr", 1e-3)
        lrs = cfg.optimizer.get("lr_per_net", {})
        return {name: OptimizerState.for_params(net.params, lr=lrs.get(name, lr), **kw)
                for name, net in self.nets.items()}

    def encode(self, X, Y_given=None):
        if Y_given is not None:
            return Tensor(Y_given)
        return self.nets["encoder"](X)

    def decode(self, Y, rng):
        """``N x K x head`` raw decoder outputs."""
        return mixture_decode(self.nets["decoder"], Y, self.prior, self.K, rng, self.mode, self.enumerate)

    def split_heads(self, raw):
        """Means, weights and per-dimension variances from trainable heads."""
        d = self.d_x
        N, K, _ = raw.shape
        means = raw[:, :, :d]
        logits = raw[:, :, d]
        shift = logits.data.max(axis=1, keepdims=True)
        w = exp(logits - shift)
        weights = w / tsum(w, axis=1, keepdims=True)
        variances = mul(exp(raw[:, :, d + 1:]), self.var_scale) + self.var_floor
        return means, weights, variances


# -- training objectives -------------------------------------------------------------
def _vars(cfg):
    return cfg.variances


def _loss_cfg(cfg, stabilized):
    v = cfg.variances
    v_p = v.get("v_p", v.get("v_X"))
    v_q = v.get("v_q", v_p)
    return losses.LossConfig(v_p=v_p, v_q=v_q, stabilized=stabilized,
                             epsilon=cfg.model.get("epsilon", 1e-12),
                             allow_unequal_variances=bool(cfg.model.get("allow_unequal_variances", False)))


def _noisy(T, var, rng):
    return T + Tensor(math.sqrt(var) * rng.standard_normal(T.shape))


def _batch_idx(n, b, rng):
    return np.sort(rng.choice(n, size=b, replace=False)) if b < n else np.arange(n)


def _stabilized(cfg, d_x):
    return bool(cfg.model.get("stabilized", d_x >= HIGHDIM))


def _cond_cost(models, cfg, X, raw, stabilized):
    if models.trainable:
        means, weights, variances = models.split_heads(raw)
        return losses.parametric_mixture_cost(X, means, weights, variances, _loss_cfg(cfg, stabilized))
    return losses.conditional_nip_cost(X, raw, _loss_cfg(cfg, stabilized))


def _train_objective(cfg, models, rd: _RunData, rng) -> Tensor:
    """One minibatch value of the selected objective."""
    n = rd.X.shape[0]
    b = min(cfg.batch_size, n)
    if cfg.loss in ENCODER_SELECTORS and n <= cfg.max_bound_cap and cfg.model.get("full_batch", False):
        b = n
    idx = _batch_idx(n, b, rng)
    X = Tensor(rd.X[idx])
    v = _vars(cfg)
    loss = cfg.loss
    if loss in MDN_SELECTORS:
        u = sample_prior(models.prior, b, rng)
        Xp = models.nets["generator"](u)
        if loss == "kl":
            return losses.kl_mdn_cost(X, Xp, _loss_cfg(cfg, True))
        if loss == "nip":
            return losses.nip_cost(X, Xp, _loss_cfg(cfg, True)).cost
        return losses.nuclear_cost(X, Xp, v["v_X"])
    Yg = None if rd.Y is None else rd.Y[idx]
    if loss == "elbo_nuclear":
        Ygen = models.encode(X)
        Yp = sample_prior(models.prior, b, rng)
        Xgen = models.nets["decoder"](Yp)
        return losses.elbo_nuclear_cost(X, Xgen, Yp, Ygen, v["v_X"], v["v_Y"])
    Y = models.encode(X, Yg)
    if loss in DECODER_SELECTORS:
        Y_hat = _noisy(Y, v["v_Y"], rng)
        raw = models.decode(Y_hat, rng)
        if loss == "ae_mse":
            return losses.ae_mse_cost(X, raw[:, :, : models.d_x])
        return _cond_cost(models, cfg, X, raw, _stabilized(cfg, models.d_x)).cost
    X_hat = rd.X[idx] + math.sqrt(v["v_X"]) * rng.standard_normal(X.shape)
    Y_hat = _noisy(Y, v["v_Y"], rng)
    if loss == "max_bound":
        return bounds.p_cond_norm_t(X_hat, X, Y_hat, Y, v["v_X"], v["v_Y"])
    if loss == "s_mi":
        return bounds.shannon_mi_t(X_hat, X, Y_hat, Y, v["v_X"], v["v_Y"])
    if loss == "r_mi":
        return bounds.renyi_mi_t(X_hat, X, Y_hat, Y, v["v_X"], v["v_Y"])
    Xh = Tensor(X_hat)
    return baselines.mine_objective(models.critic, (Xh, Y_hat), baselines.shuffle_pairs(Xh, Y_hat, rng))


# -- evaluation ----------------------------------------------------------------------
def _eval_indices(cfg, n):
    cap = int(cfg.eval.get("n", cfg.max_bound_cap))
    if n <= cap:
        return np.arange(n)
    return np.sort(np.random.default_rng([cfg.seed, EVAL_SALT]).choice(n, cap, replace=False))


def evaluate(cfg, models, rd: _RunData, iteration: int) -> bounds.BoundReport:
    """All logged quantities at one iteration, on the fixed evaluation set."""
    rng = np.random.default_rng([cfg.seed, EVAL_SALT, iteration])
    idx = _eval_indices(cfg, rd.X.shape[0])
    X = rd.X[idx]
    n, d = X.shape
    v = _vars(cfg)
    loss = cfg.loss
    rep = bounds.BoundReport(iteration, float("nan"), float("nan"))
    if loss in MDN_SELECTORS:
        u = sample_prior(models.prior, n, rng)
        Xp = models.nets["generator"](u)
        if loss == "kl":
            rep.cost = losses.kl_mdn_cost(X, Xp, _loss_cfg(cfg, True)).item()
        elif loss == "nip":
            t = losses.nip_cost(X, Xp, _loss_cfg(cfg, True))
            rep.cost, rep.bound, rep.inner, rep.q_norm = t.cost.item(), t.p_norm, t.inner, t.q_norm
        else:
            rep.cost, rep.bound = losses.nuclear_cost(X, Xp, v["v_X"]).item(), float(n)
        return rep
    if loss == "elbo_nuclear":
        Yp = sample_prior(models.prior, n, rng)
        cost = losses.elbo_nuclear_cost(X, models.nets["decoder"](Yp), Yp, models.encode(X), v["v_X"], v["v_Y"])
        rep.cost, rep.bound = cost.item(), float(n)
        return rep
    Y = models.encode(X, None if rd.Y is None else rd.Y[idx]).data
    repeats = int(cfg.eval.get("repeats", 1))
    draws = [_eval_encoded(cfg, models, X, Y, rng, iteration) for _ in range(repeats)]
    return draws[0] if repeats == 1 else _average_reports(draws)


def _average_reports(reps):
    out = bounds.BoundReport(reps[0].iteration, float("nan"), float("nan"))
    for name in ("cost", "bound", "inner", "q_norm", "p_cond_norm", "shannon_mi", "renyi_mi"):
        vals = [getattr(r, name) for r in reps]
        if all(v is not None for v in vals):
            setattr(out, name, float(np.mean(vals)))
    return out


def _eval_encoded(cfg, models, X, Y, rng, iteration):
    """One noise draw of every logged quantity for encoder-based runs."""
    n, d = X.shape
    v = _vars(cfg)
    loss = cfg.loss
    rep = bounds.BoundReport(iteration, float("nan"), float("nan"))
    pairs = bounds.make_noisy_pairs(X, Y, v["v_X"], v["v_Y"], rng)
    highdim = d >= HIGHDIM
    want_mi = bool(cfg.eval.get("mi", not highdim))
    if not highdim:
        rep.p_cond_norm = rep.bound = bounds.estimate_p_cond_norm(pairs)
    if want_mi:
        rep.shannon_mi = bounds.estimate_shannon_mi(pairs)
        rep.renyi_mi = bounds.estimate_renyi_mi(pairs)
    if loss in DECODER_SELECTORS:
        raw = models.decode(Tensor(pairs.Y_hat), rng)
        recon = raw.data[:, :, :d]
        if loss == "ae_mse":
            rep.cost = losses.ae_mse_cost(X, recon).item()
            if not highdim:
                rep.inner, rep.q_norm, _ = bounds.estimate_cost_terms(pairs, recon, v.get("v_q", v["v_X"]))
        elif highdim:
            rep.cost, rep.bound = bounds.highdim_cost_bound(X, recon, Y, pairs.Y_hat, v["v_X"], v["v_Y"])
        elif models.trainable:
            t = _cond_cost(models, cfg, X, raw, stabilized=False)
            rep.cost, rep.inner, rep.q_norm = t.cost.item(), t.inner, t.q_norm
        else:
            rep.inner, rep.q_norm, rep.cost = bounds.estimate_cost_terms(pairs, recon, v["v_q"])
    elif loss == "max_bound":
        rep.cost = rep.p_cond_norm
    elif loss == "s_mi":
        rep.cost = rep.shannon_mi if want_mi else bounds.estimate_shannon_mi(pairs)
    elif loss == "r_mi":
        rep.cost = rep.renyi_mi if want_mi else bounds.estimate_renyi_mi(pairs)
    else:
        Xh, Yh = Tensor(pairs.X_hat), Tensor(pairs.Y_hat)
        rep.cost = baselines.mine_objective(models.critic, (Xh, Yh), baselines.shuffle_pairs(Xh, Yh, rng)).item()
    return rep


def _gap(loss, rep):
    if loss in ("cond_nip", "nip", "nuclear", "elbo_nuclear", "max_bound"):
        return rep.bound - rep.cost
    return None


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def report_row(loss, rep, best):
    vals = {
        "iteration": str(rep.iteration),
        "cost": _fmt(rep.cost),
        "bound": _fmt(rep.bound),
        "gap": _fmt(_gap(loss, rep)),
        "inner": _fmt(rep.inner),
        "q_norm": _fmt(rep.q_norm),
        "p_cond_norm": _fmt(rep.p_cond_norm),
        "shannon_mi": _fmt(rep.shannon_mi),
        "renyi_mi": _fmt(rep.renyi_mi),
        "best_cost": _fmt(best),
    }
    return [vals[c] for c in METRIC_COLUMNS]


def read_metrics(path) -> dict[str, np.ndarray]:
    """Metric columns as float arrays (blank cells become NaN)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != METRIC_COLUMNS:
        raise ValueError(f"{path}: unexpected metrics header")
    body = rows[1:]
    return {c: np.array([float(r[i]) if r[i] else np.nan for r in body]) for i, c in enumerate(METRIC_COLUMNS)}


# -- the loop ---------------------------------------------------------------------------
def _setup(cfg):
    rd = build_data(cfg.dataset, cfg.seed)
    if cfg.loss == "max_bound" and rd.X.shape[0] > cfg.max_bound_cap and cfg.model.get("full_batch", False):
        raise ValueError(f"max_bound with the full set is capped at N <= {cfg.max_bound_cap}")
    d_cond = None if rd.Y is None else rd.Y.shape[1]
    models = _Models(cfg, rd.X.shape[1], d_cond, np.random.default_rng([cfg.seed, 1]))
    scale = float(cfg.model.get("output_init_scale", 1.0))
    for name in ("generator", "decoder"):
        if name in models.nets:
            models.nets[name].weights[-1].data *= scale
    if cfg.model.get("init_output_bias", "data_mean") == "data_mean":
        _center_outputs(models, rd.X.mean(axis=0))
    models.var_floor = float(cfg.model.get("var_floor", 1e-5))
    models.var_scale = float(cfg.model.get("var_scale", cfg.variances.get("v_q", cfg.variances.get("v_X", 1.0))))
    return rd, models


def _center_outputs(models, center):
    """Start every reconstruction head at the data mean (skip heads start at their input).

    Far from the data the Gaussian costs and their gradients are ~1e-20,
    well under Adam's epsilon, and training never leaves the starting point.
    """
    d = center.shape[0]
    for name in ("generator", "decoder"):
        net = models.nets.get(name)
        if net is None or net.skip:
            continue
        b = net.biases[-1].data
        heads = models.K if (name == "decoder" and models.mode == "output") else 1
        step = b.shape[0] // heads
        for k in range(heads):
            b[k * step: k * step + d] = center


def run(cfg: ExperimentConfig) -> RunArtifacts:
    """Train under ``cfg`` and write the run's artifacts to ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rd, models = _setup(cfg)
    except (ValueError, OSError) as exc:
        raise ExperimentError(f"{cfg.name}: setup failed: {exc}") from exc
    opts = models.make_optimizers(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    start, best = 0, None
    if cfg.resume_from:
        nets, saved_opts, meta = load_checkpoint(cfg.resume_from)
        if set(nets) != set(models.nets):
            raise ExperimentError(f"{cfg.name}: checkpoint networks {sorted(nets)} do not match the config")
        for name, net in nets.items():
            for p, q in zip(models.nets[name].params, net.params):
                if p.shape != q.shape:
                    raise ExperimentError(f"{cfg.name}: checkpoint shapes differ for {name}")
                p.data = q.data.copy()
        opts = saved_opts
        rng.bit_generator.state = meta["rng_state"]
        start, best = int(meta["iteration"]), meta.get("best_cost")
    params = [p for net in models.nets.values() for p in net.params]
    lrs = cfg.optimizer.get("lr_per_net", {})
    base_lr = {name: lrs.get(name, cfg.optimizer.get("lr", 1e-3)) for name in models.nets}
    reports, rows = [], []

    def log_at(it):
        nonlocal best
        rep = evaluate(cfg, models, rd, it)
        if not math.isnan(rep.cost):
            best = rep.cost if best is None else max(best, rep.cost)
        reports.append(rep)
        rows.append(report_row(cfg.loss, rep, best))

    def save(it):
        meta = {"config": cfg.to_dict(), "iteration": it, "rng_state": rng.bit_generator.state,
                "best_cost": best}
        save_checkpoint(out / "checkpoint.json", models.nets, opts, meta)

    it = start
    try:
        if start == 0:
            log_at(0)
        for it in range(start + 1, cfg.iterations + 1):
            for p in params:
                p.grad = None
            obj = _train_objective(cfg, models, rd, rng)
            if not math.isfinite(obj.item()):
                raise NonFiniteError(f"objective is {obj.item()}")
            obj.backward()
            for name, net in models.nets.items():
                opts[name].lr = base_lr[name] * _lr_factor(cfg, it)
                optimizer_step(opts[name], net.params)
            if it % cfg.log_every == 0 or it == cfg.iterations:
                log_at(it)
            if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                save(it)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise ExperimentError(f"{cfg.name} ({cfg.loss}) failed at iteration {it}: {exc}") from exc
    save(max(it, start))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    writer.writerows(rows)
    metrics = out / "metrics.csv"
    metrics.write_text(buf.getvalue())
    echo = out / "config.json"
    echo.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    heat = None
    enc = models.nets.get("encoder")
    if enc is not None and enc.in_dim == 2 and enc.out_dim == 1:
        heat = out / "heatmap.csv"
        feature_heatmap(enc, int(cfg.eval.get("heatmap_resolution", 50)), heat)
    final = reports[-1] if reports else None
    summary = {
        "name": cfg.name, "loss": cfg.loss, "iterations": cfg.iterations,
        "final_cost": None if final is None else _nan_none(final.cost),
        "final_bound": None if final is None else _nan_none(final.bound),
        "best_cost": best,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return RunArtifacts(metrics, out / "checkpoint.json", echo, heat, summary, reports, dict(models.nets))


def _lr_factor(cfg, it):
    """Cosine decay from 1 to ``optimizer.final_lr_fraction`` over the run (1 when unset)."""
    final = float(cfg.optimizer.get("final_lr_fraction", 1.0))
    if final == 1.0 or cfg.iterations <= 1:
        return 1.0
    t = (it - 1) / (cfg.iterations - 1)
    return final + (1.0 - final) * 0.5 * (1.0 + math.cos(math.pi * t))


def _nan_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


# -- grid tools --------------------------------------------------------------------------
def _unit_grid(resolution):
    t = np.linspace(0.0, 1.0, resolution)
    g0, g1 = np.meshgrid(t, t, indexing="ij")
    return np.stack([g0.ravel(), g1.ravel()], axis=1)


def feature_heatmap(encoder: MlpNetwork, resolution: int = 50, path=None) -> np.ndarray:
    """Encoder outputs on a ``resolution x resolution`` grid over the unit box.

    Rows are ``(x0, x1, y0, ...)`` with ``x0`` varying slowest.
    """
    if encoder.in_dim != 2:
        raise ValueError(f"heatmaps need a 2-D input encoder, got input width {encoder.in_dim}")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    grid = _unit_grid(resolution)
    table = np.concatenate([grid, encoder(grid).data], axis=1)
    if path is not None:
        header = ["x0", "x1"] + [f"y{i}" for i in range(encoder.out_dim)]
        np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return table


@dataclass
class GridDensityResult:
    p_x: np.ndarray  # resolution x resolution, sums to 1
    p_y_given_x: np.ndarray  # G x Y, rows sum to 1
    features: np.ndarray  # resolution x resolution encoder outputs
    decoded: np.ndarray  # Y x 2 decoder outputs at the interpolated feature points
    recon_density: np.ndarray  # resolution x resolution mass of decoded points
    objective: np.ndarray  # trace of the minimized objective
    y_grid: np.ndarray = field(repr=False, default=None)


def grid_histogram(X, resolution):
    """Sample histogram on the ``resolution^2`` grid cells of the unit box, summing to 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("the grid solver needs 2-D data")
    cells = np.clip(np.rint(X * (resolution - 1)).astype(int), 0, resolution - 1)
    H = np.zeros((resolution, resolution))
    np.add.at(H, (cells[:, 0], cells[:, 1]), 1.0)
    return H / H.sum()


def grid_density_solver(dataset, resolution: int = 50, y_points: int = 3000, v: float = 0.00025,
                        iterations: int = 2000, hidden=(128,), lr: float = 1e-3, seed: int = 0,
                        out_dir=None) -> GridDensityResult:
    """Solve the autoencoder objective directly over discretized densities.

    ``p(X)`` is the data histogram on the grid.  The encoder maps one-hot grid
    cells to a feature in ``[-1, 1]``; ``p(Y|X)`` is a Gaussian of variance ``v``
    around it, evaluated on ``y_points`` values spanning ``[-1.1, 1.1]`` and
    normalized per row.  The decoder maps one-hot feature points to 2-D
    reconstructions, and ``mean(p(X) p(Y|X) * |X - D(Y)|^2)`` is minimized.
    """
    X = dataset.samples if isinstance(dataset, data.Dataset) else np.asarray(dataset, dtype=np.float64)
    P = grid_histogram(X, resolution)
    grid = _unit_grid(resolution)
    support = np.flatnonzero(P.ravel() > 0)
    px = P.ravel()[support]
    ys = np.linspace(-1.1, 1.1, y_points)
    rng = np.random.default_rng([seed, 3])
    enc = MlpNetwork([resolution * resolution, *hidden, 1], "tanh", "tanh", rng)
    dec = MlpNetwork([y_points, *hidden, 2], "tanh", "linear", rng)
    state = OptimizerState.for_params(enc.params + dec.params, lr=lr, maximize=False)
    gsq = np.einsum("ij,ij->i", grid[support], grid[support])[:, None]
    scale = 1.0 / (len(support) * y_points)
    trace = []

    def conditional(feat_support):
        dist = square(feat_support - Tensor(ys[None, :]))
        shift = dist.data.min(axis=1, keepdims=True)
        k = exp(mul(dist - shift, -1.0 / (2.0 * v)))
        return k / tsum(k, axis=1, keepdims=True)

    for _ in range(iterations):
        for p in enc.params + dec.params:
            p.grad = None
        feats = mlp_forward(enc, None, identity_input=True)
        fs = feats[support]
        pyx = conditional(fs)
        D = mlp_forward(dec, None, identity_input=True)
        M = Tensor(gsq) + tsum(square(D), axis=1).reshape(1, y_points) - mul(matmul(Tensor(grid[support]), D.T), 2.0)
        obj = mul(tsum(pyx * M * Tensor(px[:, None])), scale)
        obj.backward()
        optimizer_step(state, enc.params + dec.params)
        trace.append(obj.item())
    feats = mlp_forward(enc, None, identity_input=True).data[:, 0]
    d2 = (feats[:, None] - ys[None, :]) ** 2
    full = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * v))
    full /= full.sum(axis=1, keepdims=True)
    decoded = mlp_forward(dec, None, identity_input=True).data
    p_y = P.ravel() @ full
    recon = grid_histogram_weighted(decoded, p_y, resolution)
    res = GridDensityResult(P, full, feats.reshape(resolution, resolution), decoded, recon, np.array(trace), ys)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "p_x.csv", P, delimiter=",", fmt="%.17g")
        np.savetxt(out / "features.csv", res.features, delimiter=",", fmt="%.17g")
        np.savetxt(out / "recon_density.csv", recon, delimiter=",", fmt="%.17g")
    return res


def grid_histogram_weighted(points, weights, resolution):
    cells = np.clip(np.rint(np.asarray(points) * (resolution - 1)).astype(int), 0, resolution - 1)
    H = np.zeros((resolution, resolution))
    np.add.at(H, (cells[:, 0], cells[:, 1]), weights)
    total = H.sum()
    return H / total if total > 0 else H


__all__ = [
    "ExperimentConfig", "RunArtifacts", "ExperimentError", "SELECTORS", "METRIC_COLUMNS",
    "load_config", "apply_env_overrides", "run", "evaluate", "read_metrics",
    "feature_heatmap", "grid_density_solver", "GridDensityResult", "grid_histogram", "build_data",
]
