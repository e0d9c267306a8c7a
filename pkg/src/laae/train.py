"""Training loop, paired optimizer comparison and reconstruction grids."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .config import ExperimentConfig, differs_outside_optimizer
from .losses import LossValue, cae_loss, cvae_loss, mse
from .nn import (MODEL_CONFIGS, ConfigError, ParameterSet, bind, cae_forward, cvae_forward, init_params,
                 make_rng, reconstruct_batch, vanilla_ae_forward)
from .plot import line_plot_svg

CSV_HEADER = "epoch,step,loss_total,loss_bce,loss_kl"
EPS_STREAM = 0xE95  # key for the CVAE noise stream


class TrainingError(RuntimeError):
    pass


@dataclass
class LossRow:
    epoch: int
    step: int
    total: float
    bce: float | None = None
    kl: float | None = None

    def csv(self) -> str:
        fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
        return f"{self.epoch},{self.step},{fmt(self.total)},{fmt(self.bce)},{fmt(self.kl)}"


@dataclass
class TrainResult:
    config: ExperimentConfig
    rows: list[LossRow]
    params: ParameterSet
    initial_params: ParameterSet
    val_rows: list[tuple[int, float]] = field(default_factory=list)

    def epoch_means(self) -> list[float]:
        sums: dict[int, list[float]] = {}
        for r in self.rows:
            sums.setdefault(r.epoch, []).append(r.total)
        return [math.fsum(v) / len(v) for _, v in sorted(sums.items())]

    def csv_text(self) -> str:
        return "\n".join([CSV_HEADER, *(r.csv() for r in self.rows)]) + "\n"


def load_dataset(cfg: ExperimentConfig, *, path: str | None = None, count: int | None = None) -> D.ImageDataset:
    """Load the configured dataset and fit it to the model's input size."""
    path = cfg.data_path if path is None else path
    count = cfg.data_count if count is None else count
    if cfg.data_kind == "synth":
        ds = D.synth_movie(count, cfg.data_seed)
    elif cfg.data_kind == "cifar100":
        ds = D.load_cifar100(path)
    else:
        ds = D.load_ppm_dir(path)
    if cfg.data_kind != "synth" and count:
        ds = ds.take(count)
    model_cfg = cfg.model_config()
    if cfg.model == "vanilla":
        return ds
    return D.fit_to(ds, model_cfg.input_shape[1:])


def _model_input(cfg: ExperimentConfig, x: np.ndarray) -> np.ndarray:
    if cfg.model == "vanilla":
        x = x.reshape(len(x), -1)
        want = cfg.model_config().input_dim
        if x.shape[1] != want:
            raise ConfigError(f"vanilla AE expects {want} features, dataset gives {x.shape[1]}")
    return x


def loss_on_batch(cfg: ExperimentConfig, params: ParameterSet, x: np.ndarray,
                  eps: np.ndarray | None):
    """Forward + loss on a fresh tape. Returns (tape, bound params, LossValue)."""
    model_cfg = cfg.model_config()
    tape = T.Tape()
    p = bind(params, tape)
    xv = tape.leaf(x)
    if cfg.model == "cae":
        loss = cae_loss(cae_forward(p, xv, model_cfg), xv)
    elif cfg.model == "cvae":
        recon, stats = cvae_forward(p, xv, eps, model_cfg)
        loss = cvae_loss(recon, xv, stats, cfg.beta)
    else:
        recon = vanilla_ae_forward(p, xv, model_cfg)
        total = mse(recon, xv)
        loss = LossValue(total, {"mse": float(total.value)})
    return tape, p, loss


def train(cfg: ExperimentConfig, dataset: D.ImageDataset | None = None,
          out_dir: str | Path | None = None, quiet: bool = False) -> TrainResult:
    """Run one full training job; writes outputs when ``out_dir`` is given."""
    cfg.validate()
    model_cfg = cfg.model_config()
    if dataset is None:
        dataset = load_dataset(cfg)
    if cfg.model != "vanilla" and dataset.image_shape != tuple(model_cfg.input_shape):
        raise ConfigError(f"dataset images {dataset.image_shape} do not match {cfg.model} "
                          f"input {model_cfg.input_shape}")
    if cfg.batch_size > len(dataset):
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset size {len(dataset)}")
    _model_input(cfg, dataset.images[:1])

    params = init_params(model_cfg, cfg.seed)
    initial = params.copy()
    opt = cfg.make_optimizer()
    plan = D.BatchPlan(cfg.seed, cfg.batch_size)
    eps_rng = make_rng(cfg.seed, EPS_STREAM)
    val = None
    if cfg.eval_every and cfg.val_data_path:
        val = load_dataset(cfg, path=cfg.val_data_path, count=cfg.val_count)

    rows: list[LossRow] = []
    val_rows: list[tuple[int, float]] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for x in D.batches(dataset, plan, epoch):
            x = _model_input(cfg, x)
            eps = eps_rng.standard_normal((len(x), model_cfg.latent)) if cfg.model == "cvae" else None
            tape, p, loss = loss_on_batch(cfg, params, x, eps)
            if not math.isfinite(loss.value):
                raise TrainingError(f"non-finite loss {loss.value} at epoch {epoch}, step {step}")
            names = list(p)
            grads = T.backward(tape, loss.total, [p[n] for n in names])
            named = {n: grads[p[n].id] for n in names}
            params.set_grads(named)
            opt.step(params, named)
            rows.append(LossRow(epoch, step, loss.value,
                                loss.components.get("bce"), loss.components.get("kl")))
            step += 1
        mean = math.fsum(r.total for r in rows if r.epoch == epoch) / sum(r.epoch == epoch for r in rows)
        if not quiet:
            print(f"[{cfg.optimizer}] epoch {epoch}/{cfg.epochs} mean loss {mean:.6f}", flush=True)
        if val is not None and epoch % cfg.eval_every == 0:
            val_rows.append((epoch, evaluate(cfg, params, val)))

    result = TrainResult(cfg, rows, params, initial, val_rows)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def evaluate(cfg: ExperimentConfig, params: ParameterSet, dataset: D.ImageDataset) -> float:
    """Mean loss over ``dataset`` with no updates (CVAE on the mean path)."""
    plan_bs = min(cfg.batch_size, len(dataset))
    total, n = 0.0, 0
    for i in range(0, len(dataset), plan_bs):
        x = _model_input(cfg, dataset.images[i:i + plan_bs])
        eps = np.zeros((len(x), cfg.model_config().latent)) if cfg.model == "cvae" else None
        _, _, loss = loss_on_batch(cfg, params, x, eps)
        total += loss.value * len(x)
        n += len(x)
    return total / n


def write_run(result: TrainResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.config.replace(out=str(out)).save(out / "resolved.config")
    (out / "loss.csv").write_text(result.csv_text())
    save_checkpoint(out / "model.ckpt", result.config.model, result.params)
    if result.val_rows:
        (out / "val.csv").write_text(
            "epoch,val_loss\n" + "".join(f"{e},{v!r}\n" for e, v in result.val_rows))


# --------------------------------------------------------------------------
# A/B comparison

@dataclass
class Comparison:
    a: TrainResult
    b: TrainResult
    verdict: str

    def csv_text(self) -> str:
        lines = ["epoch,mean_loss_A,mean_loss_B"]
        for i, (la, lb) in enumerate(zip(self.a.epoch_means(), self.b.epoch_means()), 1):
            lines.append(f"{i},{la!r},{lb!r}")
        return "\n".join(lines) + "\n"


def verdict(a: TrainResult, b: TrainResult) -> str:
    fa, fb = a.epoch_means()[-1], b.epoch_means()[-1]
    name_a, name_b = a.config.optimizer, b.config.optimizer
    if fa == fb:
        return f"tie: A ({name_a}) and B ({name_b}) final epoch-mean loss {fa:.6g}"
    winner, loser = (("A", name_a, fa), ("B", name_b, fb)) if fa < fb else (("B", name_b, fb), ("A", name_a, fa))
    return (f"{winner[0]} ({winner[1]}) lower: final epoch-mean loss {winner[2]:.6g} "
            f"vs {loser[2]:.6g} for {loser[0]} ({loser[1]})")


def compare(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig, out_dir: str | Path | None = None,
            dataset: D.ImageDataset | None = None, quiet: bool = False) -> Comparison:
    """Train both arms from the same init, batch order and noise stream."""
    diff = differs_outside_optimizer(cfg_a, cfg_b)
    if diff:
        raise ConfigError(f"invalid A/B test: configs differ outside the optimizer in {diff}")
    cfg_a.validate()
    cfg_b.validate()
    if dataset is None:
        dataset = load_dataset(cfg_a)
    out = Path(out_dir) if out_dir is not None else None
    res_a = train(cfg_a, dataset, out / "A" if out else None, quiet)
    res_b = train(cfg_b, dataset, out / "B" if out else None, quiet)
    cmp = Comparison(res_a, res_b, verdict(res_a, res_b))
    if out is not None:
        save_checkpoint(out / "init.ckpt", cfg_a.model, res_a.initial_params)
        (out / "compare.csv").write_text(cmp.csv_text())
        title = f"{cfg_a.model.upper()} training loss (epoch mean)"
        (out / "compare.svg").write_text(line_plot_svg(
            {f"A: {cfg_a.optimizer}": res_a.epoch_means(), f"B: {cfg_b.optimizer}": res_b.epoch_means()},
            title=title, xlabel="epoch", ylabel="loss"))
        (out / "verdict.txt").write_text(cmp.verdict + "\n")
    if not quiet:
        print(cmp.verdict)
    return cmp


# --------------------------------------------------------------------------
# reconstruction grid

SEPARATOR = 2


def grid_shape(k: int, h: int, w: int) -> tuple[int, int]:
    """(height, width) of a k-column actual/reconstructed grid."""
    return 2 * h + SEPARATOR, k * w + (k - 1) * SEPARATOR


def reconstruct(checkpoint: Checkpoint, dataset: D.ImageDataset, k: int = 5) -> np.ndarray:
    """(3, H', W') uint8 grid: actual images on top, reconstructions below."""
    if k < 1 or k > len(dataset):
        raise ValueError(f"cannot show {k} images from a dataset of {len(dataset)}")
    model_cfg = MODEL_CONFIGS[checkpoint.kind]()
    if checkpoint.kind == "vanilla":
        raise ConfigError("reconstruction grids need an image model (cae or cvae)")
    if dataset.image_shape != tuple(model_cfg.input_shape):
        raise ConfigError(f"{checkpoint.kind} checkpoint expects {model_cfg.input_shape} images, "
                          f"dataset has {dataset.image_shape}")
    actual = dataset.images[:k]
    recon = reconstruct_batch(model_cfg, checkpoint.params, actual)
    _, h, w = dataset.image_shape
    gh, gw = grid_shape(k, h, w)
    grid = np.zeros((3, gh, gw), dtype=np.uint8)
    for i in range(k):
        x0 = i * (w + SEPARATOR)
        grid[:, :h, x0:x0 + w] = D.to_bytes(actual[i])
        grid[:, h + SEPARATOR:, x0:x0 + w] = D.to_bytes(recon[i])
    return grid
