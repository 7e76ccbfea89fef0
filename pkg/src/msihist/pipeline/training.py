"""Training loops for the baseline and the adversarial model.

Batch order is a pure function of (seed, epoch), so resuming from a
checkpoint continues bit-identically to an uninterrupted run. Stopping:
training ends when the validation loss has not improved by min_delta for
`patience` consecutive evaluations, or at max_steps. The best-on-
validation checkpoint is kept alongside the final one.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..nn.checkpoint import load_checkpoint, restore_state, save_checkpoint
from ..nn.models import PatchGAN, Pix2PixConfig, UNet, UNetConfig
from ..nn.optim import TrainState
from ..nn.train_ops import pix2pix_step, unet_train_step
from .config import RunConfig, config_echo
from .data import ImagePair

log = logging.getLogger("msihist")

UNET_INIT_STREAM = 11
GEN_INIT_STREAM = 12
DISC_INIT_STREAM = 13
UNET_EPOCH_STREAM = 7000
PIX2PIX_EPOCH_STREAM = 8000


def _to_nchw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image.transpose(2, 0, 1))


def pairs_to_patches(pairs: list[ImagePair], patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack aligned 32x32-style patches from every pair, NCHW."""
    from ..imagereg import extract_patches

    xs, ys = [], []
    for pair in pairs:
        for (_, _, p_msi), (_, _, p_hist) in zip(
            extract_patches(pair.msi_rgb, patch, patch),
            extract_patches(pair.histology, patch, patch),
        ):
            xs.append(_to_nchw(p_msi))
            ys.append(_to_nchw(p_hist))
    return np.stack(xs), np.stack(ys)


def _forward_batched(model: UNet, x: np.ndarray, chunk: int = 64) -> np.ndarray:
    outs = []
    for i in range(0, x.shape[0], chunk):
        outs.append(model.forward(x[i:i + chunk]).data)
    return np.concatenate(outs, axis=0)


def _val_mse(model: UNet, x: np.ndarray, y: np.ndarray) -> float:
    pred = _forward_batched(model, x)
    return float(np.mean((pred - y) ** 2))


def _val_l1(gen: UNet, pairs: list[ImagePair]) -> float:
    total = 0.0
    for pair in pairs:
        x = _to_nchw(pair.msi_rgb)[None]
        y = _to_nchw(pair.histology)[None]
        total += float(np.mean(np.abs(gen.forward(x).data - y)))
    return total / len(pairs)


class _Stopper:
    def __init__(self, patience: int, min_delta: float,
                 best: float = np.inf, bad: int = 0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = best
        self.bad = bad

    def update(self, value: float) -> bool:
        """Record a validation value; returns True when this is a new best."""
        if value < self.best - self.min_delta:
            self.best = value
            self.bad = 0
            return True
        self.bad += 1
        return False

    @property
    def exhausted(self) -> bool:
        return self.bad >= self.patience


def train_unet(train_pairs: list[ImagePair], val_pairs: list[ImagePair],
               cfg: RunConfig, out_dir: Path,
               resume_from: Path | None = None) -> Path:
    """Train the baseline; returns the path of the best-on-validation checkpoint."""
    tc = cfg.unet
    if not train_pairs:
        raise ValidationError("no training pairs")
    x_train, y_train = pairs_to_patches(train_pairs, tc.model.patch)
    if val_pairs:
        x_val, y_val = pairs_to_patches(val_pairs, tc.model.patch)
    else:
        x_val, y_val = x_train, y_train

    model = UNet(tc.model, np.random.default_rng([cfg.seed, UNET_INIT_STREAM]))
    state = TrainState.for_params(model.parameters(), rng_seed=cfg.seed)
    stopper = _Stopper(tc.stopping.patience, tc.stopping.min_delta)
    if resume_from is not None:
        loaded = load_checkpoint(resume_from)
        state = restore_state(model.parameters(), loaded)
        meta = loaded[0].get("meta", {})
        stopper = _Stopper(tc.stopping.patience, tc.stopping.min_delta,
                           best=meta.get("best_val", np.inf),
                           bad=meta.get("bad_evals", 0))

    n = x_train.shape[0]
    batch = min(tc.batch_size, n)
    steps_per_epoch = max(1, n // batch)
    echo = config_echo(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "unet_best.msih"
    final_path = out_dir / "unet_final.msih"
    log_path = out_dir / "unet_log.csv"

    def save(path: Path):
        save_checkpoint(path, "unet", echo, state,
                        meta={"best_val": stopper.best, "bad_evals": stopper.bad})

    if resume_from is not None and log_path.is_file():
        lines = [log_path.read_text().rstrip("\n")]
    else:
        lines = ["step,loss"]
    if state.step == 0:
        save(best_path)
    order = None
    try:
        while state.step < tc.stopping.max_steps:
            epoch = state.step // steps_per_epoch
            pos = state.step % steps_per_epoch
            if pos == 0 or order is None:
                order = np.random.default_rng(
                    [cfg.seed, UNET_EPOCH_STREAM + epoch]).permutation(n)
            idx = order[pos * batch:(pos + 1) * batch]
            loss = unet_train_step(model, state, x_train[idx], y_train[idx],
                                   tc.lr, tc.betas)
            lines.append(f"{state.step},{loss:.9f}")
            if state.step % tc.stopping.eval_every == 0:
                val = _val_mse(model, x_val, y_val)
                improved = stopper.update(val)
                log.info("unet step %d train %.5f val %.5f%s",
                         state.step, loss, val, " *" if improved else "")
                if improved:
                    save(best_path)
                if stopper.exhausted:
                    log.info("unet stopping: no val improvement for %d evaluations",
                             stopper.bad)
                    break
    finally:
        log_path.write_text("\n".join(lines) + "\n")
    save(final_path)
    if not best_path.exists():
        save(best_path)
    return best_path


def _merged_state(gen_state: TrainState, disc_state: TrainState) -> TrainState:
    params = {f"gen.{k}": v for k, v in gen_state.params.items()}
    params.update({f"disc.{k}": v for k, v in disc_state.params.items()})
    m = {f"gen.{k}": v for k, v in gen_state.m.items()}
    m.update({f"disc.{k}": v for k, v in disc_state.m.items()})
    v = {f"gen.{k}": v2 for k, v2 in gen_state.v.items()}
    v.update({f"disc.{k}": v2 for k, v2 in disc_state.v.items()})
    return TrainState(params=params, m=m, v=v, step=gen_state.step,
                      rng_seed=gen_state.rng_seed)


def _split_loaded(loaded: tuple) -> tuple[tuple, tuple]:
    header, params, adam_m, adam_v = loaded

    def pick(prefix: str):
        strip = len(prefix)
        return (
            header,
            {k[strip:]: v for k, v in params.items() if k.startswith(prefix)},
            {k[strip:]: v for k, v in adam_m.items() if k.startswith(prefix)},
            {k[strip:]: v for k, v in adam_v.items() if k.startswith(prefix)},
        )

    return pick("gen."), pick("disc.")


def train_pix2pix(train_pairs: list[ImagePair], val_pairs: list[ImagePair],
                  cfg: RunConfig, out_dir: Path,
                  resume_from: Path | None = None) -> Path:
    """Adversarial training at batch size 1; returns the best checkpoint path."""
    tc = cfg.pix2pix
    if not train_pairs:
        raise ValidationError("no training pairs")
    model_cfg: Pix2PixConfig = tc.model
    gen = UNet(model_cfg.gen, np.random.default_rng([cfg.seed, GEN_INIT_STREAM]))
    disc = PatchGAN(model_cfg.gen.in_channels + model_cfg.gen.out_channels,
                    model_cfg.disc_width, model_cfg.disc_layers,
                    np.random.default_rng([cfg.seed, DISC_INIT_STREAM]))
    gen_state = TrainState.for_params(gen.parameters(), rng_seed=cfg.seed)
    disc_state = TrainState.for_params(disc.parameters(), rng_seed=cfg.seed)
    stopper = _Stopper(tc.stopping.patience, tc.stopping.min_delta)
    if resume_from is not None:
        loaded = load_checkpoint(resume_from)
        gen_loaded, disc_loaded = _split_loaded(loaded)
        gen_state = restore_state(gen.parameters(), gen_loaded)
        disc_state = restore_state(disc.parameters(), disc_loaded)
        meta = loaded[0].get("meta", {})
        stopper = _Stopper(tc.stopping.patience, tc.stopping.min_delta,
                           best=meta.get("best_val", np.inf),
                           bad=meta.get("bad_evals", 0))

    # The config carries the paper-scale learning rate default; the trainer
    # applies the run-level (desk preset) value.
    step_cfg = Pix2PixConfig(
        image_size=model_cfg.image_size, lambda_l1=model_cfg.lambda_l1,
        lr=tc.lr, betas=model_cfg.betas, gen=model_cfg.gen,
        disc_layers=model_cfg.disc_layers, disc_width=model_cfg.disc_width)

    xs = [_to_nchw(p.msi_rgb)[None] for p in train_pairs]
    ys = [_to_nchw(p.histology)[None] for p in train_pairs]
    vals = val_pairs if val_pairs else train_pairs

    n = len(train_pairs)
    echo = config_echo(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "pix2pix_best.msih"
    final_path = out_dir / "pix2pix_final.msih"
    log_path = out_dir / "pix2pix_log.csv"

    def save(path: Path):
        save_checkpoint(path, "pix2pix", echo, _merged_state(gen_state, disc_state),
                        meta={"best_val": stopper.best, "bad_evals": stopper.bad})

    if resume_from is not None and log_path.is_file():
        lines = [log_path.read_text().rstrip("\n")]
    else:
        lines = ["step,loss_g,loss_d"]
    if gen_state.step == 0:
        save(best_path)
    order = None
    try:
        while gen_state.step < tc.stopping.max_steps:
            epoch = gen_state.step // n
            pos = gen_state.step % n
            if pos == 0 or order is None:
                order = np.random.default_rng(
                    [cfg.seed, PIX2PIX_EPOCH_STREAM + epoch]).permutation(n)
            i = int(order[pos])
            losses = pix2pix_step(gen, disc, gen_state, disc_state,
                                  xs[i], ys[i], step_cfg)
            lines.append(f"{gen_state.step},{losses['loss_g']:.9f},{losses['loss_d']:.9f}")
            if gen_state.step % tc.stopping.eval_every == 0:
                val = _val_l1(gen, vals)
                improved = stopper.update(val)
                log.info("pix2pix step %d g %.4f d %.4f val_l1 %.5f%s",
                         gen_state.step, losses["loss_g"], losses["loss_d"], val,
                         " *" if improved else "")
                if improved:
                    save(best_path)
                if stopper.exhausted:
                    log.info("pix2pix stopping: no val improvement for %d evaluations",
                             stopper.bad)
                    break
    finally:
        log_path.write_text("\n".join(lines) + "\n")
    save(final_path)
    if not best_path.exists():
        save(best_path)
    return best_path


# ---------------------------------------------------------------------------
# Checkpoint reconstruction
# ---------------------------------------------------------------------------

def unet_from_echo(echo: dict) -> UNetConfig:
    u = echo["unet"]
    return UNetConfig(in_channels=u["in_channels"], out_channels=u["out_channels"],
                      base_width=u["base_width"], depth=u["depth"], patch=u["patch"])


def pix2pix_from_echo(echo: dict) -> Pix2PixConfig:
    p = echo["pix2pix"]
    u = echo["unet"]
    gen = UNetConfig(in_channels=u["in_channels"], out_channels=u["out_channels"],
                     base_width=p["gen_base_width"], depth=p["gen_depth"],
                     patch=p["image_size"], instance_norm=True)
    return Pix2PixConfig(image_size=p["image_size"], lambda_l1=p["lambda_l1"],
                         lr=p["lr"], betas=tuple(p["betas"]), gen=gen,
                         disc_layers=p["disc_layers"], disc_width=p["disc_width"])


def load_model(path: Path):
    """Rebuild the trained model(s) from a checkpoint.

    Returns ("unet", model, header) or ("pix2pix", (gen, disc), header).
    """
    loaded = load_checkpoint(path)
    header = loaded[0]
    echo = header["config"]
    rng = np.random.default_rng(0)  # weights are overwritten immediately
    if header["kind"] == "unet":
        model = UNet(unet_from_echo(echo), rng)
        restore_state(model.parameters(), loaded)
        return "unet", model, header
    if header["kind"] == "pix2pix":
        p2p = pix2pix_from_echo(echo)
        gen = UNet(p2p.gen, rng)
        disc = PatchGAN(p2p.gen.in_channels + p2p.gen.out_channels,
                        p2p.disc_width, p2p.disc_layers, rng)
        gen_loaded, disc_loaded = _split_loaded(loaded)
        restore_state(gen.parameters(), gen_loaded)
        restore_state(disc.parameters(), disc_loaded)
        return "pix2pix", (gen, disc), header
    raise ValidationError(f"unknown checkpoint kind {header['kind']!r}")
