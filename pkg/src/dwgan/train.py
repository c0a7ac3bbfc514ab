"""GAN training loop, optimizer, schedule, augmentation and the ablation
harness, all scaled to desk size.

The schedule keeps the shape of the full-scale reference recipe: the
learning rate starts at lr0 and halves at the 3/8, 5/8 and 6/8 points of
the run (3000/5000/6000 of 8000 epochs, expressed as step fractions so
toy runs inherit it). Alternation is one discriminator update then one generator
update per batch. The held-out split is the last 20% of the generated
pairs, never augmented, evaluated at full size.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .hazesim import HazePair, make_base_images, make_dataset
from .losses import (LossWeights, PerceptualConfig, discriminator_loss,
                     total_loss)
from .metrics import MsSsimConfig, psnr, ssim
from .model import Discriminator, Generator, ModelConfig, save_checkpoint
from .tensor import Tensor


@dataclass
class TrainConfig:
    crop: int = 64
    batch: int = 4
    lr0: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    milestones: tuple[float, ...] = (3 / 8, 5 / 8, 6 / 8)
    lr_factor: float = 0.5
    total_steps: int = 800
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    use_ms_ssim: bool = True
    use_perceptual: bool = True
    use_adv: bool = True
    eval_every: int = 200
    checkpoint_every: int = 0  # 0 = final checkpoint only
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must be sorted ascending")
        if any(not 0 < m < 1 for m in self.milestones):
            raise ValueError("milestones must lie in (0, 1)")
        if not 0 < self.lr_factor < 1:
            raise ValueError("lr_factor must lie in (0, 1)")

    def effective_weights(self) -> LossWeights:
        w = self.weights
        return LossWeights(
            alpha=w.alpha if self.use_ms_ssim else 0.0,
            beta=w.beta if self.use_perceptual else 0.0,
            gamma=w.gamma if self.use_adv else 0.0,
        )


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Piecewise-constant schedule: lr0 * factor^(milestones passed)."""
    passed = sum(1 for m in cfg.milestones if step >= m * cfg.total_steps)
    return cfg.lr0 * cfg.lr_factor ** passed


def augment(pair: HazePair, rng: np.random.Generator,
            crop: int) -> tuple[np.ndarray, np.ndarray]:
    """Identical random crop, rotation (multiple of 90 degrees) and
    horizontal flip applied to hazy and clear."""
    _, h, w = pair.clear.shape
    if h < crop or w < crop:
        raise ValueError(f"image {h}x{w} smaller than crop {crop}")
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    k = int(rng.integers(0, 4))
    flip = bool(rng.integers(0, 2))

    def xf(img: np.ndarray) -> np.ndarray:
        out = img[:, y0:y0 + crop, x0:x0 + crop]
        out = np.rot90(out, k=k, axes=(1, 2))
        if flip:
            out = out[:, :, ::-1]
        return np.ascontiguousarray(out)

    return xf(pair.hazy), xf(pair.clear)


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name!r}")
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = self.m[name] / (1 - self.b1 ** t)
            vhat = self.v[name] / (1 - self.b2 ** t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adam_step(params: dict[str, Tensor], state: Adam, lr: float) -> Adam:
    """Single functional-style step over parameters whose .grad is set."""
    state.step(lr)
    return state


@dataclass
class EvalResult:
    step: int
    psnr: float
    ssim: float


@dataclass
class TrainResult:
    log_rows: list[dict]
    evals: list[EvalResult]
    final_psnr: float
    final_ssim: float
    baseline_psnr: float
    baseline_ssim: float
    checkpoint_dir: Path | None


def _batch_tensor(images: list[np.ndarray]) -> Tensor:
    return Tensor(np.stack(images))


def evaluate(gen: Generator, pairs: list[HazePair]) -> tuple[float, float]:
    """Mean PSNR/SSIM of the generator output against clear, full size."""
    ps, ss = [], []
    for pair in pairs:
        out = gen(_batch_tensor([pair.hazy])).data[0]
        ps.append(psnr(out, pair.clear))
        ss.append(ssim(out[None], pair.clear[None])[0])
    return float(np.mean(ps)), float(np.mean(ss))


def baseline_metrics(pairs: list[HazePair]) -> tuple[float, float]:
    """Identity baseline: the hazy input scored against clear."""
    ps = [psnr(p.hazy, p.clear) for p in pairs]
    ss = [ssim(p.hazy[None], p.clear[None])[0] for p in pairs]
    return float(np.mean(ps)), float(np.mean(ss))


def train_gan(gen: Generator, disc: Discriminator | None,
              dataset: list[HazePair], cfg: TrainConfig,
              out_dir: str | Path | None = None,
              perceptual_cfg: PerceptualConfig | None = None) -> TrainResult:
    """Train the generator (and discriminator when adversarial supervision
    is enabled) on the leading split of the dataset; the trailing
    ``holdout_fraction`` is held out for evaluation.

    Deterministic under (cfg.seed, model seeds). Aborts on a non-finite
    total loss.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    n_hold = max(1, int(len(dataset) * cfg.holdout_fraction)) \
        if len(dataset) > 1 else 0
    train_pairs = dataset[:len(dataset) - n_hold] if n_hold else dataset
    hold_pairs = dataset[len(dataset) - n_hold:] if n_hold else dataset

    weights = cfg.effective_weights()
    if perceptual_cfg is None and weights.beta > 0:
        perceptual_cfg = PerceptualConfig()
    gen_opt = Adam(gen.parameters(), betas=cfg.betas, eps=cfg.eps)
    disc_opt = None
    if cfg.use_adv:
        if disc is None:
            raise ValueError("adversarial term enabled but no discriminator")
        disc_opt = Adam(disc.parameters(), betas=cfg.betas, eps=cfg.eps)

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    log_rows: list[dict] = []
    evals: list[EvalResult] = []
    ms_cfg = MsSsimConfig()
    for step in range(cfg.total_steps):
        lr = lr_at(step, cfg)
        idx = rng.integers(0, len(train_pairs), size=cfg.batch)
        hazy_list, clear_list = [], []
        for i in idx:
            hz, cl = augment(train_pairs[int(i)], rng, cfg.crop)
            hazy_list.append(hz)
            clear_list.append(cl)
        hazy = _batch_tensor(hazy_list)
        clear = _batch_tensor(clear_list)

        pred = gen(hazy)

        if cfg.use_adv:
            assert disc is not None and disc_opt is not None
            d_real = disc(clear)
            d_fake = disc(pred.detach())
            d_loss = discriminator_loss(d_real, d_fake)
            d_loss.backward()
            disc_opt.step(lr)
            disc_opt.zero_grad()
            gen.zero_grad()
            d_out = disc(pred)
        else:
            d_out = None

        loss, breakdown = total_loss(pred, clear, d_out, weights,
                                     perceptual_cfg=perceptual_cfg,
                                     ms_ssim_cfg=ms_cfg)
        if not math.isfinite(breakdown["total"]):
            raise FloatingPointError(f"total loss diverged at step {step}")
        loss.backward()
        gen_opt.step(lr)
        gen_opt.zero_grad()
        if disc is not None:
            disc.zero_grad()

        row = {"step": step, "lr": lr, **breakdown}
        log_rows.append(row)

        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            p, s = evaluate(gen, hold_pairs)
            evals.append(EvalResult(step=step + 1, psnr=p, ssim=s))
        if (out_path is not None and cfg.checkpoint_every
                and (step + 1) % cfg.checkpoint_every == 0):
            save_checkpoint(out_path / f"step_{step + 1:06d}", gen, disc,
                            step=step + 1)

    final_psnr, final_ssim = evaluate(gen, hold_pairs)
    base_psnr, base_ssim = baseline_metrics(hold_pairs)
    ckpt_dir = None
    if out_path is not None:
        ckpt_dir = out_path / "final"
        save_checkpoint(ckpt_dir, gen, disc, step=cfg.total_steps)
        with open(out_path / "log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["step", "lr", "l1", "ms_ssim", "perceptual",
                                "adv", "total"])
            writer.writeheader()
            writer.writerows(log_rows)
    return TrainResult(log_rows=log_rows, evals=evals,
                       final_psnr=final_psnr, final_ssim=final_ssim,
                       baseline_psnr=base_psnr, baseline_ssim=base_ssim,
                       checkpoint_dir=ckpt_dir)


def checkpoint_hash(directory) -> str:
    """SHA-256 over the sorted parameter files; used to assert determinism."""
    directory = Path(directory)
    digest = hashlib.sha256()
    for path in sorted(directory.rglob("*.bin")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


# -- ablation harness ---------------------------------------------------------

# (label, dwt branch, ka branch, dwt modules, perceptual, ms-ssim, adv,
#  full-scale reference PSNR/SSIM)
ABLATION_CONFIGS = [
    ("(1) vanilla DWT branch",        True,  False, False, False, False, False, 18.15, 0.7483),
    ("(2) knowledge adaptation branch", False, True, False, False, False, False, 20.15, 0.8156),
    ("(3) Two-branch",                True,  True,  False, False, False, False, 21.35, 0.8273),
    ("(4) Two-branch+DWT",            True,  True,  True,  False, False, False, 21.52, 0.8403),
    ("(5) Two-branch+DWT",            True,  True,  True,  True,  False, False, 21.67, 0.852),
    ("(6) Two-branch+DWT",            True,  True,  True,  True,  True,  False, 21.86, 0.8555),
    ("(7) Two-branch+DWT",            True,  True,  True,  True,  True,  True,  21.99, 0.856),
]


@dataclass
class AblationRow:
    label: str
    losses: dict[str, bool]
    psnr: float
    ssim: float
    ref_psnr: float
    ref_ssim: float
    reference_reproduced: bool = False  # reference values are context only


def ablation_run(base_train_cfg: TrainConfig, model_cfg: ModelConfig,
                 dataset: list[HazePair] | None = None,
                 n_pairs: int = 24) -> list[AblationRow]:
    """Run the seven branch/loss configurations at toy scale and report a
    reference-style table. No ordering guarantee is made at this scale;
    the full-scale numbers ride along as a fixed reference column."""
    if dataset is None:
        rng = np.random.default_rng(base_train_cfg.seed + 1000)
        base = make_base_images(rng, 8, 2 * base_train_cfg.crop,
                                2 * base_train_cfg.crop)
        dataset = make_dataset(n_pairs, "homogeneous", base, rng)
    rows: list[AblationRow] = []
    for (label, dwt_b, ka_b, dwt_m, use_per, use_ms, use_adv,
         ref_p, ref_s) in ABLATION_CONFIGS:
        mcfg = replace(model_cfg, use_dwt_branch=dwt_b, use_ka_branch=ka_b,
                       use_dwt_modules=dwt_m)
        tcfg = replace(base_train_cfg, use_perceptual=use_per,
                       use_ms_ssim=use_ms, use_adv=use_adv)
        gen = Generator(mcfg, seed=tcfg.seed)
        disc = Discriminator(mcfg, seed=tcfg.seed + 1) if use_adv else None
        result = train_gan(gen, disc, list(dataset), tcfg)
        rows.append(AblationRow(
            label=label,
            losses={"l1": True, "perceptual": use_per, "ms_ssim": use_ms,
                    "adv": use_adv},
            psnr=result.final_psnr, ssim=result.final_ssim,
            ref_psnr=ref_p, ref_ssim=ref_s))
    return rows
