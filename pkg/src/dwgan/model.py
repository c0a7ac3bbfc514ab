"""Two-branch dehazing generator and patch discriminator.

The generator has a wavelet U-Net branch (down blocks concatenate the
low-frequency DWT band with a strided convolution; up blocks reassemble
through the inverse transform with the high-frequency bands fed back by
skip connection) and a knowledge-adaptation branch (frozen feature-pyramid
encoder, pixel-shuffle decoder with channel and pixel attention). A 7x7
fusion convolution maps the concatenated branch features to the output
image, squashed to [0, 1] by a sigmoid.

All widths and depths are configurable; initialization is uniform
Kaiming-style fan-in scaling, fully determined by the seed. Generator
activations are ReLU, discriminator activations leaky ReLU with slope 0.2;
no normalization layers are used.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import ToyEncoder
from .tensor import (ShapeError, Tensor, broadcast_to, concat, conv2d,
                     leaky_relu, pixel_shuffle, relu, save_tensor, sigmoid,
                     spatial_mean, load_tensor)
from .wavelet import Subbands, dwt2, idwt2


@dataclass
class ModelConfig:
    base_channels: int = 16
    depth: int = 3
    use_dwt_modules: bool = True
    use_dwt_branch: bool = True
    use_ka_branch: bool = True
    attention_reduction: int = 8
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64)
    encoder_seed: int = 0
    encoder_trainable: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if not (self.use_dwt_branch or self.use_ka_branch):
            raise ValueError("at least one branch must be enabled")


class Module:
    """Minimal parameter container; parameters are discovered by walking
    attributes (tensors, child modules, lists of modules) in creation order,
    so naming and ordering are deterministic for a fixed config."""

    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            full = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full)
            elif isinstance(value, ToyEncoder):
                if value.trainable:
                    yield from value.named_parameters(full)
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def _kaiming(rng: np.random.Generator, cout: int, cin: int, kh: int,
             kw: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (cin * kh * kw))
    return rng.uniform(-bound, bound, size=(cout, cin, kh, kw))


class Conv(Module):
    def __init__(self, rng, cin: int, cout: int, k: int = 3, stride: int = 1,
                 padding: int | None = None, bias: bool = True):
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding
        self.weight = Tensor(_kaiming(rng, cout, cin, k, k), requires_grad=True)
        self.bias = Tensor(np.zeros((1, cout, 1, 1)), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            y = y + broadcast_to(self.bias, y.shape)
        return y


class ChannelAttention(Module):
    """Global average pool -> bottleneck 1x1 convs -> sigmoid gate in (0,1)
    applied per channel. ``force_open`` replaces the gate with ones (test
    hook)."""

    def __init__(self, rng, channels: int, reduction: int = 8):
        mid = max(1, channels // reduction)
        self.squeeze = Conv(rng, channels, mid, k=1)
        self.excite = Conv(rng, mid, channels, k=1)
        self.force_open = False

    def __call__(self, x: Tensor) -> Tensor:
        if self.force_open:
            return x
        gate = sigmoid(self.excite(relu(self.squeeze(spatial_mean(x)))))
        return x * broadcast_to(gate, x.shape)


class PixelAttention(Module):
    """1x1 convs -> one sigmoid gate per pixel, applied across channels."""

    def __init__(self, rng, channels: int, reduction: int = 8):
        mid = max(1, channels // reduction)
        self.squeeze = Conv(rng, channels, mid, k=1)
        self.excite = Conv(rng, mid, 1, k=1)
        self.force_open = False

    def __call__(self, x: Tensor) -> Tensor:
        if self.force_open:
            return x
        gate = sigmoid(self.excite(relu(self.squeeze(x))))
        return x * broadcast_to(gate, x.shape)


class DwtDown(Module):
    """Half-resolution block: concat(strided conv, LL band) -> mixing conv.
    Also emits the (LH, HL, HH) bands for the matching up block."""

    def __init__(self, rng, cin: int, cout: int):
        self.down = Conv(rng, cin, cout, k=3, stride=2, padding=1)
        self.mix = Conv(rng, cout + cin, cout, k=3)

    def __call__(self, x: Tensor) -> tuple[Tensor, tuple[Tensor, Tensor, Tensor]]:
        s = dwt2(x)
        y = relu(self.mix(concat([self.down(x), s.ll], axis=1)))
        return y, (s.lh, s.hl, s.hh)


class PlainDown(Module):
    def __init__(self, rng, cin: int, cout: int):
        self.down = Conv(rng, cin, cout, k=3, stride=2, padding=1)
        self.mix = Conv(rng, cout, cout, k=3)

    def __call__(self, x: Tensor) -> tuple[Tensor, None]:
        return relu(self.mix(self.down(x))), None


class DwtUp(Module):
    """Double-resolution block: inverse transform over (projected input as
    LL, skip-fed high-frequency bands) alongside a learned pixel-shuffle
    path, then a mixing conv."""

    def __init__(self, rng, cin: int, cout: int, c_hf: int):
        self.proj = Conv(rng, cin, c_hf, k=1)
        self.up = Conv(rng, cin, cout * 4, k=3)
        self.mix = Conv(rng, c_hf + cout, cout, k=3)
        self.c_hf = c_hf

    def __call__(self, x: Tensor,
                 hf: tuple[Tensor, Tensor, Tensor]) -> Tensor:
        lh, hl, hh = hf
        if lh.shape[2:] != x.shape[2:]:
            raise ShapeError(
                f"hf spatial {lh.shape[2:]} != input spatial {x.shape[2:]}"
            )
        if lh.shape[1] != self.c_hf:
            raise ShapeError(f"hf channels {lh.shape[1]} != {self.c_hf}")
        freq = idwt2(Subbands(ll=self.proj(x), lh=lh, hl=hl, hh=hh))
        learned = pixel_shuffle(self.up(x), 2)
        return relu(self.mix(concat([freq, learned], axis=1)))


class PlainUp(Module):
    def __init__(self, rng, cin: int, cout: int):
        self.up = Conv(rng, cin, cout * 4, k=3)
        self.mix = Conv(rng, cout, cout, k=3)

    def __call__(self, x: Tensor, hf=None) -> Tensor:
        return relu(self.mix(pixel_shuffle(self.up(x), 2)))


class DwtBranch(Module):
    """U-Net over the wavelet blocks with per-scale skip connections."""

    def __init__(self, rng, cfg: ModelConfig):
        bc, d = cfg.base_channels, cfg.depth
        self.depth = d
        self.stem = Conv(rng, 3, bc, k=3)
        self.downs: list[Module] = []
        self.ups: list[Module] = []
        self.skips: list[Module] = []
        for i in range(d):
            cin, cout = bc << i, bc << (i + 1)
            if cfg.use_dwt_modules:
                self.downs.append(DwtDown(rng, cin, cout))
            else:
                self.downs.append(PlainDown(rng, cin, cout))
        cd = bc << d
        self.mid1 = Conv(rng, cd, cd, k=3)
        self.mid2 = Conv(rng, cd, cd, k=3)
        for i in reversed(range(d)):
            cin, cout = bc << (i + 1), bc << i
            if cfg.use_dwt_modules:
                self.ups.append(DwtUp(rng, cin, cout, c_hf=cout))
            else:
                self.ups.append(PlainUp(rng, cin, cout))
            self.skips.append(Conv(rng, 2 * cout, cout, k=3))

    def __call__(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        step = 1 << self.depth
        if h % step or w % step:
            raise ShapeError(f"{h}x{w} not divisible by 2^{self.depth}")
        feats = [relu(self.stem(x))]
        hfs = []
        cur = feats[0]
        for down in self.downs:
            cur, hf = down(cur)
            feats.append(cur)
            hfs.append(hf)
        cur = relu(self.mid2(relu(self.mid1(cur))))
        for j, (up, skip) in enumerate(zip(self.ups, self.skips)):
            i = self.depth - 1 - j
            cur = up(cur, hfs[i])
            cur = relu(skip(concat([cur, feats[i]], axis=1)))
        return cur


class KaBranch(Module):
    """Pyramid-encoder branch: per-stage pixel-shuffle upsampling with
    channel and pixel attention and encoder skip connections."""

    def __init__(self, rng, cfg: ModelConfig, encoder=None):
        self.encoder = encoder if encoder is not None else ToyEncoder(
            channels=cfg.encoder_channels, seed=cfg.encoder_seed,
            trainable=cfg.encoder_trainable)
        if self.encoder.num_stages < 3:
            raise ValueError("knowledge-adaptation encoder needs >= 3 stages")
        ch = list(self.encoder.channels)
        bc = cfg.base_channels
        red = cfg.attention_reduction
        self.ups: list[Module] = []
        self.cattn: list[Module] = []
        self.pattn: list[Module] = []
        self.fuse: list[Module] = []
        for k in reversed(range(1, len(ch))):
            cout = ch[k - 1]
            self.ups.append(Conv(rng, ch[k], cout * 4, k=3))
            self.cattn.append(ChannelAttention(rng, cout, red))
            self.pattn.append(PixelAttention(rng, cout, red))
            self.fuse.append(Conv(rng, 2 * cout, cout, k=3))
        self.final_up = Conv(rng, ch[0], bc * 4, k=3)
        self.final_cattn = ChannelAttention(rng, bc, red)
        self.final_pattn = PixelAttention(rng, bc, red)
        self.final_conv = Conv(rng, bc, bc, k=3)

    def __call__(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        step = 1 << self.encoder.num_stages
        if h % step or w % step:
            raise ShapeError(
                f"{h}x{w} not divisible by 2^{self.encoder.num_stages}"
            )
        stages = self.encoder.stages(x)
        cur = stages[-1]
        n = len(stages)
        for j, (up, ca, pa, fuse) in enumerate(
                zip(self.ups, self.cattn, self.pattn, self.fuse)):
            skip = stages[n - 2 - j]
            cur = pixel_shuffle(up(cur), 2)
            cur = pa(ca(cur))
            cur = relu(fuse(concat([cur, skip], axis=1)))
        cur = pixel_shuffle(self.final_up(cur), 2)
        cur = self.final_pattn(self.final_cattn(cur))
        return relu(self.final_conv(cur))


class Generator(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, encoder=None):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        n_branches = 0
        if cfg.use_dwt_branch:
            self.dwt_branch = DwtBranch(rng, cfg)
            n_branches += 1
        if cfg.use_ka_branch:
            self.ka_branch = KaBranch(rng, cfg, encoder=encoder)
            n_branches += 1
        self.fusion = Conv(rng, cfg.base_channels * n_branches, 3, k=7)

    def __call__(self, x: Tensor) -> Tensor:
        feats = []
        if self.cfg.use_dwt_branch:
            feats.append(self.dwt_branch(x))
        if self.cfg.use_ka_branch:
            feats.append(self.ka_branch(x))
        fused = feats[0] if len(feats) == 1 else concat(feats, axis=1)
        return sigmoid(self.fusion(fused))


class Discriminator(Module):
    """Patch discriminator: four stride-2 conv stages (leaky ReLU 0.2)
    followed by a 1x1 conv and sigmoid, giving one probability per
    H/16 x W/16 patch. Receptive field is 46 px at these kernel sizes."""

    def __init__(self, cfg: ModelConfig, seed: int = 1):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        bc = cfg.base_channels
        chans = [3, bc, 2 * bc, 4 * bc, 4 * bc]
        self.convs = [Conv(rng, chans[i], chans[i + 1], k=4, stride=2,
                           padding=1) for i in range(4)]
        self.head = Conv(rng, 4 * bc, 1, k=1)

    def __call__(self, x: Tensor) -> Tensor:
        cur = x
        for conv in self.convs:
            cur = leaky_relu(conv(cur), 0.2)
        return sigmoid(self.head(cur))


# -- checkpointing -----------------------------------------------------------

def save_checkpoint(directory, generator: Generator,
                    discriminator: Discriminator | None = None,
                    step: int = 0, extra: dict | None = None) -> None:
    """Checkpoint layout: manifest.json plus one binary tensor per
    parameter under params/ (and disc_params/ for the discriminator)."""
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": asdict(generator.cfg),
        "seed": generator.seed,
        "step": step,
    }
    if extra:
        manifest.update(extra)
    for name, p in generator.named_parameters():
        save_tensor(directory / "params" / f"{name}.bin", p)
    if discriminator is not None:
        (directory / "disc_params").mkdir(exist_ok=True)
        manifest["disc_seed"] = discriminator.seed
        for name, p in discriminator.named_parameters():
            save_tensor(directory / "disc_params" / f"{name}.bin", p)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _load_params(module: Module, directory: Path) -> None:
    for name, p in module.named_parameters():
        loaded = load_tensor(directory / f"{name}.bin")
        if loaded.shape != p.shape:
            raise ValueError(f"{name}: file shape {loaded.shape} != {p.shape}")
        p.data = loaded.data


def load_checkpoint(directory) -> tuple[Generator, Discriminator | None, dict]:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    cfg_dict = dict(manifest["config"])
    cfg_dict["encoder_channels"] = tuple(cfg_dict["encoder_channels"])
    cfg = ModelConfig(**cfg_dict)
    gen = Generator(cfg, seed=manifest["seed"])
    _load_params(gen, directory / "params")
    disc = None
    if (directory / "disc_params").exists():
        disc = Discriminator(cfg, seed=manifest.get("disc_seed", 1))
        _load_params(disc, directory / "disc_params")
    return gen, disc, manifest
