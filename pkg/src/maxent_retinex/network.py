"""Decomposition network and its checkpoint container.

The graph is described declaratively as a list of :class:`LayerSpec` rows
and validated before any parameters are created, so a bad wiring is
reported by layer name instead of surfacing as a torch shape error.
"""

from __future__ import annotations

import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ContractError, Decomposition, check_image, from_tensor, to_tensor

INPUT = "input"
CHECKPOINT_FORMAT = "maxent-retinex-checkpoint"
CHECKPOINT_VERSION = 1

KINDS = ("conv", "conv+relu", "concat", "sigmoid")


class NetworkSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple
    out_channels: int
    kernel: int = 0
    stride: int = 1
    # 2 means nearest-neighbour x2 resize before the convolution
    scale: int = 1


def table1_spec(final_relu: bool = False) -> list[LayerSpec]:
    """The twelve-row encoder/decoder.

    ``final_relu=True`` keeps the ReLU between Conv9 and the sigmoid, which
    pins every output to [0.5, 1).
    """
    return [
        LayerSpec("conv0", "conv+relu", (INPUT,), 32, 3),
        LayerSpec("conv", "conv", (INPUT,), 64, 9),
        LayerSpec("conv1", "conv+relu", ("conv",), 64, 3),
        LayerSpec("conv2", "conv+relu", ("conv1",), 128, 3, stride=2),
        LayerSpec("conv3", "conv+relu", ("conv2",), 128, 3),
        LayerSpec("conv4", "conv+relu", ("conv3",), 64, 3, scale=2),
        LayerSpec("conv5", "concat", ("conv4", "conv1"), 128),
        LayerSpec("conv6", "conv+relu", ("conv5",), 64, 3),
        LayerSpec("conv7", "concat", ("conv6", "conv0"), 96),
        LayerSpec("conv8", "conv", ("conv7",), 64, 3),
        LayerSpec("conv9", "conv+relu" if final_relu else "conv", ("conv8",), 4, 3),
        LayerSpec("output", "sigmoid", ("conv9",), 4),
    ]


def validate_spec(spec, in_channels: int = 4) -> dict:
    """Check wiring and channel counts; return ``{name: (channels, resolution)}``.

    Resolution is tracked as a power-of-two level (0 = input size).
    """
    info = {INPUT: (in_channels, 0)}
    if not spec:
        raise NetworkSpecError("network spec is empty")
    for layer in spec:
        where = f"layer {layer.name!r}"
        if layer.name in info:
            raise NetworkSpecError(f"{where}: duplicate output name")
        if layer.kind not in KINDS:
            raise NetworkSpecError(f"{where}: unknown operator kind {layer.kind!r}")
        missing = [i for i in layer.inputs if i not in info]
        if missing or not layer.inputs:
            raise NetworkSpecError(f"{where}: undefined inputs {missing or '(none)'}")
        ins = [info[i] for i in layer.inputs]
        levels = {lvl for _, lvl in ins}
        if len(levels) != 1:
            raise NetworkSpecError(f"{where}: inputs at different resolutions {layer.inputs}")
        level = levels.pop()
        if layer.kind == "concat":
            total = sum(c for c, _ in ins)
            if total != layer.out_channels:
                raise NetworkSpecError(
                    f"{where}: concat of {layer.inputs} gives {total} channels, "
                    f"spec says {layer.out_channels}")
        elif layer.kind == "sigmoid":
            if len(ins) != 1 or ins[0][0] != layer.out_channels:
                raise NetworkSpecError(f"{where}: sigmoid must preserve channel count")
        else:
            if len(ins) != 1:
                raise NetworkSpecError(f"{where}: convolution takes exactly one input")
            if layer.kernel < 1 or layer.kernel % 2 == 0:
                raise NetworkSpecError(f"{where}: kernel must be odd and positive, got {layer.kernel}")
            if layer.stride not in (1, 2) or layer.scale not in (1, 2):
                raise NetworkSpecError(f"{where}: stride/scale must be 1 or 2")
            if layer.scale == 2 and (layer.kernel != 3 or layer.stride != 1):
                raise NetworkSpecError(f"{where}: upsampling layers must be 3x3, stride 1")
            level += (layer.stride == 2) - (layer.scale == 2)
            if level < 0:
                raise NetworkSpecError(f"{where}: upsamples above input resolution")
        if layer.out_channels < 1:
            raise NetworkSpecError(f"{where}: out_channels must be positive")
        info[layer.name] = (layer.out_channels, level)
    last = spec[-1]
    if info[last.name] != (4, 0):
        raise NetworkSpecError(
            f"layer {last.name!r}: output must be 4 channels at input resolution, got {info[last.name]}")
    return info


def _fold_taps(w: torch.Tensor, dim: int):
    a, b, c = w.unbind(dim)
    return torch.stack([a, b + c], dim), torch.stack([a + b, c], dim)


def upsample_conv(x: torch.Tensor, conv: nn.Conv2d) -> torch.Tensor:
    """``conv(nearest_x2(x))`` for a 3x3 replicate-padded conv, computed at low resolution.

    Each of the four output phases only sees two distinct input rows and
    columns, so the 3x3 kernel folds into a 2x2 kernel per phase.
    """
    w = conv.weight
    n, (h, wd), o = x.shape[0], x.shape[-2:], w.shape[0]
    # phase order (row parity, column parity)
    k = torch.cat([torch.stack(_fold_taps(r, 3)) for r in _fold_taps(w, 2)])
    k = k.reshape(4 * o, w.shape[1], 2, 2)
    bias = conv.bias.repeat(4) if conv.bias is not None else None
    y = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), k, bias)
    y = y.view(n, 2, 2, o, h + 1, wd + 1)
    rows = [torch.stack([y[:, py, px, :, py:py + h, px:px + wd] for px in (0, 1)], dim=-1)
            for py in (0, 1)]
    return torch.stack(rows, dim=-3).reshape(n, o, 2 * h, 2 * wd)


class DecompositionNet(nn.Module):
    """Runs a validated spec; input (N, 3, H, W) -> (R, I)."""

    def __init__(self, spec):
        super().__init__()
        self.spec = list(spec)
        info = validate_spec(self.spec)
        self.levels = max(lvl for _, lvl in info.values())
        self.convs = nn.ModuleDict()
        for layer in self.spec:
            if layer.kind.startswith("conv"):
                in_ch = info[layer.inputs[0]][0]
                self.convs[layer.name] = nn.Conv2d(
                    in_ch, layer.out_channels, layer.kernel, stride=layer.stride,
                    padding=layer.kernel // 2, padding_mode="replicate")

    def forward(self, S: torch.Tensor):
        x = torch.cat([S, S.amax(dim=1, keepdim=True)], dim=1)
        acts = {INPUT: x}
        for layer in self.spec:
            ins = [acts[i] for i in layer.inputs]
            if layer.kind == "concat":
                y = torch.cat(ins, dim=1)
            elif layer.kind == "sigmoid":
                y = torch.sigmoid(ins[0])
            else:
                conv = self.convs[layer.name]
                y = upsample_conv(ins[0], conv) if layer.scale == 2 else conv(ins[0])
                if layer.kind == "conv+relu":
                    y = F.relu(y)
            acts[layer.name] = y
        out = acts[self.spec[-1].name]
        return out[:, :3], out[:, 3:4]


@dataclass
class ModelState:
    net: DecompositionNet
    seed: int
    optimizer: torch.optim.Optimizer | None = None
    step: int = 0
    epoch: int = 0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def spec(self):
        return self.net.spec

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def init_parameters(net: nn.Module, seed: int):
    """He-normal weights (variance 2/fan_in) and zero biases, seeded."""
    g = torch.Generator().manual_seed(int(seed))
    for name in sorted(net.convs.keys(), key=[l.name for l in net.spec].index):
        conv = net.convs[name]
        fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
        with torch.no_grad():
            nn.init.normal_(conv.weight, 0.0, math.sqrt(2.0 / fan_in), generator=g)
            nn.init.zeros_(conv.bias)


def build_network(spec=None, seed: int = 0, dtype=torch.float32) -> ModelState:
    spec = table1_spec() if spec is None else spec
    net = DecompositionNet(spec).to(dtype)
    init_parameters(net, seed)
    return ModelState(net=net, seed=int(seed))


def _pad_multiple(S: torch.Tensor, multiple: int):
    h, w = S.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        mode = "reflect" if (h > ph and w > pw) else "replicate"
        S = F.pad(S, (0, pw, 0, ph), mode=mode)
    return S, h, w


def forward_tensor(net: DecompositionNet, S: torch.Tensor):
    """Batched forward with pad-to-multiple and crop back."""
    if S.dim() != 4 or S.shape[1] != 3 or S.shape[-1] < 1 or S.shape[-2] < 1:
        raise ContractError(f"expected (N, 3, H, W) input, got {tuple(S.shape)}")
    Sp, h, w = _pad_multiple(S, 2 ** net.levels)
    R, I = net(Sp)
    return R[..., :h, :w], I[..., :h, :w]


def forward(model: ModelState, S: np.ndarray) -> Decomposition:
    """Decompose one HxWx3 image. Runs without autograd, channels-last."""
    check_image(S, channels=(3,))
    net = model.net
    dtype = next(net.parameters()).dtype
    x = to_tensor(S, dtype=dtype).contiguous(memory_format=torch.channels_last)
    with torch.inference_mode():
        R, I = forward_tensor(net, x)
    return Decomposition(reflectance=from_tensor(R), illumination=from_tensor(I))


# --- checkpoint container -------------------------------------------------

def state_to_dict(model: ModelState) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": [asdict(layer) for layer in model.spec],
        "dtype": str(next(model.net.parameters()).dtype),
        "params": {k: v.detach().clone().contiguous() for k, v in model.net.state_dict().items()},
        "optimizer": model.optimizer.state_dict() if model.optimizer is not None else None,
        "step": int(model.step),
        "epoch": int(model.epoch),
        "seed": int(model.seed),
        # JSON text: pickled dicts are not byte-stable across a load/save cycle
        "rng_state": json.dumps(model.rng_state, sort_keys=True),
        "extra": json.dumps(model.extra, sort_keys=True),
    }


def _canonical(obj):
    """Rebuild containers with interned strings.

    The pickler memoizes by object identity, so equal strings that are shared
    in one state and distinct in another would serialize differently.
    """
    if isinstance(obj, str):
        return sys.intern(obj)
    if isinstance(obj, dict):
        return {_canonical(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_canonical(v) for v in obj]
    if isinstance(obj, tuple):
        return tuple(_canonical(v) for v in obj)
    return obj


def save_checkpoint(model: ModelState, path) -> None:
    buf = io.BytesIO()
    torch.save(_canonical(state_to_dict(model)), buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, learning_rate: float | None = None) -> ModelState:
    """Restore a :class:`ModelState`; the optimizer is rebuilt when one was saved."""
    path = Path(path)
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    spec = [LayerSpec(**{**d, "inputs": tuple(d["inputs"])}) for d in blob["spec"]]
    dtype = getattr(torch, blob["dtype"].replace("torch.", ""))
    net = DecompositionNet(spec).to(dtype)
    net.load_state_dict(blob["params"])
    model = ModelState(net=net, seed=blob["seed"], step=blob["step"], epoch=blob["epoch"],
                       rng_state=json.loads(blob["rng_state"]), extra=json.loads(blob["extra"]))
    if blob["optimizer"] is not None:
        lr = learning_rate if learning_rate is not None else blob["optimizer"]["param_groups"][0]["lr"]
        model.optimizer = make_optimizer(net, lr)
        model.optimizer.load_state_dict(blob["optimizer"])
    return model


def make_optimizer(net: nn.Module, learning_rate: float) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=learning_rate, betas=(0.9, 0.999), eps=1e-8)
