"""The five segmentation architectures: Bi-LSTM, TCN, ST-GCN, MS-TCN and MS-GCN."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as tn
from .graph import ConfigurationError, GraphLayout, PartitionedAdjacency, layout_from_dict
from .layers import (
    MASK_MODES,
    BatchNorm,
    Conv1x1,
    ConvSpec,
    Module,
    PredictionHead,
    RecurrentStack,
    STGCNBlock,
    TCNBlock,
    spatial_pool,
)
from .tensor import DimensionError, Tensor

KINDS = ("bilstm", "tcn", "stgcn", "ms-tcn", "ms-gcn")
GRAPH_KINDS = ("stgcn", "ms-gcn")


@dataclass
class ModelConfig:
    kind: str
    num_classes: int
    in_channels: int
    num_nodes: int
    filters: int = 64
    kernel: int = 3
    layers: int = 10
    refinement_stages: int = 3
    causal: bool = False
    dilated: bool = True
    lstm_hidden: int = 64
    lstm_layers: int = 2
    mask_mode: str = "elementwise"
    layout: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in GRAPH_KINDS and self.layout is None:
            raise ConfigurationError(f"{self.kind} needs a graph layout")
        if self.mask_mode not in MASK_MODES:
            raise ConfigurationError(f"unknown mask mode {self.mask_mode!r}")
        for name in ("num_classes", "in_channels", "num_nodes", "filters", "kernel", "layers",
                     "lstm_hidden", "lstm_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.refinement_stages < 0:
            raise ConfigurationError("refinement_stages must be >= 0")
        if isinstance(self.layout, GraphLayout):
            self.layout = self.layout.to_dict()
        if self.layout is not None and self.layout["num_nodes"] != self.num_nodes:
            raise ConfigurationError(
                f"layout has {self.layout['num_nodes']} nodes but num_nodes={self.num_nodes}")

    @property
    def dilations(self) -> list[int]:
        """Stage-1 dilation schedule."""
        return [2 ** i if self.dilated else 1 for i in range(self.layers)]

    @property
    def refinement_dilations(self) -> list[int]:
        return [2 ** i for i in range(self.layers)]

    @property
    def multi_stage(self) -> bool:
        return self.kind.startswith("ms-")

    @property
    def num_stages(self) -> int:
        return 1 + self.refinement_stages if self.multi_stage else 1

    def graph_layout(self) -> GraphLayout:
        return layout_from_dict(self.layout)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_changes(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


def receptive_field(kernel: int, dilations) -> int:
    """Input span seen by one output of a stack of dilated convolutions."""
    return 1 + (kernel - 1) * int(sum(dilations))


class TemporalStage(Module):
    """Single-stage TCN: 1x1 adjust, residual dilated blocks, softmax head."""

    def __init__(self, c_in: int, filters: int, num_classes: int, kernel: int, dilations, causal: bool,
                 rng: np.random.Generator):
        self.adjust = Conv1x1(c_in, filters, rng)
        self.blocks = [TCNBlock(filters, ConvSpec(kernel, d, causal), rng) for d in dilations]
        self.head = PredictionHead(filters, num_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.adjust(x)
        for block in self.blocks:
            h = block(h)
        return self.head(h)


class GraphStage(Module):
    """Single-stage ST-GCN: 1x1 adjust per node, ST-GCN blocks, node pooling, softmax head."""

    def __init__(self, c_in: int, filters: int, num_classes: int, kernel: int, dilations, causal: bool,
                 adjacency: PartitionedAdjacency, mask_mode: str, rng: np.random.Generator):
        self.adjust = Conv1x1(c_in, filters, rng)
        self.blocks = [STGCNBlock(filters, adjacency, ConvSpec(kernel, d, causal), rng, mask_mode)
                       for d in dilations]
        self.head = PredictionHead(filters, num_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.adjust(x)
        for block in self.blocks:
            h = block(h)
        return self.head(spatial_pool(h))


class RecurrentStage(Module):
    def __init__(self, c_in: int, cfg: ModelConfig, rng: np.random.Generator):
        self.lstm = RecurrentStack(c_in, cfg.lstm_hidden, cfg.lstm_layers, not cfg.causal, rng)
        self.head = PredictionHead(self.lstm.out_channels, cfg.num_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.lstm(x))


class SegmentationModel(Module):
    """Input batch norm, a prediction-generation stage and optional refinement stages."""

    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        graph = cfg.kind in GRAPH_KINDS
        flat = cfg.in_channels * cfg.num_nodes
        # graph models normalise each channel over time and nodes; the others each (node, channel) over time
        self.input_bn = BatchNorm(cfg.in_channels if graph else flat)
        if cfg.kind == "bilstm":
            self.stage1 = RecurrentStage(flat, cfg, rng)
        elif graph:
            adjacency = PartitionedAdjacency.from_layout(cfg.graph_layout())
            self.stage1 = GraphStage(cfg.in_channels, cfg.filters, cfg.num_classes, cfg.kernel, cfg.dilations,
                                     cfg.causal, adjacency, cfg.mask_mode, rng)
        else:
            self.stage1 = TemporalStage(flat, cfg.filters, cfg.num_classes, cfg.kernel, cfg.dilations,
                                        cfg.causal, rng)
        self.refinements = []
        if cfg.multi_stage:
            self.refinements = [
                TemporalStage(cfg.num_classes, cfg.filters, cfg.num_classes, cfg.kernel,
                              cfg.refinement_dilations, cfg.causal, rng)
                for _ in range(cfg.refinement_stages)
            ]

    def prepare_input(self, f_in) -> Tensor:
        cfg = self.config
        x = f_in if isinstance(f_in, Tensor) else Tensor(np.asarray(f_in, dtype=np.float64))
        if x.ndim != 3 or x.shape[1:] != (cfg.num_nodes, cfg.in_channels) or x.shape[0] < 1:
            raise DimensionError(
                f"expected input of shape (T, {cfg.num_nodes}, {cfg.in_channels}), got {x.shape}")
        if cfg.kind in GRAPH_KINDS:
            return self.input_bn(x)
        return self.input_bn(tn.reshape(x, (x.shape[0], cfg.num_nodes * cfg.in_channels)))

    def forward(self, f_in) -> list[Tensor]:
        """Per-stage class probabilities, each of shape (T, L)."""
        y = self.stage1(self.prepare_input(f_in))
        stages = [y]
        for stage in self.refinements:
            y = refine(y, stage)
            stages.append(y)
        return stages

    def predict(self, f_in) -> np.ndarray:
        """Arg-max labels of the last stage."""
        return np.argmax(self.forward(f_in)[-1].data, axis=-1)


def refine(previous: Tensor, stage: TemporalStage) -> Tensor:
    """Apply one refinement stage to the previous stage's probabilities."""
    return stage(previous)


def build_model(cfg: ModelConfig) -> SegmentationModel:
    return SegmentationModel(cfg)


def parameter_count(model: Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))
