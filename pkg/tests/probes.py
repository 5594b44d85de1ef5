"""Impulse-response and suffix-perturbation probes shared by the model and acceptance tests.

Both run with batch norm in inference mode: in training mode its statistics
pool the whole sequence, so every output depends on every input.
"""

from __future__ import annotations

import numpy as np

from msgcn.graph import layout_preset
from msgcn.models import ModelConfig, TemporalStage, build_model
from msgcn.tensor import Tensor


def influence_span(dilations, kernel=3, causal=False, seed=0):
    """Offsets (relative to an impulse) at which a stack of residual blocks changes its output."""
    rng = np.random.default_rng(seed)
    stage = TemporalStage(1, 2, 2, kernel, dilations, causal, rng)
    for p in stage.parameters():
        p.data = np.abs(p.data) + 0.05  # positive weights: contributions cannot cancel
    stage.eval()
    reach = (kernel - 1) * sum(dilations)
    T = 2 * reach + 41
    t0 = reach + 20
    x = np.zeros((T, 1))
    x[t0] = 1.0
    h0 = _backbone(stage, np.zeros((T, 1)))
    h1 = _backbone(stage, x)
    changed = np.flatnonzero(np.any(h0 != h1, axis=-1))
    return changed - t0


def _backbone(stage, x):
    h = stage.adjust(Tensor(x))
    for block in stage.blocks:
        h = block(h)
    return h.data


def small_config(kind, causal, seed=0):
    graph = kind in ("stgcn", "ms-gcn")
    return ModelConfig(kind=kind, num_classes=3, in_channels=2, num_nodes=5, filters=4, layers=3,
                       refinement_stages=2, causal=causal, lstm_hidden=3, lstm_layers=2,
                       layout=layout_preset("chain5") if graph else None, seed=seed)


def suffix_perturbation_leaks(cfg, T=24, trials=6, seed=0):
    """Number of (start, stage) cases where perturbing samples >= start changed an earlier output."""
    rng = np.random.default_rng(seed)
    model = build_model(cfg)
    model(rng.normal(size=(T, cfg.num_nodes, cfg.in_channels)))  # populate running statistics
    model.eval()
    x = rng.normal(size=(T, cfg.num_nodes, cfg.in_channels))
    base = [s.data for s in model(x)]
    leaks = 0
    for start in np.linspace(1, T - 1, trials).astype(int):
        y = x.copy()
        y[start:] += rng.normal(size=y[start:].shape)
        for b, s in zip(base, model(y)):
            if s.data[:start].tobytes() != b[:start].tobytes():
                leaks += 1
    return leaks
