"""Run configuration: flat INI-style key-value sections.

A config fully determines a run (given the seed), so identical configs
reproduce identical outputs byte for byte.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .forms import MetricField
from .torus import AffineTorus


@dataclass
class RunConfig:
    dim: int = 1
    resolution: int = 64
    backend: str = "spectral"

    metric_type: str = "constant"      # constant | conformal_sin | file
    metric_matrix: list = field(default_factory=lambda: [1.0])
    metric_amplitude: float = 0.5
    metric_axis: int = 1               # 1-based axis for builtin families
    metric_path: str = ""

    rank: int = 1
    bundle_field: str = "complex"
    monodromy: list = field(default_factory=list)   # list of row-major lists

    epsilon_factor: float = 0.5
    epsilon_min: float = 1e-4
    newton_tol: float = 1e-8
    max_steps: int = 200
    m_max: float = 25.0

    perturb_amplitude: float = 0.0
    perturb_modes: int = 1

    out_dir: str = "out"
    seed: int = 0
    quiet: bool = False

    def validate(self):
        if self.dim not in (1, 2, 3):
            raise ValidationError(f"torus dim {self.dim} not in 1..3")
        if self.resolution < 8:
            raise ValidationError("resolution must be >= 8")
        if self.metric_type not in ("constant", "conformal_sin", "file"):
            raise ValidationError(f"unknown metric type {self.metric_type!r}")
        if self.metric_type == "file" and not Path(self.metric_path).exists():
            raise ValidationError(f"metric file {self.metric_path!r} does not exist")
        if len(self.monodromy) != self.dim:
            raise ValidationError(
                f"need {self.dim} monodromy matrices, got {len(self.monodromy)}"
            )
        for m in self.monodromy:
            if len(m) != self.rank**2:
                raise ValidationError("monodromy entries must be rank^2 numbers")
        if not 0 < self.epsilon_factor < 1:
            raise ValidationError("epsilon_factor must be in (0,1)")
        if not 1 <= self.metric_axis <= self.dim:
            raise ValidationError("metric axis out of range")
        return self

    def torus(self) -> AffineTorus:
        return AffineTorus(self.dim, self.resolution, self.backend)

    def metric(self, torus: AffineTorus) -> MetricField:
        n = torus.dim
        if self.metric_type == "constant":
            vals = list(self.metric_matrix)
            if len(vals) == 1:
                g0 = vals[0] * np.eye(n)
            elif len(vals) == n * n:
                g0 = np.array(vals).reshape(n, n)
            else:
                raise ValidationError(
                    f"constant metric needs 1 or {n*n} entries, got {len(vals)}"
                )
            return MetricField(torus, g0)
        if self.metric_type == "conformal_sin":
            x = torus.coordinate(self.metric_axis - 1)
            factor = 1.0 + self.metric_amplitude * np.sin(2 * np.pi * x)
            if factor.min() <= 0:
                raise ValidationError("conformal_sin amplitude makes g degenerate")
            return MetricField(
                torus, np.eye(n)[(None,) * n] * factor[..., None, None]
            )
        from .fields_io import load_field

        fdim, fN, tag, rank, data = load_field(self.metric_path)
        if (fdim, fN) != (torus.dim, torus.resolution) or tag != "metric":
            raise ValidationError("metric file does not match the torus grid")
        return MetricField(torus, data.real)

    def bundle(self):
        from .bundle import build_bundle

        mats = [np.array(m, dtype=complex).reshape(self.rank, self.rank)
                for m in self.monodromy]
        if self.bundle_field == "real":
            mats = [m.real for m in mats]
        return build_bundle(mats, self.bundle_field)


def _floats(s: str) -> list:
    return [float(tok) for tok in s.replace(",", " ").split()]


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ValidationError(f"config file {path!r} not found or unreadable")
    cfg = RunConfig()
    if cp.has_section("torus"):
        sec = cp["torus"]
        cfg.dim = sec.getint("dim", cfg.dim)
        cfg.resolution = sec.getint("resolution", cfg.resolution)
        cfg.backend = sec.get("backend", cfg.backend)
    if cp.has_section("metric"):
        sec = cp["metric"]
        cfg.metric_type = sec.get("type", cfg.metric_type)
        if "matrix" in sec:
            cfg.metric_matrix = _floats(sec["matrix"])
        cfg.metric_amplitude = sec.getfloat("amplitude", cfg.metric_amplitude)
        cfg.metric_axis = sec.getint("axis", cfg.metric_axis)
        cfg.metric_path = sec.get("path", cfg.metric_path)
    if cp.has_section("bundle"):
        sec = cp["bundle"]
        cfg.rank = sec.getint("rank", cfg.rank)
        cfg.bundle_field = sec.get("field", cfg.bundle_field)
        cfg.monodromy = []
        k = 1
        while f"monodromy{k}" in sec:
            cfg.monodromy.append(_floats(sec[f"monodromy{k}"]))
            k += 1
    if not cfg.monodromy:
        cfg.monodromy = [list(np.eye(cfg.rank).ravel()) for _ in range(cfg.dim)]
    if cp.has_section("solver"):
        sec = cp["solver"]
        cfg.epsilon_factor = sec.getfloat("epsilon_factor", cfg.epsilon_factor)
        cfg.epsilon_min = sec.getfloat("epsilon_min", cfg.epsilon_min)
        cfg.newton_tol = sec.getfloat("newton_tol", cfg.newton_tol)
        cfg.max_steps = sec.getint("max_steps", cfg.max_steps)
        cfg.m_max = sec.getfloat("m_max", cfg.m_max)
    if cp.has_section("perturbation"):
        sec = cp["perturbation"]
        cfg.perturb_amplitude = sec.getfloat("amplitude", cfg.perturb_amplitude)
        cfg.perturb_modes = sec.getint("modes", cfg.perturb_modes)
    if cp.has_section("output"):
        cfg.out_dir = cp["output"].get("dir", cfg.out_dir)
        cfg.seed = cp["output"].getint("seed", cfg.seed)
    return cfg
