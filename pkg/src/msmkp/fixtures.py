"""Committed N=3 KP model of the actuator hysteresis and the plant scaling constants.

The model is synthetic: :func:`generate_fixture` fits it to the loop produced by
:func:`msmkp.ident.synthetic_msm_loop` (0-5 A triangle at 0.1 Hz, 500 um stroke,
8 um sensor noise, 10 Hz zero-phase prefilter), with the displacement normalized
to ``[-1, 1]`` so that the hysteresis stage is unity-saturated.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .hysteresis import KpModel, KpOperator
from .lti import PLANT_DEN, PLANT_NUM

STROKE = 500e-6
PLANT_DC_GAIN = PLANT_NUM[-1] / PLANT_DEN[-1]
# Unity-saturated hysteresis output spans [-1, 1]; a span of 2 maps to the full stroke
# through the plant DC gain: 500e-6 / (2 * 45.57 / 5.439e5) = 2.98387...
KAPPA_TILDE = STROKE / (2 * PLANT_DC_GAIN)

FIXTURE_NAME = "kp_msm_n3.toml"


def fixture_path() -> Path:
    return Path(str(resources.files("msmkp") / "data" / FIXTURE_NAME))


def load_fixture() -> KpModel:
    from .config import load_kp_params
    return load_kp_params(fixture_path())


def generate_fixture(noise_std: float = 8e-6, seed: int = 0, digits: int = 6) -> KpModel:
    """Refit the committed model from the synthetic target loop.

    Parameters are rounded to ``digits`` significant digits and every operator
    starts at negative saturation (the compressed rest state at 0 A).
    """
    from .ident import fit_kp_model, prefilter, synthetic_msm_loop

    loop = synthetic_msm_loop(noise_std=noise_std, seed=seed)
    z = 2 * prefilter(loop["displacement"], loop.h, 10.0) / STROKE - 1
    fit = fit_kp_model(loop["current"], z, n_operators=3)

    def r(x):
        return float(f"{x:.{digits}g}")

    ops = [KpOperator(r(op.delta), r(op.w), r(op.m), r(op.gamma)) for op in fit.model.operators]
    for op in ops:
        op.reset(-op.gamma * op.m)
    return KpModel(ops, [r(w) for w in fit.model.weights])
