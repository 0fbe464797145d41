# harness/presets.py

"""Named hyperparameter tuples (N, gamma, eta, start, w_T, w_s, w_c) per task.

Start times refer to a T = 1000 schedule. Explicit keys in a config's
``guidance`` section override the preset values.
"""

from typing import Any, Dict

from core_utils.errors import ConfigError

_DDIM = "ddim"


def _tuple(n, gamma, eta, start, w_t, w_s, w_c, **extra) -> Dict[str, Any]:
    return dict(n_steps=n, gamma=gamma, eta=eta, start=start, w_terminal=w_t, w_score=w_s, w_control=w_c, **extra)


PRESETS: Dict[str, Dict[str, Any]] = {
    "super-resolution-ffhq": _tuple(5, 1.0, 0.7, 400, 50.0, _DDIM, _DDIM),
    "super-resolution-imagenet": _tuple(2, 2.0, 0.1, 600, 50.0, _DDIM, _DDIM),
    "inpainting-ffhq": _tuple(2, 4.0, 0.2, 500, 1.0, 0.0, 0.0),
    "inpainting-imagenet": _tuple(2, 4.0, 0.0, 600, 50.0, _DDIM, _DDIM),
    "nonlinear-deblur-ffhq": _tuple(5, 5.0, 0.1, 400, 1.0, 0.0, 0.0),
    "nonlinear-deblur-imagenet": _tuple(2, 4.0, 0.1, 600, 50.0, _DDIM, _DDIM),
    "blind-deblur": _tuple(15, 1.0, 0.7, None, 50.0, _DDIM, _DDIM, lr=0.02, kernel_lr=0.01),
    "style": _tuple(2, 4.0, 1.0, None, 1.0, 0.0, 0.0, lr=0.002),
    # Full-length trajectory with the FFHQ super-resolution weights. Coordinates
    # have unit scale, so the control needs more than 5 steps of 0.01 to reach y.
    "conjugate": _tuple(5, 1.0, 0.7, None, 50.0, _DDIM, _DDIM, lr=0.05),
}

# RB-Modulation reruns every task with gamma = 1 and both regularizers off.
for _name in list(PRESETS):
    PRESETS[f"rb-modulation-{_name}"] = {**PRESETS[_name], "gamma": 1.0, "w_score": 0.0, "w_control": 0.0}


def get_preset(name: str) -> Dict[str, Any]:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", field="guidance.preset") from None


def apply_preset(section: Dict[str, Any]) -> Dict[str, Any]:
    """Preset values overlaid by the explicit keys of a guidance section."""
    section = dict(section)
    name = section.pop("preset", None)
    if name is None:
        return section
    return {**get_preset(name), **section}
