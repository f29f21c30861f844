"""Named network architectures shipped with the package.

Presets are stored as json files in ``_data/presets/``. Each names an input
shape and an ordered list of stage groups:

* ``{"kind": "subsample"}``: one invertible subsampling step;
* ``{"kind": "block", "width": W, "kernel": k, "count": n}``: n reversible
  blocks whose F and G are conv(C/2 -> W, k), ReLU, conv(W -> C/2, k).
"""

import json
from importlib import resources

from .exceptions import ConfigError, ShapeError
from .revnet import build_architecture


def get_preset_names():
    """Retrieves available presets from the ``_data/presets`` directory.

    Returns:
        list of str: The names of the available presets, sorted.

    Examples:
        >>> get_preset_names()
        ['celeba', 'mixture-small', 'mnist-small']
    """

    presets_path = resources.files(__package__) / "_data" / "presets"
    return sorted(n.name[: -len(".json")] for n in presets_path.iterdir() if n.name.endswith(".json"))


def get_preset(name):
    """Retrieves the stage description of a preset.

    Args:
        name (str): Preset name.

    Returns:
        dict: The preset description.

    Raises:
        ConfigError: If no preset has this name.

    Examples:
        >>> p = get_preset("celeba")
        >>> p["input_shape"], sum(1 for s in p["stages"] if s["kind"] == "subsample")
        ([3, 64, 64], 6)
    """

    if name not in get_preset_names():
        raise ConfigError(f"unknown architecture preset {name!r}; available: {', '.join(get_preset_names())}")
    fn = resources.files(__package__) / "_data" / "presets" / f"{name}.json"
    return json.loads(fn.read_text(encoding="UTF-8"))


def count_parameters(spec, input_shape=None):
    """Closed-form parameter count of a stage description, without building it.

    Each conv contributes ``O * C * k * k + O``.

    Examples:
        >>> count_parameters(get_preset("mnist-small"))
        1026196
        >>> count_parameters(get_preset("celeba"))
        61595180
    """

    c, h, w = input_shape or spec["input_shape"]
    total = 0
    for group in spec["stages"]:
        if group["kind"] == "subsample":
            if h % 2 or w % 2:
                raise ShapeError(f"cannot subsample spatial extent {h}x{w}")
            c, h, w = 4 * c, h // 2, w // 2
            continue
        half, width, k = c // 2, group["width"], group["kernel"]
        branch = (width * half * k * k + width) + (half * width * k * k + half)
        total += 2 * branch * int(group.get("count", 1))
    return total


def build_preset(name, rng=None, dtype="f32", input_shape=None):
    """Builds the network of a named preset; see :func:`revgen.revnet.build_architecture`."""
    return build_architecture(get_preset(name), rng=rng, dtype=dtype, input_shape=input_shape)
