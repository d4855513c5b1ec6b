"""Transform selection: which defense a client applies before transmitting."""

import re
from dataclasses import dataclass
from typing import Optional

from gradient_standin.defense.baselines import (
    clip_transform,
    compress_transform,
    noise_transform,
)
from gradient_standin.defense.config import VALID_TRANSFORMS
from gradient_standin.defense.standin import MomentState, standin_update

_PATTERN = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([^)]*?)\s*\))?\s*$")


@dataclass(frozen=True)
class TransformKind:
    """
    A client-side gradient transform and its single parameter.

    ``sigma`` applies to ``gaussian_noise``, ``clip_norm`` to ``clip`` and
    ``ratio`` to ``topk``; the other fields are ignored for other names.
    """

    name: str = "identity"
    sigma: float = 0.0
    clip_norm: float = 1.0
    ratio: float = 1.0

    def __post_init__(self):
        if self.name not in VALID_TRANSFORMS:
            raise ValueError(
                f"Transform must be one of {sorted(VALID_TRANSFORMS)}, not {self.name}"
            )
        if self.sigma < 0:
            raise ValueError(f"Noise scale must be >= 0, not {self.sigma}")
        if not self.clip_norm > 0:
            raise ValueError(f"Clipping norm must be > 0, not {self.clip_norm}")
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"Compression ratio must lie in (0, 1], not {self.ratio}")

    @classmethod
    def identity(cls) -> "TransformKind":
        return cls("identity")

    @classmethod
    def standin(cls) -> "TransformKind":
        return cls("standin")

    @classmethod
    def gaussian_noise(cls, sigma: float) -> "TransformKind":
        return cls("gaussian_noise", sigma=float(sigma))

    @classmethod
    def clip(cls, c: float) -> "TransformKind":
        return cls("clip", clip_norm=float(c))

    @classmethod
    def topk(cls, ratio: float) -> "TransformKind":
        return cls("topk", ratio=float(ratio))

    @property
    def uses_moments(self) -> bool:
        return self.name == "standin"

    def describe(self) -> str:
        """Compact text form, e.g. ``gaussian_noise(0.01)``; inverse of :meth:`parse`."""
        if self.name == "gaussian_noise":
            return f"gaussian_noise({self.sigma!r})"
        if self.name == "clip":
            return f"clip({self.clip_norm!r})"
        if self.name == "topk":
            return f"topk({self.ratio!r})"
        return self.name

    @classmethod
    def parse(cls, text: str) -> "TransformKind":
        """
        Parse ``identity``, ``standin``, ``gaussian_noise(σ)``, ``clip(c)`` or ``topk(ratio)``.

        Raises
        ------
        ValueError
            If the text is not one of these forms.
        """
        match = _PATTERN.match(text)
        if match is None:
            raise ValueError(f"Cannot parse transform '{text}'")
        name, argument = match.groups()
        takes_argument = name in {"gaussian_noise", "clip", "topk"}
        if takes_argument != bool(argument):
            raise ValueError(
                f"Transform '{name}' {'needs' if takes_argument else 'takes no'} argument in '{text}'"
            )
        if name == "gaussian_noise":
            return cls.gaussian_noise(float(argument))
        if name == "clip":
            return cls.clip(float(argument))
        if name == "topk":
            return cls.topk(float(argument))
        return cls(name)


def apply_transform(
    kind: TransformKind,
    g,
    moment: Optional[MomentState] = None,
    seed: Optional[int] = None,
):
    """
    Apply the transform named by ``kind`` to the round gradient ``g``.

    Parameters
    ----------
    kind : TransformKind
    g : GradientSet or np.ndarray
    moment : MomentState, optional
        Required for ``standin``; updated in place.
    seed : int, optional
        Required for ``gaussian_noise``.

    Returns
    -------
    GradientSet or np.ndarray
        Transformed gradient in the layout of ``g``.
    """
    if kind.name == "identity":
        return g
    if kind.name == "standin":
        if moment is None:
            raise ValueError("The stand-in transform needs the client's moment state")
        return standin_update(moment, g)
    if kind.name == "gaussian_noise":
        if seed is None:
            raise ValueError("The noise transform needs a seed")
        return noise_transform(g, kind.sigma, seed)
    if kind.name == "clip":
        return clip_transform(g, kind.clip_norm)
    return compress_transform(g, kind.ratio)
