"""Fast gradient sign attacks.

Both attacks take one step of size ``epsilon`` along the sign of the input
gradient of the cross-entropy loss:

* targeted: ``adv = clip(x - eps * sign(grad_x J(x, target)), 0, 1)``,
  descending the loss toward the chosen label;
* untargeted: ``adv = clip(x + eps * sign(grad_x J(x, true_label)), 0, 1)``,
  climbing the loss away from the correct label.

The network always runs in eval mode so gradients are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from . import tensor as T
from .errors import ArgumentError, InvariantError, ShapeError
from .imageio import write_pnm

MODES = ("targeted", "untargeted")


@dataclass(frozen=True)
class AttackConfig:
    mode: str
    epsilon: float
    target_label: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.epsilon >= 0:
            raise ArgumentError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.mode == "targeted" and self.target_label is None:
            raise ArgumentError("targeted mode needs a target label")


@dataclass
class AttackResult:
    """Outcome of one attack.

    ``perturbation`` is eps * sign(grad); the attack added it (untargeted) or
    subtracted it (targeted) before clipping. ``clean_label``/``adv_label`` are
    the model's predictions.
    """

    mode: str
    epsilon: float
    clean_image: np.ndarray
    adversarial_image: np.ndarray
    perturbation: np.ndarray
    true_label: int
    target_label: int | None
    clean_label: int
    clean_confidence: float
    adv_label: int
    adv_confidence: float
    success: bool

    @property
    def applied_perturbation(self) -> np.ndarray:
        return -self.perturbation if self.mode == "targeted" else self.perturbation

    @property
    def trivial(self) -> bool:
        """The clean prediction already met the success predicate."""
        if self.mode == "targeted":
            return self.clean_label == self.target_label
        return self.clean_label != self.true_label

    @property
    def failed(self) -> bool:
        return not self.success and not self.trivial

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "true_label": self.true_label,
            "target_label": self.target_label,
            "clean_label": self.clean_label,
            "clean_confidence": self.clean_confidence,
            "adv_label": self.adv_label,
            "adv_confidence": self.adv_confidence,
            "success": self.success,
            "linf": float(np.abs(self.adversarial_image - self.clean_image).max()),
        }


def _check_label(net: nn.Network, label: int, what: str) -> int:
    label = int(label)
    if not 0 <= label < net.num_classes:
        raise ArgumentError(f"{what} {label} out of range for {net.num_classes} classes")
    return label


def input_gradient(net: nn.Network, image: np.ndarray, label: int) -> np.ndarray:
    """grad_x of cross_entropy(forward(x), label), eval mode."""
    image = np.asarray(image)
    if tuple(image.shape) != net.input_shape:
        raise ShapeError(f"image {image.shape} does not match network input {net.input_shape}")
    _, trace = nn.forward(net, image, "eval")
    return nn.backward(net, trace, label).input_grad


def fgsm_gradient_sign(net: nn.Network, image: np.ndarray, label: int) -> np.ndarray:
    label = _check_label(net, label, "label")
    return T.sign(input_gradient(net, image, label))


def default_target(true_label: int, num_classes: int) -> int:
    return (int(true_label) + 1) % num_classes


def _predict(net: nn.Network, image: np.ndarray) -> tuple[int, float]:
    probs, _ = nn.forward(net, image, "eval")
    k = nn.argmax(probs)
    return k, float(probs[k])


def _run(net, image, grad_label, epsilon, direction, mode, true_label, target):
    if not epsilon >= 0:
        raise ArgumentError(f"epsilon must be >= 0, got {epsilon}")
    image = T.as_tensor(image)
    if tuple(image.shape) != net.input_shape:
        raise ShapeError(f"image {image.shape} does not match network input {net.input_shape}")
    eps = np.float32(epsilon)
    eta = eps * fgsm_gradient_sign(net, image, grad_label)
    adv = T.clip(image + np.float32(direction) * eta, 0.0, 1.0) if epsilon > 0 else image.copy()
    _check_post(image, adv, epsilon)
    clean_label, clean_conf = _predict(net, image)
    adv_label, adv_conf = _predict(net, adv)
    if mode == "targeted":
        success = adv_label == target
    else:
        success = adv_label != true_label
    return AttackResult(
        mode=mode,
        epsilon=float(epsilon),
        clean_image=image,
        adversarial_image=adv,
        perturbation=eta,
        true_label=true_label,
        target_label=target,
        clean_label=clean_label,
        clean_confidence=clean_conf,
        adv_label=adv_label,
        adv_confidence=adv_conf,
        success=bool(success),
    )


def _check_post(clean: np.ndarray, adv: np.ndarray, epsilon: float) -> None:
    if adv.min() < 0 or adv.max() > 1:
        raise InvariantError("adversarial image left [0, 1]")
    if np.abs(adv - clean).max() > epsilon + 1e-6:
        raise InvariantError("perturbation exceeds the epsilon budget")


def fgsm_targeted(net: nn.Network, image: np.ndarray, target: int, epsilon: float,
                  true_label: int | None = None) -> AttackResult:
    """Push ``image`` toward class ``target``. ``true_label`` is informational."""
    target = _check_label(net, target, "target")
    if true_label is not None:
        true_label = _check_label(net, true_label, "true label")
    return _run(net, image, target, epsilon, -1.0, "targeted", true_label, target)


def fgsm_untargeted(net: nn.Network, image: np.ndarray, true_label: int, epsilon: float) -> AttackResult:
    """Push ``image`` away from ``true_label``."""
    true_label = _check_label(net, true_label, "true label")
    return _run(net, image, true_label, epsilon, 1.0, "untargeted", true_label, None)


def run_attack(net: nn.Network, image: np.ndarray, cfg: AttackConfig, true_label: int) -> AttackResult:
    if cfg.mode == "targeted":
        return fgsm_targeted(net, image, cfg.target_label, cfg.epsilon, true_label)
    return fgsm_untargeted(net, image, true_label, cfg.epsilon)


def linear_shift(w: np.ndarray, epsilon: float) -> float:
    """Largest activation change w.x' - w.x over perturbations with max|eta| <= epsilon.

    Attained by eta = epsilon * sign(w); equals epsilon * sum|w_i|, i.e.
    epsilon * m * n when every |w_i| = m.
    """
    if not epsilon >= 0:
        raise ArgumentError(f"epsilon must be >= 0, got {epsilon}")
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    return float(w @ (epsilon * np.sign(w)))


def eta_visual(eta: np.ndarray, epsilon: float) -> np.ndarray:
    """Map a perturbation in [-eps, eps] to [0, 1] for viewing."""
    if epsilon <= 0:
        return np.full(eta.shape, 0.5, dtype=T.DTYPE)
    return T.clip(eta / np.float32(2 * epsilon) + np.float32(0.5), 0.0, 1.0)


def write_image(path, image: np.ndarray) -> None:
    """TNSR for ``.tnsr`` paths (exact), 8-bit PPM/PGM otherwise."""
    path = Path(path)
    if path.suffix.lower() == ".tnsr":
        path.write_bytes(T.tensor_to_bytes(image))
    else:
        write_pnm(path, image)
