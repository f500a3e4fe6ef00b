"""Gradient-based adversarial attacks against the neural classifier.

All four attacks are untargeted and deterministic (no random restarts):
an attack succeeds when the perturbed image is no longer predicted as the
true label. FGSM and PGD respect an L-infinity budget epsilon; Deepfool
and CW minimize perturbation size instead. Pixels are always clamped back
to [0, 1].

Gradients come exclusively from the network's `input_gradient` /
`logit_input_jacobian` surface, so any backprop-capable model plugs in.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Image
from .neuralnet import NeuralNet

ATTACK_METHODS = ("fgsm", "pgd", "deepfool", "cw")


@dataclass(frozen=True)
class AttackConfig:
    """Parameters for one attack method; unused fields are ignored."""

    method: str
    epsilon: float = 0.0  # L-infinity budget (fgsm, pgd)
    alpha: float = 0.0  # pgd step size
    steps: int = 0  # iteration count (pgd, deepfool, cw)
    overshoot: float = 0.0  # deepfool boundary-crossing multiplier
    c: float = 1.0  # cw margin weight
    kappa: float = 0.0  # cw confidence margin
    lr: float = 0.01  # cw optimizer step

    def __post_init__(self) -> None:
        if self.method not in ATTACK_METHODS:
            raise ValueError(f"method must be one of {ATTACK_METHODS}, got {self.method!r}")
        if min(self.epsilon, self.alpha, self.lr, self.overshoot) < 0:
            raise ValueError("epsilon, alpha, lr and overshoot must all be >= 0")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")


# Published default parameterizations per attack.
DEFAULT_CONFIGS = {
    "fgsm": AttackConfig(method="fgsm", epsilon=0.007),
    "pgd": AttackConfig(method="pgd", epsilon=0.03, alpha=0.004, steps=40),
    "deepfool": AttackConfig(method="deepfool", steps=50, overshoot=0.02),
    "cw": AttackConfig(method="cw", c=1.0, kappa=0.0, steps=50, lr=0.01),
}


def default_config(method: str, **overrides) -> AttackConfig:
    """Default config for a method, optionally overriding fields."""
    if method not in DEFAULT_CONFIGS:
        raise ValueError(f"method must be one of {ATTACK_METHODS}, got {method!r}")
    return replace(DEFAULT_CONFIGS[method], **overrides)


@dataclass
class AdversarialExample:
    original: Image
    perturbed: np.ndarray
    attack: AttackConfig
    succeeded: bool
    iterations_used: int


def _as_image(x: Image | np.ndarray, label: int | None) -> Image:
    if isinstance(x, Image):
        return x
    if label is None:
        raise ValueError("a raw pixel tensor needs an explicit label")
    return Image(pixels=np.asarray(x, dtype=np.float64), label=label)


def fgsm(net: NeuralNet, x: Image | np.ndarray, label: int, epsilon: float) -> AdversarialExample:
    """Single step of size epsilon along the sign of the loss gradient."""
    image = _as_image(x, label)
    grad = net.input_gradient(image.pixels, label)
    perturbed = np.clip(image.pixels + epsilon * np.sign(grad), 0.0, 1.0)
    cfg = AttackConfig(method="fgsm", epsilon=epsilon)
    return AdversarialExample(
        original=image,
        perturbed=perturbed,
        attack=cfg,
        succeeded=net.predict(perturbed) != label,
        iterations_used=1,
    )


def pgd(
    net: NeuralNet,
    x: Image | np.ndarray,
    label: int,
    epsilon: float,
    alpha: float,
    steps: int,
) -> AdversarialExample:
    """Iterated sign steps, each projected back into the epsilon ball around x.

    Starts at x itself (no random start); projection is per-pixel clipping
    to [x - epsilon, x + epsilon] intersected with [0, 1].
    """
    image = _as_image(x, label)
    x0 = image.pixels
    adv = x0.copy()
    for _ in range(steps):
        grad = net.input_gradient(adv, label)
        adv = adv + alpha * np.sign(grad)
        adv = np.clip(adv, x0 - epsilon, x0 + epsilon)
        adv = np.clip(adv, 0.0, 1.0)
    cfg = AttackConfig(method="pgd", epsilon=epsilon, alpha=alpha, steps=steps)
    return AdversarialExample(
        original=image,
        perturbed=adv,
        attack=cfg,
        succeeded=net.predict(adv) != label,
        iterations_used=steps,
    )


def deepfool(
    net: NeuralNet,
    x: Image | np.ndarray,
    label: int,
    steps: int = 50,
    overshoot: float = 0.02,
) -> AdversarialExample:
    """Repeatedly step to the nearest linearized class boundary.

    Each iteration linearizes every class boundary at the current point
    and takes the minimal-L2 step to the closest one; the loop stops when
    the (overshoot-scaled, clamped) candidate changes the prediction or
    the step budget runs out. The final perturbation is scaled by
    (1 + overshoot) and clamped to [0, 1].
    """
    image = _as_image(x, label)
    shape = image.pixels.shape
    x0 = image.pixels.reshape(-1)
    cfg = AttackConfig(method="deepfool", steps=steps, overshoot=overshoot)

    if net.predict(x0) != label:
        return AdversarialExample(
            original=image,
            perturbed=image.pixels.copy(),
            attack=cfg,
            succeeded=True,
            iterations_used=0,
        )

    r = np.zeros_like(x0)
    others = np.array([c for c in range(net.class_count) if c != label])
    iterations = 0
    for _ in range(steps):
        candidate = np.clip(x0 + (1.0 + overshoot) * r, 0.0, 1.0)
        if iterations > 0 and net.predict(candidate) != label:
            break
        point = x0 + r
        logits = net.logits(point)
        jac = net.logit_input_jacobian(point)
        f = logits[others] - logits[label]
        w = jac[others] - jac[label]
        norms = np.sqrt((w * w).sum(axis=1))
        if not (norms > 0).any():
            break  # flat logits: no boundary direction to follow
        with np.errstate(divide="ignore"):
            ratio = np.where(norms > 0, np.abs(f) / norms, np.inf)
        nearest = int(np.argmin(ratio))
        r = r + (np.abs(f[nearest]) + 1e-6) / (norms[nearest] ** 2) * w[nearest]
        iterations += 1

    perturbed = np.clip(x0 + (1.0 + overshoot) * r, 0.0, 1.0).reshape(shape)
    return AdversarialExample(
        original=image,
        perturbed=perturbed,
        attack=cfg,
        succeeded=net.predict(perturbed) != label,
        iterations_used=iterations,
    )


def cw_l2(
    net: NeuralNet,
    x: Image | np.ndarray,
    label: int,
    c: float = 1.0,
    kappa: float = 0.0,
    steps: int = 50,
    lr: float = 0.01,
) -> AdversarialExample:
    """Untargeted Carlini-Wagner L2 attack.

    Pixels are reparameterized through tanh so iterates stay in [0, 1];
    Adam minimizes ||x' - x||_2^2 + c * max(Z_label - max_other + kappa, 0).
    Returns the successful iterate with the smallest distortion seen, or
    the final iterate with succeeded=False if none succeeded.
    """
    image = _as_image(x, label)
    shape = image.pixels.shape
    x0 = image.pixels.reshape(-1)
    cfg = AttackConfig(method="cw", c=c, kappa=kappa, steps=steps, lr=lr)

    if steps == 0:
        return AdversarialExample(
            original=image,
            perturbed=image.pixels.copy(),
            attack=cfg,
            succeeded=net.predict(x0) != label,
            iterations_used=0,
        )

    w = np.arctanh(np.clip(2.0 * x0 - 1.0, -1.0, 1.0) * 0.999999)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    best: np.ndarray | None = None
    best_l2 = np.inf
    others = np.array([cc for cc in range(net.class_count) if cc != label])

    def evaluate(point: np.ndarray) -> tuple[bool, float]:
        logits = net.logits(point)
        succeeded = int(np.argmax(logits)) != label
        return succeeded, float(((point - x0) ** 2).sum())

    for t in range(1, steps + 1):
        xt = 0.5 * (np.tanh(w) + 1.0)
        logits = net.logits(xt)
        succeeded, l2 = evaluate(xt)
        if succeeded and l2 < best_l2:
            best, best_l2 = xt.copy(), l2

        runner_up = others[np.argmax(logits[others])]
        margin = logits[label] - logits[runner_up] + kappa
        grad_x = 2.0 * (xt - x0)
        if margin > 0:
            jac = net.logit_input_jacobian(xt)
            grad_x = grad_x + c * (jac[label] - jac[runner_up])
        grad_w = grad_x * 0.5 * (1.0 - np.tanh(w) ** 2)

        m = beta1 * m + (1.0 - beta1) * grad_w
        v = beta2 * v + (1.0 - beta2) * grad_w**2
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + adam_eps)

    final = 0.5 * (np.tanh(w) + 1.0)
    succeeded, l2 = evaluate(final)
    if succeeded and l2 < best_l2:
        best, best_l2 = final, l2

    perturbed = (best if best is not None else final).reshape(shape)
    return AdversarialExample(
        original=image,
        perturbed=perturbed,
        attack=cfg,
        succeeded=best is not None,
        iterations_used=steps,
    )


def attack_success(net: NeuralNet, adv: AdversarialExample, true_label: int) -> bool:
    """Untargeted success: the perturbed image is not predicted as the true label."""
    return net.predict(adv.perturbed) != true_label


def run_attack(net: NeuralNet, image: Image, cfg: AttackConfig) -> AdversarialExample:
    """Dispatch an attack described by a config onto one labeled image."""
    if cfg.method == "fgsm":
        return fgsm(net, image, image.label, cfg.epsilon)
    if cfg.method == "pgd":
        return pgd(net, image, image.label, cfg.epsilon, cfg.alpha, cfg.steps)
    if cfg.method == "deepfool":
        return deepfool(net, image, image.label, cfg.steps, cfg.overshoot)
    if cfg.method == "cw":
        return cw_l2(net, image, image.label, cfg.c, cfg.kappa, cfg.steps, cfg.lr)
    raise ValueError(f"unknown attack method {cfg.method!r}")
