"""Adversarial example generation: the 11 attack kinds and their budgets.

Every attack crafts x_adv on the surrogate model; success is judged on the
target (transfer protocol). The final candidate is always projected onto the
kind's norm budget and clipped to [0,1] before evaluation, so the budget
invariant holds for every returned outcome.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .engine.model import EngineModel, LabeledExample


class AttackKind(enum.Enum):
    FGSM = "fgsm"
    BIM_L2 = "bim-l2"
    BIM_LINF = "bim-linf"
    PGD_L2 = "pgd-l2"
    PGD_LINF = "pgd-linf"
    DEEPFOOL_L2 = "deepfool-l2"
    NEWTONFOOL = "newtonfool"
    DDN = "ddn"
    INVERSION = "inversion"
    SALTPEPPER = "saltpepper"
    BOUNDARY = "boundary"


ALL_KINDS = tuple(AttackKind)

# Per-kind default budgets (units differ per attack family)
DEFAULT_EPSILON = {
    AttackKind.FGSM: 0.02,
    AttackKind.INVERSION: 10.0,
    AttackKind.BIM_LINF: 0.05,
    AttackKind.PGD_LINF: 0.05,
    AttackKind.PGD_L2: 12.0,
    AttackKind.BIM_L2: 1.0,
    AttackKind.DDN: 0.5,
    AttackKind.DEEPFOOL_L2: 1.4,
    AttackKind.BOUNDARY: 2.5,
    AttackKind.NEWTONFOOL: 12.0,
    AttackKind.SALTPEPPER: 80.0,
}

LINF_KINDS = {AttackKind.FGSM, AttackKind.BIM_LINF, AttackKind.PGD_LINF}
L2_KINDS = {
    AttackKind.BIM_L2, AttackKind.PGD_L2, AttackKind.DEEPFOOL_L2,
    AttackKind.NEWTONFOOL, AttackKind.DDN, AttackKind.INVERSION, AttackKind.BOUNDARY,
}
PIXEL_KINDS = {AttackKind.SALTPEPPER}

# Mechanical stand-in for the human perceptibility judgement (epsilon_search only)
PERCEPTIBILITY_CAP_LINF = 0.1
PERCEPTIBILITY_CAP_L2 = 5.0

DEEPFOOL_OVERSHOOT = 1.02
DDN_GROW, DDN_SHRINK = 1.05, 0.95
NEWTONFOOL_ETA = 0.01
BOUNDARY_ORTH_STEP = 0.01
BOUNDARY_SOURCE_STEP = 0.01
BUDGET_TOLERANCE = 1e-6


@dataclass(frozen=True)
class AttackConfig:
    kind: AttackKind
    epsilon: float | None = None
    steps: int | None = None
    step_size: float | None = None
    seed: int = 0

    def resolve(self) -> "AttackConfig":
        eps = DEFAULT_EPSILON[self.kind] if self.epsilon is None else self.epsilon
        if eps <= 0:
            raise ValueError(f"epsilon must be positive, got {eps}")
        steps = self.steps
        if steps is None:
            if self.kind is AttackKind.FGSM:
                steps = 1
            elif self.kind is AttackKind.BOUNDARY:
                steps = 1000  # prediction queries
            elif self.kind is AttackKind.SALTPEPPER:
                steps = 10  # escalation levels up to epsilon flips
            else:
                steps = 40
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        step_size = self.step_size
        if step_size is None:
            if self.kind is AttackKind.FGSM:
                step_size = eps
            elif self.kind in LINF_KINDS:
                step_size = eps / 8.0
            elif self.kind is AttackKind.NEWTONFOOL:
                step_size = NEWTONFOOL_ETA
            elif self.kind is AttackKind.INVERSION:
                step_size = eps / steps
            elif self.kind is AttackKind.BOUNDARY:
                step_size = BOUNDARY_SOURCE_STEP
            else:
                step_size = eps / 10.0
        return AttackConfig(self.kind, eps, steps, step_size, self.seed)


@dataclass
class AttackOutcome:
    kind: AttackKind
    x_adv: np.ndarray
    perturbation_norm: tuple[float, float]  # (L2, Linf)
    pixels_changed: int
    surrogate_pred: int
    target_pred: int
    y_true: int
    epsilon: float
    budget_ok: bool
    success: bool

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "l2": self.perturbation_norm[0],
            "linf": self.perturbation_norm[1],
            "pixels_changed": self.pixels_changed,
            "surrogate_pred": self.surrogate_pred,
            "target_pred": self.target_pred,
            "y_true": self.y_true,
            "epsilon": self.epsilon,
            "budget_ok": self.budget_ok,
            "success": self.success,
        }


def run_attack(
    kind: AttackKind,
    surrogate: EngineModel,
    target: EngineModel,
    example: LabeledExample,
    config: AttackConfig | None = None,
) -> AttackOutcome:
    base = config or AttackConfig(kind=kind)
    # defaults resolve under the requested kind, whatever kind the config names
    cfg = AttackConfig(kind, base.epsilon, base.steps, base.step_size, base.seed).resolve()
    rng = np.random.default_rng(cfg.seed)
    x0 = np.asarray(example.x, dtype=np.float32)
    example = LabeledExample(x=x0, y_true=example.y_true)

    crafted = _CRAFTERS[kind](surrogate, example, cfg, rng)
    x_adv = _project(kind, x0, crafted.astype(np.float32), cfg.epsilon)

    delta = x_adv - x0
    l2 = float(np.linalg.norm(delta.ravel()))
    linf = float(np.max(np.abs(delta))) if delta.size else 0.0
    pixels = _changed_pixels(x0, x_adv)
    budget_ok = _budget_ok(kind, l2, linf, pixels, cfg.epsilon)
    target_pred = target.predict(x_adv)
    return AttackOutcome(
        kind=kind,
        x_adv=x_adv,
        perturbation_norm=(l2, linf),
        pixels_changed=pixels,
        surrogate_pred=surrogate.predict(x_adv),
        target_pred=target_pred,
        y_true=example.y_true,
        epsilon=cfg.epsilon,
        budget_ok=budget_ok,
        success=bool(target_pred != example.y_true and budget_ok),
    )


def fgsm(surrogate: EngineModel, example: LabeledExample, config: AttackConfig | None = None) -> AttackOutcome:
    """Single-step sign-of-gradient attack, evaluated on the surrogate itself."""
    return run_attack(AttackKind.FGSM, surrogate, surrogate, example, config)


def epsilon_search(
    kind: AttackKind,
    surrogate: EngineModel,
    target: EngineModel,
    example: LabeledExample,
    budget_grid: list[float],
    *,
    steps: int | None = None,
    seed: int = 0,
) -> float | None:
    """Smallest grid epsilon whose attack succeeds within the perceptibility cap."""
    if list(budget_grid) != sorted(budget_grid):
        raise ValueError("budget_grid must be ascending")
    for eps in budget_grid:
        if kind in LINF_KINDS and eps > PERCEPTIBILITY_CAP_LINF:
            continue
        if kind in L2_KINDS and eps > PERCEPTIBILITY_CAP_L2:
            continue
        outcome = run_attack(kind, surrogate, target, example,
                             AttackConfig(kind=kind, epsilon=eps, steps=steps, seed=seed))
        if outcome.success:
            return eps
    return None


# -- budget handling -----------------------------------------------------------


def _project(kind: AttackKind, x0: np.ndarray, x_adv: np.ndarray, eps: float) -> np.ndarray:
    delta = x_adv - x0
    if kind in LINF_KINDS:
        delta = np.clip(delta, -eps, eps)
    elif kind in L2_KINDS:
        n = float(np.linalg.norm(delta.ravel()))
        if n > eps:
            delta = delta * (eps / n)
    return np.clip(x0 + delta, 0.0, 1.0).astype(np.float32)


def _changed_pixels(x0: np.ndarray, x_adv: np.ndarray) -> int:
    diff = x0 != x_adv
    if diff.ndim == 4:  # NHWC: a pixel is one spatial location
        return int(diff.any(axis=3).sum())
    return int(diff.sum())


def _budget_ok(kind: AttackKind, l2: float, linf: float, pixels: int, eps: float) -> bool:
    if kind in LINF_KINDS:
        return linf <= eps + BUDGET_TOLERANCE
    if kind in L2_KINDS:
        return l2 <= eps + BUDGET_TOLERANCE
    return pixels <= int(eps)


# -- crafting ------------------------------------------------------------------


def _grad(surrogate: EngineModel, x: np.ndarray, y: int) -> np.ndarray:
    _, g = surrogate.loss_and_input_grad(LabeledExample(x=x, y_true=y))
    return g.astype(np.float32)


def _iterative_linf(surrogate, example, cfg, rng, random_start: bool) -> np.ndarray:
    x0 = example.x
    x = x0.copy()
    if random_start:
        x = np.clip(x0 + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x0.shape).astype(np.float32), 0, 1)
    for _ in range(cfg.steps):
        g = _grad(surrogate, x, example.y_true)
        x = x + cfg.step_size * np.sign(g)
        x = x0 + np.clip(x - x0, -cfg.epsilon, cfg.epsilon)
        x = np.clip(x, 0.0, 1.0)
    return x


def _l2_ball_sample(rng, shape, eps: float) -> np.ndarray:
    d = rng.standard_normal(size=shape).astype(np.float32)
    n = float(np.linalg.norm(d.ravel()))
    if n < 1e-12:
        return np.zeros(shape, dtype=np.float32)
    radius = eps * float(rng.uniform()) ** (1.0 / d.size)
    return d * (radius / n)


def _iterative_l2(surrogate, example, cfg, rng, random_start: bool) -> np.ndarray:
    x0 = example.x
    x = x0.copy()
    if random_start:
        x = np.clip(x0 + _l2_ball_sample(rng, x0.shape, cfg.epsilon), 0, 1)
    for _ in range(cfg.steps):
        g = _grad(surrogate, x, example.y_true)
        gn = float(np.linalg.norm(g.ravel()))
        if gn < 1e-12:
            break
        x = x + cfg.step_size * (g / gn)
        delta = x - x0
        n = float(np.linalg.norm(delta.ravel()))
        if n > cfg.epsilon:
            delta = delta * (cfg.epsilon / n)
        x = np.clip(x0 + delta, 0.0, 1.0)
    return x


def _craft_fgsm(surrogate, example, cfg, rng):
    return _iterative_linf(surrogate, example, cfg, rng, random_start=False)


def _craft_bim_linf(surrogate, example, cfg, rng):
    return _iterative_linf(surrogate, example, cfg, rng, random_start=False)


def _craft_pgd_linf(surrogate, example, cfg, rng):
    return _iterative_linf(surrogate, example, cfg, rng, random_start=True)


def _craft_bim_l2(surrogate, example, cfg, rng):
    return _iterative_l2(surrogate, example, cfg, rng, random_start=False)


def _craft_pgd_l2(surrogate, example, cfg, rng):
    return _iterative_l2(surrogate, example, cfg, rng, random_start=True)


def _craft_deepfool(surrogate, example, cfg, rng):
    """Project onto the nearest linearized class boundary, with overshoot."""
    x0 = example.x
    y = example.y_true
    r_total = np.zeros_like(x0)
    x = x0.copy()
    for _ in range(cfg.steps):
        if surrogate.predict(x) != y:
            break
        best = None
        for k in range(surrogate.class_count):
            if k == y:
                continue
            f_k, w_k = surrogate.class_score_grad(x, k, y)
            wn = float(np.linalg.norm(w_k.ravel()))
            if wn < 1e-12:
                continue
            dist = abs(f_k) / wn
            if best is None or dist < best[0]:
                best = (dist, f_k, w_k, wn)
        if best is None:
            break
        _, f_k, w_k, wn = best
        r_total = r_total + (abs(f_k) + 1e-6) / (wn * wn) * w_k
        x = np.clip(x0 + DEEPFOOL_OVERSHOOT * r_total, 0.0, 1.0).astype(np.float32)
    return x


def _craft_newtonfool(surrogate, example, cfg, rng):
    """Gradient descent on the original class probability."""
    x0 = example.x
    x = x0.copy()
    c = max(surrogate.class_count, 2)
    x0_norm = float(np.linalg.norm(x0.ravel()))
    for _ in range(cfg.steps):
        p_y, g = surrogate.prob_grad(x, example.y_true)
        gn = float(np.linalg.norm(g.ravel()))
        if gn < 1e-12:
            break
        scale = min(cfg.step_size * x0_norm * gn, p_y - 1.0 / c)
        if scale <= 0:
            break
        x = np.clip(x - scale * g / (gn * gn), 0.0, 1.0).astype(np.float32)
    return x


def _craft_ddn(surrogate, example, cfg, rng):
    """Decoupled direction (gradient ascent) and norm (multiplicative)."""
    x0 = example.x
    y = example.y_true
    delta = np.zeros_like(x0)
    norm_k = cfg.epsilon
    best = None
    best_norm = np.inf
    for _ in range(cfg.steps):
        x = np.clip(x0 + delta, 0.0, 1.0)
        if surrogate.predict(x) != y:
            n = float(np.linalg.norm((x - x0).ravel()))
            if n < best_norm:
                best, best_norm = x.copy(), n
            norm_k *= DDN_SHRINK
        else:
            norm_k *= DDN_GROW
        g = _grad(surrogate, x, y)
        gn = float(np.linalg.norm(g.ravel()))
        if gn > 1e-12:
            delta = delta + cfg.step_size * (g / gn)
        dn = float(np.linalg.norm(delta.ravel()))
        if dn > 1e-12:
            delta = delta * (norm_k / dn)
    return best if best is not None else np.clip(x0 + delta, 0.0, 1.0)


def _craft_inversion(surrogate, example, cfg, rng):
    """Climb the confidence of the surrogate's runner-up class."""
    x0 = example.x
    probs = surrogate.forward(x0)[0]
    order = np.argsort(probs)[::-1]
    target_class = int(order[0])
    if target_class == example.y_true and len(order) > 1:
        target_class = int(order[1])
    x = x0.copy()
    for _ in range(cfg.steps):
        _, g = surrogate.prob_grad(x, target_class)
        gn = float(np.linalg.norm(g.ravel()))
        if gn < 1e-12:
            break
        step = x - x0 + cfg.step_size * (g / gn)
        n = float(np.linalg.norm(step.ravel()))
        if n > cfg.epsilon:
            step = step * (cfg.epsilon / n)
        x = np.clip(x0 + step, 0.0, 1.0).astype(np.float32)
    return x


def _craft_saltpepper(surrogate, example, cfg, rng):
    """Flip whole pixels to 0 or 1, escalating the count up to epsilon."""
    x0 = example.x
    if x0.ndim != 4:
        raise ValueError("salt-and-pepper expects NHWC input")
    _, h, w, _ = x0.shape
    n_pixels = h * w
    max_flips = min(int(cfg.epsilon), n_pixels)
    order = rng.permutation(n_pixels)
    salt = rng.integers(0, 2, size=n_pixels).astype(np.float32)
    levels = np.unique(np.clip(np.round(np.linspace(1, max_flips, cfg.steps)), 1, max_flips).astype(int))

    def apply(count: int) -> np.ndarray:
        x = x0.copy()
        for p in order[:count]:
            x[0, p // w, p % w, :] = salt[p]
        return x

    last = x0.copy()
    for count in levels:
        last = apply(int(count))
        if surrogate.predict(last) != example.y_true:
            return last
    return last


def _craft_boundary(surrogate, example, cfg, rng):
    """Decision-boundary walk: big adversarial start, bisect to the boundary,
    then orthogonal wiggles with contraction while staying adversarial."""
    x0 = example.x
    y = example.y_true
    queries = cfg.steps
    start = None
    for _ in range(100):
        queries -= 1
        cand = rng.uniform(0.0, 1.0, size=x0.shape).astype(np.float32)
        if surrogate.predict(cand) != y:
            start = cand
            break
        if queries <= 0:
            return x0.copy()
    if start is None:
        return x0.copy()

    # binary search along the segment to land on the decision boundary
    lo, hi = 0.0, 1.0  # hi = fully adversarial end
    for _ in range(20):
        if queries <= 0:
            break
        queries -= 1
        mid = 0.5 * (lo + hi)
        cand = np.clip(x0 + mid * (start - x0), 0.0, 1.0).astype(np.float32)
        if surrogate.predict(cand) != y:
            hi = mid
        else:
            lo = mid
    x = np.clip(x0 + hi * (start - x0), 0.0, 1.0).astype(np.float32)

    while queries > 0:
        queries -= 1
        d = x - x0
        dist = float(np.linalg.norm(d.ravel()))
        if dist < 1e-9:
            break
        noise = rng.standard_normal(size=x0.shape).astype(np.float32)
        radial = d / dist
        noise = noise - float((noise * radial).sum()) * radial
        nn = float(np.linalg.norm(noise.ravel()))
        if nn > 1e-12:
            noise = noise * (BOUNDARY_ORTH_STEP * dist / nn)
        cand = x0 + (d + noise)
        cn = float(np.linalg.norm((cand - x0).ravel()))
        if cn > 1e-12:
            cand = x0 + (cand - x0) * (dist / cn)
        cand = cand + cfg.step_size * (x0 - cand)
        cand = np.clip(cand, 0.0, 1.0).astype(np.float32)
        if surrogate.predict(cand) != y:
            x = cand
    return x


_CRAFTERS = {
    AttackKind.FGSM: _craft_fgsm,
    AttackKind.BIM_LINF: _craft_bim_linf,
    AttackKind.PGD_LINF: _craft_pgd_linf,
    AttackKind.BIM_L2: _craft_bim_l2,
    AttackKind.PGD_L2: _craft_pgd_l2,
    AttackKind.DEEPFOOL_L2: _craft_deepfool,
    AttackKind.NEWTONFOOL: _craft_newtonfool,
    AttackKind.DDN: _craft_ddn,
    AttackKind.INVERSION: _craft_inversion,
    AttackKind.SALTPEPPER: _craft_saltpepper,
    AttackKind.BOUNDARY: _craft_boundary,
}
