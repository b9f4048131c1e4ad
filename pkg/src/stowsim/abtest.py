"""Pod-level randomised A/B experiments on one simulated workcell."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .config import ScenarioConfig
from .errors import InsufficientPods
from .risk import FamilyRateModel, RiskModel
from .sim import Workcell, generate_pod, make_planner


@dataclass(frozen=True)
class ABResult:
    n_A: int
    n_B: int
    mean_A: float
    mean_B: float
    ci_A: tuple[float, float]
    ci_B: tuple[float, float]
    p_value: float
    reject: bool
    alpha: float
    uplift: float

    def to_dict(self) -> dict:
        return asdict(self)


def mean_ci(x: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    if x.size < 2:
        return m, m
    half = float(stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / np.sqrt(x.size))
    return m - half, m + half


def welch_greater(a: Sequence[float], b: Sequence[float]) -> float:
    """One-sided Welch p-value for H0: mean(a) >= mean(b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.var() == 0 and b.var() == 0:
        return 0.0 if b.mean() > a.mean() else 1.0
    return float(stats.ttest_ind(b, a, equal_var=False, alternative="greater").pvalue)


def compare(uph_a: Sequence[float], uph_b: Sequence[float], alpha: float = 0.01) -> ABResult:
    if len(uph_a) < 2 or len(uph_b) < 2:
        raise InsufficientPods("each arm needs at least two pods")
    p = welch_greater(uph_a, uph_b)
    ma, mb = float(np.mean(uph_a)), float(np.mean(uph_b))
    return ABResult(len(uph_a), len(uph_b), ma, mb, mean_ci(uph_a), mean_ci(uph_b), p, p < alpha,
                    alpha, (mb - ma) / ma if ma else float("nan"))


def assignment(n_a: int, n_b: int, seed: int) -> list[str]:
    arms = np.array(["A"] * n_a + ["B"] * n_b)
    return list(np.random.default_rng([seed, 11]).permutation(arms))


def ab_test(cfg: ScenarioConfig, planner_a: Union[str, object] = "frequentist",
            planner_b: Union[str, object] = "learned", n_pods: Union[int, tuple[int, int]] = 200,
            seed: int = 0, alpha: float = 0.01, model: Optional[RiskModel] = None,
            model_a: Optional[RiskModel] = None, model_b: Optional[RiskModel] = None) -> ABResult:
    """Randomise arriving pods to two planners sharing one workcell, then test B > A.

    ``n_pods`` is either a total split evenly or an explicit ``(n_A, n_B)``.
    """
    n_a, n_b = (n_pods // 2, n_pods - n_pods // 2) if isinstance(n_pods, int) else n_pods
    if n_a < 2 or n_b < 2:
        raise InsufficientPods("each arm needs at least two pods")
    arms = assignment(n_a, n_b, seed)
    pa = make_planner(planner_a, cfg, model_a or model) if isinstance(planner_a, str) else planner_a
    pb = make_planner(planner_b, cfg, model_b or model) if isinstance(planner_b, str) else planner_b
    scorer = model or FamilyRateModel()
    cell = Workcell(cfg, seed)
    for pod_id, arm in enumerate(arms):
        cell.run_pod(generate_pod(cfg, pod_id, cell.seed), pa if arm == "A" else pb, scorer, arm)
    uph = np.array(cell.pod_uph)
    tags = np.array(cell.pod_arms)
    return compare(uph[tags == "A"], uph[tags == "B"], alpha)
