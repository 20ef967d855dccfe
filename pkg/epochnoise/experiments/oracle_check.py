"""Cross-check the closed forms against independent oracles."""

from fractions import Fraction

from ..log_setup import get_logger
from ..model import Hyperparams
from ..sampling import autocorr_weight, noise_autocorr_oracle, noise_scale_oracle
from ..theory import exact_stationary, exact_stationary_uncorrelated, lyapunov_oracle
from .base import ExperimentContext, ExperimentHandler, map_tasks

logger = get_logger(__name__)

STATIONARY_COLUMNS = (
    "beta",
    "M",
    "eta_lambda",
    "sigma_theta2_exact",
    "sigma_theta2_oracle",
    "sigma_v2_exact",
    "sigma_v2_oracle",
    "rel_error",
    "rel_error_uncorrelated",
)
KERNEL_COLUMNS = ("N", "S", "M", "h", "oracle", "kernel", "match")
SCALE_COLUMNS = ("N", "S", "oracle", "noise_factor", "match")

# Example counts small enough for exact enumeration
KERNEL_SIZES = (4, 6, 8, 12)


def resolve_eta_lambda(value: float, beta: float) -> float:
    """Negative grid entries are fractions of the stability edge 2(1+beta)."""
    return -value * 2.0 * (1.0 + beta) if value < 0 else value


def _relative(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def check_point(task: tuple) -> dict:
    """Compare exact and oracle stationary variances at one grid point (sigma^2 = 1)."""
    eta, beta, M, eta_lam = task
    hp = Hyperparams.from_batches(eta, beta, M)
    lam = eta_lam / eta

    theta2, v2, _ = exact_stationary(lam, 1.0, hp)
    theta2_oracle, v2_oracle = lyapunov_oracle(lam, 1.0, hp)
    theta2_iid, v2_iid, _ = exact_stationary_uncorrelated(lam, 1.0, hp)
    theta2_iid_oracle, v2_iid_oracle = lyapunov_oracle(lam, 1.0, hp, kernel="uncorrelated")

    return {
        "beta": beta,
        "M": M,
        "eta_lambda": eta_lam,
        "sigma_theta2_exact": theta2,
        "sigma_theta2_oracle": theta2_oracle,
        "sigma_v2_exact": v2,
        "sigma_v2_oracle": v2_oracle,
        "rel_error": max(_relative(theta2, theta2_oracle), _relative(v2, v2_oracle)),
        "rel_error_uncorrelated": max(
            _relative(theta2_iid, theta2_iid_oracle), _relative(v2_iid, v2_iid_oracle)
        ),
    }


def kernel_rows(sizes=KERNEL_SIZES) -> list[dict]:
    """Enumerated lag kernel against the closed form for every S | N with M >= 2."""
    rows = []
    for n in sizes:
        for s in range(1, n // 2 + 1):
            if n % s:
                continue
            m = n // s
            for h in range(0, 2 * m + 1):
                oracle = noise_autocorr_oracle(n, s, h)
                kernel = autocorr_weight(h, m, exact=True)
                rows.append(
                    {
                        "N": n,
                        "S": s,
                        "M": m,
                        "h": h,
                        "oracle": str(oracle),
                        "kernel": str(kernel),
                        "match": oracle == kernel,
                    }
                )
    return rows


def scale_rows(sizes=KERNEL_SIZES) -> list[dict]:
    rows = []
    for n in sizes:
        for s in range(1, n + 1):
            if n % s:
                continue
            oracle = noise_scale_oracle(n, s)
            rows.append(
                {
                    "N": n,
                    "S": s,
                    "oracle": str(oracle),
                    "noise_factor": Hyperparams(1.0, 0.0, s, n).noise_factor,
                    "match": oracle == Fraction(n - s, n * s),
                }
            )
    return rows


class OracleCheckExperiment(ExperimentHandler):
    """Exact theory vs truncated summation, and the lag kernel vs enumeration."""

    name = "oracle-check"
    description = "Closed forms vs Lyapunov summation and combinatorial enumeration"
    outputs = ("oracle_check.csv", "oracle_kernel.csv", "oracle_scale.csv")

    def run(self, context: ExperimentContext) -> dict:
        config = context.config
        eta = config.hyperparams.eta
        sweep = config.sweep
        tasks = [
            (eta, beta, M, resolve_eta_lambda(value, beta))
            for beta in sweep.betas
            for M in sweep.batches_per_epoch
            for value in sweep.eta_lambdas
        ]
        logger.run_event(self.name, f"{len(tasks)} grid points")
        rows = map_tasks(check_point, tasks, config.experiment.workers)
        header = {"kind": self.name, "eta": eta}
        context.writer.write_csv("oracle_check.csv", STATIONARY_COLUMNS, rows, header=header)

        kernels = kernel_rows()
        context.writer.write_csv("oracle_kernel.csv", KERNEL_COLUMNS, kernels, header=header)
        scales = scale_rows()
        context.writer.write_csv("oracle_scale.csv", SCALE_COLUMNS, scales, header=header)

        worst = max(rows, key=lambda r: r["rel_error"]) if rows else None
        if worst is not None:
            logger.numeric(
                "max relative error",
                worst["rel_error"],
                f"beta={worst['beta']}, M={worst['M']}, eta*lam={worst['eta_lambda']:g}",
            )
        return {
            "grid_points": len(rows),
            "max_rel_error": max((r["rel_error"] for r in rows), default=0.0),
            "max_rel_error_uncorrelated": max(
                (r["rel_error_uncorrelated"] for r in rows), default=0.0
            ),
            "kernel_rows": len(kernels),
            "kernel_mismatches": sum(1 for r in kernels if not r["match"]),
            "scale_mismatches": sum(1 for r in scales if not r["match"]),
        }
