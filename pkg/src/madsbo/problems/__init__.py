"""Problem zoo and the name registry used by configs."""
from .dsco import (ConstantMap, DscoAdapter, LinearMap, SquaredDistance, TanhMap,
                   dsco_linear_instance, dsco_wrap)
from .logreg import LogRegData, LogRegHyper, gen_synthetic_logreg, load_csv, save_csv
from .quadratic import QuadraticBilevel, quad_instance, scalar_reference


def _logreg(p=20, n=8, samples_per_node=200, noise_eps=0.1, het_rate=1.0, seed=0,
            batch=1, data_dir=None, lam_min=-5.0):
    if data_dir:
        data = load_csv(data_dir, n)
    else:
        data = gen_synthetic_logreg(p, n, samples_per_node, noise_eps, het_rate, seed)
    return LogRegHyper(data, batch=batch, lam_min=lam_min)


PROBLEMS = {
    "quadratic": quad_instance,
    "scalar": scalar_reference,
    "logreg": _logreg,
    "dsco-linear": dsco_linear_instance,
    "dsco-tanh": lambda **kw: dsco_linear_instance(nonlinear=True, **kw),
}


def make_problem(name: str, **params):
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}") from None
    return factory(**params)


__all__ = [
    "ConstantMap", "DscoAdapter", "LinearMap", "LogRegData", "LogRegHyper", "PROBLEMS",
    "QuadraticBilevel", "SquaredDistance", "TanhMap", "dsco_linear_instance", "dsco_wrap",
    "gen_synthetic_logreg", "load_csv", "make_problem", "quad_instance", "save_csv",
    "scalar_reference",
]
