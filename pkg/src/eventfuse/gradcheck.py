"""Central finite-difference checking of tape gradients.

The checker is the independent oracle for every differentiable path in the
package: it re-evaluates the loss with each parameter coordinate nudged by
±h and compares the two-sided slope against the tape gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericsError, Tape


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    max_abs_err: float
    n_checked: int


@dataclass
class GradCheckReport:
    passed: bool
    tol: float
    max_rel_err: float
    worst_param: str
    worst_index: int
    params: list = field(default_factory=list)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tol:.1e}) at {self.worst_param}[{self.worst_index}]"
        )


def _rel_err(a, b, atol):
    abs_err = abs(a - b)
    if abs_err <= atol:
        return 0.0
    return abs_err / max(abs(a), abs(b), 1e-6)


def grad_check(
    f,
    params,
    h=1e-5,
    tol=1e-4,
    atol=1e-9,
    names=None,
    sample=None,
    rng=None,
):
    """Compare tape gradients of scalar-valued f() against central differences.

    f must be deterministic and must read the current .data of each Tensor in
    params. When sample is given, at most that many coordinates per parameter
    are checked (chosen by rng); otherwise every coordinate is swept.
    """
    if not (1e-6 <= h <= 1e-4):
        raise ValueError(f"step h must lie in [1e-6, 1e-4], got {h}")
    params = list(params)
    if names is None:
        names = [f"param{i}" for i in range(len(params))]

    with Tape() as tape:
        out = f()
        if out.size != 1:
            raise ValueError(f"grad_check needs a scalar loss, got shape {out.shape}")
        tape.backward(out)
    analytic = []
    for p in params:
        g = tape.grad(p)
        analytic.append(np.zeros_like(p.data) if g is None else g)

    if sample is not None and rng is None:
        rng = np.random.default_rng(0)

    report = GradCheckReport(
        passed=True, tol=tol, max_rel_err=0.0, worst_param="", worst_index=-1
    )
    for p, g, name in zip(params, analytic, names):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        idx = np.arange(flat.size)
        if sample is not None and flat.size > sample:
            idx = np.sort(rng.choice(flat.size, size=sample, replace=False))
        max_rel = 0.0
        max_abs = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            f_plus = f().item()
            flat[j] = orig - h
            f_minus = f().item()
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericsError(
                    f"non-finite loss at perturbed point {name}[{j}]"
                )
            fd = (f_plus - f_minus) / (2.0 * h)
            rel = _rel_err(gflat[j], fd, atol)
            max_abs = max(max_abs, abs(gflat[j] - fd))
            if rel > max_rel:
                max_rel = rel
            if rel > report.max_rel_err:
                report.max_rel_err = rel
                report.worst_param = name
                report.worst_index = int(j)
        report.params.append(ParamCheck(name, max_rel, max_abs, len(idx)))
    report.passed = report.max_rel_err <= tol
    return report
