import json

import pandas as pd
import pytest

from cbsr.core.config import SolverSettings
from cbsr.core.errors import ConfigError
from cbsr.enums.design import SimDesign
from cbsr.enums.fitter_kind import FitterKind
from cbsr.enums.kernel_kind import KernelKind
from cbsr.estimation.pipeline import MethodConfig
from cbsr.fitting.kernel import Kernel
from cbsr.simulate.generators import SimSpec
from cbsr.simulate.replications import (
    STOP_LATE_CV,
    ReplicateRecord,
    aggregate,
    highdim_methods,
    kernel_methods,
    run_replications,
    write_metrics_csv,
    write_metrics_json,
)

GLM_ATT = MethodConfig(name="glm", fitter=FitterKind.GLM, estimand="att")
ORACLE_ATE = MethodConfig(name="oracle", fitter=FitterKind.ORACLE, estimand="ate")


@pytest.fixture
def highdim_cell() -> SimSpec:
    return SimSpec.highdim(rho=1.0, s_t=2, s_y=2, n=200, d=10, sigma=1.0)


class TestRunner:
    def test_kang_schafer_smoke(self):
        result = run_replications(
            SimSpec.kang_schafer(200), [GLM_ATT, ORACLE_ATE], replicates=2, seed=1
        )
        assert [m.method for m in result.metrics] == ["glm", "oracle"]
        assert len(result.records) == 4
        for row in result.metrics:
            assert row.replicates == 2
            assert row.rmse is not None and row.rmse >= 0

    def test_results_do_not_depend_on_threads(self):
        spec = SimSpec.kang_schafer(100)
        runs = [
            run_replications(
                spec, [GLM_ATT], replicates=4, seed=3, settings=SolverSettings(threads=threads)
            )
            for threads in (1, 2)
        ]
        assert runs[0].records == runs[1].records

    def test_honest_intervals_with_oracle_norm(self, highdim_cell):
        method = MethodConfig(name="ridge", fitter=FitterKind.L2, estimand="att", lambda_=0.05)
        result = run_replications(highdim_cell, [method], replicates=2, seed=0)
        for record in result.records:
            assert record.failure is None
            assert record.honest_half_width > record.naive_half_width
            assert record.max_bias >= 0
        assert result.metrics[0].ci_ratio > 1

    def test_constant_norm_limit(self, highdim_cell):
        method = MethodConfig(name="ridge", fitter=FitterKind.L2, estimand="att", lambda_=0.05)
        result = run_replications(
            highdim_cell, [method], replicates=2, seed=0, norm_cl_mode="constant", norm_cl=2.0
        )
        assert all(r.honest_half_width is not None for r in result.records)

    def test_failure_is_recorded(self, highdim_cell):
        convex = MethodConfig(name="convex", fitter=FitterKind.GLM, estimand="custom:0.5,0.5")
        result = run_replications(highdim_cell, [convex, GLM_ATT], replicates=2, seed=0)
        failed, fine = result.metrics
        assert failed.n_failed == 2 and failed.flagged and failed.rmse is None
        assert all(r.failure.startswith("NonConcaveRule") for r in result.records[::2])
        assert fine.n_failed == 0


class TestValidation:
    def test_duplicate_labels(self):
        with pytest.raises(ConfigError):
            run_replications(SimSpec.kang_schafer(), [GLM_ATT, GLM_ATT], replicates=2, seed=0)

    def test_too_few_replicates(self):
        with pytest.raises(ConfigError):
            run_replications(SimSpec.kang_schafer(), [GLM_ATT], replicates=1, seed=0)

    def test_constant_mode_needs_value(self):
        with pytest.raises(ConfigError):
            run_replications(
                SimSpec.kang_schafer(), [GLM_ATT], replicates=2, seed=0, norm_cl_mode="constant"
            )


class TestAggregate:
    @staticmethod
    def _records(failures: int) -> list[ReplicateRecord]:
        ok = [
            ReplicateRecord(
                replicate=r, method="m", tau_hat=e, error=e, naive_half_width=1.0, naive_covers=True
            )
            for r, e in enumerate([0.1, -0.3, 0.2, 0.0, 0.4, -0.1, 0.3, -0.2, 0.1, 0.2])
        ]
        failed = [
            ReplicateRecord(replicate=r, method="m", failure="Separated") for r in range(failures)
        ]
        return ok[: 10 - failures] + failed

    def test_one_failure_in_ten_is_not_flagged(self):
        row = aggregate("cell", "m", self._records(1))
        assert row.n_failed == 1 and not row.flagged

    def test_two_failures_in_ten_are_flagged(self):
        row = aggregate("cell", "m", self._records(2))
        assert row.n_failed == 2 and row.flagged

    def test_error_summaries(self):
        row = aggregate("cell", "m", self._records(0))
        assert row.bias == pytest.approx(0.07)
        assert row.mean_abs_error == pytest.approx(0.19)
        assert row.coverage_naive == 1.0
        assert row.coverage_honest is None


class TestPresets:
    def test_highdim_methods(self):
        labels = [m.label for m in highdim_methods()]
        assert labels == ["IPW", "AIPW-L", "AIPW-R"]

    def test_kernel_methods(self):
        methods = kernel_methods([Kernel(), Kernel(sigma=0.1)], 1.2, augment=True)
        assert len(methods) == 4
        assert len({m.label for m in methods}) == 4


class TestOutput:
    def test_csv_and_json(self, tmp_path):
        result = run_replications(SimSpec.kang_schafer(100), [GLM_ATT], replicates=2, seed=5)
        write_metrics_csv([result], tmp_path / "metrics.csv")
        write_metrics_json([result], tmp_path / "metrics.json")

        frame = pd.read_csv(tmp_path / "metrics.csv")
        assert list(frame["method"]) == ["glm"]
        payload = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
        assert payload[0]["seed"] == 5
        assert payload[0]["spec"]["design"] == "kang_schafer"


@pytest.mark.slow
@pytest.mark.parametrize(
    ("s_y", "rho", "s_t", "dense"),
    [(50, 1.0, 50, True), (5, 2.0, 5, False)],
)
def test_honest_coverage_in_highdim_cells(s_y, rho, s_t, dense):
    spec = SimSpec.highdim(rho=rho, s_t=s_t, s_y=s_y, n=400, d=50)
    ipw = highdim_methods()[0]
    result = run_replications(spec, [ipw], replicates=200, seed=11)
    row = result.metrics[0]

    assert not row.flagged
    assert row.coverage_honest >= 0.95
    assert row.ci_ratio > 1
    if dense:
        assert row.coverage_naive <= 0.5


LOWDIM_KERNELS = [
    Kernel(kind=KernelKind.LAPLACE, sigma=0.1),
    Kernel(kind=KernelKind.LAPLACE, sigma=1.0),
    Kernel(kind=KernelKind.POLYNOMIAL, degree=1),
    Kernel(kind=KernelKind.POLYNOMIAL, degree=3),
    Kernel(kind=KernelKind.GAUSSIAN, sigma=0.1),
    Kernel(kind=KernelKind.GAUSSIAN, sigma=1.0),
]


@pytest.mark.slow
@pytest.mark.parametrize("g_index", [0, 2])
def test_matching_kernel_has_lowest_bias(g_index):
    kernel_g = LOWDIM_KERNELS[g_index]
    spec = SimSpec(design=SimDesign.GP_LOWDIM, n=400, kernel_g=kernel_g)
    methods = kernel_methods(LOWDIM_KERNELS, STOP_LATE_CV, "ate")
    result = run_replications(spec, methods, replicates=30, seed=21)
    bias = {row.method: row.bias for row in result.metrics if row.bias is not None}

    matched = bias.pop(f"{kernel_g}/ipw")
    assert matched <= 1.2 * min(bias.values())
