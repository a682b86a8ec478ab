import math

import numpy as np
import pytest

from porosplit import fem2d, studies
from porosplit.studies import (EocTable, average_iteration_table,
                               balancing_study, convergence_study,
                               iteration_study)
from porosplit.system import make_toy


@pytest.fixture(scope="module")
def toy():
    return make_toy(2.0)


@pytest.fixture(scope="module")
def biot12():
    return fem2d.manufactured_system(12)


class TestEocTable:
    def test_orders_and_fit(self):
        table = EocTable(taus=[0.4, 0.2, 0.1], errors=[0.8, 0.2, 0.05])
        assert table.pairwise_orders == pytest.approx([2.0, 2.0])
        assert table.fitted_order == pytest.approx(2.0, abs=1e-12)

    def test_requires_halving(self):
        with pytest.raises(ValueError):
            EocTable(taus=[0.4, 0.3], errors=[1.0, 0.5])


class TestConvergenceStudy:
    def test_toy_first_order(self, toy):
        res = convergence_study(toy, 1, [2 ** -e for e in (3, 4, 5)],
                                tol_exponent=2.5, reference="fine-implicit")
        assert 0.85 <= res.eoc.fitted_order <= 1.15

    def test_toy_second_order(self, toy):
        res = convergence_study(toy, 2, [2 ** -e for e in (3, 4, 5)],
                                tol_exponent=3.5, reference="fine-implicit")
        assert 1.8 <= res.eoc.fitted_order <= 2.2

    def test_huge_tolerance_degrades_order(self, toy):
        res = convergence_study(toy, 2, [2 ** -e for e in (3, 4, 5)],
                                fixed_tol=1e6, reference="fine-implicit")
        assert res.eoc.fitted_order < 1.5

    def test_analytic_reference_close_to_fine_implicit(self, toy):
        # agreement is limited by the reference run's own first-order error
        # at tau_min/8, about 1/8 of the measured errors
        taus = [2 ** -e for e in (3, 4)]
        res_a = convergence_study(toy, 1, taus, tol_exponent=2.5,
                                  reference="analytic")
        res_f = convergence_study(toy, 1, taus, tol_exponent=2.5,
                                  reference="fine-implicit")
        for ra, rf in zip(res_a.records, res_f.records):
            assert ra.combined == pytest.approx(rf.combined, rel=0.2)

    def test_csv_schema(self, toy):
        res = convergence_study(toy, 1, [0.25, 0.125], tol_exponent=2.5)
        lines = res.report.to_csv().strip().splitlines()
        assert lines[0] == "k,tau,tol,err_u_V,err_p_H,mode"
        assert len(lines) == 1 + 4  # split + implicit per tau


class TestBalancingStudy:
    def test_monotone_in_exponent_and_flags(self, toy):
        k = 1
        taus = [2 ** -e for e in (3, 4, 5)]
        res = balancing_study(toy, k, taus, [k, k + 0.5, k + 1, k + 1.5,
                                             k + 2])
        for tau in taus:
            # in the converged regime (s >= k+1) tighter tolerances do not
            # increase the error; below it the splitting has not converged
            # and the ordering is noisy
            errs = [res.records[(tau, s)].combined
                    for s in (k + 1, k + 1.5, k + 2)]
            for a, b in zip(errs, errs[1:]):
                assert b <= a * 1.05 + 1e-14
        assert all(res.balanced_ok.values())

    def test_requires_key_exponents(self, toy):
        with pytest.raises(ValueError):
            balancing_study(toy, 1, [0.25, 0.125], [1.0, 2.0])

    def test_csv_schema(self, toy):
        res = balancing_study(toy, 1, [0.25, 0.125], [1.0, 2.5])
        lines = res.report.to_csv().strip().splitlines()
        assert lines[0] == "k,tau,s,error,implicit_error"


class TestIterationStudy:
    def test_trends_and_cells(self):
        taus = [2 ** -e for e in (3, 4, 5)]
        res = iteration_study(1, omegas=[2.0], gammas=[0.5, 0.1], taus=taus)
        # fewer iterations at the stronger contraction, for every tau
        for tau in taus:
            assert (res.cells[(2.0, 0.1, tau)]["rounded"]
                    < res.cells[(2.0, 0.5, tau)]["rounded"])
        # more iterations as tau decreases
        for gamma in (0.5, 0.1):
            counts = [res.cells[(2.0, gamma, tau)]["rounded"] for tau in taus]
            assert all(a <= b for a, b in zip(counts, counts[1:]))

    def test_mean_iterations_nonincreasing_in_stabilization(self):
        # larger L <=> larger gamma here means more iterations; equivalently
        # mean J is non-increasing as gamma (and hence L) decreases
        taus = [0.125]
        res = iteration_study(1, omegas=[2.0], gammas=[0.5, 0.25, 0.1],
                              taus=taus)
        counts = [res.cells[(2.0, g, 0.125)]["mean"] for g in (0.5, 0.25, 0.1)]
        assert counts[0] >= counts[1] >= counts[2]

    def test_csv_schema(self):
        res = iteration_study(1, omegas=[2.0], gammas=[0.5], taus=[0.125])
        lines = res.report.to_csv().strip().splitlines()
        assert lines[0] == "k,omega,gamma,tau,L,mean_Jn"
        assert len(lines) == 2


class TestAverageIterationTable:
    def test_monotone_trends(self, biot12):
        k = 1
        res = average_iteration_table(biot12, k, [2 ** -4, 2 ** -5, 2 ** -6])
        assert res.monotone_in_exponent()
        assert res.monotone_in_tau()

    def test_csv_schema(self, biot12):
        res = average_iteration_table(biot12, 1, [0.0625])
        lines = res.report.to_csv().strip().splitlines()
        assert lines[0] == "k,tau,s,mean_Jn"


class TestSplitImplicitConsistency:
    def test_split_records_reach_implicit_records_at_tiny_tolerance(self, toy):
        res = convergence_study(toy, 1, [0.25, 0.125], fixed_tol=1e-13,
                                reference="fine-implicit")
        by_mode = {}
        for rec in res.records:
            by_mode.setdefault(rec.tau, {})[rec.mode] = rec.combined
        for tau, pair in by_mode.items():
            assert abs(pair["split"] - pair["implicit"]) <= 1e-9

    def test_balancing_baseline_matches_convergence_implicit_rows(self, toy):
        taus = [0.25, 0.125]
        conv = convergence_study(toy, 1, taus, tol_exponent=2.5,
                                 reference="fine-implicit")
        bal = balancing_study(toy, 1, taus, [1.0, 2.5])
        conv_impl = {r.tau: r.combined for r in conv.records
                     if r.mode == "implicit"}
        for tau in taus:
            assert bal.implicit_errors[tau] == conv_impl[tau]


class TestIterationMagnitudes:
    def test_balanced_tolerance_iteration_scale(self):
        # reference-table scale: about 5 inner iterations at tau = 2^-4
        # growing toward about 8 at 2^-9 for first order
        sys12 = fem2d.manufactured_system(12)
        taus = [2.0 ** -e for e in (4, 6, 9)]
        res = average_iteration_table(sys12, 1, taus, exponents=(2.5,))
        coarse = res.cells[(2.5, taus[0])]
        fine = res.cells[(2.5, taus[-1])]
        assert 3.0 <= coarse <= 7.0
        assert 6.0 <= fine <= 10.0
        assert fine >= coarse


class TestDeterminism:
    def test_repeat_runs_identical(self, toy):
        res1 = convergence_study(toy, 1, [0.25, 0.125], tol_exponent=2.5)
        res2 = convergence_study(toy, 1, [0.25, 0.125], tol_exponent=2.5)
        assert res1.report.to_csv() == res2.report.to_csv()

    def test_threads_do_not_change_output(self, toy):
        res1 = convergence_study(toy, 1, [0.25, 0.125], tol_exponent=2.5,
                                 threads=1)
        res4 = convergence_study(toy, 1, [0.25, 0.125], tol_exponent=2.5,
                                 threads=4)
        assert res1.report.to_csv() == res4.report.to_csv()
