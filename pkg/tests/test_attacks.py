"""Unit tests for attack injectors, reconstruction and the exposure audit."""

from __future__ import annotations

import numpy as np
import numpy.testing as npt
import pytest

from ledgerfl.core.attacks import (
    SCENARIOS,
    AttackKind,
    AttackPlan,
    BoundaryTag,
    GmlReport,
    GmlVerdict,
    TraceEntry,
    build_attack_plan,
    co_selected,
    collude,
    exposure_audit,
    gml_verdict,
    inference_advantage,
    membership_inference,
    poison_data,
    poison_model,
    reconstruct_gml,
    scenario_kinds,
    summarize_reports,
    victim_batch,
)
from ledgerfl.core.errors import AuditError, DomainError, PlanError
from ledgerfl.core.models import Dataset, ModelSchema, ParamVector
from ledgerfl.core.numerics import loss_and_grad
from ledgerfl.crypto.base import KeyMaterial, encrypt_vector


class TestAttackPlan:
    """Tests for AttackPlan and build_attack_plan."""

    def test_malicious_count(self) -> None:
        """Test round(μ · n) attackers."""
        plan = build_attack_plan(10, 0.3, [AttackKind.MODEL_POISON_NOISE], seed=1)
        assert len(plan.malicious) == 3
        assert plan.poisons
        some = next(iter(plan.malicious))
        assert plan.attacks(some, AttackKind.MODEL_POISON_NOISE)
        assert not plan.attacks(some, AttackKind.DATA_POISON_NOISE)

    def test_colluders_are_the_malicious_set(self) -> None:
        """Test that collusion plans coordinate every attacker."""
        plan = build_attack_plan(10, 0.4, [AttackKind.WITHIN_UPDATE_COLLUDE], seed=2)
        assert plan.colluders == tuple(sorted(plan.malicious))

    def test_single_colluder_raises(self) -> None:
        """Test that collusion with one attacker raises PlanError."""
        with pytest.raises(PlanError):
            build_attack_plan(10, 0.1, [AttackKind.WITHIN_UPDATE_COLLUDE], seed=0)

    def test_invalid_fraction_raises(self) -> None:
        """Test that μ outside [0, 1] raises PlanError."""
        with pytest.raises(PlanError):
            AttackPlan(fraction=1.5)

    def test_inference_only_plan_does_not_poison(self) -> None:
        """Test the poisons flag for non-poisoning kinds."""
        plan = build_attack_plan(10, 0.5, [AttackKind.MEMBERSHIP_INFERENCE], seed=0)
        assert not plan.poisons

    def test_scenarios(self) -> None:
        """Test the scenario presets."""
        assert len(SCENARIOS) == 8
        assert scenario_kinds(8) == frozenset(AttackKind)
        assert scenario_kinds(1) == frozenset({AttackKind.DATA_POISON_NOISE})
        with pytest.raises(PlanError):
            scenario_kinds(9)


class TestPoisoning:
    """Tests for the poisoning injectors."""

    def test_poison_data_keeps_labels(self, blobs: Dataset) -> None:
        """Test that only features change."""
        noisy = poison_data(blobs, 2.0, seed=0)
        npt.assert_array_equal(noisy.labels, blobs.labels)
        assert not np.allclose(noisy.features, blobs.features)

    def test_zero_sigma_is_identity(self, blobs: Dataset, random_params: ParamVector) -> None:
        """Test that σ = 0 returns the input."""
        assert poison_data(blobs, 0.0, seed=0) is blobs
        assert poison_model(random_params, 0.0, seed=0) is random_params

    def test_poison_model_noise_level(self) -> None:
        """Test the empirical std of the injected noise."""
        big = ModelSchema.mlp(20, [40], 10)
        noisy = poison_model(ParamVector.zeros(big), 3.0, seed=1)
        assert noisy.values.std() == pytest.approx(3.0, rel=0.1)

    def test_negative_sigma_raises(self, random_params: ParamVector) -> None:
        """Test that a negative std raises DomainError."""
        with pytest.raises(DomainError):
            poison_model(random_params, -1.0, seed=0)


class TestCollusion:
    """Tests for collude."""

    def test_shared_direction_own_norm(
        self, logistic_schema: ModelSchema, random_params: ParamVector
    ) -> None:
        """Test that colluders point the same way and keep their norms."""
        rng = np.random.default_rng(0)
        updates = {i: ParamVector.random(logistic_schema, rng) for i in (1, 4)}
        out = collude(updates, random_params, selected=[1, 2, 4])
        for i, update in out.items():
            assert update.norm() == pytest.approx(updates[i].norm())
            cosine = update.values @ random_params.values / (update.norm() * random_params.norm())
            assert cosine == pytest.approx(1.0)

    def test_absent_colluder_raises(self, random_params: ParamVector) -> None:
        """Test that a colluder outside Δc raises PlanError."""
        with pytest.raises(PlanError):
            collude({1: random_params, 4: random_params}, random_params, selected=[1])

    def test_one_colluder_raises(self, random_params: ParamVector) -> None:
        """Test that a single colluder raises PlanError."""
        with pytest.raises(PlanError):
            collude({1: random_params}, random_params, selected=[1])

    def test_zero_target_raises(self, random_params: ParamVector) -> None:
        """Test that a zero direction raises DomainError."""
        with pytest.raises(DomainError):
            collude({1: random_params, 2: random_params}, random_params.scaled(0.0), [1, 2])

    def test_co_selected(self) -> None:
        """Test the co-selection check."""
        assert co_selected([1, 2], [0, 1, 2])
        assert not co_selected([1, 5], [0, 1, 2])


class TestMembershipInference:
    """Tests for the confidence attack."""

    def test_uniform_model_never_guesses_member(
        self, logistic_schema: ModelSchema, blobs: Dataset
    ) -> None:
        """Test that 50% confidence stays below a 0.9 threshold."""
        zero = ParamVector.zeros(logistic_schema)
        assert not membership_inference(zero, blobs.features, 0.9).any()
        assert inference_advantage(zero, blobs, blobs) == 0.0

    def test_invalid_threshold_raises(self, random_params: ParamVector, blobs: Dataset) -> None:
        """Test that a threshold outside (0, 1] raises DomainError."""
        with pytest.raises(DomainError):
            membership_inference(random_params, blobs.features, 0.0)


class TestReconstruction:
    """Tests for the gradient-matching reconstruction."""

    def test_true_sample_is_deep_leakage(
        self, random_params: ParamVector, blobs: Dataset
    ) -> None:
        """Test that starting from the victim sample gives a near-zero GML."""
        batch = victim_batch(blobs, 3)
        grad = loss_and_grad(random_params, batch)[1]
        one_hot = np.eye(2)[batch.labels]
        report = reconstruct_gml(grad, random_params, iters=5, init=(batch.features, one_hot))
        assert report.verdict is GmlVerdict.DEEP_LEAKAGE
        assert report.gml is not None and report.gml < 1e-6

    def test_random_start_reports_a_loss(
        self, random_params: ParamVector, blobs: Dataset
    ) -> None:
        """Test that a random start produces a finite GML and iteration count."""
        grad = loss_and_grad(random_params, victim_batch(blobs))[1]
        report = reconstruct_gml(grad, random_params, iters=20, seed=1)
        assert report.gml is not None and np.isfinite(report.gml)
        assert report.verdict is gml_verdict(report.gml)

    @pytest.mark.slow
    def test_random_starts_leak_a_single_sample(
        self, random_params: ParamVector, blobs: Dataset
    ) -> None:
        """Test that random starts recover a plaintext single-sample gradient within 300 steps."""
        grad = loss_and_grad(random_params, victim_batch(blobs))[1]
        single = [reconstruct_gml(grad, random_params, iters=300, seed=s) for s in range(5)]
        assert sum(r.verdict is GmlVerdict.DEEP_LEAKAGE for r in single) >= 3
        for seed in range(5):
            report = reconstruct_gml(grad, random_params, iters=300, seed=seed, restarts=4)
            assert report.verdict is GmlVerdict.DEEP_LEAKAGE

    def test_restarts_never_do_worse(self, random_params: ParamVector, blobs: Dataset) -> None:
        """Test that extra restarts keep the best loss of the first attempt."""
        grad = loss_and_grad(random_params, victim_batch(blobs))[1]
        once = reconstruct_gml(grad, random_params, iters=10, seed=4)
        more = reconstruct_gml(grad, random_params, iters=10, seed=4, restarts=3)
        assert once.gml is not None and more.gml is not None
        assert more.gml <= once.gml

    def test_zero_restarts_raise(self, random_params: ParamVector, blobs: Dataset) -> None:
        """Test that restarts below one raise DomainError."""
        grad = loss_and_grad(random_params, victim_batch(blobs))[1]
        with pytest.raises(DomainError):
            reconstruct_gml(grad, random_params, restarts=0)

    def test_ciphertext_is_blocked(
        self, exact_key: KeyMaterial, random_params: ParamVector
    ) -> None:
        """Test that an encrypted update cannot be attacked."""
        sealed = encrypt_vector(exact_key, random_params.values)
        report = reconstruct_gml(sealed, random_params)
        assert report == GmlReport(None, 0, GmlVerdict.BLOCKED)

    def test_zero_gradient_raises(self, random_params: ParamVector) -> None:
        """Test that a zero target raises DomainError."""
        with pytest.raises(DomainError):
            reconstruct_gml(random_params.scaled(0.0), random_params)

    def test_verdict_threshold(self) -> None:
        """Test the 0.15 leakage threshold."""
        assert gml_verdict(0.15) is GmlVerdict.DEEP_LEAKAGE
        assert gml_verdict(0.16) is GmlVerdict.NO_LEAK

    def test_summarize_reports(self) -> None:
        """Test the per-run reconstruction summary."""
        reports = [
            GmlReport(None, 0, GmlVerdict.BLOCKED),
            GmlReport(0.1, 4, GmlVerdict.DEEP_LEAKAGE),
            GmlReport(0.5, 9, GmlVerdict.NO_LEAK),
        ]
        assert summarize_reports(reports) == {
            "count": 3,
            "blocked": 1,
            "leaks": 1,
            "min_gml": 0.1,
        }


class TestExposureAudit:
    """Tests for the server-boundary audit."""

    @staticmethod
    def _entry(role: str, tag: BoundaryTag, item: str = "gradient") -> TraceEntry:
        return TraceEntry(0, role, 0, 3, item, tag, individual=True)

    def test_ciphertext_passes(self) -> None:
        """Test that encrypted individual updates are not violations."""
        report = exposure_audit([self._entry("leader_miner", BoundaryTag.CIPHERTEXT)])
        assert report.passed
        assert report.entries == 1

    def test_plaintext_gradient_at_miner_fails(self) -> None:
        """Test that a miner seeing a plaintext gradient is flagged."""
        entry = self._entry("simple_miner", BoundaryTag.PLAINTEXT)
        report = exposure_audit([entry])
        assert not report.passed
        assert report.violations == [entry]

    def test_aggregates_and_non_miners_pass(self) -> None:
        """Test that validators and aggregate values are not violations."""
        entries = [
            self._entry("validator", BoundaryTag.PLAINTEXT),
            TraceEntry(0, "leader_miner", 0, -1, "parameters", BoundaryTag.PLAINTEXT, False),
        ]
        assert exposure_audit(entries).passed

    def test_accepts_dict_entries(self) -> None:
        """Test auditing a deserialized trace."""
        entry = self._entry("leader_miner", BoundaryTag.PLAINTEXT, "parameters")
        assert not exposure_audit([entry.to_dict()]).passed

    def test_malformed_entry_raises(self) -> None:
        """Test that a row missing fields raises AuditError."""
        with pytest.raises(AuditError):
            exposure_audit([{"round": 0}])
