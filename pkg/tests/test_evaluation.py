import json

import numpy as np
import pytest

from conceptcf import errors
from conceptcf.bank import ConceptBank
from conceptcf.core import make_rng
from conceptcf.evaluation import (
    EvalReport,
    GroundTruthFindings,
    coverage,
    latency_report,
    load_ground_truth,
    recall_at_k,
    render_recall_table,
    score_rankings,
    top1_sanity,
    top1_sanity_world,
)
from conceptcf.perturbation import ExplanationResult
from conceptcf.synth import gen_world


def result(flipped):
    return ExplanationResult(
        w=np.zeros(2), flipped=flipped, steps_used=1 if flipped else 100,
        initial_logits=np.array([1.0, 0.0]),
        final_logits=np.array([0.0, 1.0]) if flipped else np.array([1.0, 0.0]),
        target_class="Pathology", target_index=1, loss_trace=(0.1,),
    )


class TestRecallAtK:
    def test_half(self):
        assert recall_at_k(["A", "x", "y", "z", "q"], ["A", "B"], 5) == 0.5

    def test_singleton_in_top10(self):
        ranking = [f"c{i}" for i in range(9)] + ["target"]
        assert recall_at_k(ranking, ["target"], 10) == 1.0

    def test_zero(self):
        assert recall_at_k(["a", "b", "c"], ["missing"], 3) == 0.0

    def test_full_bank_cutoff_reaches_one(self):
        names = [f"c{i}" for i in range(12)]
        gt = ["c3", "c7", "c11"]
        assert recall_at_k(names, gt, 12) == 1.0

    def test_monotone_in_k(self):
        rng = make_rng(1)
        names = [f"c{i}" for i in range(30)]
        for _ in range(200):
            ranking = list(rng.permutation(names))
            gt = list(rng.choice(names, size=4, replace=False))
            values = [recall_at_k(ranking, gt, k) for k in range(1, 31)]
            assert all(a <= b for a, b in zip(values, values[1:]))
            assert values[-1] == 1.0

    def test_permutation_invariant_ground_truth(self):
        ranking = ["a", "b", "c", "d"]
        assert recall_at_k(ranking, ["d", "a"], 2) == recall_at_k(ranking, ["a", "d"], 2)

    def test_empty_ground_truth(self):
        with pytest.raises(errors.EmptyGroundTruth):
            recall_at_k(["a"], [], 1)

    def test_bad_k(self):
        with pytest.raises(errors.InvalidConfig):
            recall_at_k(["a"], ["a"], 0)


class TestCoverage:
    def test_all_flipped(self):
        assert coverage([result(True)] * 4) == 1.0

    def test_paper_scale_fraction(self):
        results = [result(True)] * 594 + [result(False)] * 6
        assert coverage(results) == pytest.approx(0.99)

    def test_none_flipped(self):
        assert coverage([result(False)] * 3) == 0.0

    def test_filter_closure(self):
        results = [result(True), result(False), result(True)]
        flipped_only = [r for r in results if r.flipped]
        assert coverage(flipped_only) == 1.0

    def test_empty(self):
        with pytest.raises(errors.EmptyList):
            coverage([])


class TestLatency:
    def test_single_sample(self):
        summary = latency_report([0.040])
        assert summary.mean_s == summary.p50_s == summary.p95_s == 0.040

    def test_two_samples_mean(self):
        summary = latency_report([0.010, 0.030])
        assert summary.mean_s == pytest.approx(0.020)

    def test_paper_scale_reference(self):
        # 600 explanations in 30 s imply a 50 ms mean
        summary = latency_report([0.050] * 600)
        assert summary.mean_s == pytest.approx(0.050)
        assert summary.n == 600

    def test_empty(self):
        with pytest.raises(errors.EmptyList):
            latency_report([])


@pytest.fixture(scope="module")
def world():
    return gen_world(d=16, k=16, n_concepts=8, n_instances=60, margin=1.0, seed=404)


class TestTopOneSanity:
    def test_planted_world_rate(self, world):
        fraction = top1_sanity_world(world, n=60)
        assert fraction >= 0.95

    def test_single_concept_bank_rate_equals_coverage(self, world):
        planted = world.planted[1]
        solo = ConceptBank(
            names=(world.bank.names[planted],),
            directions=world.bank.directions[[planted]],
        )
        from conceptcf.perturbation import optimize_perturbation

        pair = world.projector_pair()
        results = [
            optimize_perturbation(f, solo, pair, world.head, 1) for f in world.instances[:20]
        ]
        fraction = top1_sanity(
            world.instances[:20], solo, pair, world.head, 1, world.bank.names[planted]
        )
        assert fraction == coverage(results)

    def test_missing_label_concept(self, world):
        with pytest.raises(errors.MissingLabelConcept):
            top1_sanity(
                world.instances[:2], world.bank, world.projector_pair(), world.head,
                1, "not-a-concept",
            )


class TestGroundTruth:
    def test_loader(self, tmp_path):
        payload = {
            "Cardiomegaly": {
                "primary": ["Increased cardiothoracic ratio"],
                "secondary": ["Pleural Effusion", "Pacemaker"],
            }
        }
        path = tmp_path / "gt.json"
        path.write_text(json.dumps(payload))
        loaded = load_ground_truth(path)
        assert loaded["Cardiomegaly"].primary == ("Increased cardiothoracic ratio",)
        assert len(loaded["Cardiomegaly"].secondary) == 2

    def test_primary_required(self):
        with pytest.raises(errors.EmptyGroundTruth):
            GroundTruthFindings(pathology="X", primary=(), secondary=("a",))


class TestScoreAndRender:
    def test_mean_recall_cells(self):
        gt = {
            "Cardiomegaly": GroundTruthFindings(
                pathology="Cardiomegaly", primary=("A", "B"), secondary=("S",)
            )
        }
        rankings = {
            ("m", "Cardiomegaly"): [
                ["A", "x", "y"],          # primary recall@2 = 0.5
                ["A", "B", "y"],          # primary recall@2 = 1.0
            ]
        }
        cells = score_rankings(rankings, gt, [2])
        primary = next(c for c in cells if c.finding_type == "primary")
        assert primary.mean_recall == pytest.approx(0.75)
        assert primary.n_instances == 2
        secondary = next(c for c in cells if c.finding_type == "secondary")
        assert secondary.mean_recall == 0.0

    def test_no_flips_marked_empty(self):
        gt = {
            "Cardiomegaly": GroundTruthFindings(
                pathology="Cardiomegaly", primary=("A",), secondary=()
            )
        }
        cells = score_rankings({("m", "Cardiomegaly"): []}, gt, [5])
        assert cells[0].n_instances == 0
        assert cells[0].mean_recall is None

    def test_table_renders(self):
        gt = {
            "Cardiomegaly": GroundTruthFindings(
                pathology="Cardiomegaly", primary=("A",), secondary=("S",)
            )
        }
        rankings = {("densenet", "Cardiomegaly"): [["A", "S", "x"]]}
        cells = score_rankings(rankings, gt, [1, 2])
        report = EvalReport(cells=cells, coverage={("densenet", "Cardiomegaly"): {"coverage": 1.0, "n_total": 1}})
        table = render_recall_table(report, [1, 2])
        lines = table.splitlines()
        assert "densenet R@1" in lines[0]
        assert lines[1].startswith("Cardiomegaly")
        assert "1.00" in lines[1]
