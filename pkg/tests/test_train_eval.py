import numpy as np
import pytest

from modalkd import tensor_core as tc
from modalkd.distill_losses import DistillConfig, OptimizerKind, RelationMode, total_distill_loss
from modalkd.errors import ParameterError
from modalkd.modal_models import ActivationSource, ModalityMode, new_modal_net, serialize
from modalkd.synth_data import Dataset, ModalSample, generate, ground_truth_rule, split
from modalkd.train_eval import (
    PUBLISHED_TABLE,
    SGD,
    compare_kd_vs_mr,
    distill_student,
    evaluate,
    linear_probe_accuracy,
    train_teacher,
)

SMALL = DistillConfig(epochs=3, hidden_dim=8, teacher_depth=2, batch_size=16)


@pytest.fixture(scope="module")
def parts():
    return split(generate(200, 4, 4, 3, 0.1, seed=0), (0.8, 0.1, 0.1), seed=0)


@pytest.fixture(scope="module")
def teacher(parts):
    train, val, _ = parts
    net, _ = train_teacher(train, val, SMALL)
    return net


def test_config_rejects_zero_epochs():
    with pytest.raises(ParameterError):
        DistillConfig(epochs=0)


def test_teacher_training_is_deterministic(parts):
    train, val, _ = parts
    a, ra = train_teacher(train, val, SMALL)
    b, rb = train_teacher(train, val, SMALL)
    assert serialize(a) == serialize(b)
    assert ra.to_document() == rb.to_document()


def test_teacher_reaches_high_accuracy_on_clean_data():
    train, val, _ = split(generate(2000, 4, 4, 3, 0.0, seed=0), (0.8, 0.1, 0.1), seed=0)
    net, report = train_teacher(train, val, DistillConfig(epochs=50))
    assert report.val_accuracy >= 0.90
    assert evaluate(net, val) == report.val_accuracy
    assert report.records[report.best_epoch].val_accuracy == report.val_accuracy


def test_teacher_report_has_no_distillation_terms(parts):
    train, val, _ = parts
    _, report = train_teacher(train, val, SMALL)
    assert len(report.records) == SMALL.epochs + 1
    assert all(r.loss_kd == 0.0 and r.loss_mr == 0.0 for r in report.records)
    assert report.config.lambda_kd == 0.0 and report.config.lambda_mr == 0.0


def test_epoch_zero_ce_and_kd_do_not_depend_on_lambda_mr(parts, teacher):
    train, val, _ = parts
    _, r0, _ = distill_student(teacher, train, val, SMALL.replace(lambda_mr=0.0))
    _, r1, _ = distill_student(teacher, train, val, SMALL.replace(lambda_mr=1.0))
    assert r0.records[0].loss_ce == r1.records[0].loss_ce
    assert r0.records[0].loss_kd == r1.records[0].loss_kd
    assert r0.records[0].loss_mr == r1.records[0].loss_mr > 0.0


@pytest.mark.parametrize("mode", list(RelationMode))
def test_student_equal_to_teacher_starts_at_zero(parts, teacher, mode):
    train, val, _ = parts
    cfg = SMALL.replace(relation_mode=mode, student_depth=SMALL.teacher_depth)
    _, report, trace = distill_student(teacher, train, val, cfg, student=teacher)
    assert report.records[0].loss_kd == 0.0
    assert report.records[0].loss_mr == 0.0
    assert trace.records[0].frobenius_distance == 0.0


@pytest.mark.parametrize(
    "cfg",
    [
        SMALL,
        SMALL.replace(lambda_kd=0.3, lambda_mr=2.5, relation_mode=RelationMode.RAW_ACTIVATIONS),
        SMALL.replace(relation_source=ActivationSource.LOGITS, normalize_rows=False, optimizer=OptimizerKind.SGD),
    ],
)
def test_loss_decomposition_holds_every_epoch(parts, teacher, cfg):
    train, val, _ = parts
    _, report, _ = distill_student(teacher, train, val, cfg)
    for r in report.records:
        recombined = r.loss_ce + cfg.lambda_kd * r.loss_kd + cfg.lambda_mr * r.loss_mr
        assert abs(r.train_loss_total - recombined) <= 1e-9


def test_teacher_is_not_modified(parts, teacher):
    train, val, _ = parts
    before = serialize(teacher)
    distill_student(teacher, train, val, SMALL)
    assert serialize(teacher) == before


def test_relation_trace_invariants(parts, teacher):
    train, val, _ = parts
    _, _, trace = distill_student(teacher, train, val, SMALL)
    assert [r.epoch for r in trace.records] == list(range(SMALL.epochs + 1))
    assert trace.probe_size == len(val)
    for r in trace.records:
        np.testing.assert_array_equal(r.abs_distance, np.abs(r.gram_teacher - r.gram_student))
        assert r.frobenius_distance == pytest.approx(np.sqrt(np.sum(r.abs_distance**2)), rel=1e-14)
        assert r.frobenius_distance >= 0.0
        np.testing.assert_array_equal(r.gram_teacher, trace.records[0].gram_teacher)
        for g in (r.gram_teacher, r.gram_student):
            np.testing.assert_allclose(g, g.T, atol=1e-12)
    assert trace.at_epoch(2) is trace.records[2]
    with pytest.raises(KeyError):
        trace.at_epoch(99)


def test_probe_is_capped_at_64_samples(teacher):
    train, val, _ = split(generate(1000, 4, 4, 3, 0.1, seed=1), (0.8, 0.1, 0.1), seed=1)
    _, _, trace = distill_student(teacher, train, val, SMALL.replace(epochs=1))
    assert trace.probe_size == 64


def _perfect_net():
    # logits = [relu(t0), relu(-t0)], so class 1 wins exactly when t0 < 0
    net = new_modal_net(2, 2, 4, 2, depth=1, seed=0)
    w0 = np.zeros((6, 4))
    w0[0, 0], w0[0, 1] = 1.0, -1.0
    net.layers[0].weight.data[...] = w0
    w1 = np.zeros((4, 2))
    w1[0, 0], w1[1, 1] = 1.0, 1.0
    net.layers[1].weight.data[...] = w1
    return net


def test_evaluate_examples():
    net = _perfect_net()
    rng = np.random.default_rng(0)
    samples = []
    for _ in range(40):
        t = rng.normal(size=2)
        samples.append(ModalSample(t, rng.normal(size=2), int(t[0] < 0)))
    ds = Dataset(samples, 2, 2, 2)
    assert evaluate(net, ds) == 1.0
    flipped = Dataset([ModalSample(s.text_feats, s.image_feats, 1 - s.label) for s in samples], 2, 2, 2)
    assert evaluate(net, flipped) == 0.0
    shuffled = ds.subset(rng.permutation(len(ds)))
    assert evaluate(net, shuffled) == evaluate(net, ds)


def test_evaluate_constant_logits_predicts_class_zero():
    net = new_modal_net(4, 4, 6, 3, depth=1, seed=0)
    for p in net.parameters():
        p.data[...] = 0.0
    ds = generate(300, 4, 4, 3, 0.1, seed=0)
    assert evaluate(net, ds) == pytest.approx(np.mean(ds.labels == 0))
    assert evaluate(net, ds) == pytest.approx(1 / 3, abs=0.01)


def test_small_sgd_step_decreases_loss():
    decreased = 0
    for k in range(20):
        rng = np.random.default_rng(k)
        teacher = new_modal_net(3, 3, 6, 3, 2, seed=100 + k).requires_grad_(False)
        student = new_modal_net(3, 3, 6, 3, 1, seed=200 + k)
        batch = [ModalSample(rng.normal(size=3), rng.normal(size=3), int(rng.integers(3))) for _ in range(8)]
        cfg = DistillConfig()
        before, _ = total_distill_loss(teacher, student, batch, cfg)
        tc.backward(before)
        SGD(student.parameters(), 1e-4).step()
        after, _ = total_distill_loss(teacher, student, batch, cfg)
        decreased += after.item() < before.item()
    assert decreased >= 19


def test_compare_single_seed(parts):
    ds = generate(200, 4, 4, 3, 0.1, seed=0)
    table = compare_kd_vs_mr(ds, SMALL.replace(lambda_mr=0.0), num_seeds=1)
    assert [r.arm for r in table.rows] == ["KD", "Ours"]
    kd, ours = table.rows
    assert (kd.teacher_val, kd.teacher_test) == (ours.teacher_val, ours.teacher_test)
    assert kd.seed == ours.seed == SMALL.seed
    text = table.render()
    assert "median" in text and "73.62" in text and "75.33" in text
    doc = table.to_document()
    assert doc["median"]["KD"]["val"] == kd.val


def test_compare_rejects_bad_seed_count(parts):
    with pytest.raises(ParameterError):
        compare_kd_vs_mr(generate(200, 4, 4, 3, 0.1, seed=0), SMALL, num_seeds=0)


def test_published_reference_values():
    assert PUBLISHED_TABLE["VE"] == {"KD": (71.22, 71.43), "Ours": (72.45, 72.66)}
    assert PUBLISHED_TABLE["NLVR"]["Ours"] == (75.33, 75.06)
    assert PUBLISHED_TABLE["HM"]["KD"] == (68.22, 67.89)


def test_single_modality_probes_fall_short_of_the_rule():
    ds = generate(500, 4, 4, 3, 0.0, seed=0)
    rule = ground_truth_rule(4, 4, 3, seed=0)
    assert np.mean(rule.predict(ds.text, ds.image) == ds.labels) == 1.0
    for mode in (ModalityMode.TEXT_ONLY, ModalityMode.IMAGE_ONLY):
        assert linear_probe_accuracy(ds, mode) <= 0.95


def test_linear_probe_fits_a_linear_rule():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(300, 3))
    samples = [ModalSample(row, rng.normal(size=2), int(row[0] + 0.5 * row[2] > 0)) for row in t]
    ds = Dataset(samples, 3, 2, 2)
    assert linear_probe_accuracy(ds, ModalityMode.TEXT_ONLY) >= 0.97
    assert linear_probe_accuracy(ds, ModalityMode.IMAGE_ONLY) <= 0.7
