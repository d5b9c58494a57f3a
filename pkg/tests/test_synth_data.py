import numpy as np
import pytest

from modalkd import synth_data as sd
from modalkd.errors import ParameterError, ParseError
from modalkd.synth_data import Dataset, ModalSample


@pytest.fixture(scope="module")
def ds300():
    return sd.generate(300, 4, 4, 3, 0.1, seed=5)


def test_generate_is_deterministic(ds300):
    again = sd.generate(300, 4, 4, 3, 0.1, seed=5)
    assert again == ds300
    assert sd.format_csv(again) == sd.format_csv(ds300)


def test_generate_differs_across_seeds(ds300):
    assert sd.generate(300, 4, 4, 3, 0.1, seed=6) != ds300


def test_class_balance(ds300):
    counts = np.bincount(ds300.labels, minlength=3)
    assert set(counts) <= {99, 100, 101}
    uneven = sd.generate(301, 3, 5, 4, 0.0, seed=1)
    counts = np.bincount(uneven.labels, minlength=4)
    assert counts.max() - counts.min() <= 1 and counts.sum() == 301


def test_noise_free_rule_recovers_every_label():
    ds = sd.generate(500, 4, 4, 3, 0.0, seed=2)
    rule = sd.ground_truth_rule(4, 4, 3, seed=2)
    np.testing.assert_array_equal(rule.predict(ds.text, ds.image), ds.labels)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=2, num_classes=3),
        dict(num_classes=1),
        dict(text_dim=1),
        dict(image_dim=0),
        dict(noise_std=-0.1),
    ],
)
def test_generate_rejects_bad_params(kwargs):
    args = dict(n=30, text_dim=4, image_dim=4, num_classes=3, noise_std=0.1, seed=0)
    args.update(kwargs)
    with pytest.raises(ParameterError):
        sd.generate(**args)


def test_split_sizes_and_partition():
    ds = sd.generate(100, 3, 3, 2, 0.1, seed=0)
    train, val, test = sd.split(ds, (0.8, 0.1, 0.1), seed=3)
    assert (len(train), len(val), len(test)) == (80, 10, 10)
    keys = sorted(s.key() for part in (train, val, test) for s in part)
    assert keys == sorted(s.key() for s in ds)
    again = sd.split(ds, (0.8, 0.1, 0.1), seed=3)
    assert all(a == b for a, b in zip(again, (train, val, test)))
    assert [p.split for p in again] == [sd.Split.TRAIN, sd.Split.VAL, sd.Split.TEST]


@pytest.mark.parametrize("fractions", [(0.5, 0.5, 0.1), (1.0, 0.0, 0.0), (0.5, 0.5), (0.9, 0.2, -0.1)])
def test_split_rejects_bad_fractions(fractions):
    ds = sd.generate(100, 3, 3, 2, 0.1, seed=0)
    with pytest.raises(ParameterError):
        sd.split(ds, fractions, seed=0)


def test_csv_round_trip(tmp_path, ds300):
    path = tmp_path / "d.csv"
    sd.write_csv(ds300, path)
    back = sd.read_csv(path)
    assert back == ds300
    first = path.read_bytes()
    sd.write_csv(back, path)
    assert path.read_bytes() == first
    lines = first.decode().split("\n")
    assert lines[0] == "label,t0,t1,t2,t3,i0,i1,i2,i3"
    assert len(lines) == 302 and lines[-1] == ""
    assert b"\r" not in first


def test_csv_round_trip_is_lossless_for_awkward_values(tmp_path):
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2**63, size=9000, dtype=np.uint64) | (rng.integers(0, 2, 9000).astype(np.uint64) << 63)
    values = bits.view(np.float64)
    values = values[np.isfinite(values)]
    specials = [0.0, -0.0, 5e-324, -5e-324, 2.2250738585072014e-308, 1e-310, 1.7976931348623157e308, 0.1]
    values = np.concatenate([values, specials, rng.normal(size=10_000 - len(values) - len(specials))])
    assert len(values) == 10_000
    rows = values.reshape(-1, 10)
    samples = [ModalSample(r[:4].copy(), r[4:].copy(), k % 2) for k, r in enumerate(rows)]
    ds = Dataset(samples, 4, 6, 2)
    path = tmp_path / "awkward.csv"
    sd.write_csv(ds, path)
    back = sd.read_csv(path)
    got = np.concatenate([np.concatenate([s.text_feats, s.image_feats]) for s in back])
    assert got.tobytes() == values.tobytes()  # bit-exact, keeps the sign of -0.0
    text = path.read_bytes()
    sd.write_csv(back, path)
    assert path.read_bytes() == text


def test_read_csv_header_mismatch(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("label,t0,t1,t2,i0\n0,1,2,3,4\n")
    with pytest.raises(ParseError, match="line 1"):
        sd.read_csv(path, text_dim=4)


def test_read_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ParseError, match="no header"):
        sd.read_csv(path)


@pytest.mark.parametrize(
    "body, line",
    [
        ("0,1,2\n", "line 2"),
        ("0,1,2,3\n1,x,2,3\n", "line 3"),
        ("a,1,2,3\n", "line 2"),
        ("0,1,2,3\n5,1,2,3\n", "line 3"),
        ("-1,1,2,3\n", "line 2"),
    ],
)
def test_read_csv_bad_rows(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text("label,t0,t1,i0\n" + body)
    with pytest.raises(ParseError, match=line):
        sd.read_csv(path, num_classes=3)


def test_dataset_rejects_ragged_samples():
    with pytest.raises(ParameterError):
        Dataset([ModalSample(np.zeros(2), np.zeros(3), 0), ModalSample(np.zeros(3), np.zeros(3), 0)], 2, 3, 2)
    with pytest.raises(ParameterError):
        Dataset([], 2, 3, 2)
