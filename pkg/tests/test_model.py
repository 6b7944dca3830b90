import hashlib
import math
import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsvc import Dataset, Record, Table
from dsvc.errors import InvalidDataset, InvalidValue
from dsvc.model import (
    EMPTY_HASH,
    blob_record,
    canonical_serialize,
    compare_values,
    content_hash,
    dataset_hash,
    decode_dataset,
    deserialize_record,
    encode_dataset,
    record_state_id,
    snapshot_size,
    value_sort_key,
)
from strategies import records, values


def test_empty_hash_vector():
    assert content_hash(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert EMPTY_HASH == content_hash(b"")


def test_encoding_is_bit_exact():
    r = Record("Sam", {"age": 30, "name": "Sam"})
    expected = (
        b"\x04" + struct.pack(">I", 3) + b"Sam"
        + struct.pack(">I", 2)
        + b"\x04" + struct.pack(">I", 3) + b"age" + b"\x02" + struct.pack(">q", 30)
        + b"\x04" + struct.pack(">I", 4) + b"name" + b"\x04" + struct.pack(">I", 3) + b"Sam"
    )
    assert canonical_serialize(r) == expected


def test_every_tag():
    r = Record("k", {"a": None, "b": True, "c": -1, "d": 1.5, "e": "x", "f": b"\x00\xff"})
    b = canonical_serialize(r)

    def field(name):
        return b"\x04" + struct.pack(">I", 1) + name

    assert field(b"a") + b"\x00" + field(b"b") + b"\x01\x01" in b
    assert field(b"c") + b"\x02" + struct.pack(">q", -1) in b
    assert field(b"d") + b"\x03" + struct.pack(">d", 1.5) in b
    assert field(b"f") + b"\x05" + struct.pack(">I", 2) + b"\x00\xff" in b
    assert deserialize_record(b) == r


def test_insertion_order_is_irrelevant():
    a = Record("k", [("b", 1), ("a", 2)])
    b = Record("k", [("a", 2), ("b", 1)])
    assert canonical_serialize(a) == canonical_serialize(b)
    assert list(a.attrs) == ["a", "b"]


def test_empty_attrs_serialize():
    assert len(canonical_serialize(Record("Sam"))) > 0


@pytest.mark.parametrize("bad", [float("nan"), 1 << 63, object()])
def test_invalid_values_rejected(bad):
    with pytest.raises(InvalidValue):
        Record("k", {"a": bad})


def test_invalid_text_rejected():
    with pytest.raises(InvalidValue):
        Record("k", {"a": "\udc80"})
    with pytest.raises(InvalidValue):
        Record("", {})
    with pytest.raises(InvalidValue):
        Record("k", [("a", 1), ("a", 2)])


def test_truncated_bytes_rejected():
    b = canonical_serialize(Record("k", {"a": "hello"}))
    for cut in range(1, len(b)):
        with pytest.raises(InvalidValue):
            deserialize_record(b[:cut])


def test_random_roundtrip_10k():
    rng = random.Random(1)
    pool = [None, True, False, 0, -7, 2**40, 1.25, -0.0, math.inf, "", "é", "text", b"", b"\x01\x02"]
    for i in range(10_000):
        attrs = {f"a{j}": rng.choice(pool) for j in rng.sample(range(8), rng.randint(0, 5))}
        r = Record(f"key{i}", attrs)
        back = deserialize_record(canonical_serialize(r))
        assert back == r and back.attrs.keys() == r.attrs.keys()


def test_no_collisions_over_100k_records():
    rng = random.Random(2)
    seen: dict[bytes, bytes] = {}
    for i in range(100_000):
        r = Record(f"k{rng.randrange(5000)}", {"v": rng.randrange(50), "w": rng.choice(["a", "b", 1.5, None])})
        c = canonical_serialize(r)
        h = record_state_id(r)
        assert seen.setdefault(h, c) == c


def test_single_attribute_change_changes_hash():
    rng = random.Random(3)
    for i in range(10_000):
        a = Record("k", {"x": rng.randrange(1000), "y": "s"})
        b = a.evolve({"x": a["x"] + 1 + rng.randrange(10)})
        assert record_state_id(a) != record_state_id(b)


def test_state_id_examples():
    a = Record("Sam", {"age": 30})
    assert record_state_id(a) == record_state_id(Record("Sam", {"age": 30}))
    assert record_state_id(a) != record_state_id(Record("Sam", {"age": 31}))
    changed = a.evolve({"age": 99})
    reverted = changed.evolve({"age": 30})
    assert record_state_id(reverted) == record_state_id(a)
    assert record_state_id(a) == hashlib.sha256(canonical_serialize(a)).digest()


def test_int_float_bool_are_distinct_states():
    ids = {record_state_id(Record("k", {"a": v})) for v in (1, 1.0, True)}
    assert len(ids) == 3


@given(records())
def test_roundtrip_property(r):
    assert deserialize_record(canonical_serialize(r)) == r


@given(values, values, values)
def test_value_order_is_total(a, b, c):
    ab, ba = compare_values(a, b), compare_values(b, a)
    assert ab == -ba
    if ab <= 0 and compare_values(b, c) <= 0:
        assert compare_values(a, c) <= 0


def test_cross_type_order():
    ordered = [None, False, True, -3, 2.5, 3, "a", "b", b"\x00"]
    assert sorted(reversed(ordered), key=value_sort_key) == ordered
    assert compare_values(1, 1.5) < 0 and compare_values(2.0, 1) > 0


def test_dataset_duplicate_table_names():
    with pytest.raises(InvalidDataset):
        Dataset.of([Table.of("T", []), Table.of("T", [])])


def test_blob_record():
    r = blob_record("file.bin", b"\x00\x01")
    assert r.attrs == {"content": b"\x00\x01"}


@settings(max_examples=50)
@given(st.lists(records(key=st.sampled_from(["a", "b", "c", "d"])), max_size=6))
def test_dataset_encoding_roundtrip(rs):
    ds = Dataset.of([Table.of("T", {r.key: r for r in rs}.values())])
    enc = encode_dataset(ds)
    back, end = decode_dataset(enc)
    assert back == ds and end == len(enc)
    assert snapshot_size(ds) == len(enc)
    assert dataset_hash(back) == dataset_hash(ds)
