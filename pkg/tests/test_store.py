import json
import random

import pytest

from dsvc import Dataset, Record, Table
from dsvc.errors import BrokenChain, CorruptRepository, UnknownBaseVersion
from dsvc.model import encode_dataset
from dsvc.store import (
    MATERIALIZE,
    DeltaFrom,
    Materialize,
    VersionFirstStore,
    chain_depths,
    check_forest,
    tombstone_segments,
    tombstone_union_read,
)
from helpers import fix3, keys, mutate, random_dataset, random_repo


def big_table(n: int, seed: int = 0) -> Dataset:
    rng = random.Random(seed)
    return Dataset.of([Table.of("T", [Record(f"r{i}", {f"a{j}": rng.randrange(10**6) for j in range(5)})
                                      for i in range(n)])])


def test_snapshot_roundtrip(tmp_path):
    st = VersionFirstStore.create(tmp_path)
    ds = random_dataset(random.Random(0), 50)
    st.put_version(1, ds)
    st.clear_cache()
    assert encode_dataset(st.materialize(1)) == encode_dataset(ds)
    assert VersionFirstStore(tmp_path).materialize(1) == ds


def test_small_change_delta_is_smaller(tmp_path):
    st = VersionFirstStore.create(tmp_path)
    base = big_table(10_000)
    child = base.copy()
    for i in range(0, 10_000, 100):
        child.tables["T"].records[f"r{i}"] = Record(f"r{i}", {"a0": -i})
    snap = st.put_version(1, base)
    delta = st.put_version(2, child, DeltaFrom(1))
    assert delta.nbytes < snap.nbytes / 10
    st.clear_cache()
    assert st.materialize(2) == child


def test_unknown_base(tmp_path):
    st = VersionFirstStore.create(tmp_path)
    with pytest.raises(UnknownBaseVersion):
        st.put_version(2, Dataset(), DeltaFrom(1))


def test_chain_resolution(tmp_path):
    st = VersionFirstStore.create(tmp_path)
    rng = random.Random(1)
    ds = random_dataset(rng, 20)
    st.put_version(1, ds)
    assert [n.version for n in st.resolve_chain(1)] == [1]
    oracle = {1: ds}
    for v in range(2, 7):
        ds = mutate(rng, ds, 3)
        oracle[v] = ds
        st.put_version(v, ds, DeltaFrom(v - 1))
    chain = st.resolve_chain(6)
    assert len(chain) == 6 and chain[-1].is_snapshot and chain[0].version == 6
    st.clear_cache()
    for v, d in oracle.items():
        assert st.materialize(v) == d
        assert tombstone_union_read(st, v) == d


def test_broken_chain_detected(tmp_path):
    st = VersionFirstStore.create(tmp_path)
    ds = random_dataset(random.Random(2), 10)
    st.put_version(1, ds)
    st.put_version(2, mutate(random.Random(3), ds, 2), DeltaFrom(1))
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["versions"]["2"]["placement"] = {"kind": "delta", "from": 9}
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(BrokenChain):
        VersionFirstStore(tmp_path).materialize(2)


def test_missing_and_corrupt_objects(tmp_path):
    st = VersionFirstStore.create(tmp_path)
    st.put_version(1, random_dataset(random.Random(4), 10))
    h = st.nodes[1].object_hash
    path = tmp_path / "objects" / h[:2] / h
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(CorruptRepository):
        VersionFirstStore(tmp_path).materialize(1)
    path.unlink()
    with pytest.raises(BrokenChain):
        VersionFirstStore(tmp_path).materialize(1)


def test_object_format(tmp_path):
    st = VersionFirstStore.create(tmp_path)
    ds = random_dataset(random.Random(5), 10)
    st.put_version(1, ds)
    st.put_version(2, mutate(random.Random(5), ds, 3), DeltaFrom(1))
    for v, magic in ((1, b"DSVCSNAP1"), (2, b"DSVCDLT1")):
        h = st.nodes[v].object_hash
        assert (tmp_path / "objects" / h[:2] / h).read_bytes().startswith(magic)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["versions"]["2"]["delta_from"] == 1 and m["versions"]["1"]["delta_from"] is None


def test_dedup(tmp_path):
    st = VersionFirstStore.create(tmp_path)
    ds = random_dataset(random.Random(6), 10)
    st.put_version(1, ds)
    st.put_version(2, ds)
    assert st.object_count() == 1
    assert st.nodes[1].object_hash == st.nodes[2].object_hash


def test_delta_against_later_version(tmp_path):
    # versions need not be stored against their graph parent
    st = VersionFirstStore.create(tmp_path)
    rng = random.Random(7)
    v3 = random_dataset(rng, 30)
    v4 = mutate(rng, v3, 4)
    st.put_version(4, v4)
    st.put_version(3, v3, DeltaFrom(4))
    st.clear_cache()
    assert st.materialize(3) == v3


def test_fix3_reads(tmp_path):
    repo, v = fix3(tmp_path / "r")
    st = repo.store
    st.clear_cache()
    assert keys(st.materialize(v["master"])) == {"Sam", "Amol", "Mike"}
    assert keys(st.materialize(v["branch"])) == {"Sam", "Aditya"}
    # store the branch head as a delta on its parent: Amol appears as a deleted row
    datasets = {x: repo.materialize(x) for x in v.values()}
    st.apply_placements({v["branch"]: DeltaFrom(v["aditya"])}, datasets)
    segs = tombstone_segments(st, v["branch"])
    assert [len(s) for s in segs] == [1, 1, 1]
    assert {k: r.deleted for k, r in segs[-1]["T"].items()} == {"Amol": True}
    assert {k: r.deleted for k, r in segs[1]["T"].items()} == {"Aditya": False}
    assert tombstone_union_read(st, v["branch"]) == st.materialize(v["branch"])


def random_forest(rng: random.Random, vs: list[int]) -> dict:
    placements = {}
    done = []
    for v in rng.sample(vs, len(vs)):
        placements[v] = DeltaFrom(rng.choice(done)) if done and rng.random() < 0.7 else MATERIALIZE
        done.append(v)
    return placements


def test_replacement_is_lossless(tmp_path):
    rng = random.Random(8)
    for i in range(8):
        rr = random_repo(tmp_path / f"r{i}", rng, 20, 60)
        st = rr.repo.store
        for _ in range(3):
            placements = random_forest(rng, sorted(rr.oracle))
            check_forest(placements)
            st.apply_placements(placements, rr.oracle)
            assert st.placements() == placements
            fresh = VersionFirstStore(st.root)
            for v, ds in rr.oracle.items():
                assert fresh.materialize(v) == ds
                assert tombstone_union_read(fresh, v) == ds
            live = {n.object_hash for n in fresh.nodes.values()}
            assert fresh.object_count() == len(live)


def test_forest_checks():
    with pytest.raises(UnknownBaseVersion):
        check_forest({1: DeltaFrom(2)})
    with pytest.raises(CorruptRepository):
        check_forest({1: DeltaFrom(2), 2: DeltaFrom(1)})
    assert chain_depths({1: Materialize(), 2: DeltaFrom(1), 3: DeltaFrom(2)}) == {1: 0, 2: 1, 3: 2}
