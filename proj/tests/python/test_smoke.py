import math

import pytest

import shv
from shv import wire

SEC = 1_000_000_000


def test_topics_and_sids_round_trip():
    d = shv.LevelDictionary()
    a = d.encode(shv.Topic("/r1/c1/n1/power"))
    b = d.encode(shv.Topic("/r1/c1/n2/power"))
    assert a.hex() == "00010001000100010000000000000000"
    assert b.levels[:4] == [1, 1, 2, 1]
    assert str(d.decode(b)) == "/r1/c1/n2/power"
    assert d.find(shv.Topic("/nope")) is None
    again = shv.LevelDictionary.deserialize(d.serialize())
    assert again.encode(shv.Topic("/r1/c1/n1/power")) == a


def test_malformed_topic_raises_with_code():
    with pytest.raises(shv.Error) as e:
        shv.Topic("a//b")
    assert e.value.args[0] == "MalformedTopic"


def test_wire_golden_and_stream():
    pub = wire.Publish("/a/b", wire.encode_payload([wire.Record(1, 2)]))
    assert wire.encode_packet(pub).hex() == "3016" + "0004" + b"/a/b".hex() + "0000000000000001" + "0000000000000002"
    assert wire.encode_packet(wire.PingReq()) == b"\xc0\x00"
    stream = wire.encode_packet(wire.Connect("p1", 60)) + wire.encode_packet(pub)
    assert wire.decode_packet(stream[:5]) is None
    first, used = wire.decode_packet(stream)
    assert first == wire.Connect("p1", 60)
    second, _ = wire.decode_packet(stream[used:])
    assert wire.decode_payload(second.payload) == [wire.Record(1, 2)]


def test_cache_average():
    c = shv.SensorCache(120 * SEC)
    for i in range(1, 301):
        c.insert(i * SEC, i)
    assert 120 <= len(c) <= 121
    assert c.average(10 * SEC) == pytest.approx(295.5, abs=1e-12)


def test_database_vsensor_and_integral(tmp_path):
    db = shv.Database(tmp_path / "store")
    for i in range(1, 12):
        db.insert("/r1/n1/power", i * SEC, 2)
        db.insert("/r1/n1/heat", i * SEC, 18)
    db.set_unit("/r1/n1/power", "W", 10.0)
    db.set_unit("/r1/n1/heat", "W")
    value, unit = db.integral("/r1/n1/power", SEC, 11 * SEC + 1)
    assert (value, unit) == (200.0, "J")
    db.define_vsensor("/r1/ratio", "</r1/n1/heat> / </r1/n1/power>", "", SEC, 1e-9)
    pts = db.fetch("/r1/ratio", 2 * SEC, 5 * SEC)
    assert [ts for ts, _ in pts] == [2 * SEC, 3 * SEC, 4 * SEC]
    assert all(abs(v - 0.9) < 1e-9 for _, v in pts)
    csv = db.csv_export("/r1/n1/power", SEC, 3 * SEC, raw=True)
    assert csv == "sensor,timestamp,value\n/r1/n1/power,1000000000,2\n/r1/n1/power,2000000000,2\n"
    # 4 power, 4 heat and the 3 written-back ratio points.
    assert db.delete_before(5 * SEC) == 11
    with pytest.raises(shv.Error):
        db.fetch("/never", 0, SEC)


def test_bench_model():
    m = shv.bench.ScalingModel(1000, 0.005, 10000, 0.03)
    assert m.predict(5500) == pytest.approx(0.0175, rel=1e-12)
    slope, intercept, r2 = shv.bench.fit([(100, 0.3), (1000, 2.1), (10000, 20.1)])
    assert slope == pytest.approx(0.002)
    assert math.isclose(r2, 1.0, abs_tol=1e-12)
    assert shv.bench.reported_overhead(100, 99) == 0.0
    with pytest.raises(shv.Error):
        shv.bench.ScalingModel(5, 1, 5, 2)
