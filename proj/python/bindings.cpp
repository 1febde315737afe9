#include "shv/bench.hpp"
#include "shv/database.hpp"
#include "shv/error.hpp"
#include "shv/expr.hpp"
#include "shv/querylib.hpp"
#include "shv/sensor_cache.hpp"
#include "shv/vsensor.hpp"
#include "shv/wire.hpp"

#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace shv;

namespace {

py::bytes to_bytes(const wire::Bytes& b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

wire::Bytes from_bytes(const py::bytes& b) {
  std::string s = b;
  return wire::Bytes(s.begin(), s.end());
}

py::object packet_to_py(const wire::Packet& p) {
  return std::visit([](const auto& v) { return py::cast(v); }, p);
}

} // namespace

PYBIND11_MODULE(_shv, m) {
  m.doc() = "Sensor monitoring core: topics, wire codec, storage, queries and the load model";

  // args are (code name, message).
  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p)
        std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error.ptr(), py::make_tuple(std::string(errc_name(e.code())), e.what()).ptr());
    }
  });

  py::class_<Topic>(m, "Topic")
    .def(py::init(&Topic::parse), py::arg("text"))
    .def_property_readonly("components", &Topic::components)
    .def("__str__", &Topic::str)
    .def("__repr__", [](const Topic& t) { return "Topic('" + t.str() + "')"; })
    .def("__len__", &Topic::size)
    .def("__truediv__", [](const Topic& t, const std::string& c) { return t / c; })
    .def(py::self == py::self)
    .def(py::self < py::self)
    .def("__hash__", [](const Topic& t) { return std::hash<Topic>{}(t); });

  py::class_<SensorId>(m, "SensorId")
    .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("hi"), py::arg("lo"))
    .def_static("from_levels", &SensorId::from_levels)
    .def_static("from_hex", &SensorId::from_hex)
    .def_property_readonly("levels", &SensorId::levels)
    .def_property_readonly("depth", &SensorId::depth)
    .def_property_readonly("hi", &SensorId::hi)
    .def_property_readonly("lo", &SensorId::lo)
    .def("hex", &SensorId::hex)
    .def("__repr__", [](const SensorId& s) { return "SensorId('" + s.hex() + "')"; })
    .def(py::self == py::self)
    .def(py::self < py::self)
    .def("__hash__", [](const SensorId& s) { return SensorIdHash{}(s); });

  py::class_<LevelDictionary>(m, "LevelDictionary")
    .def(py::init<>())
    .def("encode", &LevelDictionary::encode)
    .def("find", &LevelDictionary::find)
    .def("decode", &LevelDictionary::decode)
    .def("level_size", &LevelDictionary::level_size)
    .def("serialize", &LevelDictionary::serialize)
    .def_static("deserialize", &LevelDictionary::deserialize)
    .def("save", &LevelDictionary::save)
    .def_static("load", &LevelDictionary::load);

  auto w = m.def_submodule("wire", "Publish-only MQTT subset");
  py::class_<wire::Record>(w, "Record")
    .def(py::init<std::uint64_t, std::int64_t>(), py::arg("timestamp"), py::arg("value"))
    .def_readwrite("timestamp", &wire::Record::timestamp)
    .def_readwrite("value", &wire::Record::value)
    .def(py::self == py::self)
    .def("__repr__", [](const wire::Record& r) {
      return "Record(" + std::to_string(r.timestamp) + ", " + std::to_string(r.value) + ")";
    });
  py::class_<wire::Connect>(w, "Connect")
    .def(py::init<std::string, std::uint16_t>(), py::arg("client_id"),
         py::arg("keep_alive_s") = wire::default_keep_alive_s)
    .def_readwrite("client_id", &wire::Connect::client_id)
    .def_readwrite("keep_alive_s", &wire::Connect::keep_alive_s)
    .def(py::self == py::self);
  py::class_<wire::ConnAck>(w, "ConnAck")
    .def(py::init<std::uint8_t>(), py::arg("code") = 0)
    .def_readwrite("code", &wire::ConnAck::code)
    .def(py::self == py::self);
  py::class_<wire::Publish>(w, "Publish")
    .def(py::init([](std::string topic, const py::bytes& payload) {
           return wire::Publish{std::move(topic), from_bytes(payload)};
         }),
         py::arg("topic"), py::arg("payload"))
    .def_readwrite("topic", &wire::Publish::topic)
    .def_property_readonly("payload", [](const wire::Publish& p) { return to_bytes(p.payload); })
    .def(py::self == py::self);
  py::class_<wire::PingReq>(w, "PingReq").def(py::init<>()).def(py::self == py::self);
  py::class_<wire::PingResp>(w, "PingResp").def(py::init<>()).def(py::self == py::self);
  py::class_<wire::Disconnect>(w, "Disconnect").def(py::init<>()).def(py::self == py::self);

  w.def("encode_packet", [](const wire::Packet& p) { return to_bytes(wire::encode_packet(p)); });
  w.def("decode_packet", [](const py::bytes& b) -> py::object {
    auto buf = from_bytes(b);
    auto d = wire::decode_packet(buf);
    if (!d)
      return py::none();
    return py::make_tuple(packet_to_py(d->packet), d->consumed);
  }, "Returns (packet, consumed) or None when more bytes are needed.");
  w.def("encode_payload", [](const std::vector<wire::Record>& r) { return to_bytes(wire::encode_payload(r)); });
  w.def("decode_payload", [](const py::bytes& b) { return wire::decode_payload(from_bytes(b)); });

  py::class_<RawPoint>(m, "RawPoint")
    .def_readonly("ts", &RawPoint::ts)
    .def_readonly("value", &RawPoint::value)
    .def(py::self == py::self)
    .def("__iter__", [](const RawPoint& p) { return py::iter(py::make_tuple(p.ts, p.value)); })
    .def("__repr__", [](const RawPoint& p) {
      return "RawPoint(" + std::to_string(p.ts) + ", " + std::to_string(p.value) + ")";
    });
  py::class_<TimedValue>(m, "TimedValue")
    .def_readonly("ts", &TimedValue::ts)
    .def_readonly("value", &TimedValue::value)
    .def("__iter__", [](const TimedValue& p) { return py::iter(py::make_tuple(p.ts, p.value)); });

  py::class_<SensorCache>(m, "SensorCache")
    .def(py::init<std::uint64_t>(), py::arg("window_ns") = default_cache_window_ns)
    .def("insert", &SensorCache::insert)
    .def("snapshot", &SensorCache::snapshot)
    .def("latest", &SensorCache::latest)
    .def("average", &SensorCache::average)
    .def("expire", &SensorCache::expire)
    .def("__len__", &SensorCache::size);

  py::class_<Unit>(m, "Unit")
    .def(py::init([](const std::string& s) { return unit_by_symbol(s); }), py::arg("symbol"))
    .def_readonly("symbol", &Unit::symbol)
    .def_readonly("factor", &Unit::factor)
    .def_property_readonly("dimension", [](const Unit& u) { return std::string(dimension_name(u.dimension)); });
  m.def("convert", [](double v, const std::string& from, const std::string& to) {
    return convert(v, unit_by_symbol(from), unit_by_symbol(to));
  }, py::arg("value"), py::arg("from_unit"), py::arg("to_unit"));

  py::class_<Database>(m, "Database")
    .def(py::init([](const std::filesystem::path& root) { return Database::open(root); }),
         py::arg("root"))
    .def("insert", [](Database& db, const std::string& topic, std::uint64_t ts, std::int64_t v) {
      db.store().insert(db.dictionary().encode(Topic::parse(topic)), ts, v);
    }, py::arg("topic"), py::arg("ts"), py::arg("value"))
    .def("raw", [](Database& db, const std::string& topic, std::uint64_t t0, std::uint64_t t1) {
      auto sid = db.dictionary().find(Topic::parse(topic));
      return sid ? db.store().query(*sid, t0, t1) : std::vector<RawPoint>{};
    }, py::arg("topic"), py::arg("t0"), py::arg("t1"))
    .def("set_unit", [](Database& db, const std::string& topic, const std::string& unit, double scale) {
      SensorMetadata meta = db.sensor_metadata(Topic::parse(topic));
      meta.unit = unit_by_symbol(unit);
      meta.scale = scale;
      db.metadata().set_sensor(meta);
      db.metadata().save();
    }, py::arg("topic"), py::arg("unit"), py::arg("scale") = 1.0)
    .def("define_vsensor", [](Database& db, const std::string& topic, const std::string& expr,
                              const std::string& unit, std::uint64_t interval_ns, double scale,
                              std::uint64_t t_zero_ns) {
      VSensorDef d;
      d.topic = Topic::parse(topic);
      d.expr = parse_expr(expr);
      d.unit = unit_by_symbol(unit);
      d.interval_ns = interval_ns;
      d.scale = scale;
      d.t_zero_ns = t_zero_ns;
      define_vsensor(db, std::move(d));
    }, py::arg("topic"), py::arg("expr"), py::arg("unit") = "",
       py::arg("interval_ns") = 1'000'000'000ULL, py::arg("scale") = 1.0, py::arg("t_zero_ns") = 0)
    .def("fetch", [](Database& db, const std::string& topic, std::uint64_t t0, std::uint64_t t1) {
      std::vector<std::pair<std::uint64_t, double>> out;
      for (const auto& p : query::fetch(db, Topic::parse(topic), t0, t1).points)
        out.emplace_back(p.ts, p.value);
      return out;
    }, py::arg("topic"), py::arg("t0"), py::arg("t1"))
    .def("integral", [](Database& db, const std::string& topic, std::uint64_t t0, std::uint64_t t1) {
      auto q = query::integral(query::fetch(db, Topic::parse(topic), t0, t1));
      return py::make_tuple(q.value, q.unit.symbol);
    }, py::arg("topic"), py::arg("t0"), py::arg("t1"))
    .def("csv_export", [](Database& db, const std::string& topic, std::uint64_t t0, std::uint64_t t1,
                          bool raw) {
      std::vector<query::QueryResult> r{
        query::fetch(db, Topic::parse(topic), t0, t1, raw ? query::Mode::raw : query::Mode::scaled)};
      return query::csv_export(r);
    }, py::arg("topic"), py::arg("t0"), py::arg("t1"), py::arg("raw") = false)
    .def("csv_import", [](Database& db, const std::string& text) { return query::csv_import(text, db); })
    .def("delete_before", [](Database& db, std::uint64_t ts) { return db.store().delete_before(ts); })
    .def("compact", [](Database& db) { db.store().compact(); })
    .def("flush", &Database::flush);

  m.def("parse_expr", [](const std::string& text) { return parse_expr(text).str(); },
        "Parses an expression and returns its canonical fully parenthesized form.");

  auto b = m.def_submodule("bench", "Overhead metric and CPU-load model");
  b.def("overhead", [](double t_ref, double t_pusher) { return bench::overhead({t_ref, t_pusher}); });
  b.def("reported_overhead",
        [](double t_ref, double t_pusher) { return bench::reported_overhead({t_ref, t_pusher}); });
  py::class_<bench::ScalingModel>(b, "ScalingModel")
    .def(py::init<double, double, double, double>(), py::arg("a"), py::arg("load_a"), py::arg("b"),
         py::arg("load_b"))
    .def("predict", &bench::ScalingModel::predict);
  b.def("fit", [](const std::vector<std::pair<double, double>>& pts) {
    auto f = bench::fit(pts);
    return py::make_tuple(f.slope, f.intercept, f.r2);
  }, "Least squares of load on rate: (slope, intercept, r2).");

  m.attr("__version__") = "1.0.0";
}
