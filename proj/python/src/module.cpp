#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <unordered_map>

#include "memreduce/baseline/baseline.hpp"
#include "memreduce/core/batch.hpp"
#include "memreduce/core/codec.hpp"
#include "memreduce/engine/engine.hpp"
#include "memreduce/formats/formats.hpp"
#include "memreduce/kvstore/store.hpp"
#include "memreduce/workloads/report.hpp"
#include "memreduce/workloads/workloads.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace memreduce;

namespace {

// Keys: int -> INT, str -> TEXT, (row, col) -> BLOCKIDX.
Key to_key(const py::handle& h) {
  if (py::isinstance<py::bool_>(h)) throw py::type_error("bool is not a key");
  if (py::isinstance<py::int_>(h)) return Key::of_int(h.cast<std::int64_t>());
  if (py::isinstance<py::str>(h)) return Key::of_text(h.cast<std::string>());
  if (py::isinstance<py::tuple>(h) && py::len(h) == 2) {
    auto t = h.cast<py::tuple>();
    return Key::of_block(t[0].cast<std::int32_t>(), t[1].cast<std::int32_t>());
  }
  throw py::type_error("key must be int, str or a (row, col) tuple");
}

py::object from_key(const Key& k) {
  switch (k.kind()) {
    case KeyKind::Int: return py::int_(k.as_int());
    case KeyKind::Text: return py::str(k.as_text());
    case KeyKind::BlockIdx: return py::make_tuple(k.as_block().row, k.as_block().col);
  }
  return py::none();
}

// Values: bytes -> BYTES, int -> COUNT, list of floats -> DENSEVEC, CscBlock -> CSC.
Value to_value(const py::handle& h) {
  if (py::isinstance<py::bytes>(h)) {
    const std::string s = h.cast<std::string>();
    return Value::of_bytes(Bytes(s.begin(), s.end()));
  }
  if (py::isinstance<py::bool_>(h)) throw py::type_error("bool is not a value");
  if (py::isinstance<py::int_>(h)) return Value::of_count(h.cast<std::int64_t>());
  if (py::isinstance<CscBlock>(h)) return Value::of_csc(h.cast<CscBlock>());
  if (py::isinstance<py::list>(h)) return Value::of_dense(h.cast<std::vector<double>>());
  throw py::type_error("value must be bytes, int, a list of floats or a CscBlock");
}

py::object from_value(const Value& v) {
  switch (v.kind()) {
    case ValueKind::Bytes: {
      const auto& b = v.as_bytes();
      return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
    }
    case ValueKind::Count: return py::int_(v.as_count());
    case ValueKind::CscBlock: return py::cast(v.as_csc());
    case ValueKind::DenseVec: return py::cast(v.as_dense());
  }
  return py::none();
}

// The same Python object passed twice becomes the same C++ object, so
// de-duplication sees the sharing the caller expressed.
std::vector<Pair> to_pairs(const py::iterable& items) {
  std::unordered_map<PyObject*, KeyPtr> keys;
  std::unordered_map<PyObject*, ValuePtr> values;
  std::vector<Pair> out;
  for (const auto& item : items) {
    auto t = item.cast<py::tuple>();
    if (t.size() != 2) throw py::value_error("pairs are (key, value) tuples");
    auto& k = keys[t[0].ptr()];
    if (!k) k = std::make_shared<Key>(to_key(t[0]));
    auto& v = values[t[1].ptr()];
    if (!v) v = std::make_shared<Value>(to_value(t[1]));
    out.push_back(Pair{k, v});
  }
  return out;
}

py::list from_pairs(const std::vector<Pair>& pairs) {
  py::list out;
  for (const auto& p : pairs) out.append(py::make_tuple(from_key(*p.key), from_value(*p.value)));
  return out;
}

py::dict row_dict(const workloads::ReportRow& r) {
  py::dict d;
  d["workload"] = r.workload;
  d["engine"] = r.engine;
  d["numPlaces"] = r.num_places;
  d["iteration"] = r.iteration;
  d["jobIndex"] = r.job_index;
  d["wallMillis"] = r.wall_millis;
  d["bytesSerializedLocal"] = r.bytes_serialized_local;
  d["bytesSerializedRemote"] = r.bytes_serialized_remote;
  d["pairsShuffledLocal"] = r.pairs_shuffled_local;
  d["pairsShuffledRemote"] = r.pairs_shuffled_remote;
  d["readerInvocations"] = r.reader_invocations;
  d["cacheHits"] = r.cache_hits;
  d["cacheMisses"] = r.cache_misses;
  d["spillBytes"] = r.spill_bytes;
  d["outputChecksum"] = r.output_checksum;
  return d;
}

DedupPolicy dedup_of(const std::string& s) {
  if (s == "full") return DedupPolicy::Full;
  if (s == "consecutive") return DedupPolicy::Consecutive;
  if (s == "off") return DedupPolicy::Off;
  throw py::value_error("dedup must be full, consecutive or off");
}

// Either engine behind one Python type.
class Runner {
 public:
  Runner(const std::string& engine, std::size_t places, std::size_t workers, const std::string& dedup,
         std::optional<fs::path> data_dir, std::uint64_t seed, std::size_t spill_threshold, std::size_t merge_fan_in) {
    if (engine == "m3r") {
      engine::EngineConfig c;
      c.num_places = places;
      c.workers_per_place = workers;
      c.dedup = dedup_of(dedup);
      if (data_dir) c.backing_root = *data_dir;
      runner_ = std::make_unique<engine::Engine>(c);
    } else if (engine == "baseline") {
      baseline::BaselineConfig c;
      c.num_places = places;
      c.workers_per_place = workers;
      c.seed = seed;
      c.spill_threshold_records = spill_threshold;
      c.merge_fan_in = merge_fan_in;
      if (data_dir) c.backing_root = *data_dir;
      runner_ = std::make_unique<baseline::BaselineEngine>(c);
    } else {
      throw py::value_error("engine must be m3r or baseline");
    }
  }

  std::string name() const { return runner_->name(); }
  std::size_t num_places() const { return runner_->num_places(); }
  fs::path backing_root() const { return runner_->backing_root(); }

  py::list microbench(std::size_t pairs, std::size_t value_bytes, double remote_fraction, std::size_t iterations,
                      std::uint64_t seed, std::size_t reducers_per_place) {
    workloads::MicrobenchParams p;
    p.num_pairs = pairs;
    p.value_bytes = value_bytes;
    p.remote_fraction = remote_fraction;
    p.iterations = iterations;
    p.seed = seed;
    p.reducers_per_place = reducers_per_place;
    return stepped("micro", [&] { return workloads::prepare_microbench(*runner_, p); }, false);
  }

  py::list matvec(std::size_t block_size, std::size_t blocks, double sparsity, std::size_t iterations,
                  std::uint64_t seed, std::size_t reducers_per_place) {
    workloads::MatvecParams p;
    p.block_size = block_size;
    p.blocks = blocks;
    p.sparsity = sparsity;
    p.iterations = iterations;
    p.seed = seed;
    p.reducers_per_place = reducers_per_place;
    return stepped("matvec", [&] { return workloads::prepare_matvec(*runner_, p); }, true);
  }

  py::list wordcount(std::optional<std::string> text, const std::string& input, const std::string& output,
                     bool immutable, bool combiner) {
    if (text) workloads::write_text(runner_->backing_root(), input, *text);
    workloads::WordCountParams p;
    p.input = input;
    p.output = output;
    p.immutable_variant = immutable;
    p.combiner = combiner;
    auto job = workloads::build_wordcount(p, runner_->num_places());
    job.properties["overwrite"] = "true";
    return stepped("wordcount", [&] {
      workloads::PreparedSequence prep;
      prep.jobs = {job};
      prep.iteration = {1};
      return prep;
    }, false);
  }

  py::list repartition(const std::string& input, const std::string& output, std::size_t reducers,
                       const std::string& partitioner) {
    if (partitioner != "hash" && partitioner != "row") throw py::value_error("partitioner must be hash or row");
    const std::size_t n = reducers ? reducers : runner_->num_places();
    auto job = workloads::build_repartitioner(
        input, output, partitioner == "row" ? engine::row_partition : engine::hash_partition, n, n);
    return stepped("repartition", [&] {
      workloads::PreparedSequence prep;
      prep.jobs = {job};
      prep.iteration = {1};
      return prep;
    }, false);
  }

  void write_pairs(const std::string& path, const py::iterable& pairs) {
    const auto file = formats::resolve(runner_->backing_root(), path + "/part-00000");
    fs::create_directories(file.parent_path());
    formats::write_pair_file(file, to_pairs(pairs));
  }

  void write_text(const std::string& path, const std::string& text) {
    workloads::write_text(runner_->backing_root(), path, text);
  }

  py::list read_output(const std::string& path) {
    std::vector<Pair> out;
    {
      py::gil_scoped_release nogil;
      out = runner_->read_output(path);
    }
    return from_pairs(out);
  }

 private:
  template <typename Prepare>
  py::list stepped(const std::string& workload, Prepare&& prepare, bool quantized) {
    workloads::SteppedRun run;
    {
      py::gil_scoped_release nogil;
      run = workloads::run_stepped(*runner_, workload, prepare(), quantized);
    }
    if (!run.ok) throw Error(ErrorCode::InvalidJob, workload + " failed: " + run.failure);
    py::list rows;
    for (const auto& r : run.rows) rows.append(row_dict(r));
    return rows;
  }

  std::unique_ptr<engine::JobRunner> runner_;
};

py::dict info_dict(const kvstore::PathInfo& info) {
  py::dict d;
  d["path"] = info.path.str();
  d["kind"] = info.kind == kvstore::PathKind::Directory ? "directory" : "file";
  py::list blocks;
  for (const auto& b : info.blocks) {
    py::dict bd;
    bd["id"] = b.block_id;
    bd["home"] = b.home;
    bd["length"] = b.length;
    blocks.append(bd);
  }
  d["blocks"] = blocks;
  return d;
}

}  // namespace

PYBIND11_MODULE(_memreduce, m) {
  m.doc() = "In-memory and out-of-core MapReduce engines, workloads and the distributed key/value store";

  static py::exception<Error> error(m, "MemreduceError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::class_<CscBlock>(m, "CscBlock")
      .def(py::init<>())
      .def_readwrite("rows", &CscBlock::rows)
      .def_readwrite("cols", &CscBlock::cols)
      .def_readwrite("col_ptr", &CscBlock::col_ptr)
      .def_readwrite("row_idx", &CscBlock::row_idx)
      .def_readwrite("values", &CscBlock::values)
      .def_property_readonly("nnz", &CscBlock::nnz)
      .def("well_formed", &CscBlock::well_formed)
      .def("multiply", [](const CscBlock& b, const std::vector<double>& x) {
        if (x.size() != b.cols) throw Error(ErrorCode::DimensionMismatch, "vector length differs from column count");
        return b.multiply(x);
      })
      .def_static("from_dense", [](std::uint32_t rows, std::uint32_t cols, const std::vector<double>& column_major) {
        if (column_major.size() != static_cast<std::size_t>(rows) * cols) throw py::value_error("need rows*cols values");
        return CscBlock::from_dense(rows, cols, column_major);
      }, py::arg("rows"), py::arg("cols"), py::arg("column_major"))
      .def("__eq__", [](const CscBlock& a, const CscBlock& b) { return a == b; })
      .def("__repr__", [](const CscBlock& b) {
        return "CscBlock(" + std::to_string(b.rows) + "x" + std::to_string(b.cols) + ", nnz=" + std::to_string(b.nnz()) + ")";
      });

  m.def("encode_pair", [](const py::handle& key, const py::handle& value) {
    const auto bytes = encode_pair(Pair::of(to_key(key), to_value(value)));
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }, py::arg("key"), py::arg("value"), "Binary record for one pair.");
  m.def("decode_pair", [](const py::bytes& data) {
    const std::string s = data;
    auto d = decode_pair(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    return py::make_tuple(from_key(*d.pair.key), from_value(*d.pair.value), d.consumed);
  }, py::arg("data"), "Decodes the record at the front; returns (key, value, bytes consumed).");

  m.def("serialize_batch", [](const py::iterable& pairs, const std::string& dedup) {
    const auto batch = serialize_batch(to_pairs(pairs), dedup_of(dedup));
    py::dict d;
    d["records"] = py::bytes(reinterpret_cast<const char*>(batch.records.data()), batch.records.size());
    d["entries"] = batch.stats.entries;
    d["key_literals"] = batch.stats.key_literals;
    d["key_refs"] = batch.stats.key_refs;
    d["value_literals"] = batch.stats.value_literals;
    d["value_refs"] = batch.stats.value_refs;
    return d;
  }, py::arg("pairs"), py::arg("dedup") = "full",
        "Encodes a shuffle batch. Repeated Python objects become shared objects and may be back-referenced.");
  m.def("deserialize_batch", [](const py::bytes& records) {
    const std::string s = records;
    return from_pairs(deserialize_batch(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
  }, py::arg("records"));

  m.def("output_checksum", [](const py::iterable& pairs) { return workloads::output_checksum(to_pairs(pairs)); },
        "Order-independent 64-bit multiset hash.");
  m.def("quantized_checksum", [](const py::iterable& pairs) { return workloads::quantized_checksum(to_pairs(pairs)); },
        "Multiset hash with floating-point values rounded to 1e-6.");
  m.def("write_pair_file", [](const fs::path& file, const py::iterable& pairs) {
    formats::write_pair_file(file, to_pairs(pairs));
  }, py::arg("file"), py::arg("pairs"));
  m.def("read_pair_file", [](const fs::path& file) { return from_pairs(formats::read_pair_file(file)); },
        py::arg("file"));

  m.def("generate_text", &workloads::generate_text, py::arg("bytes"), py::arg("seed") = 1);
  m.def("wordcount_oracle", [](const std::string& text) {
    py::dict d;
    for (const auto& p : workloads::wordcount_oracle(text)) d[py::str(p.key->as_text())] = p.value->as_count();
    return d;
  }, py::arg("text"));
  m.def("matvec_oracle", [](std::size_t block_size, std::size_t blocks, double sparsity, std::size_t iterations,
                            std::uint64_t seed) {
    workloads::MatvecParams p;
    p.block_size = block_size;
    p.blocks = blocks;
    p.sparsity = sparsity;
    p.iterations = iterations;
    p.seed = seed;
    return workloads::matvec_oracle(p);
  }, py::arg("block_size") = 100, py::arg("blocks") = 5, py::arg("sparsity") = 0.01, py::arg("iterations") = 3,
        py::arg("seed") = 1, "Dense reference result G^iterations * V for the generated matrix.");
  m.def("assemble_vector", [](const py::iterable& blocks, std::size_t num_blocks, std::size_t block_size) {
    return workloads::assemble_vector(to_pairs(blocks), num_blocks, block_size);
  }, py::arg("blocks"), py::arg("num_blocks"), py::arg("block_size"));
  m.def("report_columns", &workloads::report_columns);

  py::class_<Runner>(m, "Runner")
      .def(py::init<const std::string&, std::size_t, std::size_t, const std::string&, std::optional<fs::path>,
                    std::uint64_t, std::size_t, std::size_t>(),
           py::arg("engine") = "m3r", py::arg("places") = 2, py::arg("workers") = 1, py::arg("dedup") = "full",
           py::arg("data_dir") = py::none(), py::arg("seed") = 1, py::arg("spill_threshold") = 100000,
           py::arg("merge_fan_in") = 10)
      .def_property_readonly("name", &Runner::name)
      .def_property_readonly("num_places", &Runner::num_places)
      .def_property_readonly("backing_root", &Runner::backing_root)
      .def("microbench", &Runner::microbench, py::arg("pairs") = 100000, py::arg("value_bytes") = 1000,
           py::arg("remote_fraction") = 0.0, py::arg("iterations") = 3, py::arg("seed") = 1,
           py::arg("reducers_per_place") = 1, "Runs the microbenchmark; one report row per job.")
      .def("matvec", &Runner::matvec, py::arg("block_size") = 100, py::arg("blocks") = 5, py::arg("sparsity") = 0.01,
           py::arg("iterations") = 3, py::arg("seed") = 1, py::arg("reducers_per_place") = 1)
      .def("wordcount", &Runner::wordcount, py::arg("text") = py::none(), py::arg("input") = "/wc/input",
           py::arg("output") = "/wc/out", py::arg("immutable") = true, py::arg("combiner") = true)
      .def("repartition", &Runner::repartition, py::arg("input"), py::arg("output"), py::arg("reducers") = 0,
           py::arg("partitioner") = "hash")
      .def("write_pairs", &Runner::write_pairs, py::arg("path"), py::arg("pairs"))
      .def("write_text", &Runner::write_text, py::arg("path"), py::arg("text"))
      .def("read_output", &Runner::read_output, py::arg("path"));

  py::class_<kvstore::Store, std::shared_ptr<kvstore::Store>>(m, "Store")
      .def(py::init<std::size_t>(), py::arg("places"))
      .def_property_readonly("num_places", &kvstore::Store::num_places)
      .def("mkdirs", [](kvstore::Store& s, const std::string& p) { s.mkdirs(kvstore::StorePath::parse(p)); })
      .def("remove", [](kvstore::Store& s, const std::string& p) { s.remove(kvstore::StorePath::parse(p)); })
      .def("rename", [](kvstore::Store& s, const std::string& a, const std::string& b) {
        s.rename(kvstore::StorePath::parse(a), kvstore::StorePath::parse(b));
      })
      .def("exists", [](kvstore::Store& s, const std::string& p) {
        return s.find(kvstore::StorePath::parse(p)).has_value();
      })
      .def("info", [](kvstore::Store& s, const std::string& p) { return info_dict(s.get_info(kvstore::StorePath::parse(p))); })
      .def("list", [](kvstore::Store& s, const std::string& p) {
        py::list out;
        for (const auto& i : s.list(kvstore::StorePath::parse(p))) out.append(info_dict(i));
        return out;
      })
      .def("write", [](kvstore::Store& s, const std::string& p, const py::iterable& pairs, PlaceId at) {
        auto w = s.create_writer(kvstore::StorePath::parse(p), kvstore::BlockInfo{}, at);
        for (auto& pair : to_pairs(pairs)) w.add(std::move(pair));
        return w.close().block_id;
      }, py::arg("path"), py::arg("pairs"), py::arg("place") = 0, "Appends one block written at `place`.")
      .def("read", [](kvstore::Store& s, const std::string& p, PlaceId at) {
        const auto path = kvstore::StorePath::parse(p);
        std::vector<Pair> out;
        for (const auto& b : s.get_info(path).blocks) {
          auto r = s.create_reader(path, b, at);
          out.insert(out.end(), r.pairs().begin(), r.pairs().end());
        }
        return from_pairs(out);
      }, py::arg("path"), py::arg("place") = 0)
      .def("lock_entries", &kvstore::Store::lock_entries)
      .def("metadata_owner", [](const kvstore::Store& s, const std::string& p) {
        return s.metadata_owner(kvstore::StorePath::parse(p));
      });
}
