#include "memreduce/baseline/baseline.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <queue>
#include <random>

#include <boost/asio/post.hpp>
#include <boost/asio/thread_pool.hpp>

#include "memreduce/cachefs/cache_fs.hpp"
#include "memreduce/core/codec.hpp"
#include "memreduce/core/placement.hpp"

namespace memreduce::baseline {

namespace fs = std::filesystem;
using engine::Counters;
using engine::JobConfig;
using engine::JobMetrics;
using engine::JobResult;
using engine::KeyLess;
using engine::TaskContext;

void BaselineConfig::validate() const {
  if (num_places == 0) throw Error(ErrorCode::InvalidArgument, "numPlaces must be >= 1");
  if (workers_per_place == 0) throw Error(ErrorCode::InvalidArgument, "workersPerPlace must be >= 1");
  if (spill_threshold_records == 0) throw Error(ErrorCode::InvalidArgument, "spillThresholdRecords must be >= 1");
  if (merge_fan_in < 2) throw Error(ErrorCode::InvalidArgument, "mergeFanIn must be >= 2");
}

namespace {

constexpr std::size_t kReadChunk = std::size_t{1} << 20;

[[noreturn]] void spill_error(const fs::path& file, std::string_view what) {
  throw Error(ErrorCode::SpillIoFailure, file.string() + ": " + std::string(what));
}

class RunWriter {
 public:
  explicit RunWriter(const fs::path& file) : file_(file), out_(file, std::ios::binary | std::ios::trunc) {
    if (!out_) spill_error(file, "cannot create");
    buf_.assign(formats::kPairFileMagic.begin(), formats::kPairFileMagic.end());
  }

  void add(const Pair& p) {
    encode_pair_into(buf_, p);
    if (buf_.size() >= kReadChunk) flush();
  }

  std::uint64_t position() const { return written_ + buf_.size(); }

  void close() {
    flush();
    out_.close();
    if (!out_) spill_error(file_, "write failed");
  }

  void raw(std::span<const std::uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
    if (buf_.size() >= kReadChunk) flush();
  }

 private:
  void flush() {
    out_.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out_) spill_error(file_, "write failed");
    written_ += buf_.size();
    buf_.clear();
  }

  fs::path file_;
  std::ofstream out_;
  std::vector<std::uint8_t> buf_;
  std::uint64_t written_ = 0;
};

// Streams the records of a run file without loading it whole.
class RunReader {
 public:
  explicit RunReader(const fs::path& file) : file_(file), in_(file, std::ios::binary) {
    if (!in_) spill_error(file, "cannot open");
    refill();
    const auto magic = formats::kPairFileMagic;
    if (buf_.size() < magic.size() || !std::equal(magic.begin(), magic.end(), buf_.begin())) {
      throw Error(ErrorCode::BadMagic, file.string());
    }
    pos_ = magic.size();
  }

  bool next(Pair& out) {
    for (;;) {
      if (pos_ == buf_.size() && !refill()) return false;
      std::span<const std::uint8_t> rest(buf_.data() + pos_, buf_.size() - pos_);
      try {
        const std::size_t len = formats::record_length(rest);
        out = decode_pair(rest.first(len)).pair;
        pos_ += len;
        return true;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::MalformedRecord) throw;
        if (!refill()) spill_error(file_, "truncated record");
      }
    }
  }

 private:
  bool refill() {
    if (eof_) return false;
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
    const std::size_t old = buf_.size();
    buf_.resize(old + kReadChunk);
    in_.read(reinterpret_cast<char*>(buf_.data() + old), static_cast<std::streamsize>(kReadChunk));
    const auto got = static_cast<std::size_t>(in_.gcount());
    buf_.resize(old + got);
    if (got < kReadChunk) eof_ = true;
    return got > 0;
  }

  fs::path file_;
  std::ifstream in_;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  bool eof_ = false;
};

bool key_less(const KeyLess& less, const Pair& a, const Pair& b) {
  return less ? less(*a.key, *b.key) : *a.key < *b.key;
}

// Merges runs into `sink`, stable by run order.
template <typename Sink>
void merge_runs(std::span<const fs::path> runs, const KeyLess& less, Sink&& sink) {
  std::vector<std::unique_ptr<RunReader>> readers;
  struct Head {
    Pair pair;
    std::size_t run;
  };
  auto greater = [&](const Head& a, const Head& b) {
    if (key_less(less, b.pair, a.pair)) return true;
    if (key_less(less, a.pair, b.pair)) return false;
    return a.run > b.run;
  };
  std::priority_queue<Head, std::vector<Head>, decltype(greater)> heap(greater);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    readers.push_back(std::make_unique<RunReader>(runs[i]));
    Pair p;
    if (readers.back()->next(p)) heap.push(Head{std::move(p), i});
  }
  while (!heap.empty()) {
    Head h = heap.top();
    heap.pop();
    Pair p;
    if (readers[h.run]->next(p)) heap.push(Head{std::move(p), h.run});
    sink(std::move(h.pair));
  }
}

std::string numbered(std::string_view stem, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", std::string(stem).c_str(), index);
  return buf;
}

class Countdown {
 public:
  explicit Countdown(std::size_t n) : n_(n) {}
  void done() {
    std::lock_guard lk(mu_);
    if (n_ > 0 && --n_ == 0) cv_.notify_all();
  }
  void wait() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return n_ == 0; });
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t n_;
};

}  // namespace

SpillSegment write_spill_segment(const fs::path& file, std::span<const std::vector<Pair>> per_partition) {
  SpillSegment seg;
  seg.file = file;
  RunWriter w(file);
  for (const auto& part : per_partition) {
    const std::uint64_t begin = w.position();
    for (const auto& p : part) w.add(p);
    seg.ranges.emplace_back(begin, w.position() - begin);
    seg.records += part.size();
  }
  std::vector<std::uint8_t> trailer;
  ByteWriter t(trailer);
  t.u32(static_cast<std::uint32_t>(seg.ranges.size()));
  for (const auto& [off, len] : seg.ranges) {
    t.u64(off);
    t.u64(len);
  }
  w.raw(trailer);
  w.close();
  seg.bytes = fs::file_size(file);
  return seg;
}

SpillSegment open_spill_segment(const fs::path& file, std::size_t num_partitions) {
  std::error_code ec;
  const std::uint64_t size = fs::file_size(file, ec);
  if (ec) spill_error(file, ec.message());
  const std::uint64_t trailer = 4 + 16 * static_cast<std::uint64_t>(num_partitions);
  if (size < formats::kPairFileMagic.size() + trailer) spill_error(file, "too short for a trailer");
  std::ifstream in(file, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(size - trailer));
  std::vector<std::uint8_t> bytes(trailer);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(trailer));
  if (!in) spill_error(file, "cannot read trailer");
  ByteReader r(bytes);
  if (r.u32() != num_partitions) spill_error(file, "trailer partition count mismatch");
  SpillSegment seg;
  seg.file = file;
  seg.bytes = size;
  for (std::size_t i = 0; i < num_partitions; ++i) {
    const std::uint64_t off = r.u64();
    const std::uint64_t len = r.u64();
    if (off + len > size - trailer) spill_error(file, "partition range out of bounds");
    seg.ranges.emplace_back(off, len);
  }
  return seg;
}

std::uint64_t fetch_partition(const SpillSegment& segment, std::size_t partition, const fs::path& run_file) {
  if (partition >= segment.ranges.size()) throw Error(ErrorCode::InvalidArgument, "partition out of range");
  const auto [off, len] = segment.ranges[partition];
  std::ifstream in(segment.file, std::ios::binary);
  if (!in) spill_error(segment.file, "cannot open");
  in.seekg(static_cast<std::streamoff>(off));
  RunWriter w(run_file);
  std::vector<std::uint8_t> buf;
  std::uint64_t left = len;
  while (left > 0) {
    buf.resize(static_cast<std::size_t>(std::min<std::uint64_t>(left, kReadChunk)));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) spill_error(segment.file, "short read");
    w.raw(buf);
    left -= buf.size();
  }
  w.close();
  return len;
}

std::vector<Pair> external_merge_sort(std::span<const fs::path> runs, const KeyLess& less, std::size_t fan_in,
                                      const fs::path& scratch_dir, MergeStats* stats) {
  if (fan_in < 2) throw Error(ErrorCode::InvalidArgument, "merge fan-in must be >= 2");
  std::vector<fs::path> current(runs.begin(), runs.end());
  std::size_t pass = 0;
  while (current.size() > fan_in) {
    std::error_code ec;
    fs::create_directories(scratch_dir, ec);
    if (ec) spill_error(scratch_dir, ec.message());
    std::vector<fs::path> next;
    for (std::size_t i = 0; i < current.size(); i += fan_in) {
      const std::size_t n = std::min(fan_in, current.size() - i);
      if (n == 1) {
        next.push_back(current[i]);
        continue;
      }
      const fs::path out = scratch_dir / ("merge-" + std::to_string(pass) + "-" + std::to_string(next.size()));
      RunWriter w(out);
      merge_runs(std::span<const fs::path>(current).subspan(i, n), less, [&](Pair p) { w.add(p); });
      w.close();
      if (stats) stats->bytes_written += fs::file_size(out);
      next.push_back(out);
    }
    current = std::move(next);
    ++pass;
  }
  if (stats) stats->intermediate_passes = pass;
  std::vector<Pair> out;
  merge_runs(current, less, [&](Pair p) { out.push_back(std::move(p)); });
  return out;
}

struct BaselineEngine::Impl {
  std::vector<std::unique_ptr<boost::asio::thread_pool>> pools;
  std::mutex submit_mu;
  std::atomic<std::uint64_t> next_job{1};
};

namespace {

struct MapOutput {
  PlaceId place = 0;
  std::vector<SpillSegment> segments;
  // records per partition per segment (kept from the write)
  std::vector<std::vector<std::uint64_t>> counts;
};

struct Run {
  const JobConfig* job = nullptr;
  const BaselineConfig* cfg = nullptr;
  std::uint64_t id = 0;
  fs::path scratch;
  std::size_t reducers = 0;
  engine::Partitioner partitioner;
  std::atomic<std::int64_t>* resident = nullptr;

  std::vector<MapOutput> maps;
  std::atomic<std::uint64_t> readers{0}, spill_bytes{0}, fetch_bytes{0}, output_pairs{0};
  std::atomic<std::uint64_t> spill_segments{0}, merge_passes{0};
  std::atomic<std::uint64_t> bytes_local{0}, bytes_remote{0}, pairs_local{0}, pairs_remote{0};
  std::mutex mu;
  std::vector<Counters> counters;
  std::atomic<bool> failed{false};
  std::optional<ErrorCode> error;
  std::string diagnostic;

  void fail(ErrorCode code, std::string message) {
    std::lock_guard lk(mu);
    if (!error) {
      error = code;
      diagnostic = std::move(message);
    }
    failed = true;
  }
};

template <typename F>
void user_call(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SpillIoFailure || e.code() == ErrorCode::EmitAfterTaskEnd ||
        e.code() == ErrorCode::UnknownNamedOutput) {
      throw;
    }
    throw Error(ErrorCode::UserFunctionError, e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::UserFunctionError, e.what());
  } catch (...) {
    throw Error(ErrorCode::UserFunctionError, "non-standard exception from user code");
  }
}

void write_backing(const fs::path& root, const std::string& path, formats::OutputKind kind,
                   std::span<const Pair> pairs) {
  const fs::path file = formats::resolve(root, path);
  std::error_code ec;
  fs::create_directories(file.parent_path(), ec);
  if (ec) throw Error(ErrorCode::IoFailure, file.string() + ": " + ec.message());
  if (kind == formats::OutputKind::TextLine) {
    formats::write_text_file(file, pairs);
  } else {
    formats::write_pair_file(file, pairs);
  }
}

std::string join(std::string_view dir, const std::string& name) {
  std::string out(dir);
  if (!out.ends_with('/')) out += '/';
  return out + name;
}

void write_named(const Run& run, std::string_view stem, std::size_t index,
                 std::map<std::string, std::vector<Pair>>& named) {
  for (auto& [name, pairs] : named) {
    const auto* desc = run.job->output.find_named(name);
    write_backing(run.cfg->backing_root, join(desc->path, numbered(stem, index)), desc->kind, pairs);
  }
}

void map_task(Run& run, std::size_t task, PlaceId place, const formats::Split& split) {
  if (run.failed) return;
  const JobConfig& job = *run.job;
  std::int64_t resident = 0;
  try {
    auto input = formats::read_split(split, run.cfg->backing_root);
    ++run.readers;
    resident += static_cast<std::int64_t>(input.size());
    *run.resident += static_cast<std::int64_t>(input.size());

    const bool map_only = run.reducers == 0;
    std::vector<std::vector<Pair>> buffer(std::max<std::size_t>(run.reducers, 1));
    std::size_t buffered = 0;
    std::vector<Pair> direct;
    std::map<std::string, std::vector<Pair>> named;
    Counters counters;
    MapOutput& out = run.maps[task];
    out.place = place;

    auto spill = [&] {
      if (buffered == 0) return;
      for (auto& part : buffer) {
        std::stable_sort(part.begin(), part.end(),
                         [&](const Pair& a, const Pair& b) { return key_less(job.sort_comparator, a, b); });
      }
      if (job.combiner) {
        for (auto& part : buffer) {
          if (part.empty()) continue;
          auto groups = engine::sort_and_group(part, job.sort_comparator, job.group_comparator);
          std::vector<Pair> combined;
          TaskContext::Options o;
          o.job_id = run.id;
          o.place = place;
          o.task_index = task;
          o.immutable_output = job.reducer_immutable_output;
          o.properties = &job.properties;
          o.output = &job.output;
          auto cctx = std::make_shared<TaskContext>(o, [&](Pair p) { combined.push_back(std::move(p)); });
          std::unique_ptr<engine::Reducer> combiner;
          user_call([&] { combiner = job.combiner(); });
          user_call([&] { combiner->setup(*cctx); });
          for (const auto& [b, e] : groups) {
            std::span<const Pair> g(part.data() + b, e - b);
            user_call([&] { combiner->reduce(g.front().key, g, *cctx); });
          }
          user_call([&] { combiner->cleanup(*cctx); });
          cctx->close();
          for (const auto& [n, v] : cctx->counters()) counters[n] += v;
          std::stable_sort(combined.begin(), combined.end(),
                           [&](const Pair& a, const Pair& b) { return key_less(job.sort_comparator, a, b); });
          part = std::move(combined);
        }
      }
      const fs::path file = run.scratch / ("spill-" + std::to_string(place) + "-" + std::to_string(task) + "-" +
                                           std::to_string(out.segments.size()));
      SpillSegment seg = write_spill_segment(file, buffer);
      std::vector<std::uint64_t> counts;
      for (auto& part : buffer) {
        counts.push_back(part.size());
        part.clear();
      }
      run.spill_bytes += seg.bytes;
      ++run.spill_segments;
      out.segments.push_back(std::move(seg));
      out.counts.push_back(std::move(counts));
      *run.resident -= static_cast<std::int64_t>(buffered);
      resident -= static_cast<std::int64_t>(buffered);
      buffered = 0;
    };

    TaskContext::Options opt;
    opt.job_id = run.id;
    opt.place = place;
    opt.task_index = task;
    opt.immutable_output = job.mapper_immutable_output;
    opt.properties = &job.properties;
    opt.output = &job.output;
    auto ctx = std::make_shared<TaskContext>(
        opt,
        [&](Pair p) {
          if (map_only) {
            direct.push_back(std::move(p));
            return;
          }
          PartitionId part = 0;
          user_call([&] { part = run.partitioner(*p.key, run.reducers); });
          if (part >= run.reducers) throw Error(ErrorCode::UserFunctionError, "partitioner out of range");
          buffer[part].push_back(std::move(p));
          ++buffered;
          ++resident;
          ++*run.resident;
          if (buffered >= run.cfg->spill_threshold_records) spill();
        },
        [&](const formats::NamedOutput& o, Pair p) { named[o.name].push_back(std::move(p)); });

    std::unique_ptr<engine::Mapper> mapper;
    user_call([&] { mapper = job.mapper_for(split.input_index())(); });
    if (!mapper) throw Error(ErrorCode::UserFunctionError, "mapper factory returned null");
    user_call([&] { mapper->setup(*ctx); });
    for (const auto& rec : input) {
      if (run.failed) break;
      user_call([&] { mapper->map(rec, *ctx); });
    }
    user_call([&] { mapper->cleanup(*ctx); });
    ctx->close();
    for (const auto& [n, v] : ctx->counters()) counters[n] += v;
    *run.resident -= static_cast<std::int64_t>(input.size());
    resident -= static_cast<std::int64_t>(input.size());
    input.clear();

    if (map_only) {
      run.output_pairs += direct.size();
      write_backing(run.cfg->backing_root, join(job.output.path, numbered("part-m", task)), job.output.kind, direct);
    } else {
      spill();
    }
    write_named(run, "part-m", task, named);
    std::lock_guard lk(run.mu);
    run.counters.push_back(std::move(counters));
  } catch (const Error& e) {
    run.fail(e.code(), e.what());
  } catch (const std::exception& e) {
    run.fail(ErrorCode::UserFunctionError, e.what());
  }
  *run.resident -= resident;
}

void reduce_task(Run& run, PartitionId part, PlaceId place) {
  if (run.failed) return;
  const JobConfig& job = *run.job;
  std::int64_t resident = 0;
  try {
    const fs::path dir = run.scratch / ("reduce-" + std::to_string(part));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) spill_error(dir, ec.message());
    std::vector<fs::path> runs;
    for (std::size_t t = 0; t < run.maps.size(); ++t) {
      const auto& m = run.maps[t];
      for (std::size_t s = 0; s < m.segments.size(); ++s) {
        if (m.segments[s].ranges[part].second == 0) continue;
        // Read the segment back through its trailer, as a separate process would.
        const SpillSegment seg = open_spill_segment(m.segments[s].file, run.reducers);
        const fs::path run_file = dir / ("fetch-" + std::to_string(runs.size()));
        const std::uint64_t bytes = fetch_partition(seg, part, run_file);
        run.fetch_bytes += bytes;
        const std::uint64_t pairs = m.counts[s][part];
        if (m.place == place) {
          run.bytes_local += bytes;
          run.pairs_local += pairs;
        } else {
          run.bytes_remote += bytes;
          run.pairs_remote += pairs;
        }
        runs.push_back(run_file);
      }
    }
    MergeStats merge_stats;
    auto input = external_merge_sort(runs, job.sort_comparator, run.cfg->merge_fan_in, dir / "merge", &merge_stats);
    for (auto seen = run.merge_passes.load(); seen < merge_stats.intermediate_passes &&
                                             !run.merge_passes.compare_exchange_weak(seen, merge_stats.intermediate_passes);) {
    }
    resident = static_cast<std::int64_t>(input.size());
    *run.resident += resident;
    auto groups = engine::sort_and_group(input, job.sort_comparator, job.group_comparator);

    std::vector<Pair> output;
    std::map<std::string, std::vector<Pair>> named;
    TaskContext::Options opt;
    opt.job_id = run.id;
    opt.place = place;
    opt.partition = part;
    opt.task_index = part;
    opt.immutable_output = job.reducer_immutable_output;
    opt.properties = &job.properties;
    opt.output = &job.output;
    auto ctx = std::make_shared<TaskContext>(
        opt, [&](Pair p) { output.push_back(std::move(p)); },
        [&](const formats::NamedOutput& o, Pair p) { named[o.name].push_back(std::move(p)); });
    std::unique_ptr<engine::Reducer> reducer;
    user_call([&] { reducer = job.reducer(); });
    if (!reducer) throw Error(ErrorCode::UserFunctionError, "reducer factory returned null");
    user_call([&] { reducer->setup(*ctx); });
    for (const auto& [b, e] : groups) {
      if (run.failed) break;
      std::span<const Pair> g(input.data() + b, e - b);
      user_call([&] { reducer->reduce(g.front().key, g, *ctx); });
    }
    user_call([&] { reducer->cleanup(*ctx); });
    ctx->close();
    run.output_pairs += output.size();
    write_backing(run.cfg->backing_root, join(job.output.path, numbered("part", part)), job.output.kind, output);
    write_named(run, "part", part, named);
    fs::remove_all(dir, ec);
    std::lock_guard lk(run.mu);
    run.counters.push_back(ctx->counters());
  } catch (const Error& e) {
    run.fail(e.code(), e.what());
  } catch (const std::exception& e) {
    run.fail(ErrorCode::UserFunctionError, e.what());
  }
  *run.resident -= resident;
}

}  // namespace

BaselineEngine::BaselineEngine(BaselineConfig config)
    : config_(std::move(config)), resident_(std::make_shared<std::atomic<std::int64_t>>(0)),
      impl_(std::make_unique<Impl>()) {
  config_.validate();
  if (config_.backing_root.empty()) {
    static std::atomic<std::uint64_t> counter{0};
    std::random_device rd;
    config_.backing_root =
        fs::temp_directory_path() / ("memreduce-base-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    owns_backing_root_ = true;
  }
  std::error_code ec;
  fs::create_directories(config_.backing_root, ec);
  if (config_.scratch_root.empty()) config_.scratch_root = config_.backing_root / "_scratch";
  for (std::size_t p = 0; p < config_.num_places; ++p) {
    impl_->pools.push_back(std::make_unique<boost::asio::thread_pool>(config_.workers_per_place));
  }
}

BaselineEngine::~BaselineEngine() {
  for (auto& pool : impl_->pools) pool->join();
  if (owns_backing_root_) {
    std::error_code ec;
    fs::remove_all(config_.backing_root, ec);
  }
}

std::vector<Pair> BaselineEngine::read_output(std::string_view path) {
  return formats::read_pair_files(config_.backing_root, path);
}

JobResult BaselineEngine::submit(const JobConfig& job) {
  std::lock_guard serial(impl_->submit_mu);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t P = config_.num_places;
  auto elapsed = [&] {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count());
  };
  auto fail = [&](ErrorCode code, std::string msg, JobMetrics m = {}) {
    auto r = JobResult::failure(code, std::move(msg), std::move(m));
    r.metrics.wall_millis = elapsed();
    return r;
  };

  try {
    job.validate();
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  }

  std::vector<std::string> outputs{job.output.path};
  for (const auto& n : job.output.named_outputs) outputs.push_back(n.path);
  for (const auto& out : outputs) {
    const fs::path p = formats::resolve(config_.backing_root, out);
    std::error_code ec;
    if (!fs::exists(p, ec)) continue;
    if (!job.flag("overwrite")) return fail(ErrorCode::OutputAlreadyExists, out);
    fs::remove_all(p, ec);
  }

  std::vector<formats::Split> splits;
  try {
    std::vector<std::vector<formats::Split>> per_input;
    for (const auto& in : job.inputs) per_input.push_back(formats::compute_splits(in, config_.backing_root));
    splits = per_input.size() == 1 ? std::move(per_input.front()) : formats::multiplex_inputs(per_input);
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  }

  Run run;
  run.job = &job;
  run.cfg = &config_;
  run.id = impl_->next_job++;
  run.reducers = job.num_reducers;
  run.partitioner = job.partitioner ? job.partitioner : engine::Partitioner(engine::hash_partition);
  run.resident = resident_.get();
  run.maps.resize(splits.size());
  run.scratch = config_.scratch_root / ("job-" + std::to_string(run.id));
  {
    std::error_code ec;
    fs::create_directories(run.scratch, ec);
    if (ec) return fail(ErrorCode::SpillIoFailure, run.scratch.string() + ": " + ec.message());
  }

  JobMetrics metrics;
  metrics.map_task_places.resize(splits.size());
  {
    Countdown maps(splits.size());
    for (std::size_t i = 0; i < splits.size(); ++i) {
      const auto place = static_cast<PlaceId>(i % P);
      metrics.map_task_places[i] = place;
      boost::asio::post(*impl_->pools[place], [&, i, place] {
        map_task(run, i, place, splits[i]);
        maps.done();
      });
    }
    maps.wait();
  }

  if (!run.failed && run.reducers > 0) {
    // Reduce placement is re-drawn for every job.
    std::mt19937_64 rng(config_.seed ^ (0x9E3779B97F4A7C15ULL * run.id));
    metrics.partition_places.resize(run.reducers);
    for (auto& p : metrics.partition_places) p = static_cast<PlaceId>(rng() % P);
    Countdown reduces(run.reducers);
    for (PartitionId r = 0; r < run.reducers; ++r) {
      const PlaceId place = metrics.partition_places[r];
      boost::asio::post(*impl_->pools[place], [&, r, place] {
        reduce_task(run, r, place);
        reduces.done();
      });
    }
    reduces.wait();
  }

  std::error_code ec;
  fs::remove_all(run.scratch, ec);

  metrics.bytes_serialized_local = run.bytes_local;
  metrics.bytes_serialized_remote = run.bytes_remote;
  metrics.pairs_shuffled_local = run.pairs_local;
  metrics.pairs_shuffled_remote = run.pairs_remote;
  metrics.reader_invocations = run.readers;
  metrics.spill_bytes = run.spill_bytes;
  metrics.spill_segments = run.spill_segments;
  metrics.merge_passes = run.merge_passes;
  metrics.fetch_bytes = run.fetch_bytes;
  metrics.output_pairs = run.output_pairs;
  metrics.user_counters = engine::aggregate_counters(run.counters);

  if (run.failed) {
    for (const auto& out : outputs) fs::remove_all(formats::resolve(config_.backing_root, out), ec);
    return fail(*run.error, run.diagnostic, std::move(metrics));
  }

  const std::string prefix = job.property("tempPrefix", cachefs::kDefaultTempPrefix);
  for (const auto& path : job.cleanup_paths) {
    if (cachefs::is_temporary(path, prefix)) fs::remove_all(formats::resolve(config_.backing_root, path), ec);
  }
  JobResult ok;
  ok.metrics = std::move(metrics);
  ok.metrics.wall_millis = elapsed();
  return ok;
}

}  // namespace memreduce::baseline
