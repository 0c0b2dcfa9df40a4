#include "memreduce/engine/engine.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <future>
#include <map>
#include <random>

#include <boost/asio/post.hpp>
#include <boost/asio/thread_pool.hpp>

#include "memreduce/core/codec.hpp"
#include "memreduce/core/placement.hpp"

namespace memreduce::engine {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

void EngineConfig::validate() const {
  if (num_places == 0) throw Error(ErrorCode::InvalidArgument, "numPlaces must be >= 1");
  if (workers_per_place == 0) throw Error(ErrorCode::InvalidArgument, "workersPerPlace must be >= 1");
  if (batch_bytes == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
}

namespace {

std::string part_name(std::string_view dir, std::string_view stem, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", std::string(stem).c_str(), index);
  std::string out(dir);
  if (!out.ends_with('/')) out += '/';
  return out + buf;
}

class Countdown {
 public:
  explicit Countdown(std::size_t n) : n_(n) {}
  void done() {
    std::lock_guard lk(mu_);
    if (n_ > 0 && --n_ == 0) cv_.notify_all();
  }
  bool wait_for(std::chrono::seconds timeout) {
    std::unique_lock lk(mu_);
    return cv_.wait_for(lk, timeout, [&] { return n_ == 0; });
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

// Map output destined for one partition, from one task (seq 0 = local route,
// otherwise the 1-based batch sequence number of a remote batch).
struct Chunk {
  std::uint32_t task = 0;
  std::uint32_t seq = 0;
  std::vector<Pair> pairs;
};

struct RawBatch {
  std::uint32_t task = 0;
  std::uint32_t seq = 0;
  std::vector<std::uint8_t> frame;  // full payload; records start at kShuffleHeader
};

// [u32 source place][u64 job id][u32 task index][u32 batch seq]
constexpr std::size_t kShuffleHeader = 4 + 8 + 4 + 4;

struct Inbox {
  std::mutex mu;
  std::vector<RawBatch> raw;
  std::size_t barriers = 0;
};

// Exceptions escaping user code become UserFunctionError; engine-side errors
// raised while the user function was on the stack keep their code.
template <typename F>
void user_call(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::TransportFailure:
      case ErrorCode::CacheFull:
      case ErrorCode::IoFailure:
      case ErrorCode::EmitAfterTaskEnd:
      case ErrorCode::UnknownNamedOutput:
        throw;
      default:
        throw Error(ErrorCode::UserFunctionError, e.what());
    }
  } catch (const std::exception& e) {
    throw Error(ErrorCode::UserFunctionError, e.what());
  } catch (...) {
    throw Error(ErrorCode::UserFunctionError, "non-standard exception from user code");
  }
}

}  // namespace

struct JobRun {
  std::uint64_t id = 0;
  const JobConfig* job = nullptr;
  std::size_t places = 1;
  std::size_t reducers = 0;
  Partitioner partitioner;

  std::vector<std::unique_ptr<Inbox>> inbox;
  std::unique_ptr<Countdown> delivered;

  std::vector<std::unique_ptr<std::mutex>> part_mu;
  std::vector<std::vector<Chunk>> part_chunks;

  std::atomic<std::uint64_t> bytes_local{0}, bytes_remote{0}, pairs_local{0}, pairs_remote{0};
  std::atomic<std::uint64_t> readers{0}, hits{0}, misses{0}, output_pairs{0};

  std::mutex mu;
  std::vector<DestinationShuffle> remote_by_place;
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

  void add_chunk(PartitionId part, Chunk chunk) {
    std::lock_guard lk(*part_mu[part]);
    part_chunks[part].push_back(std::move(chunk));
  }

  PartitionId partition_of(const Key& key) const {
    PartitionId p = 0;
    user_call([&] { p = partitioner(key, reducers); });
    if (p >= reducers) {
      throw Error(ErrorCode::UserFunctionError,
                  "partitioner returned " + std::to_string(p) + " for " + std::to_string(reducers) + " partitions");
    }
    return p;
  }
};

struct Engine::Impl {
  Engine* owner = nullptr;
  std::vector<std::unique_ptr<boost::asio::thread_pool>> pools;
  std::unique_ptr<Transport> transport;

  std::mutex submit_mu;
  std::mutex state_mu;
  bool in_flight = false;
  bool down = false;

  std::mutex run_mu;
  std::shared_ptr<JobRun> current;
  std::atomic<std::uint64_t> next_job{1};

  mutable std::mutex ev_mu;
  std::vector<Event> events;
  std::atomic<std::uint64_t> ev_seq{0};

  std::mutex ctl_mu;
  std::map<std::uint64_t, std::promise<kvstore::StoreResponse>> pending;
  std::atomic<std::uint64_t> next_request{1};

  const EngineConfig& cfg() const { return owner->config_; }

  void log(std::uint64_t job, EventKind kind, PlaceId place, std::uint64_t detail) {
    if (!cfg().record_events) return;
    std::lock_guard lk(ev_mu);
    events.push_back(Event{ev_seq++, job, kind, place, detail});
  }

  template <typename F>
  void post(PlaceId place, F&& f) {
    boost::asio::post(*pools[place], std::forward<F>(f));
  }

  std::shared_ptr<JobRun> run_for(std::uint64_t job) {
    std::lock_guard lk(run_mu);
    if (current && current->id == job) return current;
    return nullptr;
  }

  void on_frame(PlaceId dst, FrameType type, std::vector<std::uint8_t> payload);
  void deliver(const std::shared_ptr<JobRun>& run, PlaceId place);
  void map_task(const std::shared_ptr<JobRun>& run, std::size_t task, PlaceId place, const formats::Split& split);
  void reduce_task(const std::shared_ptr<JobRun>& run, PartitionId part, PlaceId place);
  void write_named(const JobRun& run, PlaceId place, std::string_view stem, std::size_t index,
                   std::map<std::string, std::vector<Pair>>& named);
  JobResult execute(const JobConfig& job);
};

void Engine::Impl::on_frame(PlaceId dst, FrameType type, std::vector<std::uint8_t> payload) {
  ByteReader r(payload);
  switch (type) {
    case FrameType::ShuffleBatch: {
      const PlaceId src = r.u32();
      const std::uint64_t job = r.u64();
      const std::uint32_t task = r.u32();
      const std::uint32_t seq = r.u32();
      (void)src;
      auto run = run_for(job);
      if (!run) return;  // stale frame of a finished job
      std::lock_guard lk(run->inbox[dst]->mu);
      run->inbox[dst]->raw.push_back(RawBatch{task, seq, std::move(payload)});
      return;
    }
    case FrameType::Barrier: {
      r.u32();
      const std::uint64_t job = r.u64();
      auto run = run_for(job);
      if (!run) return;
      bool complete = false;
      {
        std::lock_guard lk(run->inbox[dst]->mu);
        complete = ++run->inbox[dst]->barriers == run->places - 1;
      }
      if (complete) post(dst, [this, run, dst] { deliver(run, dst); });
      return;
    }
    case FrameType::Control: {
      const PlaceId src = r.u32();
      const std::uint8_t op = r.peek_u8();
      auto body = r.take(r.remaining());
      if (op & kvstore::kResponseBit) {
        auto resp = kvstore::decode_response(body);
        std::lock_guard lk(ctl_mu);
        auto it = pending.find(resp.request_id);
        if (it != pending.end()) {
          it->second.set_value(std::move(resp));
          pending.erase(it);
        }
        return;
      }
      auto req = kvstore::decode_request(body);
      post(dst, [this, src, dst, req = std::move(req)] {
        auto resp = kvstore::execute(*owner->store_, req);
        std::vector<std::uint8_t> out;
        ByteWriter w(out);
        w.u32(dst);
        w.bytes(kvstore::encode_response(resp));
        try {
          transport->send(dst, src, FrameType::Control, std::move(out));
        } catch (const Error&) {
          // requester times out
        }
      });
      return;
    }
  }
}

void Engine::Impl::deliver(const std::shared_ptr<JobRun>& run, PlaceId place) {
  std::vector<RawBatch> raw;
  {
    std::lock_guard lk(run->inbox[place]->mu);
    raw.swap(run->inbox[place]->raw);
  }
  std::sort(raw.begin(), raw.end(),
            [](const RawBatch& a, const RawBatch& b) { return std::tie(a.task, a.seq) < std::tie(b.task, b.seq); });
  try {
    for (auto& b : raw) {
      auto pairs = deserialize_batch(std::span<const std::uint8_t>(b.frame).subspan(kShuffleHeader));
      std::map<PartitionId, std::vector<Pair>> by_part;
      for (auto& p : pairs) by_part[run->partition_of(*p.key)].push_back(std::move(p));
      for (auto& [part, list] : by_part) run->add_chunk(part, Chunk{b.task, b.seq, std::move(list)});
    }
  } catch (const Error& e) {
    run->fail(e.code(), e.what());
  }
  log(run->id, EventKind::DeliveryComplete, place, raw.size());
  run->delivered->done();
}

void Engine::Impl::write_named(const JobRun& run, PlaceId place, std::string_view stem, std::size_t index,
                               std::map<std::string, std::vector<Pair>>& named) {
  for (auto& [name, pairs] : named) {
    const auto* desc = run.job->output.find_named(name);
    cachefs::OutputOptions opt;
    opt.format = desc->kind;
    opt.temp_prefix = run.job->property("tempPrefix", cachefs::kDefaultTempPrefix);
    opt.producer_immutable = true;
    owner->fs_->write_output(part_name(desc->path, stem, index), std::nullopt, pairs, place, opt);
  }
}

void Engine::Impl::map_task(const std::shared_ptr<JobRun>& run, std::size_t task, PlaceId place,
                            const formats::Split& split) {
  if (run->failed) return;
  const JobConfig& job = *run->job;
  log(run->id, EventKind::MapStart, place, task);
  try {
    auto input = owner->fs_->read_input(split, place, job.flag("readOnlyInputs"));
    run->readers += input.metrics.reader_invocations;
    run->hits += input.metrics.cache_hits;
    run->misses += input.metrics.cache_misses;

    const bool map_only = run->reducers == 0;
    const bool mapper_flag = job.mapper_immutable_output;
    const bool combine = static_cast<bool>(job.combiner);

    // Routing state for this task.
    std::vector<std::vector<Pair>> local(map_only ? 0 : run->reducers);
    std::vector<std::unique_ptr<BatchEncoder>> encoders(run->places);
    std::vector<std::uint32_t> batch_seq(run->places, 0);
    std::vector<Pair> map_output;  // map-only output or combiner input
    std::map<std::string, std::vector<Pair>> named;
    std::uint64_t bytes_local = 0, pairs_local = 0, pairs_remote = 0;

    auto flush = [&](PlaceId dest) {
      auto& enc = encoders[dest];
      if (!enc || enc->empty()) return;
      ShuffleBatch batch = enc->finish();
      std::vector<std::uint8_t> payload;
      payload.reserve(kShuffleHeader + batch.records.size());
      ByteWriter w(payload);
      w.u32(place);
      w.u64(run->id);
      w.u32(static_cast<std::uint32_t>(task));
      w.u32(++batch_seq[dest]);
      w.bytes(batch.records);
      {
        std::lock_guard lk(run->mu);
        auto& d = run->remote_by_place[dest];
        ++d.batches;
        d.bytes += batch.records.size();
        d.pairs += batch.stats.entries;
        d.value_refs += batch.stats.value_refs;
        for (std::size_t k = 0; k < d.value_literals_by_kind.size(); ++k) {
          d.value_literals_by_kind[k] += batch.stats.value_literals_by_kind[k];
        }
      }
      run->bytes_remote += batch.records.size();
      log(run->id, EventKind::BatchSent, place, dest);
      transport->send(place, dest, FrameType::ShuffleBatch, std::move(payload));
    };

    // Unflagged pairs are copied here: serialized into the batch when remote,
    // round-tripped through the codec when local.
    auto route = [&](Pair pair, bool immutable) {
      const PartitionId part = run->partition_of(*pair.key);
      const PlaceId dest = partition_to_place(part, run->places);
      if (dest == place) {
        if (!immutable) {
          const auto bytes = encode_pair(pair);
          bytes_local += bytes.size();
          pair = decode_pair(bytes).pair;
        }
        local[part].push_back(std::move(pair));
        ++pairs_local;
        return;
      }
      auto& enc = encoders[dest];
      if (!enc) enc = std::make_unique<BatchEncoder>(dest, cfg().dedup);
      enc->add(pair, immutable);
      ++pairs_remote;
      if (enc->byte_length() >= cfg().batch_bytes) flush(dest);
    };

    TaskContext::Options opt;
    opt.job_id = run->id;
    opt.place = place;
    opt.task_index = task;
    opt.immutable_output = mapper_flag;
    opt.clone_on_emit = false;
    opt.properties = &job.properties;
    opt.output = &job.output;

    TaskContext::Sink sink;
    if (map_only || combine) {
      sink = [&](Pair p) { map_output.push_back(mapper_flag ? std::move(p) : deep_clone(p)); };
    } else {
      sink = [&](Pair p) { route(std::move(p), mapper_flag); };
    }
    auto named_sink = [&](const formats::NamedOutput& out, Pair p) { named[out.name].push_back(std::move(p)); };
    auto ctx = std::make_shared<TaskContext>(opt, sink, named_sink);

    std::unique_ptr<Mapper> mapper;
    user_call([&] { mapper = job.mapper_for(split.input_index())(); });
    if (!mapper) throw Error(ErrorCode::UserFunctionError, "mapper factory returned null");
    user_call([&] { mapper->setup(*ctx); });
    for (const auto& rec : input.pairs) {
      if (run->failed) break;
      user_call([&] { mapper->map(rec, *ctx); });
    }
    user_call([&] { mapper->cleanup(*ctx); });
    ctx->close();
    Counters counters = ctx->counters();

    if (combine && !run->failed) {
      auto groups = sort_and_group(map_output, job.sort_comparator, job.group_comparator);
      TaskContext::Options copt = opt;
      copt.immutable_output = job.reducer_immutable_output;
      auto cctx = std::make_shared<TaskContext>(
          copt, [&](Pair p) { route(std::move(p), job.reducer_immutable_output); }, named_sink);
      std::unique_ptr<Reducer> combiner;
      user_call([&] { combiner = job.combiner(); });
      if (!combiner) throw Error(ErrorCode::UserFunctionError, "combiner factory returned null");
      user_call([&] { combiner->setup(*cctx); });
      for (const auto& [b, e] : groups) {
        std::span<const Pair> group(map_output.data() + b, e - b);
        user_call([&] { combiner->reduce(group.front().key, group, *cctx); });
      }
      user_call([&] { combiner->cleanup(*cctx); });
      cctx->close();
      for (const auto& [name, v] : cctx->counters()) counters[name] += v;
      map_output.clear();
    }

    if (run->failed) return;
    if (map_only) {
      cachefs::OutputOptions oo;
      oo.format = job.output.kind;
      oo.temp_prefix = job.property("tempPrefix", cachefs::kDefaultTempPrefix);
      oo.producer_immutable = true;
      run->output_pairs += map_output.size();
      owner->fs_->write_output(part_name(job.output.path, "part-m", task), split.placement, map_output, place, oo);
    } else {
      for (PlaceId d = 0; d < run->places; ++d) flush(d);
      for (PartitionId part = 0; part < local.size(); ++part) {
        if (!local[part].empty()) {
          run->add_chunk(part, Chunk{static_cast<std::uint32_t>(task), 0, std::move(local[part])});
        }
      }
      run->bytes_local += bytes_local;
      run->pairs_local += pairs_local;
      run->pairs_remote += pairs_remote;
    }
    write_named(*run, place, "part-m", task, named);
    std::lock_guard lk(run->mu);
    run->counters.push_back(std::move(counters));
  } catch (const Error& e) {
    run->fail(e.code(), e.what());
  } catch (const std::exception& e) {
    run->fail(ErrorCode::UserFunctionError, e.what());
  }
  log(run->id, EventKind::MapEnd, place, task);
}

void Engine::Impl::reduce_task(const std::shared_ptr<JobRun>& run, PartitionId part, PlaceId place) {
  if (run->failed) return;
  const JobConfig& job = *run->job;
  try {
    std::vector<Chunk> chunks;
    {
      std::lock_guard lk(*run->part_mu[part]);
      chunks.swap(run->part_chunks[part]);
    }
    std::sort(chunks.begin(), chunks.end(),
              [](const Chunk& a, const Chunk& b) { return std::tie(a.task, a.seq) < std::tie(b.task, b.seq); });
    std::vector<Pair> input;
    std::size_t total = 0;
    for (const auto& c : chunks) total += c.pairs.size();
    input.reserve(total);
    for (auto& c : chunks) std::move(c.pairs.begin(), c.pairs.end(), std::back_inserter(input));
    chunks.clear();

    auto groups = sort_and_group(input, job.sort_comparator, job.group_comparator);
    std::vector<Pair> output;
    std::map<std::string, std::vector<Pair>> named;
    TaskContext::Options opt;
    opt.job_id = run->id;
    opt.place = place;
    opt.partition = part;
    opt.task_index = part;
    opt.immutable_output = job.reducer_immutable_output;
    opt.properties = &job.properties;
    opt.output = &job.output;
    auto ctx = std::make_shared<TaskContext>(
        opt, [&](Pair p) { output.push_back(std::move(p)); },
        [&](const formats::NamedOutput& out, Pair p) { named[out.name].push_back(std::move(p)); });

    std::unique_ptr<Reducer> reducer;
    user_call([&] { reducer = job.reducer(); });
    if (!reducer) throw Error(ErrorCode::UserFunctionError, "reducer factory returned null");
    user_call([&] { reducer->setup(*ctx); });
    for (const auto& [b, e] : groups) {
      if (run->failed) break;
      log(run->id, EventKind::ReduceGroupStart, place, part);
      std::span<const Pair> group(input.data() + b, e - b);
      user_call([&] { reducer->reduce(group.front().key, group, *ctx); });
    }
    user_call([&] { reducer->cleanup(*ctx); });
    ctx->close();
    if (run->failed) return;

    cachefs::OutputOptions oo;
    oo.format = job.output.kind;
    oo.temp_prefix = job.property("tempPrefix", cachefs::kDefaultTempPrefix);
    oo.producer_immutable = true;  // already cloned at emission when unflagged
    run->output_pairs += output.size();
    owner->fs_->write_output(part_name(job.output.path, "part", part), part, output, place, oo);
    write_named(*run, place, "part", part, named);
    std::lock_guard lk(run->mu);
    run->counters.push_back(ctx->counters());
  } catch (const Error& e) {
    run->fail(e.code(), e.what());
  } catch (const std::exception& e) {
    run->fail(ErrorCode::UserFunctionError, e.what());
  }
  log(run->id, EventKind::ReduceEnd, place, part);
}

JobResult Engine::Impl::execute(const JobConfig& job) {
  const auto start = Clock::now();
  auto& cfs = *owner->fs_;
  const std::size_t P = cfg().num_places;

  auto run = std::make_shared<JobRun>();
  run->id = next_job++;
  run->job = &job;
  run->places = P;
  run->reducers = job.num_reducers;
  run->partitioner = job.partitioner ? job.partitioner : Partitioner(hash_partition);
  run->remote_by_place.resize(P);
  for (std::size_t p = 0; p < P; ++p) run->inbox.push_back(std::make_unique<Inbox>());
  for (std::size_t r = 0; r < run->reducers; ++r) run->part_mu.push_back(std::make_unique<std::mutex>());
  run->part_chunks.resize(run->reducers);

  JobMetrics metrics;
  auto finish = [&](JobResult result) {
    result.metrics.wall_millis = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count());
    std::lock_guard lk(run_mu);
    current.reset();
    return result;
  };

  try {
    job.validate();
  } catch (const Error& e) {
    return finish(JobResult::failure(e.code(), e.what()));
  }

  // Output existence.
  std::vector<std::string> outputs{job.output.path};
  for (const auto& n : job.output.named_outputs) outputs.push_back(n.path);
  try {
    for (const auto& out : outputs) {
      if (!cfs.exists(out)) continue;
      if (!job.flag("overwrite")) {
        return finish(JobResult::failure(ErrorCode::OutputAlreadyExists, out));
      }
      cfs.remove(out);
    }
  } catch (const Error& e) {
    return finish(JobResult::failure(e.code(), e.what()));
  }

  // Splits and their places.
  std::vector<formats::Split> splits;
  try {
    std::vector<std::vector<formats::Split>> per_input;
    for (const auto& in : job.inputs) per_input.push_back(cfs.compute_splits(in));
    splits = per_input.size() == 1 ? std::move(per_input.front()) : formats::multiplex_inputs(per_input);
  } catch (const Error& e) {
    return finish(JobResult::failure(e.code(), e.what()));
  }
  std::vector<PlaceId> task_place(splits.size());
  std::size_t rr = 0;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i].placement) {
      task_place[i] = partition_to_place(*splits[i].placement, P);
    } else if (auto home = cfs.cached_home(splits[i])) {
      task_place[i] = *home;
    } else {
      task_place[i] = static_cast<PlaceId>(rr++ % P);
    }
  }
  metrics.map_task_places = task_place;
  if (run->reducers > 0) metrics.partition_places = placement_map(run->reducers, P);

  {
    std::lock_guard lk(run_mu);
    current = run;
  }

  // Map phase.
  {
    Countdown maps(splits.size());
    for (std::size_t i = 0; i < splits.size(); ++i) {
      post(task_place[i], [this, run, i, &splits, &task_place, &maps] {
        map_task(run, i, task_place[i], splits[i]);
        maps.done();
      });
    }
    maps.wait();
  }

  if (run->reducers > 0 && !run->failed) {
    // Shuffle barrier: each place tells every peer it has sent everything;
    // a place is delivery-complete once it heard from all peers.
    run->delivered = std::make_unique<Countdown>(P);
    if (P == 1) {
      post(0, [this, run] { deliver(run, 0); });
    } else {
      try {
        for (PlaceId src = 0; src < P; ++src) {
          for (PlaceId dst = 0; dst < P; ++dst) {
            if (src == dst) continue;
            std::vector<std::uint8_t> payload;
            ByteWriter w(payload);
            w.u32(src);
            w.u64(run->id);
            transport->send(src, dst, FrameType::Barrier, std::move(payload));
          }
        }
      } catch (const Error& e) {
        run->fail(e.code(), e.what());
      }
    }
    if (!run->failed && !run->delivered->wait_for(std::chrono::seconds(600))) {
      run->fail(ErrorCode::TransportFailure, "shuffle barrier timed out");
    }
    if (!run->failed) {
      log(run->id, EventKind::BarrierReleased, 0, 0);
      Countdown reduces(run->reducers);
      for (PartitionId r = 0; r < run->reducers; ++r) {
        const PlaceId place = partition_to_place(r, P);
        post(place, [this, run, r, place, &reduces] {
          reduce_task(run, r, place);
          reduces.done();
        });
      }
      reduces.wait();
    }
  }

  metrics.bytes_serialized_local = run->bytes_local;
  metrics.bytes_serialized_remote = run->bytes_remote;
  metrics.pairs_shuffled_local = run->pairs_local;
  metrics.pairs_shuffled_remote = run->pairs_remote;
  metrics.reader_invocations = run->readers;
  metrics.cache_hits = run->hits;
  metrics.cache_misses = run->misses;
  metrics.output_pairs = run->output_pairs;
  {
    std::lock_guard lk(run->mu);
    metrics.remote_by_place = run->remote_by_place;
    metrics.user_counters = aggregate_counters(run->counters);
  }

  if (run->failed) {
    for (const auto& out : outputs) {
      try {
        cfs.remove(out);
      } catch (const Error&) {
      }
    }
    return finish(JobResult::failure(*run->error, run->diagnostic, std::move(metrics)));
  }

  auto raw = cfs.raw_cache();
  for (const auto& path : job.cleanup_paths) {
    try {
      raw.remove(path);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotFound) throw;
    }
  }
  JobResult ok;
  ok.metrics = std::move(metrics);
  return finish(std::move(ok));
}

Engine::Engine(EngineConfig config) : config_(std::move(config)), impl_(std::make_unique<Impl>()) {
  config_.validate();
  impl_->owner = this;
  if (config_.backing_root.empty()) {
    static std::atomic<std::uint64_t> counter{0};
    std::random_device rd;
    config_.backing_root = fs::temp_directory_path() /
                           ("memreduce-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    owns_backing_root_ = true;
  }
  store_ = std::make_shared<kvstore::Store>(config_.num_places);
  fs_ = std::make_unique<cachefs::CacheFs>(store_, config_.backing_root, config_.cache_enabled);
  for (std::size_t p = 0; p < config_.num_places; ++p) {
    impl_->pools.push_back(std::make_unique<boost::asio::thread_pool>(config_.workers_per_place));
  }
  auto handler = [impl = impl_.get()](PlaceId dst, FrameType type, std::vector<std::uint8_t> payload) {
    impl->on_frame(dst, type, std::move(payload));
  };
  try {
    if (config_.transport == TransportKind::Socket) {
      impl_->transport = make_socket_transport(config_.num_places, config_.socket_base_port, handler);
    } else {
      impl_->transport = make_inprocess_transport(config_.num_places, handler);
    }
  } catch (...) {
    for (auto& pool : impl_->pools) pool->join();
    if (owns_backing_root_) {
      std::error_code ec;
      fs::remove_all(config_.backing_root, ec);
    }
    throw;
  }
}

Engine::~Engine() {
  try {
    shutdown();
  } catch (...) {
  }
  if (owns_backing_root_) {
    std::error_code ec;
    fs::remove_all(config_.backing_root, ec);
  }
}

JobResult Engine::submit(const JobConfig& job) {
  std::lock_guard serial(impl_->submit_mu);
  {
    std::lock_guard lk(impl_->state_mu);
    if (impl_->down) throw Error(ErrorCode::EngineDown, "engine is shut down");
    impl_->in_flight = true;
  }
  JobResult result;
  try {
    result = impl_->execute(job);
  } catch (const Error& e) {
    result = JobResult::failure(e.code(), e.what());
  }
  std::lock_guard lk(impl_->state_mu);
  impl_->in_flight = false;
  return result;
}

std::vector<Pair> Engine::read_output(std::string_view path) {
  try {
    return fs_->cache_record_reader(path);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotInCache) throw;
  }
  return formats::read_pair_files(backing_root(), path);
}

void Engine::shutdown() {
  {
    std::lock_guard lk(impl_->state_mu);
    if (impl_->down) return;
    if (impl_->in_flight) throw Error(ErrorCode::JobInFlight, "a job is running");
    impl_->down = true;
  }
  impl_->transport->stop();
  for (auto& pool : impl_->pools) pool->join();
  std::lock_guard lk(impl_->ctl_mu);
  impl_->pending.clear();
}

bool Engine::running() const {
  std::lock_guard lk(impl_->state_mu);
  return !impl_->down;
}

std::vector<PlaceId> Engine::partition_map(std::size_t num_reducers) const {
  return placement_map(num_reducers, config_.num_places);
}

kvstore::StoreResponse Engine::store_call(PlaceId from, PlaceId to, kvstore::StoreRequest request) {
  if (!running()) throw Error(ErrorCode::EngineDown, "engine is shut down");
  request.request_id = impl_->next_request++;
  std::future<kvstore::StoreResponse> fut;
  {
    std::lock_guard lk(impl_->ctl_mu);
    fut = impl_->pending[request.request_id].get_future();
  }
  std::vector<std::uint8_t> payload;
  ByteWriter w(payload);
  w.u32(from);
  w.bytes(kvstore::encode_request(request));
  impl_->transport->send(from, to, FrameType::Control, std::move(payload));
  if (fut.wait_for(std::chrono::seconds(30)) != std::future_status::ready) {
    std::lock_guard lk(impl_->ctl_mu);
    impl_->pending.erase(request.request_id);
    throw Error(ErrorCode::TransportFailure, "no response to store request");
  }
  return fut.get();
}

std::vector<Event> Engine::events() const {
  std::lock_guard lk(impl_->ev_mu);
  return impl_->events;
}

void Engine::clear_events() {
  std::lock_guard lk(impl_->ev_mu);
  impl_->events.clear();
}

std::uint64_t Engine::transport_bytes() const { return impl_->transport->bytes_sent(); }

}  // namespace memreduce::engine
