#include "memreduce/engine/job.hpp"

#include <algorithm>

#include "memreduce/core/codec.hpp"

namespace memreduce::engine {

Counters aggregate_counters(std::span<const Counters> parts) {
  Counters total;
  for (const auto& part : parts) {
    for (const auto& [name, value] : part) total[name] += value;
  }
  return total;
}

TaskContext::TaskContext(Options options, Sink sink, NamedSink named_sink)
    : opt_(options), sink_(std::move(sink)), named_sink_(std::move(named_sink)) {}

void TaskContext::emit(const Pair& pair) {
  if (closed_) throw Error(ErrorCode::EmitAfterTaskEnd, "emit after the task ended");
  if (!pair.key || !pair.value) throw Error(ErrorCode::InvalidArgument, "emit of an empty pair");
  ++emitted_;
  sink_(opt_.immutable_output || !opt_.clone_on_emit ? pair : deep_clone(pair));
}

void TaskContext::emit_named(std::string_view output, const Pair& pair) {
  if (closed_) throw Error(ErrorCode::EmitAfterTaskEnd, "emit after the task ended");
  const formats::NamedOutput* target = opt_.output ? opt_.output->find_named(output) : nullptr;
  if (!target || !named_sink_) throw Error(ErrorCode::UnknownNamedOutput, std::string(output));
  named_sink_(*target, opt_.immutable_output ? pair : deep_clone(pair));
}

void TaskContext::increment(std::string_view counter, std::int64_t delta) {
  if (delta < 0) throw Error(ErrorCode::InvalidArgument, "counters only grow");
  auto it = counters_.find(counter);
  if (it == counters_.end()) it = counters_.emplace(std::string(counter), 0).first;
  it->second += delta;
}

std::string TaskContext::property(std::string_view name, std::string_view fallback) const {
  if (opt_.properties) {
    auto it = opt_.properties->find(name);
    if (it != opt_.properties->end()) return it->second;
  }
  return std::string(fallback);
}

namespace {

class FnMapper final : public Mapper {
 public:
  explicit FnMapper(MapFn fn) : fn_(std::move(fn)) {}
  void map(const Pair& input, TaskContext& ctx) override { fn_(input, ctx); }

 private:
  MapFn fn_;
};

class FnReducer final : public Reducer {
 public:
  explicit FnReducer(ReduceFn fn) : fn_(std::move(fn)) {}
  void reduce(const KeyPtr& key, std::span<const Pair> group, TaskContext& ctx) override { fn_(key, group, ctx); }

 private:
  ReduceFn fn_;
};

}  // namespace

MapperFactory map_fn(MapFn fn) {
  return [fn = std::move(fn)] { return std::make_unique<FnMapper>(fn); };
}

ReducerFactory reduce_fn(ReduceFn fn) {
  return [fn = std::move(fn)] { return std::make_unique<FnReducer>(fn); };
}

MapperFactory identity_mapper() {
  return map_fn([](const Pair& p, TaskContext& ctx) { ctx.emit(p); });
}

ReducerFactory identity_reducer() {
  return reduce_fn([](const KeyPtr&, std::span<const Pair> group, TaskContext& ctx) {
    for (const auto& p : group) ctx.emit(p);
  });
}

ReducerFactory sum_reducer() {
  return reduce_fn([](const KeyPtr& key, std::span<const Pair> group, TaskContext& ctx) {
    std::int64_t total = 0;
    for (const auto& p : group) total += p.value->as_count();
    ctx.emit(Pair{key, std::make_shared<Value>(Value::of_count(total))});
  });
}

PartitionId hash_partition(const Key& key, std::size_t num_partitions) {
  if (num_partitions == 0) throw Error(ErrorCode::InvalidArgument, "no partitions");
  if (key.kind() == KeyKind::Int) {
    const auto n = static_cast<std::int64_t>(num_partitions);
    return static_cast<PartitionId>(((key.as_int() % n) + n) % n);
  }
  ByteWriter w;
  encode_key(w, key);
  const auto bytes = w.take();
  return static_cast<PartitionId>(fnv1a64(bytes) % num_partitions);
}

PartitionId row_partition(const Key& key, std::size_t num_partitions) {
  if (key.kind() == KeyKind::BlockIdx) {
    if (num_partitions == 0) throw Error(ErrorCode::InvalidArgument, "no partitions");
    const auto n = static_cast<std::int64_t>(num_partitions);
    return static_cast<PartitionId>(((key.as_block().row % n) + n) % n);
  }
  return hash_partition(key, num_partitions);
}

std::string JobConfig::property(std::string_view name, std::string_view fallback) const {
  auto it = properties.find(name);
  return it == properties.end() ? std::string(fallback) : it->second;
}

bool JobConfig::flag(std::string_view name) const {
  const std::string v = property(name);
  return v == "true" || v == "1" || v == "yes";
}

void JobConfig::validate() const {
  if (reducer && num_reducers == 0) throw Error(ErrorCode::InvalidJob, job_name + ": reducer with zero reducers");
  if (!reducer && num_reducers != 0) throw Error(ErrorCode::InvalidJob, job_name + ": numReducers > 0 needs a reducer");
  if (inputs.empty()) throw Error(ErrorCode::InvalidJob, job_name + ": no inputs");
  if (output.path.empty()) throw Error(ErrorCode::InvalidJob, job_name + ": no output path");
  if (input_mappers.size() > inputs.size()) throw Error(ErrorCode::InvalidJob, job_name + ": more mappers than inputs");
  if (combiner && !reducer) throw Error(ErrorCode::InvalidJob, job_name + ": combiner in a map-only job");
}

const MapperFactory& JobConfig::mapper_for(std::size_t input_index) const {
  static const MapperFactory identity = identity_mapper();
  if (input_index < input_mappers.size() && input_mappers[input_index]) return input_mappers[input_index];
  return mapper ? mapper : identity;
}

std::vector<std::pair<std::size_t, std::size_t>> sort_and_group(std::vector<Pair>& pairs, const KeyLess& less,
                                                                const KeyEquiv& equiv) {
  auto lt = [&](const Pair& a, const Pair& b) { return less ? less(*a.key, *b.key) : *a.key < *b.key; };
  std::stable_sort(pairs.begin(), pairs.end(), lt);
  auto same = [&](const Pair& a, const Pair& b) {
    if (equiv) return equiv(*a.key, *b.key);
    return !lt(a, b) && !lt(b, a);
  };
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= pairs.size(); ++i) {
    if (i == pairs.size() || !same(pairs[i - 1], pairs[i])) {
      if (i > begin) groups.emplace_back(begin, i);
      begin = i;
    }
  }
  return groups;
}

JobResult JobResult::failure(ErrorCode code, std::string diagnostic, JobMetrics metrics) {
  JobResult r;
  r.status = JobStatus::Failed;
  r.error = code;
  r.diagnostic = std::move(diagnostic);
  r.metrics = std::move(metrics);
  return r;
}

std::vector<JobResult> JobRunner::run_sequence(std::span<const JobConfig> jobs) {
  std::vector<JobResult> results;
  for (const auto& job : jobs) {
    results.push_back(submit(job));
    if (!results.back().ok()) break;
  }
  return results;
}

}  // namespace memreduce::engine
