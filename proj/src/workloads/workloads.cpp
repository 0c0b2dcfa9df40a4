#include "memreduce/workloads/workloads.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "memreduce/core/codec.hpp"
#include "memreduce/formats/formats.hpp"

namespace memreduce::workloads {

namespace fs = std::filesystem;
using engine::JobConfig;
using engine::TaskContext;

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic across platforms, unlike the standard distributions.
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_ - 0x9E3779B97F4A7C15ULL);
  }
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

std::string join(const std::string& dir, const std::string& name) {
  return dir.ends_with('/') ? dir + name : dir + "/" + name;
}

formats::InputFormatSpec pair_input(const std::string& path, std::size_t splits) {
  formats::InputFormatSpec in;
  in.kind = formats::InputKind::PairFile;
  in.path = path;
  in.target_split_count = std::max<std::size_t>(splits, 1);
  return in;
}

formats::OutputFormatSpec pair_output(const std::string& path) {
  formats::OutputFormatSpec out;
  out.kind = formats::OutputKind::PairFile;
  out.path = path;
  return out;
}

bool backing_exists(const fs::path& root, const std::string& path) {
  std::error_code ec;
  return fs::exists(formats::resolve(root, path), ec);
}

std::uint64_t value_id(const Value& v) {
  const auto& b = v.as_bytes();
  std::uint64_t id = 0;
  for (std::size_t i = 0; i < 8 && i < b.size(); ++i) id |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return id;
}

void quantize(ByteWriter& w, const std::vector<double>& xs) {
  w.u32(static_cast<std::uint32_t>(xs.size()));
  for (double x : xs) w.i64(std::llround(x * 1e6));
}

}  // namespace

std::uint64_t output_checksum(std::span<const Pair> pairs) {
  std::uint64_t sum = 0;
  std::vector<std::uint8_t> buf;
  for (const auto& p : pairs) {
    buf.clear();
    encode_pair_into(buf, p);
    sum += fnv1a64(buf);
  }
  return sum;
}

std::uint64_t quantized_checksum(std::span<const Pair> pairs) {
  std::uint64_t sum = 0;
  for (const auto& p : pairs) {
    ByteWriter w;
    encode_key(w, *p.key);
    const Value& v = *p.value;
    switch (v.kind()) {
      case ValueKind::DenseVec:
        w.u8(static_cast<std::uint8_t>(ValueKind::DenseVec));
        quantize(w, v.as_dense());
        break;
      case ValueKind::CscBlock: {
        const auto& c = v.as_csc();
        w.u8(static_cast<std::uint8_t>(ValueKind::CscBlock));
        w.u32(c.rows);
        w.u32(c.cols);
        for (auto x : c.col_ptr) w.u32(x);
        for (auto x : c.row_idx) w.u32(x);
        quantize(w, c.values);
        break;
      }
      default:
        encode_value(w, v);
    }
    sum += fnv1a64(w.take());
  }
  return sum;
}

bool same_multiset(std::span<const Pair> a, std::span<const Pair> b) {
  if (a.size() != b.size()) return false;
  auto encoded = [](std::span<const Pair> ps) {
    std::vector<std::vector<std::uint8_t>> out;
    out.reserve(ps.size());
    for (const auto& p : ps) out.push_back(encode_pair(p));
    std::sort(out.begin(), out.end());
    return out;
  };
  return encoded(a) == encoded(b);
}

bool SequenceResult::ok() const {
  auto good = [](const engine::JobResult& r) { return r.ok(); };
  return std::all_of(setup.begin(), setup.end(), good) && std::all_of(jobs.begin(), jobs.end(), good);
}

std::string SequenceResult::failure() const {
  for (const auto* list : {&setup, &jobs}) {
    for (const auto& r : *list) {
      if (!r.ok()) return std::string(to_string(r.error.value_or(ErrorCode::InvalidJob))) + ": " + r.diagnostic;
    }
  }
  return {};
}

bool PreparedSequence::ok() const {
  return std::all_of(setup.begin(), setup.end(), [](const engine::JobResult& r) { return r.ok(); });
}

std::string PreparedSequence::failure() const {
  for (const auto& r : setup) {
    if (!r.ok()) return std::string(to_string(r.error.value_or(ErrorCode::InvalidJob))) + ": " + r.diagnostic;
  }
  return {};
}

namespace {

SequenceResult run_prepared(engine::JobRunner& runner, PreparedSequence prep) {
  SequenceResult result;
  result.setup = std::move(prep.setup);
  if (!result.ok()) return result;
  result.jobs = runner.run_sequence(prep.jobs);
  result.output = prep.jobs.back().output.path;
  return result;
}

}  // namespace

JobConfig build_repartitioner(const std::string& input, const std::string& output, engine::Partitioner partitioner,
                              std::size_t num_reducers, std::size_t split_count) {
  JobConfig job;
  job.job_name = "repartition " + input;
  job.mapper = engine::identity_mapper();
  job.reducer = engine::identity_reducer();
  job.partitioner = std::move(partitioner);
  job.num_reducers = num_reducers;
  job.inputs = {pair_input(input, split_count)};
  job.output = pair_output(output);
  job.mapper_immutable_output = true;
  job.reducer_immutable_output = true;
  job.properties = {{"readOnlyInputs", "true"}, {"overwrite", "true"}};
  return job;
}

// --- microbenchmark ----------------------------------------------------------

std::vector<Pair> micro_pairs(const MicrobenchParams& params) {
  SplitMix rng(params.seed);
  const std::size_t width = std::max<std::size_t>(params.value_bytes, 8);
  std::vector<Pair> out;
  out.reserve(params.num_pairs);
  for (std::size_t i = 0; i < params.num_pairs; ++i) {
    Bytes b(width);
    for (std::size_t k = 0; k < 8; ++k) b[k] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(i) >> (8 * k));
    for (std::size_t k = 8; k < width; k += 8) {
      const std::uint64_t r = rng.next();
      for (std::size_t j = 0; j < 8 && k + j < width; ++j) b[k + j] = static_cast<std::uint8_t>(r >> (8 * j));
    }
    out.push_back(Pair::of(Key::of_int(static_cast<std::int64_t>(i)), Value::of_bytes(std::move(b))));
  }
  return out;
}

void generate_micro(const fs::path& backing_root, const std::string& path, const MicrobenchParams& params) {
  const auto pairs = micro_pairs(params);
  const fs::path file = formats::resolve(backing_root, join(path, "part-00000"));
  fs::create_directories(file.parent_path());
  formats::write_pair_file(file, pairs);
}

bool micro_goes_remote(std::uint64_t seed, std::size_t iteration, std::int64_t key, std::uint64_t value_id,
                       double remote_fraction) {
  if (remote_fraction <= 0) return false;
  if (remote_fraction >= 1) return true;
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ iteration);
  h = mix64(h ^ static_cast<std::uint64_t>(key));
  h = mix64(h ^ value_id);
  return static_cast<double>(h >> 11) * 0x1.0p-53 < remote_fraction;
}

std::vector<JobConfig> build_microbench(const MicrobenchParams& params, std::size_t num_places,
                                        const std::string& input) {
  const std::size_t reducers = num_places * std::max<std::size_t>(params.reducers_per_place, 1);
  std::vector<JobConfig> jobs;
  for (std::size_t it = 1; it <= params.iterations; ++it) {
    const std::string in = it == 1 ? input : join(params.root, "temp-iter" + std::to_string(it - 1));
    const std::string out =
        it == params.iterations ? join(params.root, "out") : join(params.root, "temp-iter" + std::to_string(it));
    JobConfig job;
    job.job_name = "micro iteration " + std::to_string(it);
    // Keys move to key+1, whose partition is homed at the next place over
    // (numReducers is a multiple of numPlaces and data sits at its partition).
    job.mapper = engine::map_fn([seed = params.seed, frac = params.remote_fraction, it](const Pair& p,
                                                                                        TaskContext& ctx) {
      const std::int64_t key = p.key->as_int();
      if (micro_goes_remote(seed, it, key, value_id(*p.value), frac)) {
        ctx.emit(Pair{std::make_shared<Key>(Key::of_int(key + 1)), p.value});
      } else {
        ctx.emit(p);
      }
    });
    job.reducer = engine::identity_reducer();
    job.partitioner = engine::hash_partition;
    job.num_reducers = reducers;
    job.inputs = {pair_input(in, reducers)};
    job.output = pair_output(out);
    job.mapper_immutable_output = true;
    job.reducer_immutable_output = true;
    job.properties = {{"readOnlyInputs", "true"}, {"overwrite", "true"}};
    job.cleanup_paths = {in};
    jobs.push_back(std::move(job));
  }
  return jobs;
}

PreparedSequence prepare_microbench(engine::JobRunner& runner, const MicrobenchParams& params) {
  const std::string generated = join(params.root, "input");
  const std::string placed = join(params.root, "placed");
  if (!backing_exists(runner.backing_root(), generated)) generate_micro(runner.backing_root(), generated, params);
  const std::size_t reducers = runner.num_places() * std::max<std::size_t>(params.reducers_per_place, 1);
  PreparedSequence prep;
  prep.setup.push_back(
      runner.submit(build_repartitioner(generated, placed, engine::hash_partition, reducers, reducers)));
  if (!prep.ok()) return prep;
  prep.jobs = build_microbench(params, runner.num_places(), placed);
  for (std::size_t i = 0; i < prep.jobs.size(); ++i) prep.iteration.push_back(i + 1);
  return prep;
}

SequenceResult run_microbench(engine::JobRunner& runner, const MicrobenchParams& params) {
  return run_prepared(runner, prepare_microbench(runner, params));
}

// --- word count --------------------------------------------------------------

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

template <typename F>
void for_each_token(const Bytes& line, F&& f) {
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t b = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > b) f(std::string(reinterpret_cast<const char*>(line.data() + b), i - b));
  }
}

// Reuses one key object for every emission, so it must not claim immutable output.
class ReusingWordMapper final : public engine::Mapper {
 public:
  void map(const Pair& input, TaskContext& ctx) override {
    for_each_token(input.value->as_bytes(), [&](std::string word) {
      word_->set_text(std::move(word));
      ctx.emit(word_, one_);
    });
  }

 private:
  KeyPtr word_ = std::make_shared<Key>(Key::of_text(""));
  ValuePtr one_ = std::make_shared<Value>(Value::of_count(1));
};

class FreshWordMapper final : public engine::Mapper {
 public:
  void map(const Pair& input, TaskContext& ctx) override {
    for_each_token(input.value->as_bytes(),
                   [&](std::string word) { ctx.emit(std::make_shared<Key>(Key::of_text(std::move(word))), one_); });
  }

 private:
  ValuePtr one_ = std::make_shared<Value>(Value::of_count(1));
};

const std::vector<std::string>& lexicon() {
  static const std::vector<std::string> words = [] {
    static const char* const onsets[] = {"b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v"};
    static const char* const nuclei[] = {"a", "e", "i", "o", "u", "ai", "ou", "ee"};
    static const char* const codas[] = {"", "n", "r", "s", "t", "ck"};
    std::vector<std::string> out;
    SplitMix rng(7);
    while (out.size() < 600) {
      std::string w;
      const std::size_t syllables = 1 + rng.below(3);
      for (std::size_t s = 0; s < syllables; ++s) {
        w += onsets[rng.below(std::size(onsets))];
        w += nuclei[rng.below(std::size(nuclei))];
        w += codas[rng.below(std::size(codas))];
      }
      out.push_back(std::move(w));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }();
  return words;
}

}  // namespace

std::string generate_text(std::size_t bytes, std::uint64_t seed) {
  const auto& words = lexicon();
  SplitMix rng(seed);
  std::string text;
  text.reserve(bytes + 128);
  while (text.size() < bytes) {
    const std::size_t n = 4 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i) {
      // Skewed draw so some words are frequent.
      const double u = rng.unit();
      const std::size_t idx = static_cast<std::size_t>(u * u * static_cast<double>(words.size()));
      if (i) text += ' ';
      text += words[std::min(idx, words.size() - 1)];
    }
    text += '\n';
  }
  return text;
}

void write_text(const fs::path& backing_root, const std::string& path, const std::string& text) {
  const fs::path file = formats::resolve(backing_root, path);
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoFailure, file.string());
}

JobConfig build_wordcount(const WordCountParams& params, std::size_t num_places) {
  JobConfig job;
  job.job_name = params.immutable_variant ? "wordcount (immutable)" : "wordcount";
  if (params.immutable_variant) {
    job.mapper = [] { return std::make_unique<FreshWordMapper>(); };
  } else {
    job.mapper = [] { return std::make_unique<ReusingWordMapper>(); };
  }
  if (params.combiner) job.combiner = engine::sum_reducer();
  job.reducer = engine::sum_reducer();
  job.partitioner = engine::hash_partition;
  job.num_reducers = params.num_reducers ? params.num_reducers : num_places;
  formats::InputFormatSpec in;
  in.kind = formats::InputKind::TextLine;
  in.path = params.input;
  in.target_split_count = params.split_count ? params.split_count : num_places;
  job.inputs = {in};
  job.output = pair_output(params.output);
  job.mapper_immutable_output = params.immutable_variant;
  job.reducer_immutable_output = params.immutable_variant;
  job.properties = {{"readOnlyInputs", "true"}};
  return job;
}

SequenceResult run_wordcount(engine::JobRunner& runner, const WordCountParams& params) {
  SequenceResult result;
  result.jobs.push_back(runner.submit(build_wordcount(params, runner.num_places())));
  result.output = params.output;
  return result;
}

std::vector<Pair> wordcount_oracle(const std::string& text) {
  std::map<std::string, std::int64_t> counts;
  Bytes all(text.begin(), text.end());
  for_each_token(all, [&](std::string w) { ++counts[std::move(w)]; });
  std::vector<Pair> out;
  for (auto& [w, c] : counts) out.push_back(Pair::of(Key::of_text(w), Value::of_count(c)));
  return out;
}

// --- matvec ------------------------------------------------------------------

MatvecData matvec_data(const MatvecParams& params) {
  if (params.sparsity <= 0 || params.sparsity > 1) throw Error(ErrorCode::InvalidArgument, "sparsity must be in (0,1]");
  if (params.blocks == 0 || params.block_size == 0) throw Error(ErrorCode::InvalidArgument, "empty matrix");
  SplitMix rng(params.seed);
  const auto b = static_cast<std::uint32_t>(params.block_size);
  MatvecData d;
  std::vector<double> dense(static_cast<std::size_t>(b) * b);
  for (std::size_t r = 0; r < params.blocks; ++r) {
    for (std::size_t c = 0; c < params.blocks; ++c) {
      for (auto& x : dense) x = rng.unit() < params.sparsity ? rng.unit() : 0.0;
      d.g.push_back(Pair::of(Key::of_block(static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)),
                             Value::of_csc(CscBlock::from_dense(b, b, dense))));
    }
  }
  for (std::size_t r = 0; r < params.blocks; ++r) {
    std::vector<double> v(b);
    for (auto& x : v) x = rng.unit();
    d.v.push_back(Pair::of(Key::of_block(static_cast<std::int32_t>(r), 0), Value::of_dense(std::move(v))));
  }
  return d;
}

void generate_matrix(const fs::path& backing_root, const std::string& g_path, const std::string& v_path,
                     const MatvecParams& params) {
  const auto d = matvec_data(params);
  for (const auto& [path, pairs] : {std::pair{g_path, &d.g}, std::pair{v_path, &d.v}}) {
    const fs::path file = formats::resolve(backing_root, join(path, "part-00000"));
    fs::create_directories(file.parent_path());
    formats::write_pair_file(file, *pairs);
  }
}

std::vector<JobConfig> build_matvec(const MatvecParams& params, std::size_t num_places, const std::string& g_input,
                                    const std::string& v_input) {
  const std::size_t reducers = num_places * std::max<std::size_t>(params.reducers_per_place, 1);
  const auto rows = static_cast<std::int32_t>(params.blocks);
  std::vector<JobConfig> jobs;
  for (std::size_t t = 0; t < params.iterations; ++t) {
    const std::string v_in = t == 0 ? v_input : join(params.root, "V" + std::to_string(t));
    const std::string partial = join(params.root, "temp-partial-" + std::to_string(t + 1));
    const std::string v_out = join(params.root, "V" + std::to_string(t + 1));

    JobConfig multiply;
    multiply.job_name = "matvec multiply " + std::to_string(t + 1);
    multiply.input_mappers = {
        engine::identity_mapper(),
        // Broadcast: the same V value object goes to every block row.
        engine::map_fn([rows](const Pair& p, TaskContext& ctx) {
          const auto col = p.key->as_block().row;
          for (std::int32_t r = 0; r < rows; ++r) ctx.emit(Pair{std::make_shared<Key>(Key::of_block(r, col)), p.value});
        }),
    };
    multiply.reducer = engine::reduce_fn([](const KeyPtr& key, std::span<const Pair> group, TaskContext& ctx) {
      const CscBlock* g = nullptr;
      const std::vector<double>* v = nullptr;
      for (const auto& p : group) {
        if (p.value->kind() == ValueKind::CscBlock) g = &p.value->as_csc();
        if (p.value->kind() == ValueKind::DenseVec) v = &p.value->as_dense();
      }
      if (!g || !v) return;
      ctx.emit(Pair{key, std::make_shared<Value>(Value::of_dense(g->multiply(*v)))});
    });
    multiply.partitioner = engine::row_partition;
    multiply.num_reducers = reducers;
    multiply.inputs = {pair_input(g_input, reducers), pair_input(v_in, reducers)};
    multiply.output = pair_output(partial);
    multiply.mapper_immutable_output = true;
    multiply.reducer_immutable_output = true;
    multiply.properties = {{"readOnlyInputs", "true"}, {"overwrite", "true"}};
    jobs.push_back(std::move(multiply));

    JobConfig sum;
    sum.job_name = "matvec sum " + std::to_string(t + 1);
    sum.mapper = engine::map_fn([](const Pair& p, TaskContext& ctx) {
      ctx.emit(Pair{std::make_shared<Key>(Key::of_block(p.key->as_block().row, 0)), p.value});
    });
    sum.reducer = engine::reduce_fn([](const KeyPtr& key, std::span<const Pair> group, TaskContext& ctx) {
      std::vector<double> acc = group.front().value->as_dense();
      for (std::size_t i = 1; i < group.size(); ++i) {
        const auto& x = group[i].value->as_dense();
        if (x.size() != acc.size()) throw Error(ErrorCode::DimensionMismatch, "partial vector length mismatch");
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += x[k];
      }
      ctx.emit(Pair{key, std::make_shared<Value>(Value::of_dense(std::move(acc)))});
    });
    sum.partitioner = engine::row_partition;
    sum.num_reducers = reducers;
    sum.inputs = {pair_input(partial, reducers)};
    sum.output = pair_output(v_out);
    sum.mapper_immutable_output = true;
    sum.reducer_immutable_output = true;
    sum.properties = {{"readOnlyInputs", "true"}, {"overwrite", "true"}};
    sum.cleanup_paths = {partial};
    jobs.push_back(std::move(sum));
  }
  return jobs;
}

PreparedSequence prepare_matvec(engine::JobRunner& runner, const MatvecParams& params) {
  const std::string g_gen = join(params.root, "G-gen");
  const std::string v_gen = join(params.root, "V-gen");
  const std::string g = join(params.root, "G");
  const std::string v0 = join(params.root, "V0");
  if (!backing_exists(runner.backing_root(), g_gen) || !backing_exists(runner.backing_root(), v_gen)) {
    generate_matrix(runner.backing_root(), g_gen, v_gen, params);
  }
  const std::size_t reducers = runner.num_places() * std::max<std::size_t>(params.reducers_per_place, 1);
  PreparedSequence prep;
  prep.setup.push_back(runner.submit(build_repartitioner(g_gen, g, engine::row_partition, reducers, reducers)));
  if (!prep.ok()) return prep;
  prep.setup.push_back(runner.submit(build_repartitioner(v_gen, v0, engine::row_partition, reducers, reducers)));
  if (!prep.ok()) return prep;
  prep.jobs = build_matvec(params, runner.num_places(), g, v0);
  for (std::size_t i = 0; i < prep.jobs.size(); ++i) prep.iteration.push_back(i / 2 + 1);
  return prep;
}

SequenceResult run_matvec(engine::JobRunner& runner, const MatvecParams& params) {
  return run_prepared(runner, prepare_matvec(runner, params));
}

std::vector<double> assemble_vector(std::span<const Pair> blocks, std::size_t num_blocks, std::size_t block_size) {
  std::vector<double> out(num_blocks * block_size, 0.0);
  for (const auto& p : blocks) {
    const auto idx = p.key->as_block();
    const auto& v = p.value->as_dense();
    if (idx.row < 0 || static_cast<std::size_t>(idx.row) >= num_blocks || v.size() != block_size) {
      throw Error(ErrorCode::DimensionMismatch, "vector block out of shape");
    }
    std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(idx.row * block_size));
  }
  return out;
}

std::vector<double> matvec_oracle(const MatvecParams& params) {
  const auto d = matvec_data(params);
  const std::size_t b = params.block_size;
  const std::size_t n = params.blocks * b;
  std::vector<double> dense(n * n, 0.0);  // row-major
  for (const auto& p : d.g) {
    const auto idx = p.key->as_block();
    const auto& c = p.value->as_csc();
    for (std::uint32_t col = 0; col < c.cols; ++col) {
      for (std::uint32_t k = c.col_ptr[col]; k < c.col_ptr[col + 1]; ++k) {
        const std::size_t gr = static_cast<std::size_t>(idx.row) * b + c.row_idx[k];
        const std::size_t gc = static_cast<std::size_t>(idx.col) * b + col;
        dense[gr * n + gc] = c.values[k];
      }
    }
  }
  std::vector<double> x = assemble_vector(d.v, params.blocks, b);
  for (std::size_t it = 0; it < params.iterations; ++it) {
    std::vector<double> y(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < n; ++c) s += dense[r * n + c] * x[c];
      y[r] = s;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace memreduce::workloads
