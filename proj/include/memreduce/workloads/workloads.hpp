#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "memreduce/engine/job.hpp"

namespace memreduce::workloads {

// --- multiset helpers ----------------------------------------------------------

// Order-independent 64-bit hash: wrap-around sum of fnv1a64(encoded pair).
std::uint64_t output_checksum(std::span<const Pair> pairs);
// Same, with DENSEVEC / CSC values rounded to 1e-6 first.
std::uint64_t quantized_checksum(std::span<const Pair> pairs);
bool same_multiset(std::span<const Pair> a, std::span<const Pair> b);

// --- runs --------------------------------------------------------------------

struct SequenceResult {
  std::vector<engine::JobResult> setup;  // generation-side jobs (repartitioning)
  std::vector<engine::JobResult> jobs;   // the measured jobs
  std::string output;                    // final output path

  bool ok() const;
  std::string failure() const;
};

// Setup already run (data generated, inputs repartitioned) and the measured
// jobs still to be submitted, for drivers that step through a sequence.
struct PreparedSequence {
  std::vector<engine::JobResult> setup;
  std::vector<engine::JobConfig> jobs;
  std::vector<std::size_t> iteration;  // 1-based, per job

  bool ok() const;
  std::string failure() const;
};

// Identity job re-homing `input` so partition p lives at partitionToPlace(p).
engine::JobConfig build_repartitioner(const std::string& input, const std::string& output,
                                      engine::Partitioner partitioner, std::size_t num_reducers,
                                      std::size_t split_count);

// --- microbenchmark ----------------------------------------------------------

struct MicrobenchParams {
  std::size_t num_pairs = 100000;
  std::size_t value_bytes = 1000;
  double remote_fraction = 0.0;
  std::size_t iterations = 3;
  std::uint64_t seed = 1;
  std::size_t reducers_per_place = 1;
  std::string root = "/micro";
};

// Ascending INT keys 0..n-1; BYTES values whose first 8 bytes hold the pair id.
std::vector<Pair> micro_pairs(const MicrobenchParams& params);
void generate_micro(const std::filesystem::path& backing_root, const std::string& path,
                    const MicrobenchParams& params);
// Decides whether a pair is re-keyed to the adjacent place; engine-independent.
bool micro_goes_remote(std::uint64_t seed, std::size_t iteration, std::int64_t key, std::uint64_t value_id,
                       double remote_fraction);
std::vector<engine::JobConfig> build_microbench(const MicrobenchParams& params, std::size_t num_places,
                                                const std::string& input);
PreparedSequence prepare_microbench(engine::JobRunner& runner, const MicrobenchParams& params);
SequenceResult run_microbench(engine::JobRunner& runner, const MicrobenchParams& params);

// --- word count --------------------------------------------------------------

struct WordCountParams {
  std::string input = "/wc/input";
  std::string output = "/wc/out";
  bool immutable_variant = true;
  std::size_t num_reducers = 0;  // 0 => one per place
  std::size_t split_count = 0;   // 0 => one per place
  bool combiner = true;
};

std::string generate_text(std::size_t bytes, std::uint64_t seed);
void write_text(const std::filesystem::path& backing_root, const std::string& path, const std::string& text);
engine::JobConfig build_wordcount(const WordCountParams& params, std::size_t num_places);
SequenceResult run_wordcount(engine::JobRunner& runner, const WordCountParams& params);
// Single-pass reference count.
std::vector<Pair> wordcount_oracle(const std::string& text);

// --- blocked matrix-vector multiply -----------------------------------------

struct MatvecParams {
  std::size_t block_size = 100;
  std::size_t blocks = 5;  // block rows == block columns
  double sparsity = 0.01;
  std::size_t iterations = 3;
  std::uint64_t seed = 1;
  std::size_t reducers_per_place = 1;
  std::string root = "/matvec";
};

struct MatvecData {
  std::vector<Pair> g;  // every block (r, c), CSC
  std::vector<Pair> v;  // blocks (r, 0), DENSEVEC
};

MatvecData matvec_data(const MatvecParams& params);
void generate_matrix(const std::filesystem::path& backing_root, const std::string& g_path, const std::string& v_path,
                     const MatvecParams& params);
// Two jobs per iteration: multiply (G pass-through + V broadcast), then sum.
std::vector<engine::JobConfig> build_matvec(const MatvecParams& params, std::size_t num_places,
                                            const std::string& g_input, const std::string& v_input);
PreparedSequence prepare_matvec(engine::JobRunner& runner, const MatvecParams& params);
SequenceResult run_matvec(engine::JobRunner& runner, const MatvecParams& params);

// Dense reference: G^iterations * V, as one flat vector.
std::vector<double> matvec_oracle(const MatvecParams& params);
// Flattens V blocks keyed (r, 0) into one vector.
std::vector<double> assemble_vector(std::span<const Pair> blocks, std::size_t num_blocks, std::size_t block_size);

}  // namespace memreduce::workloads
