#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memreduce/engine/job.hpp"

namespace memreduce::baseline {

struct BaselineConfig {
  std::size_t num_places = 1;
  std::size_t workers_per_place = 1;
  std::size_t spill_threshold_records = 100000;
  std::size_t merge_fan_in = 10;
  std::uint64_t seed = 1;  // reduce placement is drawn from this, per job
  // Empty => a fresh directory under the system temp dir.
  std::filesystem::path backing_root;
  // Empty => <backing_root>/_scratch
  std::filesystem::path scratch_root;

  void validate() const;
};

// A sorted run on disk: container file whose records are grouped by
// partition, followed by a trailer [u32 count][count x (u64 offset, u64 length)].
struct SpillSegment {
  std::filesystem::path file;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;  // per partition, absolute offsets
  std::uint64_t records = 0;
  std::uint64_t bytes = 0;  // file size
};

// `per_partition[r]` must already be sorted.
SpillSegment write_spill_segment(const std::filesystem::path& file, std::span<const std::vector<Pair>> per_partition);
SpillSegment open_spill_segment(const std::filesystem::path& file, std::size_t num_partitions);
// Copies one partition range into a standalone run file; returns bytes copied.
std::uint64_t fetch_partition(const SpillSegment& segment, std::size_t partition, const std::filesystem::path& run_file);

struct MergeStats {
  std::size_t intermediate_passes = 0;  // passes writing merged runs back to disk
  std::uint64_t bytes_written = 0;
};

// k-way merge of sorted run files with at most `fan_in` inputs per merge.
// Ties keep run order. Intermediate runs go to `scratch_dir`.
std::vector<Pair> external_merge_sort(std::span<const std::filesystem::path> runs, const engine::KeyLess& less,
                                      std::size_t fan_in, const std::filesystem::path& scratch_dir,
                                      MergeStats* stats = nullptr);

// Hadoop-style engine: every map output is serialized to local spill files,
// fetched per partition and merged from disk; nothing is kept between jobs.
class BaselineEngine final : public engine::JobRunner {
 public:
  explicit BaselineEngine(BaselineConfig config);
  ~BaselineEngine() override;
  BaselineEngine(const BaselineEngine&) = delete;
  BaselineEngine& operator=(const BaselineEngine&) = delete;

  engine::JobResult submit(const engine::JobConfig& job) override;
  std::string name() const override { return "baseline"; }
  std::size_t num_places() const override { return config_.num_places; }
  const std::filesystem::path& backing_root() const override { return config_.backing_root; }
  std::vector<Pair> read_output(std::string_view path) override;

  const BaselineConfig& config() const noexcept { return config_; }
  // Pairs currently held in memory by running tasks (0 between jobs).
  std::uint64_t resident_pairs() const noexcept { return resident_->load(); }

  struct Impl;

 private:
  BaselineConfig config_;
  std::shared_ptr<std::atomic<std::int64_t>> resident_;
  std::unique_ptr<Impl> impl_;
  bool owns_backing_root_ = false;
};

}  // namespace memreduce::baseline
