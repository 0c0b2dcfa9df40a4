#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "memreduce/workloads/workloads.hpp"

namespace memreduce::workloads {

// One CSV row per executed job.
struct ReportRow {
  std::string workload;
  std::string engine;
  std::size_t num_places = 0;
  std::size_t iteration = 0;
  std::size_t job_index = 0;
  std::uint64_t wall_millis = 0;
  std::uint64_t bytes_serialized_local = 0;
  std::uint64_t bytes_serialized_remote = 0;
  std::uint64_t pairs_shuffled_local = 0;
  std::uint64_t pairs_shuffled_remote = 0;
  std::uint64_t reader_invocations = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t spill_bytes = 0;
  std::uint64_t output_checksum = 0;
};

const std::vector<std::string>& report_columns();
// RFC-4180 field quoting: quoted only when it holds a comma, quote, CR or LF.
std::string csv_field(const std::string& field);
std::string csv_line(const std::vector<std::string>& fields);  // with trailing CRLF
std::vector<std::string> report_fields(const ReportRow& row);
// Appends rows, writing the header first when the file is absent or empty.
void append_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows);
std::string checksum_hex(std::uint64_t sum);

struct SteppedRun {
  std::vector<ReportRow> rows;
  std::vector<engine::JobResult> results;
  std::string output;  // last job's output path
  bool ok = true;
  std::string failure;
};

// Submits the prepared jobs one at a time and checksums every job's output
// before the next job may clean it up. Stops at the first failed job.
// `quantized` selects the 1e-6 checksum used for floating-point outputs.
SteppedRun run_stepped(engine::JobRunner& runner, const std::string& workload, const PreparedSequence& prep,
                       bool quantized, const std::function<void(const ReportRow&)>& on_row = {});

}  // namespace memreduce::workloads
