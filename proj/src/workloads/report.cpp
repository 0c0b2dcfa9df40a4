#include "memreduce/workloads/report.hpp"

#include <cstdio>
#include <fstream>

#include "memreduce/error.hpp"

namespace memreduce::workloads {

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "workload",          "engine",           "numPlaces",         "iteration",    "jobIndex",
      "wallMillis",        "bytesSerializedLocal", "bytesSerializedRemote", "pairsShuffledLocal",
      "pairsShuffledRemote", "readerInvocations", "cacheHits",        "cacheMisses",  "spillBytes",
      "outputChecksum",
  };
  return cols;
}

std::string csv_field(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  out += "\r\n";
  return out;
}

std::string checksum_hex(std::uint64_t sum) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(sum));
  return buf;
}

std::vector<std::string> report_fields(const ReportRow& r) {
  auto s = [](auto v) { return std::to_string(v); };
  return {r.workload,
          r.engine,
          s(r.num_places),
          s(r.iteration),
          s(r.job_index),
          s(r.wall_millis),
          s(r.bytes_serialized_local),
          s(r.bytes_serialized_remote),
          s(r.pairs_shuffled_local),
          s(r.pairs_shuffled_remote),
          s(r.reader_invocations),
          s(r.cache_hits),
          s(r.cache_misses),
          s(r.spill_bytes),
          checksum_hex(r.output_checksum)};
}

void append_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open report " + path.string());
  if (fresh) out << csv_line(report_columns());
  for (const auto& r : rows) out << csv_line(report_fields(r));
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write report " + path.string());
}

SteppedRun run_stepped(engine::JobRunner& runner, const std::string& workload, const PreparedSequence& prep,
                       bool quantized, const std::function<void(const ReportRow&)>& on_row) {
  SteppedRun run;
  if (!prep.ok()) {
    run.ok = false;
    run.failure = prep.failure();
    return run;
  }
  for (std::size_t i = 0; i < prep.jobs.size(); ++i) {
    const auto& job = prep.jobs[i];
    auto result = runner.submit(job);
    const auto& m = result.metrics;
    ReportRow row;
    row.workload = workload;
    row.engine = runner.name();
    row.num_places = runner.num_places();
    row.iteration = i < prep.iteration.size() ? prep.iteration[i] : i + 1;
    row.job_index = i;
    row.wall_millis = m.wall_millis;
    row.bytes_serialized_local = m.bytes_serialized_local;
    row.bytes_serialized_remote = m.bytes_serialized_remote;
    row.pairs_shuffled_local = m.pairs_shuffled_local;
    row.pairs_shuffled_remote = m.pairs_shuffled_remote;
    row.reader_invocations = m.reader_invocations;
    row.cache_hits = m.cache_hits;
    row.cache_misses = m.cache_misses;
    row.spill_bytes = m.spill_bytes;
    const bool ok = result.ok();
    if (ok) {
      const auto out = runner.read_output(job.output.path);
      row.output_checksum = quantized ? quantized_checksum(out) : output_checksum(out);
      run.output = job.output.path;
    }
    run.results.push_back(std::move(result));
    if (!ok) {
      const auto& r = run.results.back();
      run.ok = false;
      run.failure = std::string(to_string(r.error.value_or(ErrorCode::InvalidJob))) + ": " + r.diagnostic;
      break;
    }
    run.rows.push_back(row);
    if (on_row) on_row(row);
  }
  return run;
}

}  // namespace memreduce::workloads
