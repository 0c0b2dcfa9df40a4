// memreduce: run workloads on either engine and append per-job rows to a CSV.
//
//   memreduce run wordcount --engine m3r --places 4 --input in.txt --output /out/wc --report r.csv
//   memreduce bench micro --pairs 100000 --value-bytes 1000 --remote-frac 0.5 --iterations 3
//   memreduce sweep micro --remote-frac 0,0.5,1 --engines m3r,baseline --report sweep.csv
//
// Exit status: 0 success, 1 job failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>

#include "memreduce/baseline/baseline.hpp"
#include "memreduce/engine/engine.hpp"
#include "memreduce/formats/formats.hpp"
#include "memreduce/workloads/report.hpp"
#include "memreduce/workloads/workloads.hpp"

namespace fs = std::filesystem;
using namespace memreduce;
using namespace memreduce::workloads;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string workload;
  std::string engine = "m3r";
  std::size_t places = 2;
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  std::string report;
  std::string data_dir;
  std::string input;
  std::string output;

  std::size_t pairs = 100000;
  std::size_t value_bytes = 1000;
  double remote_frac = 0.0;
  std::size_t iterations = 3;
  std::size_t reducers_per_place = 1;

  std::size_t block_size = 100;
  std::size_t blocks = 5;
  double sparsity = 0.01;

  std::size_t text_bytes = std::size_t{1} << 20;
  bool mutable_variant = false;
  bool no_combiner = false;

  std::size_t reducers = 0;
  std::string partitioner = "hash";
  std::string kind = "micro";

  std::string dedup = "full";
  std::string transport = "inproc";
  std::size_t spill_threshold = 100000;
  std::size_t merge_fan_in = 10;

  // sweep axes
  std::vector<std::string> engines{"m3r", "baseline"};
  std::vector<std::size_t> places_list;
  std::vector<double> fracs;
  std::vector<std::size_t> pairs_list;
  std::vector<std::size_t> text_bytes_list;
  std::vector<std::size_t> blocks_list;
};

const auto kFraction = CLI::Range(0.0, 1.0);
const CLI::Validator kSparsity(
    [](std::string& s) -> std::string {
      const double x = std::stod(s);
      return x > 0 && x <= 1 ? "" : "sparsity must be in (0,1]";
    },
    "(0,1]");

void add_engine_options(CLI::App* sub, Options& o) {
  sub->add_option("--engine", o.engine, "m3r or baseline")->check(CLI::IsMember({"m3r", "baseline"}));
  sub->add_option("--workers", o.workers, "workers per place")->check(CLI::PositiveNumber);
  sub->add_option("--seed", o.seed, "data and placement seed");
  sub->add_option("--report", o.report, "CSV file to append rows to");
  sub->add_option("--dedup", o.dedup, "shuffle de-duplication (m3r)")->check(CLI::IsMember({"full", "consecutive", "off"}));
  sub->add_option("--transport", o.transport, "m3r place transport")->check(CLI::IsMember({"inproc", "socket"}));
  sub->add_option("--spill-threshold", o.spill_threshold, "baseline records per spill")->check(CLI::PositiveNumber);
  sub->add_option("--merge-fan-in", o.merge_fan_in, "baseline merge fan-in")->check(CLI::Range(2, 1 << 20));
  sub->add_option("--iterations", o.iterations, "iterations (micro, matvec)")->check(CLI::PositiveNumber);
  sub->add_option("--value-bytes", o.value_bytes, "micro value size")->check(CLI::PositiveNumber);
  sub->add_option("--reducers-per-place", o.reducers_per_place)->check(CLI::PositiveNumber);
  sub->add_option("--block-size", o.block_size, "matvec block edge")->check(CLI::PositiveNumber);
  sub->add_option("--sparsity", o.sparsity, "matvec nonzero fraction")->check(kSparsity);
  sub->add_flag("--mutable", o.mutable_variant, "wordcount: reuse key objects, no immutable flag");
  sub->add_flag("--no-combiner", o.no_combiner, "wordcount without a combiner");
}

void add_single_run_options(CLI::App* sub, Options& o) {
  sub->add_option("--places", o.places, "number of places")->check(CLI::PositiveNumber);
  sub->add_option("--data-dir", o.data_dir, "backing store directory (kept); default is a temporary one");
  sub->add_option("--output", o.output, "output path inside the store");
  sub->add_option("--pairs", o.pairs, "micro pair count")->check(CLI::PositiveNumber);
  sub->add_option("--remote-frac", o.remote_frac, "micro remote fraction")->check(kFraction);
  sub->add_option("--blocks", o.blocks, "matvec block rows (= block columns)")->check(CLI::PositiveNumber);
  sub->add_option("--text-bytes", o.text_bytes, "generated corpus size")->check(CLI::PositiveNumber);
}

std::unique_ptr<engine::JobRunner> make_runner(const Options& o, const std::string& engine, std::size_t places,
                                               const std::string& data_dir) {
  if (engine == "m3r") {
    engine::EngineConfig c;
    c.num_places = places;
    c.workers_per_place = o.workers;
    c.dedup = o.dedup == "full" ? DedupPolicy::Full : o.dedup == "off" ? DedupPolicy::Off : DedupPolicy::Consecutive;
    c.transport = o.transport == "socket" ? engine::TransportKind::Socket : engine::TransportKind::InProcess;
    if (!data_dir.empty()) c.backing_root = data_dir;
    return std::make_unique<engine::Engine>(c);
  }
  baseline::BaselineConfig c;
  c.num_places = places;
  c.workers_per_place = o.workers;
  c.seed = o.seed;
  c.spill_threshold_records = o.spill_threshold;
  c.merge_fan_in = o.merge_fan_in;
  if (!data_dir.empty()) c.backing_root = data_dir;
  return std::make_unique<baseline::BaselineEngine>(c);
}

// Local files and directories are copied into the store under /input;
// anything else is taken as a store path.
std::string stage_input(const fs::path& root, const std::string& input) {
  std::error_code ec;
  if (!fs::exists(input, ec)) {
    if (input.empty() || input.front() != '/') throw UsageError("--input: no such file: " + input);
    return input;
  }
  const fs::path local = fs::absolute(input).lexically_normal();
  const std::string name = local.filename().empty() ? "data" : local.filename().string();
  const fs::path dest = formats::resolve(root, "/input/" + name);
  fs::create_directories(dest.parent_path());
  fs::copy(local, dest, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  return "/input/" + name;
}

MicrobenchParams micro_params(const Options& o) {
  MicrobenchParams p;
  p.num_pairs = o.pairs;
  p.value_bytes = o.value_bytes;
  p.remote_fraction = o.remote_frac;
  p.iterations = o.iterations;
  p.seed = o.seed;
  p.reducers_per_place = o.reducers_per_place;
  return p;
}

MatvecParams matvec_params(const Options& o) {
  MatvecParams p;
  p.block_size = o.block_size;
  p.blocks = o.blocks;
  p.sparsity = o.sparsity;
  p.iterations = o.iterations;
  p.seed = o.seed;
  p.reducers_per_place = o.reducers_per_place;
  return p;
}

void print_row(const ReportRow& r) {
  std::printf(
      "%s %s places=%zu iteration=%zu job=%zu wall=%llums local=%lluB remote=%lluB remotePairs=%llu readers=%llu "
      "cacheHits=%llu cacheMisses=%llu spill=%lluB checksum=%s\n",
      r.workload.c_str(), r.engine.c_str(), r.num_places, r.iteration, r.job_index,
      static_cast<unsigned long long>(r.wall_millis), static_cast<unsigned long long>(r.bytes_serialized_local),
      static_cast<unsigned long long>(r.bytes_serialized_remote),
      static_cast<unsigned long long>(r.pairs_shuffled_remote), static_cast<unsigned long long>(r.reader_invocations),
      static_cast<unsigned long long>(r.cache_hits), static_cast<unsigned long long>(r.cache_misses),
      static_cast<unsigned long long>(r.spill_bytes), checksum_hex(r.output_checksum).c_str());
  std::fflush(stdout);
}

// Runs one workload on one engine; rows go to stdout and the report as they finish.
bool execute(const Options& o, bool synthetic, const std::string& engine_name, std::size_t places,
             const std::string& data_dir) {
  const std::string& w = o.workload;
  if (w == "generate" && data_dir.empty()) throw UsageError("generate needs --data-dir to keep its files");
  if (w == "repartition" && o.input.empty()) throw UsageError("repartition requires --input");
  if (w == "wordcount" && !synthetic && o.input.empty()) throw UsageError("run wordcount requires --input");

  auto runner = make_runner(o, engine_name, places, data_dir);
  const fs::path root = runner->backing_root();

  if (w == "generate") {
    const std::string out = o.output.empty() ? "/data/" + o.kind : o.output;
    if (o.kind == "micro") {
      generate_micro(root, out, micro_params(o));
    } else if (o.kind == "matrix") {
      generate_matrix(root, out + "/G", out + "/V", matvec_params(o));
    } else {
      write_text(root, out + "/part-00000", generate_text(o.text_bytes, o.seed));
    }
    std::printf("generated %s data at %s\n", o.kind.c_str(), formats::resolve(root, out).c_str());
    return true;
  }

  PreparedSequence prep;
  bool quantized = false;
  if (w == "micro") {
    prep = prepare_microbench(*runner, micro_params(o));
  } else if (w == "matvec") {
    prep = prepare_matvec(*runner, matvec_params(o));
    quantized = true;
  } else if (w == "wordcount") {
    WordCountParams p;
    if (synthetic) {
      write_text(root, p.input, generate_text(o.text_bytes, o.seed));
    } else {
      p.input = stage_input(root, o.input);
    }
    if (!o.output.empty()) p.output = o.output;
    p.immutable_variant = !o.mutable_variant;
    p.combiner = !o.no_combiner;
    auto job = build_wordcount(p, places);
    job.properties["overwrite"] = "true";
    prep.jobs = {std::move(job)};
    prep.iteration = {1};
  } else if (w == "repartition") {
    const std::string in = stage_input(root, o.input);
    const std::size_t reducers = o.reducers ? o.reducers : places * o.reducers_per_place;
    prep.jobs = {build_repartitioner(in, o.output.empty() ? "/repartitioned" : o.output,
                                     o.partitioner == "row" ? engine::row_partition : engine::hash_partition, reducers,
                                     reducers)};
    prep.iteration = {1};
  }

  auto run = run_stepped(*runner, w, prep, quantized, [&](const ReportRow& row) {
    print_row(row);
    if (!o.report.empty()) append_report(o.report, {row});
  });
  if (!run.ok) {
    std::fprintf(stderr, "memreduce: %s on %s failed: %s\n", w.c_str(), engine_name.c_str(), run.failure.c_str());
    return false;
  }
  if (!data_dir.empty()) std::printf("output: %s\n", formats::resolve(root, run.output).c_str());
  return true;
}

bool sweep(Options o) {
  auto or_default = [](auto list, auto value) { return list.empty() ? decltype(list){value} : list; };
  const auto places = or_default(o.places_list, o.places);
  const auto fracs = or_default(o.fracs, o.remote_frac);
  const auto pairs = or_default(o.pairs_list, o.pairs);
  const auto text_bytes = or_default(o.text_bytes_list, o.text_bytes);
  const auto blocks = or_default(o.blocks_list, o.blocks);

  std::vector<Options> cells;
  for (auto p : places) {
    Options c = o;
    c.places = p;
    if (o.workload == "micro") {
      for (auto n : pairs)
        for (auto f : fracs) {
          c.pairs = n;
          c.remote_frac = f;
          cells.push_back(c);
        }
    } else if (o.workload == "wordcount") {
      for (auto b : text_bytes) {
        c.text_bytes = b;
        cells.push_back(c);
      }
    } else {
      for (auto b : blocks) {
        c.blocks = b;
        cells.push_back(c);
      }
    }
  }
  for (const auto& cell : cells) {
    for (const auto& e : o.engines) {
      if (!execute(cell, true, e, cell.places, "")) return false;
    }
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memreduce: in-memory and out-of-core MapReduce workloads"};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "run one workload");
  run->add_option("workload", o.workload)
      ->required()
      ->check(CLI::IsMember({"wordcount", "micro", "matvec", "repartition", "generate"}));
  add_engine_options(run, o);
  add_single_run_options(run, o);
  run->add_option("--input", o.input, "input file or directory (wordcount, repartition)");
  run->add_option("--reducers", o.reducers, "repartition: reducer count (default places x reducers-per-place)");
  run->add_option("--partitioner", o.partitioner, "repartition: hash or row")->check(CLI::IsMember({"hash", "row"}));
  run->add_option("--kind", o.kind, "generate: micro, matrix or text")->check(CLI::IsMember({"micro", "matrix", "text"}));

  auto* bench = app.add_subcommand("bench", "run one workload on generated data");
  bench->add_option("workload", o.workload)->required()->check(CLI::IsMember({"wordcount", "micro", "matvec"}));
  add_engine_options(bench, o);
  add_single_run_options(bench, o);

  auto* sw = app.add_subcommand("sweep", "run the cartesian product of engines and parameter values");
  sw->add_option("workload", o.workload)->required()->check(CLI::IsMember({"wordcount", "micro", "matvec"}));
  add_engine_options(sw, o);
  sw->add_option("--engines", o.engines, "comma-separated engines")
      ->delimiter(',')
      ->check(CLI::IsMember({"m3r", "baseline"}));
  sw->add_option("--places", o.places_list, "comma-separated place counts")->delimiter(',')->check(CLI::PositiveNumber);
  sw->add_option("--remote-frac", o.fracs, "comma-separated remote fractions")->delimiter(',')->check(kFraction);
  sw->add_option("--pairs", o.pairs_list, "comma-separated micro pair counts")->delimiter(',')->check(CLI::PositiveNumber);
  sw->add_option("--text-bytes", o.text_bytes_list, "comma-separated corpus sizes")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  sw->add_option("--blocks", o.blocks_list, "comma-separated matvec block counts")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    bool ok = false;
    if (*sw) {
      ok = sweep(o);
    } else {
      const bool synthetic = static_cast<bool>(*bench);
      // A single run keeps its data only when --data-dir is given.
      ok = execute(o, synthetic, o.engine, o.places, o.data_dir);
    }
    return ok ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "memreduce: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) {
      std::cerr << "memreduce: " << e.what() << "\n";
      return 2;
    }
    std::cerr << "memreduce: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "memreduce: " << e.what() << "\n";
    return 1;
  }
}
