#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "memreduce/core/types.hpp"

namespace memreduce::formats {

inline constexpr std::string_view kPairFileMagic = "MRPAIRS1";
inline constexpr std::uint64_t kWholeFile = std::numeric_limits<std::uint64_t>::max();

enum class InputKind : std::uint8_t { TextLine, PairFile, Generator };
enum class OutputKind : std::uint8_t { PairFile, TextLine };

// Produces the records of one generator split: (split index, split count).
using GeneratorFn = std::function<std::vector<Pair>(std::size_t, std::size_t)>;
using RecordSource = std::function<std::vector<Pair>()>;

struct GeneratorSpec {
  // Empty name => the generated splits are unnameable and never cached.
  std::string name;
  GeneratorFn produce;
  // Optional per-split placement hint (split index -> partition).
  std::function<std::optional<PartitionId>(std::size_t)> placement;
};

struct InputFormatSpec {
  InputKind kind = InputKind::PairFile;
  std::string path;  // store path (file or directory) for TEXTLINE / PAIRFILE
  std::size_t target_split_count = 1;
  GeneratorSpec generator;
};

struct NamedOutput {
  std::string name;
  OutputKind kind = OutputKind::PairFile;
  std::string path;
};

struct OutputFormatSpec {
  OutputKind kind = OutputKind::PairFile;
  std::string path;
  std::vector<NamedOutput> named_outputs;

  const NamedOutput* find_named(std::string_view name) const;
};

// A byte range of a backing-store file. Ranges always start on a record
// (or, for text, any byte; lines are owned by the range holding their first byte).
struct FileSplit {
  std::string path;
  std::uint64_t start = 0;
  std::uint64_t length = kWholeFile;
  InputKind format = InputKind::PairFile;

  bool whole_file() const noexcept { return length == kWholeFile; }
};

// A split that knows the cache name of its data.
struct NamedSplit {
  std::string name;
  RecordSource source;
};

// A split of unknown kind with no name: the cache is bypassed for it.
struct OpaqueSplit {
  RecordSource source;
};

struct Split;

// Multi-input wrapper: routes the inner split's records to mapper `input_index`.
// Cache naming delegates to the inner split.
struct TaggedSplit {
  std::shared_ptr<const Split> inner;
  std::size_t input_index = 0;
};

enum class SplitKind : std::uint8_t { File, Named, Tagged, Opaque };

struct Split {
  std::variant<FileSplit, NamedSplit, TaggedSplit, OpaqueSplit> body;
  // Partition whose place should run the map task for this split.
  std::optional<PartitionId> placement;

  SplitKind kind() const noexcept { return static_cast<SplitKind>(body.index()); }

  // Cache entry name: "path" for a whole file, "path#start-length" for a
  // sub-range, the declared name for NAMED, the inner name for TAGGED.
  std::optional<std::string> cache_name() const;

  // Strips TAGGED wrappers.
  const Split& innermost() const;
  std::size_t input_index() const;
};

// --- container file -------------------------------------------------------

void write_pair_file(const std::filesystem::path& file, std::span<const Pair> pairs);
// Records whose first byte lies in [start, start + length); kWholeFile = all.
std::vector<Pair> read_pair_file(const std::filesystem::path& file, std::uint64_t start = 0,
                                 std::uint64_t length = kWholeFile);
// Byte offset of every record plus the end offset (size == records + 1).
std::vector<std::uint64_t> scan_record_offsets(const std::filesystem::path& file);
// Length of the record at the front of `bytes`, without materializing it.
std::size_t record_length(std::span<const std::uint8_t> bytes);

// --- text -------------------------------------------------------------------

// Yields (INT offset-of-line-start, BYTES line-without-newline) for every line
// starting in [start, start + length).
std::vector<Pair> read_text_lines(const std::filesystem::path& file, std::uint64_t start = 0,
                                  std::uint64_t length = kWholeFile);
void write_text_file(const std::filesystem::path& file, std::span<const Pair> pairs);
std::string render_text(const Pair& pair);

// --- splits -----------------------------------------------------------------

std::filesystem::path resolve(const std::filesystem::path& backing_root, std::string_view store_path);

// Files of a backing-store input path (the path itself, or the sorted data
// files of a directory), as store paths.
std::vector<std::string> list_input_files(const std::filesystem::path& backing_root, std::string_view store_path);

// All pairs of the container files at a backing-store path (file or directory).
std::vector<Pair> read_pair_files(const std::filesystem::path& backing_root, std::string_view store_path);

// Splits over backing-store data (or a generator). Deterministic.
std::vector<Split> compute_splits(const InputFormatSpec& desc, const std::filesystem::path& backing_root);

// Splits for one backing-store file, `count` requested.
std::vector<Split> compute_file_splits(const std::filesystem::path& backing_root, const std::string& store_path,
                                       InputKind kind, std::size_t count);

// Wraps every split of input i as TAGGED(i).
std::vector<Split> multiplex_inputs(const std::vector<std::vector<Split>>& per_input);

// Invokes the underlying record reader for a split.
std::vector<Pair> read_split(const Split& split, const std::filesystem::path& backing_root);

}  // namespace memreduce::formats
