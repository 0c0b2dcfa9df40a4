#include "memreduce/formats/formats.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "memreduce/core/codec.hpp"
#include "memreduce/error.hpp"

namespace memreduce::formats {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& file, std::uint64_t offset = 0) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::InputNotFound, file.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  if (offset > size) offset = size;
  std::vector<std::uint8_t> data(size - offset);
  in.seekg(static_cast<std::streamoff>(offset));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!in && !data.empty()) throw Error(ErrorCode::IoFailure, "short read on " + file.string());
  return data;
}

void write_atomically(const fs::path& file, std::span<const std::uint8_t> bytes) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + tmp.string());
  }
  fs::rename(tmp, file);
}

void check_magic(std::span<const std::uint8_t> head, const fs::path& file) {
  if (head.size() < kPairFileMagic.size() ||
      !std::equal(kPairFileMagic.begin(), kPairFileMagic.end(), head.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw Error(ErrorCode::BadMagic, file.string());
  }
}

std::uint64_t range_end(std::uint64_t start, std::uint64_t length) {
  return length == kWholeFile ? kWholeFile : start + length;
}

void skip_key(ByteReader& r) {
  switch (static_cast<KeyKind>(r.u8())) {
    case KeyKind::Int: r.take(8); return;
    case KeyKind::Text: r.length_prefixed(); return;
    case KeyKind::BlockIdx: r.take(8); return;
  }
  throw Error(ErrorCode::MalformedRecord, "unknown key tag");
}

void skip_value(ByteReader& r) {
  switch (static_cast<ValueKind>(r.u8())) {
    case ValueKind::Bytes: r.length_prefixed(); return;
    case ValueKind::Count: r.take(8); return;
    case ValueKind::CscBlock: {
      r.u32();
      const std::uint32_t cols = r.u32();
      r.take(static_cast<std::size_t>(cols) * 4);
      const std::uint32_t nnz = r.u32();
      r.take(static_cast<std::size_t>(nnz) * 12);
      return;
    }
    case ValueKind::DenseVec: r.take(static_cast<std::size_t>(r.u32()) * 8); return;
  }
  throw Error(ErrorCode::MalformedRecord, "unknown value tag");
}

}  // namespace

const NamedOutput* OutputFormatSpec::find_named(std::string_view name) const {
  for (const auto& n : named_outputs) {
    if (n.name == name) return &n;
  }
  return nullptr;
}

std::optional<std::string> Split::cache_name() const {
  return std::visit(
      [](const auto& s) -> std::optional<std::string> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FileSplit>) {
          if (s.whole_file()) return s.path;
          return s.path + "#" + std::to_string(s.start) + "-" + std::to_string(s.length);
        } else if constexpr (std::is_same_v<T, NamedSplit>) {
          if (s.name.empty()) return std::nullopt;
          return s.name;
        } else if constexpr (std::is_same_v<T, TaggedSplit>) {
          return s.inner->cache_name();
        } else {
          return std::nullopt;
        }
      },
      body);
}

const Split& Split::innermost() const {
  if (const auto* t = std::get_if<TaggedSplit>(&body)) return t->inner->innermost();
  return *this;
}

std::size_t Split::input_index() const {
  if (const auto* t = std::get_if<TaggedSplit>(&body)) return t->input_index;
  return 0;
}

std::size_t record_length(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  skip_key(r);
  skip_value(r);
  return r.position();
}

void write_pair_file(const fs::path& file, std::span<const Pair> pairs) {
  std::vector<std::uint8_t> out(kPairFileMagic.begin(), kPairFileMagic.end());
  std::size_t total = out.size();
  for (const auto& p : pairs) total += encoded_size(p);
  out.reserve(total);
  for (const auto& p : pairs) encode_pair_into(out, p);
  write_atomically(file, out);
}

std::vector<Pair> read_pair_file(const fs::path& file, std::uint64_t start, std::uint64_t length) {
  {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::InputNotFound, file.string());
    char head[8] = {};
    in.read(head, sizeof head);
    check_magic(std::span(reinterpret_cast<const std::uint8_t*>(head), static_cast<std::size_t>(in.gcount())),
                file);
  }
  const std::uint64_t begin = std::max<std::uint64_t>(start, kPairFileMagic.size());
  const std::uint64_t end = range_end(start, length);
  const auto data = read_bytes(file, begin);
  std::vector<Pair> out;
  std::span<const std::uint8_t> rest(data);
  std::uint64_t offset = begin;
  while (!rest.empty() && offset < end) {
    auto d = decode_pair(rest);
    out.push_back(std::move(d.pair));
    rest = rest.subspan(d.consumed);
    offset += d.consumed;
  }
  return out;
}

std::vector<std::uint64_t> scan_record_offsets(const fs::path& file) {
  const auto data = read_bytes(file);
  check_magic(data, file);
  std::vector<std::uint64_t> offsets;
  std::size_t pos = kPairFileMagic.size();
  while (pos < data.size()) {
    offsets.push_back(pos);
    pos += record_length(std::span(data).subspan(pos));
  }
  offsets.push_back(pos);
  return offsets;
}

std::vector<Pair> read_text_lines(const fs::path& file, std::uint64_t start, std::uint64_t length) {
  const auto data = read_bytes(file);
  const std::uint64_t end = std::min<std::uint64_t>(range_end(start, length), data.size());
  std::uint64_t pos = std::min<std::uint64_t>(start, data.size());
  // A range starting mid-line skips to the next line start.
  if (pos > 0 && data[pos - 1] != '\n') {
    while (pos < data.size() && data[pos] != '\n') ++pos;
    if (pos < data.size()) ++pos;
  }
  std::vector<Pair> out;
  while (pos < end) {
    std::uint64_t eol = pos;
    while (eol < data.size() && data[eol] != '\n') ++eol;
    out.push_back(Pair::of(Key::of_int(static_cast<std::int64_t>(pos)),
                           Value::of_bytes(Bytes(data.begin() + static_cast<std::ptrdiff_t>(pos),
                                                 data.begin() + static_cast<std::ptrdiff_t>(eol)))));
    pos = eol + 1;
  }
  return out;
}

std::string render_text(const Pair& pair) {
  std::ostringstream os;
  os.precision(17);
  const Key& k = *pair.key;
  switch (k.kind()) {
    case KeyKind::Int: os << k.as_int(); break;
    case KeyKind::Text: os << k.as_text(); break;
    case KeyKind::BlockIdx: os << '(' << k.as_block().row << ',' << k.as_block().col << ')'; break;
  }
  os << '\t';
  const Value& v = *pair.value;
  switch (v.kind()) {
    case ValueKind::Bytes: os.write(reinterpret_cast<const char*>(v.as_bytes().data()), v.as_bytes().size()); break;
    case ValueKind::Count: os << v.as_count(); break;
    case ValueKind::CscBlock:
      os << "csc(" << v.as_csc().rows << 'x' << v.as_csc().cols << ",nnz=" << v.as_csc().nnz() << ')';
      break;
    case ValueKind::DenseVec: {
      bool first = true;
      for (double d : v.as_dense()) {
        if (!first) os << ' ';
        os << d;
        first = false;
      }
      break;
    }
  }
  return os.str();
}

void write_text_file(const fs::path& file, std::span<const Pair> pairs) {
  std::string text;
  for (const auto& p : pairs) {
    text += render_text(p);
    text += '\n';
  }
  write_atomically(file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

fs::path resolve(const fs::path& backing_root, std::string_view store_path) {
  while (!store_path.empty() && store_path.front() == '/') store_path.remove_prefix(1);
  return backing_root / fs::path(store_path);
}

std::vector<std::string> list_input_files(const fs::path& backing_root, std::string_view store_path) {
  const fs::path p = resolve(backing_root, store_path);
  std::error_code ec;
  if (fs::is_regular_file(p, ec)) return {std::string(store_path)};
  if (!fs::is_directory(p, ec)) throw Error(ErrorCode::InputNotFound, std::string(store_path));
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(p)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() || name.front() == '.' || name.front() == '_') continue;
    if (name.ends_with(".tmp")) continue;
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  std::string base(store_path);
  if (!base.ends_with('/')) base += '/';
  for (auto& n : names) n = base + n;
  return names;
}

std::vector<Pair> read_pair_files(const fs::path& backing_root, std::string_view store_path) {
  std::vector<Pair> out;
  for (const auto& f : list_input_files(backing_root, store_path)) {
    auto part = read_pair_file(resolve(backing_root, f));
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<Split> compute_file_splits(const fs::path& backing_root, const std::string& store_path, InputKind kind,
                                       std::size_t count) {
  count = std::max<std::size_t>(count, 1);
  const fs::path file = resolve(backing_root, store_path);
  std::vector<Split> splits;
  if (count == 1) {
    splits.push_back(Split{FileSplit{store_path, 0, kWholeFile, kind}, std::nullopt});
    return splits;
  }
  if (kind == InputKind::PairFile) {
    const auto offsets = scan_record_offsets(file);
    const std::size_t n = offsets.size() - 1;
    if (n == 0) {
      splits.push_back(Split{FileSplit{store_path, offsets[0], 0, kind}, std::nullopt});
      return splits;
    }
    const std::size_t k = std::min(count, n);
    for (std::size_t i = 0; i < k; ++i) {
      const std::uint64_t b = offsets[i * n / k];
      const std::uint64_t e = offsets[(i + 1) * n / k];
      splits.push_back(Split{FileSplit{store_path, b, e - b, kind}, std::nullopt});
    }
    return splits;
  }
  const std::uint64_t size = fs::file_size(file);
  if (size == 0) {
    splits.push_back(Split{FileSplit{store_path, 0, 0, kind}, std::nullopt});
    return splits;
  }
  const std::uint64_t k = std::min<std::uint64_t>(count, size);
  for (std::uint64_t i = 0; i < k; ++i) {
    const std::uint64_t b = i * size / k;
    const std::uint64_t e = (i + 1) * size / k;
    splits.push_back(Split{FileSplit{store_path, b, e - b, kind}, std::nullopt});
  }
  return splits;
}

std::vector<Split> compute_splits(const InputFormatSpec& desc, const fs::path& backing_root) {
  if (desc.target_split_count == 0) throw Error(ErrorCode::InvalidArgument, "targetSplitCount must be >= 1");
  std::vector<Split> splits;
  if (desc.kind == InputKind::Generator) {
    if (!desc.generator.produce) throw Error(ErrorCode::InvalidArgument, "generator input without a producer");
    const std::size_t k = desc.target_split_count;
    for (std::size_t i = 0; i < k; ++i) {
      RecordSource src = [gen = desc.generator.produce, i, k] { return gen(i, k); };
      Split s = desc.generator.name.empty()
                    ? Split{OpaqueSplit{std::move(src)}, std::nullopt}
                    : Split{NamedSplit{desc.generator.name + "#" + std::to_string(i) + "-" + std::to_string(k),
                                       std::move(src)},
                            std::nullopt};
      if (desc.generator.placement) s.placement = desc.generator.placement(i);
      splits.push_back(std::move(s));
    }
    return splits;
  }
  const auto files = list_input_files(backing_root, desc.path);
  const std::size_t per_file = std::max<std::size_t>(1, desc.target_split_count / std::max<std::size_t>(files.size(), 1));
  for (const auto& f : files) {
    auto fsplits = compute_file_splits(backing_root, f, desc.kind, per_file);
    std::move(fsplits.begin(), fsplits.end(), std::back_inserter(splits));
  }
  return splits;
}

std::vector<Split> multiplex_inputs(const std::vector<std::vector<Split>>& per_input) {
  std::vector<Split> out;
  for (std::size_t i = 0; i < per_input.size(); ++i) {
    for (const auto& s : per_input[i]) {
      out.push_back(Split{TaggedSplit{std::make_shared<const Split>(s), i}, s.placement});
    }
  }
  return out;
}

std::vector<Pair> read_split(const Split& split, const fs::path& backing_root) {
  return std::visit(
      [&](const auto& s) -> std::vector<Pair> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FileSplit>) {
          const fs::path file = resolve(backing_root, s.path);
          if (s.format == InputKind::TextLine) return read_text_lines(file, s.start, s.length);
          return read_pair_file(file, s.start, s.length);
        } else if constexpr (std::is_same_v<T, TaggedSplit>) {
          return read_split(*s.inner, backing_root);
        } else {
          return s.source();
        }
      },
      split.body);
}

}  // namespace memreduce::formats
