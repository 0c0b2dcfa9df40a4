#include "memreduce/cachefs/cache_fs.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "memreduce/core/codec.hpp"
#include "memreduce/error.hpp"

namespace memreduce::cachefs {

namespace fs = std::filesystem;
using kvstore::BlockInfo;
using kvstore::BlockKind;
using kvstore::PathInfo;
using kvstore::PathKind;
using kvstore::StorePath;

namespace {

// Generator names need not be absolute; they live directly under the root.
StorePath entry_path(std::string_view name) {
  if (!name.empty() && name.front() == '/') return StorePath::parse(name);
  return StorePath::parse("/" + std::string(name));
}

std::uint64_t backing_size(const fs::path& p) {
  std::error_code ec;
  if (fs::is_regular_file(p, ec)) return fs::file_size(p, ec);
  std::uint64_t total = 0;
  if (fs::is_directory(p, ec)) {
    for (const auto& e : fs::recursive_directory_iterator(p, ec)) {
      if (e.is_regular_file()) total += e.file_size();
    }
  }
  return total;
}

}  // namespace

bool is_temporary(std::string_view path, std::string_view prefix) {
  if (prefix.empty()) return false;
  while (!path.empty() && path.back() == '/') path.remove_suffix(1);
  const auto cut = path.rfind('/');
  const std::string_view last = cut == std::string_view::npos ? path : path.substr(cut + 1);
  if (last.starts_with(prefix)) return true;
  if (cut == std::string_view::npos) return false;
  std::string_view dir = path.substr(0, cut);
  const auto cut2 = dir.rfind('/');
  const std::string_view parent = cut2 == std::string_view::npos ? dir : dir.substr(cut2 + 1);
  return parent.starts_with(prefix);
}

CacheFs::CacheFs(std::shared_ptr<kvstore::Store> store, fs::path backing_root, bool cache_enabled)
    : shared_(std::make_shared<Shared>()), mode_(FsMode::Dual) {
  if (!store) throw Error(ErrorCode::InvalidArgument, "cache file system needs a store");
  shared_->store = std::move(store);
  shared_->backing_root = std::move(backing_root);
  shared_->cache_enabled = cache_enabled;
  std::error_code ec;
  fs::create_directories(shared_->backing_root, ec);
}

CacheFs CacheFs::raw_cache() const { return CacheFs(shared_, FsMode::RawCache); }

std::vector<PathInfo> CacheFs::cached_files(const StorePath& path) {
  std::vector<PathInfo> out;
  auto info = store().find(path);
  if (!info) return out;
  if (info->kind == PathKind::File) {
    out.push_back(std::move(*info));
    return out;
  }
  for (auto& child : store().list(path)) {
    auto sub = cached_files(child.path);
    std::move(sub.begin(), sub.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<StorePath> CacheFs::range_entries(const StorePath& path) {
  std::vector<StorePath> out;
  if (path.is_root()) return out;
  const std::string stem = std::string(path.name()) + "#";
  if (!store().find(path.parent())) return out;
  for (const auto& child : store().list(path.parent())) {
    if (child.path.name().starts_with(stem)) out.push_back(child.path);
  }
  return out;
}

std::uint64_t CacheFs::entry_bytes(const std::vector<PathInfo>& files) {
  std::lock_guard lk(shared_->mu);
  std::uint64_t total = 0;
  for (const auto& f : files) {
    for (const auto& b : f.blocks) {
      auto it = shared_->block_bytes.find(b.block_id);
      if (it == shared_->block_bytes.end()) continue;
      total += it->second;
      shared_->block_bytes.erase(it);
    }
  }
  return total;
}

void CacheFs::insert(const StorePath& name, std::optional<PartitionId> partition, std::span<const Pair> pairs,
                     PlaceId at, bool clone) {
  std::uint64_t bytes = 0;
  for (const auto& p : pairs) bytes += encoded_size(p);
  if (shared_->max_bytes != 0 && shared_->resident_bytes.load() + bytes > shared_->max_bytes) {
    throw Error(ErrorCode::CacheFull, name.str() + ": cache limit of " + std::to_string(shared_->max_bytes) +
                                          " bytes reached");
  }
  store().mkdirs(name.parent());
  auto writer = store().create_writer(name, BlockInfo{0, at, BlockKind::PairSeq, 0, partition}, at);
  for (const auto& p : pairs) writer.add(clone ? deep_clone(p) : p);
  const BlockInfo info = writer.close();
  shared_->resident_bytes += bytes;
  std::lock_guard lk(shared_->mu);
  shared_->block_bytes[info.block_id] = bytes;
}

ReadResult CacheFs::read_input(const formats::Split& split, PlaceId at, bool read_only_consumer) {
  ReadResult result;
  const auto name = split.cache_name();
  if (!cache_on() || !name) {
    result.pairs = formats::read_split(split, backing_root());
    result.metrics.reader_invocations = 1;
    return result;
  }
  const StorePath path = entry_path(*name);
  auto info = store().find(path);
  if (info && info->kind == PathKind::File && !info->blocks.empty()) {
    for (const auto& b : info->blocks) {
      auto reader = store().create_reader(path, b, at);
      for (const auto& p : reader.pairs()) result.pairs.push_back(read_only_consumer ? p : deep_clone(p));
    }
    result.metrics.cache_hits = 1;
    return result;
  }
  auto pairs = formats::read_split(split, backing_root());
  result.metrics.reader_invocations = 1;
  result.metrics.cache_misses = 1;
  insert(path, split.placement, pairs, at, false);
  if (read_only_consumer) {
    result.pairs = std::move(pairs);
  } else {
    result.pairs.reserve(pairs.size());
    for (const auto& p : pairs) result.pairs.push_back(deep_clone(p));
  }
  return result;
}

WriteMetrics CacheFs::write_output(std::string_view path, std::optional<PartitionId> partition,
                                   std::span<const Pair> pairs, PlaceId at, const OutputOptions& options) {
  const StorePath sp = StorePath::parse(path);
  if (exists(sp.str())) {
    if (!options.overwrite) throw Error(ErrorCode::OutputExists, sp.str());
    remove(sp.str());
  }
  WriteMetrics m;
  if (cache_on()) {
    insert(sp, partition, pairs, at, !options.producer_immutable);
    m.cached_pairs = pairs.size();
  }
  const bool temp = is_temporary(sp.str(), options.temp_prefix);
  if (touches_backing() && (!temp || !cache_on())) {
    const fs::path file = formats::resolve(backing_root(), sp.str());
    fs::create_directories(file.parent_path());
    if (options.format == formats::OutputKind::TextLine) {
      formats::write_text_file(file, pairs);
    } else {
      formats::write_pair_file(file, pairs);
    }
    m.backing_bytes = fs::file_size(file);
  }
  return m;
}

void CacheFs::remove(std::string_view path) {
  const StorePath sp = StorePath::parse(path);
  if (sp.is_root()) throw Error(ErrorCode::InvalidPath, "cannot delete the root");
  bool found = false;
  if (cache_on()) {
    std::vector<StorePath> entries;
    if (store().find(sp)) entries.push_back(sp);
    for (auto& r : range_entries(sp)) entries.push_back(std::move(r));
    for (const auto& e : entries) {
      const auto files = cached_files(e);
      try {
        store().remove(e);
        found = true;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::NotFound) throw;
      }
      shared_->resident_bytes -= std::min(shared_->resident_bytes.load(), entry_bytes(files));
    }
  }
  if (touches_backing()) {
    std::error_code ec;
    if (fs::remove_all(formats::resolve(backing_root(), sp.str()), ec) > 0) found = true;
  }
  if (!found) throw Error(ErrorCode::NotFound, sp.str());
}

void CacheFs::rename(std::string_view src, std::string_view dest) {
  const StorePath from = StorePath::parse(src);
  const StorePath to = StorePath::parse(dest);
  if (from.is_root() || to.is_root()) throw Error(ErrorCode::InvalidPath, "cannot rename the root");
  if (exists(to.str())) throw Error(ErrorCode::DestinationExists, to.str());
  bool found = false;
  const auto ranges = cache_on() ? range_entries(from) : std::vector<StorePath>{};
  if (cache_on() && (store().find(from) || !ranges.empty())) {
    store().mkdirs(to.parent());
    if (store().find(from)) store().rename(from, to);
    const std::string stem(from.name());
    for (const auto& r : ranges) {
      const std::string suffix(r.name().substr(stem.size()));
      store().rename(r, to.parent().child(std::string(to.name()) + suffix));
    }
    found = true;
  }
  if (touches_backing()) {
    const fs::path a = formats::resolve(backing_root(), from.str());
    std::error_code ec;
    if (fs::exists(a, ec)) {
      const fs::path b = formats::resolve(backing_root(), to.str());
      fs::create_directories(b.parent_path());
      fs::rename(a, b, ec);
      if (ec) throw Error(ErrorCode::IoFailure, "rename " + from.str() + ": " + ec.message());
      found = true;
    }
  }
  if (!found) throw Error(ErrorCode::NotFound, from.str());
}

FileStatus CacheFs::get_status(std::string_view path) {
  const StorePath sp = StorePath::parse(path);
  FileStatus st;
  st.path = sp.str();
  if (cache_on()) {
    if (auto info = store().find(sp)) {
      st.in_cache = true;
      st.directory = info->kind == PathKind::Directory;
      for (const auto& f : cached_files(sp)) {
        for (const auto& b : f.blocks) st.records += b.length;
      }
      st.cache_info = std::move(info);
    }
  }
  if (touches_backing()) {
    const fs::path p = formats::resolve(backing_root(), sp.str());
    std::error_code ec;
    if (fs::exists(p, ec)) {
      st.in_backing = true;
      st.directory = st.directory || fs::is_directory(p, ec);
      st.bytes = backing_size(p);
    }
  }
  if (!st.in_cache && !st.in_backing) throw Error(ErrorCode::NotFound, sp.str());
  return st;
}

bool CacheFs::exists(std::string_view path) {
  const StorePath sp = StorePath::parse(path);
  if (cache_on() && store().find(sp)) return true;
  if (!touches_backing()) return false;
  std::error_code ec;
  return fs::exists(formats::resolve(backing_root(), sp.str()), ec);
}

void CacheFs::mkdirs(std::string_view path) {
  const StorePath sp = StorePath::parse(path);
  if (cache_on()) store().mkdirs(sp);
  if (touches_backing()) fs::create_directories(formats::resolve(backing_root(), sp.str()));
}

std::vector<Pair> CacheFs::cache_record_reader(std::string_view path) {
  const StorePath sp = StorePath::parse(path);
  const auto files = cache_on() ? cached_files(sp) : std::vector<PathInfo>{};
  if (files.empty()) throw Error(ErrorCode::NotInCache, sp.str());
  struct Ref {
    std::uint64_t partition;
    const PathInfo* file;
    const BlockInfo* block;
  };
  std::vector<Ref> refs;
  for (const auto& f : files) {
    for (const auto& b : f.blocks) {
      const std::uint64_t part = b.partition ? *b.partition : std::numeric_limits<std::uint64_t>::max();
      refs.push_back(Ref{part, &f, &b});
    }
  }
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) {
    if (a.partition != b.partition) return a.partition < b.partition;
    return a.file->path < b.file->path;
  });
  std::vector<Pair> out;
  for (const auto& r : refs) {
    auto reader = store().create_reader(r.file->path, *r.block, r.block->home);
    out.insert(out.end(), reader.pairs().begin(), reader.pairs().end());
  }
  return out;
}

std::vector<formats::Split> CacheFs::compute_splits(const formats::InputFormatSpec& desc) {
  if (desc.kind == formats::InputKind::Generator) return formats::compute_splits(desc, backing_root());
  if (desc.target_split_count == 0) throw Error(ErrorCode::InvalidArgument, "targetSplitCount must be >= 1");

  // store path -> first cached block (nullopt if backing-only)
  std::map<std::string, std::optional<BlockInfo>> files;
  bool found = false;
  if (cache_on()) {
    const StorePath sp = StorePath::parse(desc.path);
    if (auto info = store().find(sp)) {
      found = true;
      auto note = [&](const PathInfo& f) {
        if (f.path.name().find('#') != std::string_view::npos) return;
        std::optional<BlockInfo> first;
        if (!f.blocks.empty()) first = f.blocks.front();
        files[f.path.str()] = first;
      };
      if (info->kind == PathKind::File) {
        note(*info);
      } else {
        for (const auto& child : store().list(sp)) {
          if (child.kind == PathKind::File) note(child);
        }
      }
    }
  }
  if (touches_backing()) {
    try {
      for (auto& f : formats::list_input_files(backing_root(), desc.path)) {
        files.try_emplace(StorePath::parse(f).str(), std::nullopt);
      }
      found = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InputNotFound) throw;
    }
  }
  if (!found) throw Error(ErrorCode::InputNotFound, desc.path);

  std::vector<formats::Split> splits;
  const std::size_t per_file = std::max<std::size_t>(1, desc.target_split_count / std::max<std::size_t>(files.size(), 1));
  for (const auto& [path, block] : files) {
    if (block) {
      splits.push_back(formats::Split{formats::FileSplit{path, 0, formats::kWholeFile, desc.kind}, block->partition});
      continue;
    }
    auto fsplits = formats::compute_file_splits(backing_root(), path, desc.kind, per_file);
    std::move(fsplits.begin(), fsplits.end(), std::back_inserter(splits));
  }
  return splits;
}

std::optional<PlaceId> CacheFs::cached_home(const formats::Split& split) {
  if (!cache_on()) return std::nullopt;
  const auto name = split.cache_name();
  if (!name) return std::nullopt;
  auto info = store().find(entry_path(*name));
  if (!info || info->kind != PathKind::File || info->blocks.empty()) return std::nullopt;
  return info->blocks.front().home;
}

}  // namespace memreduce::cachefs
