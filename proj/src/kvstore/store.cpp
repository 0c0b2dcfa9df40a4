#include "memreduce/kvstore/store.hpp"

#include <algorithm>
#include <set>

#include "memreduce/core/batch.hpp"
#include "memreduce/core/codec.hpp"
#include "memreduce/error.hpp"

namespace memreduce::kvstore {

// --- StorePath ---------------------------------------------------------------

StorePath StorePath::parse(std::string_view text) {
  if (text.empty() || text.front() != '/') {
    throw Error(ErrorCode::InvalidPath, "path must be absolute: '" + std::string(text) + "'");
  }
  std::vector<std::string_view> parts;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == '/') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != '/') ++j;
    const auto comp = text.substr(i, j - i);
    i = j;
    if (comp.empty() || comp == ".") continue;
    if (comp == "..") {
      if (parts.empty()) throw Error(ErrorCode::InvalidPath, "'..' above root: " + std::string(text));
      parts.pop_back();
      continue;
    }
    parts.push_back(comp);
  }
  std::string out;
  for (auto p : parts) {
    out += '/';
    out += p;
  }
  if (out.empty()) out = "/";
  return StorePath(std::move(out));
}

std::size_t StorePath::depth() const noexcept {
  if (is_root()) return 0;
  return static_cast<std::size_t>(std::count(text_.begin(), text_.end(), '/'));
}

std::string_view StorePath::name() const noexcept {
  if (is_root()) return {};
  return std::string_view(text_).substr(text_.rfind('/') + 1);
}

StorePath StorePath::parent() const {
  if (is_root()) return *this;
  const auto pos = text_.rfind('/');
  return pos == 0 ? StorePath() : StorePath(text_.substr(0, pos));
}

StorePath StorePath::child(std::string_view n) const {
  return parse(is_root() ? "/" + std::string(n) : text_ + "/" + std::string(n));
}

bool StorePath::is_ancestor_of(const StorePath& other) const noexcept {
  if (other.text_.size() <= text_.size()) return false;
  if (is_root()) return true;
  return other.text_.compare(0, text_.size(), text_) == 0 && other.text_[text_.size()] == '/';
}

StorePath StorePath::rebased(const StorePath& from, const StorePath& to) const {
  if (*this == from) return to;
  const std::string rest = text_.substr(from.is_root() ? 0 : from.text_.size());
  return StorePath(to.is_root() ? rest : to.text_ + rest);
}

StorePath StorePath::common_ancestor(const StorePath& a, const StorePath& b) {
  StorePath x = a;
  while (!(x == b || x.is_ancestor_of(b))) x = x.parent();
  return x;
}

bool lock_order_less(const StorePath& a, const StorePath& b) {
  const auto da = a.depth();
  const auto db = b.depth();
  if (da != db) return da < db;
  return a.str() < b.str();
}

std::vector<StorePath> lock_order(std::span<const StorePath> paths) {
  std::vector<StorePath> out(paths.begin(), paths.end());
  if (out.empty()) return out;
  StorePath lca = out.front();
  for (const auto& p : out) lca = StorePath::common_ancestor(lca, p);
  out.push_back(lca);
  std::sort(out.begin(), out.end(), lock_order_less);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// --- LockSet -----------------------------------------------------------------

LockSet::LockSet(LockSet&& other) noexcept
    : store_(std::exchange(other.store_, nullptr)), task_(other.task_), acquired_(std::move(other.acquired_)) {}

LockSet& LockSet::operator=(LockSet&& other) noexcept {
  if (this != &other) {
    release();
    store_ = std::exchange(other.store_, nullptr);
    task_ = other.task_;
    acquired_ = std::move(other.acquired_);
  }
  return *this;
}

void LockSet::release() {
  if (!store_) return;
  for (auto it = acquired_.rbegin(); it != acquired_.rend(); ++it) store_->release(task_, *it);
  store_ = nullptr;
}

// --- Store -------------------------------------------------------------------

Store::Store(std::size_t num_places) {
  if (num_places == 0) throw Error(ErrorCode::InvalidArgument, "store needs at least one place");
  for (std::size_t i = 0; i < num_places; ++i) places_.push_back(std::make_unique<PlaceTables>());
  const StorePath root;
  shard_for(root).table[root.str()].info = PathInfo{root, PathKind::Directory, {}, clock_++};
}

std::uint64_t Store::new_task_id() {
  static std::atomic<std::uint64_t> next{1};
  return next++;
}

PlaceId Store::metadata_owner(const StorePath& path) const {
  return static_cast<PlaceId>(fnv1a64(path.str()) % places_.size());
}

Store::Shard& Store::shard_for(const StorePath& path) { return places_[metadata_owner(path)]->meta; }

bool Store::metadata_resident_at(PlaceId place, const StorePath& path) const {
  const auto& sh = places_.at(place)->meta;
  std::lock_guard lk(sh.mu);
  auto it = sh.table.find(path.str());
  return it != sh.table.end() && it->second.info.has_value();
}

std::size_t Store::lock_entries() const {
  std::size_t n = 0;
  for (const auto& p : places_) {
    std::lock_guard lk(p->meta.mu);
    for (const auto& [_, e] : p->meta.table) {
      if (e.owner != 0 || e.monitor || !e.info) ++n;
    }
  }
  return n;
}

std::size_t Store::resident_blocks() const {
  std::size_t n = 0;
  for (const auto& p : places_) {
    std::lock_guard lk(p->data.mu);
    n += p->data.blocks.size();
  }
  return n;
}

void Store::acquire(std::uint64_t task, const StorePath& path) {
  Shard& sh = shard_for(path);
  std::unique_lock lk(sh.mu);
  // Absent paths get a placeholder lock entry.
  Entry& e = sh.table[path.str()];
  if (e.owner == 0) {
    e.owner = task;
  } else if (e.owner != task) {
    // LOCKED -> MONITOR: block until the owner releases.
    if (!e.monitor) e.monitor = std::make_shared<Monitor>();
    auto mon = e.monitor;
    ++mon->waiters;
    const auto t0 = std::chrono::steady_clock::now();
    mon->cv.wait(lk, [&] { return sh.table.at(path.str()).owner == 0; });
    --mon->waiters;
    Entry& mine = sh.table.at(path.str());
    mine.owner = task;
    if (mon->waiters == 0 && mine.monitor == mon) mine.monitor.reset();
    const auto waited = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0);
    auto prev = max_wait_ns_.load();
    while (waited.count() > prev && !max_wait_ns_.compare_exchange_weak(prev, waited.count())) {
    }
  }
  lk.unlock();
  if (observer_) observer_(task, path);
}

void Store::release(std::uint64_t task, const StorePath& path) {
  Shard& sh = shard_for(path);
  std::lock_guard lk(sh.mu);
  auto it = sh.table.find(path.str());
  if (it == sh.table.end() || it->second.owner != task) return;
  Entry& e = it->second;
  e.owner = 0;
  if (e.monitor) {
    e.monitor->cv.notify_all();
  } else if (!e.info) {
    sh.table.erase(it);
  }
}

LockSet Store::lock_all(std::uint64_t task, std::span<const StorePath> paths) {
  LockSet set;
  set.store_ = this;
  set.task_ = task;
  for (const auto& p : lock_order(paths)) {
    acquire(task, p);
    set.acquired_.push_back(p);
  }
  return set;
}

LockSet Store::lock_paths(std::span<const StorePath> paths) { return lock_all(new_task_id(), paths); }

std::optional<PathInfo> Store::read_info(const StorePath& path) {
  Shard& sh = shard_for(path);
  std::lock_guard lk(sh.mu);
  auto it = sh.table.find(path.str());
  if (it == sh.table.end()) return std::nullopt;
  return it->second.info;
}

void Store::write_info(const StorePath& path, std::optional<PathInfo> info) {
  Shard& sh = shard_for(path);
  std::lock_guard lk(sh.mu);
  sh.table[path.str()].info = std::move(info);
}

std::vector<StorePath> Store::scan_subtree(const StorePath& root) const {
  std::vector<StorePath> out;
  for (const auto& p : places_) {
    std::lock_guard lk(p->meta.mu);
    for (const auto& [key, e] : p->meta.table) {
      if (!e.info) continue;
      const auto& path = e.info->path;
      if (path == root || root.is_ancestor_of(path)) out.push_back(path);
    }
  }
  std::sort(out.begin(), out.end(), lock_order_less);
  return out;
}

void Store::free_blocks(const std::vector<BlockInfo>& blocks) {
  for (const auto& b : blocks) {
    auto& dt = places_.at(b.home)->data;
    std::lock_guard lk(dt.mu);
    dt.blocks.erase(b.block_id);
  }
}

std::optional<PathInfo> Store::find(const StorePath& path) {
  const StorePath set[] = {path};
  auto locks = lock_all(new_task_id(), set);
  return read_info(path);
}

PathInfo Store::get_info(const StorePath& path) {
  auto info = find(path);
  if (!info) throw Error(ErrorCode::NotFound, path.str());
  return *info;
}

void Store::mkdirs(const StorePath& path) {
  if (path.is_root()) return;
  std::vector<StorePath> chain;
  for (StorePath p = path; !p.is_root(); p = p.parent()) chain.push_back(p);
  auto locks = lock_all(new_task_id(), chain);
  std::sort(chain.begin(), chain.end(), lock_order_less);
  // Check first so a failure leaves nothing half-created.
  for (const auto& p : chain) {
    auto info = read_info(p);
    if (info && info->kind == PathKind::File) throw Error(ErrorCode::AncestorIsFile, p.str());
  }
  for (const auto& p : chain) {
    if (!read_info(p)) write_info(p, PathInfo{p, PathKind::Directory, {}, clock_++});
  }
}

std::vector<PathInfo> Store::list(const StorePath& dir) {
  const StorePath set[] = {dir};
  auto locks = lock_all(new_task_id(), set);
  auto info = read_info(dir);
  if (!info) throw Error(ErrorCode::NotFound, dir.str());
  std::vector<PathInfo> out;
  if (info->kind != PathKind::Directory) return out;
  // Creating a child needs this lock, so the child set can only shrink meanwhile.
  for (const auto& p : places_) {
    std::lock_guard lk(p->meta.mu);
    for (const auto& [key, e] : p->meta.table) {
      if (e.info && !e.info->path.is_root() && e.info->path.parent() == dir) out.push_back(*e.info);
    }
  }
  std::sort(out.begin(), out.end(), [](const PathInfo& a, const PathInfo& b) { return a.path < b.path; });
  return out;
}

Store::Writer Store::create_writer(const StorePath& path, BlockInfo info, PlaceId at) {
  if (at >= places_.size()) throw Error(ErrorCode::InvalidArgument, "place out of range");
  if (path.is_root()) throw Error(ErrorCode::IsDirectory, "/");
  const StorePath set[] = {path.parent(), path};
  auto locks = lock_all(new_task_id(), set);
  auto parent = read_info(path.parent());
  if (!parent || parent->kind != PathKind::Directory) throw Error(ErrorCode::ParentNotFound, path.str());
  auto self = read_info(path);
  if (self && self->kind == PathKind::Directory) throw Error(ErrorCode::IsDirectory, path.str());
  return Writer(this, path, info, at);
}

BlockInfo Store::Writer::close() {
  if (closed_) throw Error(ErrorCode::InvalidArgument, "writer already closed");
  closed_ = true;
  return store_->commit(*this);
}

BlockInfo Store::commit(Writer& w) {
  const StorePath set[] = {w.path_.parent(), w.path_};
  auto locks = lock_all(new_task_id(), set);
  auto parent = read_info(w.path_.parent());
  if (!parent || parent->kind != PathKind::Directory) throw Error(ErrorCode::ParentNotFound, w.path_.str());
  auto self = read_info(w.path_);
  if (self && self->kind == PathKind::Directory) throw Error(ErrorCode::IsDirectory, w.path_.str());

  BlockInfo info = w.info_;
  if (info.block_id == 0) info.block_id = next_block_++;
  info.home = w.at_;
  info.length = info.kind == BlockKind::PairSeq ? w.data_.pairs.size() : w.data_.bytes.size();
  {
    auto& dt = places_[w.at_]->data;
    std::lock_guard lk(dt.mu);
    dt.blocks[info.block_id] = std::make_shared<const BlockData>(std::move(w.data_));
  }
  if (!self) self = PathInfo{w.path_, PathKind::File, {}, clock_++};
  self->blocks.push_back(info);
  write_info(w.path_, std::move(self));
  return info;
}

Store::Reader Store::create_reader(const StorePath& path, const BlockInfo& info, PlaceId at) {
  std::shared_ptr<const BlockData> data;
  {
    const StorePath set[] = {path};
    auto locks = lock_all(new_task_id(), set);
    auto self = read_info(path);
    if (!self || self->kind != PathKind::File) throw Error(ErrorCode::NotFound, path.str());
    if (std::find(self->blocks.begin(), self->blocks.end(), info) == self->blocks.end()) {
      throw Error(ErrorCode::BlockNotFound, path.str() + " block " + std::to_string(info.block_id));
    }
    auto& dt = places_.at(info.home)->data;
    std::lock_guard lk(dt.mu);
    auto it = dt.blocks.find(info.block_id);
    if (it == dt.blocks.end()) throw Error(ErrorCode::BlockNotFound, path.str());
    data = it->second;
  }
  if (info.home == at) return Reader(std::move(data), false);
  // Remote block: the data crosses places only in serialized form.
  ++remote_reads_;
  auto copy = std::make_shared<BlockData>();
  copy->pairs = deserialize_batch(serialize_batch(data->pairs, DedupPolicy::Full, at));
  copy->bytes = data->bytes;
  return Reader(std::move(copy), true);
}

void Store::remove(const StorePath& path) {
  if (path.is_root()) throw Error(ErrorCode::InvalidPath, "cannot delete /");
  const auto task = new_task_id();
  for (;;) {
    auto subtree = scan_subtree(path);
    std::vector<StorePath> set = subtree;
    set.push_back(path);
    auto locks = lock_all(task, set);
    if (!read_info(path)) throw Error(ErrorCode::NotFound, path.str());
    if (scan_subtree(path) != subtree) continue;  // raced with a structural change; retry
    std::vector<BlockInfo> blocks;
    for (const auto& p : subtree) {
      auto info = read_info(p);
      if (info) blocks.insert(blocks.end(), info->blocks.begin(), info->blocks.end());
      write_info(p, std::nullopt);
    }
    free_blocks(blocks);
    return;
  }
}

void Store::rename(const StorePath& src, const StorePath& dest) {
  if (src.is_root() || dest.is_root()) throw Error(ErrorCode::InvalidPath, "cannot rename /");
  if (src == dest || src.is_ancestor_of(dest)) {
    throw Error(ErrorCode::InvalidPath, "cannot move " + src.str() + " into itself (" + dest.str() + ")");
  }
  const auto task = new_task_id();
  for (;;) {
    auto subtree = scan_subtree(src);
    std::vector<StorePath> set = subtree;
    set.push_back(src);
    for (const auto& p : subtree) set.push_back(p.rebased(src, dest));
    set.push_back(dest);
    set.push_back(dest.parent());
    auto locks = lock_all(task, set);
    if (!read_info(src)) throw Error(ErrorCode::NotFound, src.str());
    if (read_info(dest)) throw Error(ErrorCode::DestinationExists, dest.str());
    auto dparent = read_info(dest.parent());
    if (!dparent || dparent->kind != PathKind::Directory) throw Error(ErrorCode::ParentNotFound, dest.str());
    if (scan_subtree(src) != subtree) continue;
    for (const auto& p : subtree) {
      auto info = read_info(p);
      const auto target = p.rebased(src, dest);
      info->path = target;
      write_info(target, std::move(info));
      write_info(p, std::nullopt);
    }
    return;
  }
}

}  // namespace memreduce::kvstore
