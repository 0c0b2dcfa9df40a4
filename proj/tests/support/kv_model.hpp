#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "memreduce/error.hpp"
#include "memreduce/kvstore/store.hpp"

// Sequential reference model of the store plus a search for a serial order
// that explains a concurrent history.
namespace testing::kv {

using namespace memreduce;
using namespace memreduce::kvstore;

inline StorePath P(std::string_view s) { return StorePath::parse(s); }

inline std::optional<ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::vector<Pair> records(std::size_t n, std::int64_t base = 0) {
  std::vector<Pair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(Pair::of(Key::of_int(base + static_cast<std::int64_t>(i)), Value::of_count(1)));
  return out;
}

inline BlockInfo write_block(Store& s, const StorePath& path, PlaceId at, const std::vector<Pair>& pairs) {
  auto w = s.create_writer(path, BlockInfo{}, at);
  for (const auto& p : pairs) w.add(p);
  return w.close();
}

// --- sequential model ---------------------------------------------------------

// Files carry their blocks as (home, length); length doubles as the writer's tag.
struct Node {
  PathKind kind = PathKind::Directory;
  std::vector<std::pair<PlaceId, std::uint64_t>> blocks;
  friend bool operator==(const Node&, const Node&) = default;
};
using Model = std::map<std::string, Node>;

enum class OpKind { Mkdirs, Write, Delete, Rename, GetInfo };

struct Op {
  OpKind kind;
  std::string a;
  std::string b;  // rename destination
  PlaceId place = 0;
  std::uint64_t tag = 0;  // records written
};

// Outcome visible to the caller: error code, or for GetInfo the observed node.
struct Outcome {
  std::optional<ErrorCode> error;
  std::optional<Node> seen;
  friend bool operator==(const Outcome&, const Outcome&) = default;
};

inline bool is_ancestor(const std::string& a, const std::string& b) {
  if (a == "/") return b != "/";
  return b.size() > a.size() && b.compare(0, a.size(), a) == 0 && b[a.size()] == '/';
}

inline std::string parent_of(const std::string& p) {
  const auto pos = p.rfind('/');
  return pos == 0 ? "/" : p.substr(0, pos);
}

inline Outcome apply(Model& m, const Op& op) {
  auto is_dir = [&](const std::string& p) {
    if (p == "/") return true;
    auto it = m.find(p);
    return it != m.end() && it->second.kind == PathKind::Directory;
  };
  switch (op.kind) {
    case OpKind::Mkdirs: {
      std::vector<std::string> chain;
      for (std::string p = op.a; p != "/"; p = parent_of(p)) chain.push_back(p);
      for (const auto& p : chain) {
        if (m.count(p) && m[p].kind == PathKind::File) return {ErrorCode::AncestorIsFile, {}};
      }
      for (const auto& p : chain) m.try_emplace(p, Node{});
      return {};
    }
    case OpKind::Write: {
      if (!is_dir(parent_of(op.a))) return {ErrorCode::ParentNotFound, {}};
      if (is_dir(op.a)) return {ErrorCode::IsDirectory, {}};
      auto& n = m[op.a];
      n.kind = PathKind::File;
      n.blocks.emplace_back(op.place, op.tag);
      return {};
    }
    case OpKind::Delete: {
      if (!m.count(op.a)) return {ErrorCode::NotFound, {}};
      for (auto it = m.begin(); it != m.end();) {
        it = (it->first == op.a || is_ancestor(op.a, it->first)) ? m.erase(it) : std::next(it);
      }
      return {};
    }
    case OpKind::Rename: {
      if (op.a == op.b || is_ancestor(op.a, op.b)) return {ErrorCode::InvalidPath, {}};
      if (!m.count(op.a)) return {ErrorCode::NotFound, {}};
      if (m.count(op.b)) return {ErrorCode::DestinationExists, {}};
      if (!is_dir(parent_of(op.b))) return {ErrorCode::ParentNotFound, {}};
      Model moved;
      for (auto it = m.begin(); it != m.end();) {
        if (it->first == op.a || is_ancestor(op.a, it->first)) {
          moved[op.b + it->first.substr(op.a.size())] = it->second;
          it = m.erase(it);
        } else {
          ++it;
        }
      }
      m.merge(moved);
      return {};
    }
    case OpKind::GetInfo: {
      auto it = m.find(op.a);
      if (it == m.end()) return {ErrorCode::NotFound, {}};
      return {std::nullopt, it->second};
    }
  }
  return {};
}

inline Outcome run_on_store(Store& s, const Op& op) {
  Outcome out;
  out.error = code_of([&] {
    switch (op.kind) {
      case OpKind::Mkdirs: s.mkdirs(P(op.a)); break;
      case OpKind::Write: write_block(s, P(op.a), op.place, records(op.tag)); break;
      case OpKind::Delete: s.remove(P(op.a)); break;
      case OpKind::Rename: s.rename(P(op.a), P(op.b)); break;
      case OpKind::GetInfo: {
        auto info = s.get_info(P(op.a));
        Node n{info.kind, {}};
        for (const auto& b : info.blocks) n.blocks.emplace_back(b.home, b.length);
        out.seen = n;
        break;
      }
    }
  });
  return out;
}

inline Model snapshot(Store& s) {
  Model m;
  std::vector<StorePath> todo{StorePath()};
  while (!todo.empty()) {
    auto dir = todo.back();
    todo.pop_back();
    for (const auto& info : s.list(dir)) {
      Node n{info.kind, {}};
      for (const auto& b : info.blocks) n.blocks.emplace_back(b.home, b.length);
      m[info.path.str()] = n;
      if (info.kind == PathKind::Directory) todo.push_back(info.path);
    }
  }
  return m;
}

inline const char* kUniverse[] = {"/a", "/b", "/a/x", "/b/x", "/a/x/y", "/b/y", "/c"};

inline Op random_op(Gen& g, std::uint64_t tag) {
  auto path = [&] { return std::string(kUniverse[g.below(std::size(kUniverse))]); };
  switch (g.below(5)) {
    case 0: return {OpKind::Mkdirs, path(), {}, 0, 0};
    case 1: return {OpKind::Write, path(), {}, static_cast<PlaceId>(g.below(3)), tag};
    case 2: return {OpKind::Delete, path(), {}, 0, 0};
    case 3: return {OpKind::Rename, path(), path(), 0, 0};
    default: return {OpKind::GetInfo, path(), {}, 0, 0};
  }
}

// Depth-first search over interleavings that respect each task's program order.
inline bool some_serial_order_matches(const Model& state, const std::vector<std::vector<Op>>& tasks,
                               const std::vector<std::vector<Outcome>>& outcomes, std::vector<std::size_t>& next,
                               const Model& final_state) {
  bool any = false;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (next[t] == tasks[t].size()) continue;
    any = true;
    Model m = state;
    if (!(apply(m, tasks[t][next[t]]) == outcomes[t][next[t]])) continue;
    ++next[t];
    const bool ok = some_serial_order_matches(m, tasks, outcomes, next, final_state);
    --next[t];
    if (ok) return true;
  }
  return !any && state == final_state;
}

}  // namespace testing::kv
