#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "memreduce/core/codec.hpp"
#include "memreduce/core/types.hpp"

namespace testing {

// Fresh directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> n{0};
    path_ = std::filesystem::temp_directory_path() /
            ("memreduce-test-" + std::to_string(std::random_device{}()) + "-" + std::to_string(n++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Small seeded generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::uint64_t u64() { return rng_(); }
  std::int64_t range(std::int64_t lo, std::int64_t hi) {  // inclusive
    return lo + static_cast<std::int64_t>(rng_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  bool coin(double p = 0.5) { return std::uniform_real_distribution<double>(0, 1)(rng_) < p; }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  std::string text(std::size_t max_len) {
    std::string s(below(max_len + 1), 'a');
    for (auto& c : s) c = static_cast<char>('a' + below(26));
    return s;
  }

  memreduce::Bytes bytes(std::size_t max_len) {
    memreduce::Bytes b(below(max_len + 1));
    for (auto& x : b) x = static_cast<std::uint8_t>(rng_());
    return b;
  }

  memreduce::Key key() {
    switch (below(3)) {
      case 0:
        return memreduce::Key::of_int(range(-1000000, 1000000));
      case 1:
        return memreduce::Key::of_text(text(12));
      default:
        return memreduce::Key::of_block(static_cast<std::int32_t>(range(-5, 50)),
                                        static_cast<std::int32_t>(range(-5, 50)));
    }
  }

  memreduce::CscBlock csc(std::uint32_t max_dim = 6) {
    const auto rows = static_cast<std::uint32_t>(below(max_dim + 1));
    const auto cols = static_cast<std::uint32_t>(below(max_dim + 1));
    std::vector<double> dense(static_cast<std::size_t>(rows) * cols);
    for (auto& x : dense) x = coin(0.3) ? real(-10, 10) : 0.0;
    return memreduce::CscBlock::from_dense(rows, cols, dense);
  }

  memreduce::Value value() {
    switch (below(4)) {
      case 0:
        return memreduce::Value::of_bytes(bytes(40));
      case 1:
        return memreduce::Value::of_count(range(-1000000, 1000000));
      case 2:
        return memreduce::Value::of_csc(csc());
      default: {
        std::vector<double> v(below(8));
        for (auto& x : v) x = real(-100, 100);
        return memreduce::Value::of_dense(std::move(v));
      }
    }
  }

  memreduce::Pair pair() { return memreduce::Pair::of(key(), value()); }

  std::vector<memreduce::Pair> pairs(std::size_t max_n) {
    std::vector<memreduce::Pair> out(below(max_n + 1));
    for (auto& p : out) p = pair();
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

inline std::vector<std::vector<std::uint8_t>> encoded_sorted(const std::vector<memreduce::Pair>& pairs) {
  std::vector<std::vector<std::uint8_t>> out;
  for (const auto& p : pairs) out.push_back(memreduce::encode_pair(p));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace testing
