#include "memreduce/core/types.hpp"

#include "memreduce/error.hpp"

namespace memreduce {

std::strong_ordering operator<=>(const Key& a, const Key& b) {
  if (a.data_.index() != b.data_.index()) return a.data_.index() <=> b.data_.index();
  switch (a.kind()) {
    case KeyKind::Int:
      return a.as_int() <=> b.as_int();
    case KeyKind::Text: {
      // Bytewise (unsigned) comparison.
      const auto& x = a.as_text();
      const auto& y = b.as_text();
      const int c = x.compare(y);
      return c < 0 ? std::strong_ordering::less
                   : (c > 0 ? std::strong_ordering::greater : std::strong_ordering::equal);
    }
    case KeyKind::BlockIdx:
      return a.as_block() <=> b.as_block();
  }
  return std::strong_ordering::equal;
}

bool CscBlock::well_formed() const noexcept {
  if (col_ptr.size() != static_cast<std::size_t>(cols) + 1) return false;
  if (col_ptr.front() != 0 || col_ptr.back() != values.size()) return false;
  if (row_idx.size() != values.size()) return false;
  for (std::uint32_t c = 0; c < cols; ++c) {
    if (col_ptr[c] > col_ptr[c + 1]) return false;
    for (std::uint32_t i = col_ptr[c]; i < col_ptr[c + 1]; ++i) {
      if (row_idx[i] >= rows) return false;
      if (i > col_ptr[c] && row_idx[i] <= row_idx[i - 1]) return false;
    }
  }
  return true;
}

std::vector<double> CscBlock::multiply(std::span<const double> x) const {
  if (x.size() != cols) {
    throw Error(ErrorCode::DimensionMismatch,
                "block has " + std::to_string(cols) + " columns, vector has " + std::to_string(x.size()));
  }
  std::vector<double> y(rows, 0.0);
  for (std::uint32_t c = 0; c < cols; ++c) {
    const double xc = x[c];
    for (std::uint32_t i = col_ptr[c]; i < col_ptr[c + 1]; ++i) y[row_idx[i]] += values[i] * xc;
  }
  return y;
}

CscBlock CscBlock::from_dense(std::uint32_t rows, std::uint32_t cols, std::span<const double> column_major) {
  CscBlock b;
  b.rows = rows;
  b.cols = cols;
  b.col_ptr.assign(1, 0);
  for (std::uint32_t c = 0; c < cols; ++c) {
    for (std::uint32_t r = 0; r < rows; ++r) {
      const double v = column_major[static_cast<std::size_t>(c) * rows + r];
      if (v != 0.0) {
        b.row_idx.push_back(r);
        b.values.push_back(v);
      }
    }
    b.col_ptr.push_back(static_cast<std::uint32_t>(b.values.size()));
  }
  return b;
}

Pair deep_clone(const Pair& pair) {
  return Pair{std::make_shared<Key>(*pair.key), std::make_shared<Value>(*pair.value)};
}

}  // namespace memreduce
