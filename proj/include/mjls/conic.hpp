#pragma once

#include <string>
#include <vector>

#include "mjls/linalg.hpp"

namespace mjls {

// A linear conic program over a flat variable vector x that is the
// concatenation of matrix blocks: symmetric blocks enter through svec
// (sqrt(2)-scaled upper triangle), rectangular blocks column-major.
//
//   minimize    c'x
//   subject to  equality rows      sum coef*x  = rhs
//               inequality rows    sum coef*x <= rhs
//               PSD memberships    smat(P_m x_loc + const_m)  >=  0
//
// Memberships address only the variables they touch (cols + local matrix),
// which keeps backend scaling work proportional to block size.

enum class RowGroup { initial, propagation, terminal, pin, chance };

inline const char* row_group_name(RowGroup g) {
  switch (g) {
    case RowGroup::initial: return "initial";
    case RowGroup::propagation: return "propagation";
    case RowGroup::terminal: return "terminal";
    case RowGroup::pin: return "pin";
    case RowGroup::chance: return "chance";
  }
  return "?";
}

struct VarBlock {
  enum class Shape { sym, rect };
  Shape shape = Shape::sym;
  int rows = 0, cols = 0;
  int offset = 0;  // first index in x
  int span = 0;    // svec_size(rows) or rows*cols
  std::string name;
};

struct LinearRow {
  std::vector<std::pair<int, double>> coef;  // (variable index, coefficient)
  double rhs = 0.0;
  RowGroup group = RowGroup::initial;
  std::string id;
};

struct PsdMembership {
  int dim = 0;             // matrix side
  std::vector<int> cols;   // global variable indices this block reads
  Mat P;                   // svec_size(dim) x cols.size()
  Vec constant;            // svec_size(dim)
  std::string name;
};

struct ConicProgram {
  int num_vars = 0;
  std::vector<VarBlock> blocks;
  Vec c;
  std::vector<LinearRow> equalities;
  std::vector<LinearRow> inequalities;
  std::vector<PsdMembership> memberships;

  int add_sym_block(int n, const std::string& name) {
    VarBlock b;
    b.shape = VarBlock::Shape::sym;
    b.rows = b.cols = n;
    b.offset = num_vars;
    b.span = svec_size(n);
    b.name = name;
    num_vars += b.span;
    blocks.push_back(std::move(b));
    return static_cast<int>(blocks.size()) - 1;
  }

  int add_rect_block(int rows, int cols, const std::string& name) {
    VarBlock b;
    b.shape = VarBlock::Shape::rect;
    b.rows = rows;
    b.cols = cols;
    b.offset = num_vars;
    b.span = rows * cols;
    b.name = name;
    num_vars += b.span;
    blocks.push_back(std::move(b));
    return static_cast<int>(blocks.size()) - 1;
  }

  // Flat index of entry (r, c) of a block. Symmetric blocks require r <= c.
  int entry_index(int block, int r, int c) const {
    const VarBlock& b = blocks[block];
    if (b.shape == VarBlock::Shape::sym) {
      if (r > c) std::swap(r, c);
      return b.offset + svec_index(r, c);
    }
    return b.offset + r + c * b.rows;
  }

  // Write a matrix value into the segment of x owned by a block.
  void set_block(Vec& x, int block, const Mat& value) const {
    const VarBlock& b = blocks[block];
    if (b.shape == VarBlock::Shape::sym) {
      x.segment(b.offset, b.span) = svec(symmetrize(value));
    } else {
      x.segment(b.offset, b.span) =
          Eigen::Map<const Vec>(value.data(), b.span);
    }
  }

  // Read a block's matrix value out of x.
  Mat get_block(const Vec& x, int block) const {
    const VarBlock& b = blocks[block];
    if (b.shape == VarBlock::Shape::sym)
      return smat(x.segment(b.offset, b.span), b.rows);
    return Eigen::Map<const Mat>(x.segment(b.offset, b.span).data(), b.rows,
                                 b.cols);
  }

  double eval_row(const LinearRow& row, const Vec& x) const {
    double acc = 0.0;
    for (const auto& [idx, v] : row.coef) acc += v * x(idx);
    return acc;
  }

  // Value of a PSD membership matrix at x.
  Mat eval_membership(const PsdMembership& m, const Vec& x) const {
    Vec loc(m.cols.size());
    for (size_t i = 0; i < m.cols.size(); ++i) loc(i) = x(m.cols[i]);
    return smat(m.constant + m.P * loc, m.dim);
  }
};

// Scale a row (coefficients and rhs together) to unit infinity norm.
inline void scale_row_unit_inf(LinearRow& row) {
  double mx = std::abs(row.rhs);
  for (const auto& [idx, v] : row.coef) mx = std::max(mx, std::abs(v));
  if (mx <= 0.0) return;
  for (auto& [idx, v] : row.coef) v /= mx;
  row.rhs /= mx;
}

}  // namespace mjls
