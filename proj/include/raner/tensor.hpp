#pragma once

#include <string>
#include <vector>

#include "raner/util.hpp"

namespace raner {

// Dense row-major matrix of doubles. Vectors are 1 x n.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

// Named parameter tensor.
struct Tensor : Mat {
  std::string name;
  Tensor() = default;
  Tensor(std::string n, int r, int c) : Mat(r, c), name(std::move(n)) {}
};

// y = x @ w + b, w is (in x out), b is (1 x out) or empty.
void linear_forward(const Mat& x, const Mat& w, const Mat& b, Mat& y);

// Accumulates dx += dy @ w^T, dw += x^T @ dy, db += colsum(dy).
void linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dx, Mat& dw, Mat& db);

}  // namespace raner
