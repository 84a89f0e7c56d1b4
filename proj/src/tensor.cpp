#include "raner/tensor.hpp"

namespace raner {

void linear_forward(const Mat& x, const Mat& w, const Mat& b, Mat& y) {
  y = Mat(x.rows, w.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    if (b.size() > 0)
      for (int j = 0; j < w.cols; ++j) yi[j] = b.v[static_cast<size_t>(j)];
    for (int k = 0; k < x.cols; ++k) {
      double xv = xi[k];
      if (xv == 0.0) continue;
      const double* wk = w.row(k);
      for (int j = 0; j < w.cols; ++j) yi[j] += xv * wk[j];
    }
  }
}

void linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dx, Mat& dw, Mat& db) {
  for (int i = 0; i < x.rows; ++i) {
    const double* dyi = dy.row(i);
    const double* xi = x.row(i);
    double* dxi = dx.row(i);
    for (int j = 0; j < w.cols; ++j) db.v[static_cast<size_t>(j)] += dyi[j];
    for (int k = 0; k < x.cols; ++k) {
      const double* wk = w.row(k);
      double* dwk = dw.row(k);
      double acc = 0.0;
      double xv = xi[k];
      for (int j = 0; j < w.cols; ++j) {
        acc += dyi[j] * wk[j];
        dwk[j] += xv * dyi[j];
      }
      dxi[k] += acc;
    }
  }
}

}  // namespace raner
