#pragma once

// Scalar-loop reference evaluations used as independent oracles. They deliberately avoid
// Eigen expressions and the library kernels they check.

#include <cmath>
#include <vector>

namespace can::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec matvec(const Mat& m, const Vec& x) {
  Vec out(m.size(), 0.0);
  for (std::size_t r = 0; r < m.size(); ++r) out[r] = dot(m[r], x);
  return out;
}

inline Vec naive_softmax(const Vec& s) {
  double total = 0.0;
  Vec out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) total += std::exp(s[i]);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = std::exp(s[i]) / total;
  return out;
}

/// v' tanh(W1 a + W2 b)
inline double additive_score(const Vec& v, const Mat& w1, const Mat& w2, const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t f = 0; f < v.size(); ++f) s += v[f] * std::tanh(dot(w1[f], a) + dot(w2[f], b));
  return s;
}

/// kernel[m][f][e], bias[m][f], hidden[m][e]
inline Vec conv_sum_pool(const std::vector<Mat>& kernel, const Mat& bias, const Mat& hidden) {
  const std::size_t k = kernel.size(), dh = bias[0].size(), de = hidden[0].size();
  Vec out(dh, 0.0);
  for (std::size_t f = 0; f < dh; ++f) {
    for (std::size_t m = 0; m < k; ++m) {
      double s = 0.0;
      for (std::size_t e = 0; e < de; ++e) s += kernel[m][f][e] * hidden[m][e];
      out[f] += s + bias[m][f];
    }
  }
  return out;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Gate matrices per gate g in {z, r, c}: wx[g], uh[g], b[g].
inline Vec gru_cell(const std::vector<Mat>& wx, const std::vector<Mat>& uh, const Mat& b, const Vec& x, const Vec& h) {
  const std::size_t d = h.size();
  Vec out(d);
  Vec r(d), z(d);
  for (std::size_t i = 0; i < d; ++i) {
    z[i] = sig(dot(wx[0][i], x) + dot(uh[0][i], h) + b[0][i]);
    r[i] = sig(dot(wx[1][i], x) + dot(uh[1][i], h) + b[1][i]);
  }
  Vec rh(d);
  for (std::size_t i = 0; i < d; ++i) rh[i] = r[i] * h[i];
  for (std::size_t i = 0; i < d; ++i) {
    const double c = std::tanh(dot(wx[2][i], x) + dot(uh[2][i], rh) + b[2][i]);
    out[i] = (1.0 - z[i]) * h[i] + z[i] * c;
  }
  return out;
}

}  // namespace can::oracle
