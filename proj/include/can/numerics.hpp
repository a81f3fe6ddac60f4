#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "can/errors.hpp"

namespace can {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major dense matrix of doubles. Every parameter and activation is one.
using Tensor = MatrixX<double>;
using Vector = VectorX<double>;

std::string shape_str(Eigen::Index rows, Eigen::Index cols);

template <typename Derived>
std::string shape_str(const Eigen::EigenBase<Derived>& m) {
  return shape_str(m.rows(), m.cols());
}

/// Numerically stable softmax (max-shifted).
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw ConfigError("softmax: empty input");
  const Scalar shift = v.maxCoeff();
  VectorX<Scalar> out(v.size());
  Scalar total = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v(i) - shift);
    total += out[i];
  }
  return out / total;
}

/// log(sum(exp(v))), max-shifted. Entries equal to -inf are allowed and contribute zero mass.
template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw ConfigError("logsumexp: empty input");
  const Scalar shift = v.maxCoeff();
  if (shift == -std::numeric_limits<Scalar>::infinity()) return shift;
  Scalar total = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) total += std::exp(v(i) - shift);
  return shift + std::log(total);
}

/// W x + b, with shape checking.
template <typename DW, typename DX, typename DB>
VectorX<typename DW::Scalar> affine(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DW>& w,
                                    const Eigen::MatrixBase<DB>& b) {
  if (x.cols() != 1 || b.cols() != 1 || w.cols() != x.rows() || w.rows() != b.rows()) {
    throw ConfigError("affine: W " + shape_str(w) + " does not conform with x " + shape_str(x) +
                      " and b " + shape_str(b));
  }
  return w * x + b;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.array().isFinite().all();
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// A trainable tensor with its gradient accumulator and AdaDelta state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor accum_sq_grad;
  Tensor accum_sq_update;
  bool frozen = false;

  Parameter(std::string name, Tensor init);
  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

/// Named parameters kept in sorted-name order; references stay valid for the set's lifetime.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  std::vector<std::string> names() const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  void zero_grad();
  /// sqrt of the sum of squared gradient entries over all parameters.
  double grad_norm() const;

 private:
  std::map<std::string, Parameter> params_;
};

struct AdaDeltaConfig {
  double lr = 0.005;
  double rho = 0.95;
  double eps = 1e-6;
};

void validate(const AdaDeltaConfig& cfg);

/// Learning-rate scaled AdaDelta: accumulates E[g^2], applies
/// dx = -lr * sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g, accumulates E[dx^2], zeroes grad.
void adadelta_step(Parameter& p, const AdaDeltaConfig& cfg);

/// Deterministic generator shared by initialization, shuffling and data generation.
/// Draws are defined here (not by <random> distributions) so results do not depend on the
/// standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t state_;
};

Tensor uniform_tensor(Eigen::Index rows, Eigen::Index cols, double limit, Rng& rng);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)) with fan_in = cols, fan_out = rows.
Tensor glorot_tensor(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Result of comparing analytic gradients with central differences.
struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
    Eigen::Index worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
  };
  std::vector<Entry> entries;
  double tol = 0.0;

  double worst() const;
  bool passed() const { return worst() < tol; }
};

/// A loss over parameters. When `accumulate_grad` is true it must add d(loss)/d(param) into
/// every touched Parameter::grad.
using LossFn = std::function<double(bool accumulate_grad)>;

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
/// dividing round-off by round-off.
double relative_error(double analytic, double numeric, double floor = 1e-6);

GradCheckReport check_gradients(const LossFn& loss, const std::vector<Parameter*>& params,
                                double h = 1e-5, double tol = 1e-4);

}  // namespace can
