#pragma once

#include <string>
#include <vector>

#include "can/numerics.hpp"

namespace can {

/// One GRU direction. Gate blocks are stacked row-wise in the order update, reset, candidate.
struct GruParams {
  Parameter* w = nullptr;  // 3*d_dir x d_in
  Parameter* u = nullptr;  // 3*d_dir x d_dir
  Parameter* b = nullptr;  // 3*d_dir x 1

  Eigen::Index d_dir() const { return u->value.cols(); }
  Eigen::Index d_in() const { return w->value.cols(); }

  static GruParams create(ParameterSet& set, const std::string& prefix, Eigen::Index d_in, Eigen::Index d_dir, Rng& rng);
  static GruParams bind(ParameterSet& set, const std::string& prefix);
};

struct GruStep {
  Vector x, h_prev, z, r, cand, h;
};

/// z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br), c = tanh(Wc x + Uc (r*h) + bc),
/// h' = (1 - z) * h + z * c.
GruStep gru_step(const Vector& x, const Vector& h_prev, const GruParams& params);
Vector gru_cell(const Vector& x, const Vector& h_prev, const GruParams& params);

/// Accumulates parameter gradients; returns (d x, d h_prev).
std::pair<Vector, Vector> gru_step_backward(const GruStep& step, const Vector& d_h, const GruParams& params);

struct BiGruParams {
  GruParams fwd, bwd;

  Eigen::Index d_out() const { return fwd.d_dir() + bwd.d_dir(); }

  /// d_h must be even; each direction gets d_h / 2 units.
  static BiGruParams create(ParameterSet& set, Eigen::Index d_in, Eigen::Index d_h, Rng& rng);
  static BiGruParams bind(ParameterSet& set);
};

struct BiGruOutput {
  Tensor h;  // tau x d_h, row j = [fwd_j ; bwd_j]
  std::vector<GruStep> fwd, bwd;  // bwd[i] is the step that consumed row tau-1-i
};

BiGruOutput bigru_forward(const Tensor& features, const BiGruParams& params);
Tensor bigru_backward(const BiGruParams& params, const BiGruOutput& out, const Tensor& d_h);

struct GlobalAttnParams {
  Parameter* v = nullptr;   // d_h x 1
  Parameter* w1 = nullptr;  // d_h x d_h
  Parameter* w2 = nullptr;  // d_h x d_h

  static GlobalAttnParams create(ParameterSet& set, Eigen::Index d_h, Rng& rng);
  static GlobalAttnParams bind(ParameterSet& set);
};

struct GlobalAttention {
  Tensor hg;       // tau x d_h
  Tensor weights;  // tau x tau; row = query, column = context
  std::vector<Tensor> act;  // act[j] (tau x d_h) = tanh(W1 h_j + W2 h_s) over s
};

GlobalAttention global_self_attention(const Tensor& hr, const GlobalAttnParams& params);
/// Accumulates parameter gradients; returns d(loss)/d(hr) through the attention path only.
Tensor global_attention_backward(const Tensor& hr, const GlobalAttnParams& params, const GlobalAttention& out,
                                 const Tensor& d_hg);

Tensor concat_repr(const Tensor& hr, const Tensor& hg);
std::pair<Tensor, Tensor> split_repr(const Tensor& h);

}  // namespace can
