#pragma once

#include <vector>

#include "can/corpus.hpp"
#include "can/numerics.hpp"

namespace can {

inline constexpr int kSegDim = 4;

/// Per-character rows [x_ch ; x_seg], x_seg one-hot over B/M/E/S.
struct InputRepr {
  Tensor rows;                // tau x (d_ch + 4)
  std::vector<int> char_ids;  // vocabulary id of each row

  Eigen::Index length() const { return rows.rows(); }
};

InputRepr build_input_repr(const Sentence& sentence, const Vocab& vocab, const Tensor& char_table);

/// Window of k tokens around `center`; each token is [x_ch ; x_seg ; pos_m].
struct Window {
  Eigen::Index center = 0;
  Tensor tokens;  // k x d_e
  std::vector<bool> pad_mask;
};

Window make_window(const InputRepr& repr, Eigen::Index j, int k, const Tensor& pos_table);

/// Parameters of the convolutional attention layer. The attention members are null for the
/// plain-convolution ablation.
struct EncoderParams {
  Parameter* char_table = nullptr;  // |V| x d_ch
  Parameter* pos_table = nullptr;   // k x k
  Parameter* v = nullptr;           // d_h x 1
  Parameter* w1 = nullptr;          // d_h x d_e
  Parameter* w2 = nullptr;          // d_h x d_e
  Parameter* conv_w = nullptr;      // (k * d_h) x d_e, block m is kernel slice W^c[m]
  Parameter* conv_b = nullptr;      // k x d_h
  bool mask_pads = false;

  int k() const { return static_cast<int>(pos_table->value.rows()); }
  int d_ch() const { return static_cast<int>(char_table->value.cols()); }
  int d_e() const { return d_ch() + kSegDim + k(); }
  int d_h() const { return static_cast<int>(conv_b->value.cols()); }
  bool has_attention() const { return v != nullptr; }

  /// Registers "encoder.*" parameters in `set`; `char_table` must already exist there.
  static EncoderParams create(ParameterSet& set, Parameter& char_table, int k, int d_h, bool with_attention,
                              Rng& rng);
  /// Rebinds to parameters already present in `set` (after loading a checkpoint).
  static EncoderParams bind(ParameterSet& set, Parameter& char_table, bool with_attention);
};

struct LocalAttention {
  Tensor hidden;     // k x d_e, row m = weights[m] * x_m
  Vector weights;    // k
  Tensor scores_act; // k x d_h, tanh(W1 x_j + W2 x_m)
};

/// weights = softmax_m v' tanh(W1 x_j + W2 x_m); pads take part unless params.mask_pads.
LocalAttention local_attention(const Window& w, const EncoderParams& params);

/// out[f] = sum_m ( W^c[m, f, :] . hidden[m, :] + b^c[m, f] ).
Vector conv_sum_pool(const Tensor& hidden, const Tensor& conv_w, const Tensor& conv_b);

struct EncoderOutput {
  Tensor features;     // tau x d_h
  Tensor local_trace;  // tau x k, empty without attention
  std::vector<Window> windows;
  std::vector<LocalAttention> attention;
};

EncoderOutput conv_attention_forward(const InputRepr& repr, const EncoderParams& params);

/// Accumulates parameter gradients and returns d(loss)/d(repr rows).
Tensor conv_attention_backward(const InputRepr& repr, const EncoderParams& params, const EncoderOutput& out,
                               const Tensor& d_features);

/// Scatters the x_ch block of `d_repr` into the character table gradient.
void embedding_backward(const InputRepr& repr, const Tensor& d_repr, Parameter& char_table);

}  // namespace can
