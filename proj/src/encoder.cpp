#include "can/encoder.hpp"

namespace can {

InputRepr build_input_repr(const Sentence& sentence, const Vocab& vocab, const Tensor& char_table) {
  if (sentence.size() == 0) throw DataError("build_input_repr: empty sentence");
  if (sentence.seg.size() != sentence.size()) throw DataError("build_input_repr: BMES marks missing");
  if (static_cast<std::size_t>(char_table.rows()) != vocab.size()) {
    throw ConfigError("build_input_repr: character table has " + std::to_string(char_table.rows()) +
                      " rows but vocabulary has " + std::to_string(vocab.size()) + " entries");
  }
  const Eigen::Index tau = static_cast<Eigen::Index>(sentence.size());
  const Eigen::Index d_ch = char_table.cols();
  InputRepr repr;
  repr.rows = Tensor::Zero(tau, d_ch + kSegDim);
  repr.char_ids.reserve(sentence.size());
  for (Eigen::Index i = 0; i < tau; ++i) {
    const int id = vocab.id(sentence.chars[static_cast<std::size_t>(i)]);
    repr.char_ids.push_back(id);
    repr.rows.row(i).head(d_ch) = char_table.row(id);
    repr.rows(i, d_ch + static_cast<int>(sentence.seg[static_cast<std::size_t>(i)])) = 1.0;
  }
  return repr;
}

Window make_window(const InputRepr& repr, Eigen::Index j, int k, const Tensor& pos_table) {
  if (k < 1 || k % 2 == 0) throw ConfigError("window size must be odd and positive, got " + std::to_string(k));
  if (pos_table.rows() != k || pos_table.cols() != k) {
    throw ConfigError("position table " + shape_str(pos_table) + " does not match window size " + std::to_string(k));
  }
  if (j < 0 || j >= repr.length()) throw ConfigError("window center out of range");
  const Eigen::Index d_in = repr.rows.cols();
  const int half = (k - 1) / 2;
  Window w;
  w.center = j;
  w.tokens = Tensor::Zero(k, d_in + k);
  w.pad_mask.assign(static_cast<std::size_t>(k), false);
  for (int m = 0; m < k; ++m) {
    const Eigen::Index p = j + m - half;
    if (p < 0 || p >= repr.length()) {
      w.pad_mask[static_cast<std::size_t>(m)] = true;
    } else {
      w.tokens.row(m).head(d_in) = repr.rows.row(p);
    }
    w.tokens.row(m).tail(k) = pos_table.row(m);
  }
  return w;
}

namespace {

void require_param(const Parameter* p, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (p == nullptr) throw ConfigError(std::string("encoder parameter ") + what + " is not bound");
  if (p->value.rows() != rows || p->value.cols() != cols) {
    throw ConfigError(std::string("encoder parameter ") + what + " has shape " + shape_str(p->value) +
                      ", expected " + shape_str(rows, cols));
  }
}

void check_shapes(const EncoderParams& params) {
  if (!params.char_table || !params.pos_table || !params.conv_b) throw ConfigError("encoder parameters not bound");
  const int k = params.k(), d_e = params.d_e(), d_h = params.d_h();
  require_param(params.pos_table, k, k, "pos_table");
  require_param(params.conv_w, static_cast<Eigen::Index>(k) * d_h, d_e, "conv_w");
  if (params.has_attention()) {
    require_param(params.v, d_h, 1, "v");
    require_param(params.w1, d_h, d_e, "w1");
    require_param(params.w2, d_h, d_e, "w2");
  }
}

}  // namespace

EncoderParams EncoderParams::create(ParameterSet& set, Parameter& char_table, int k, int d_h, bool with_attention,
                                    Rng& rng) {
  if (k < 1 || k % 2 == 0) throw ConfigError("window size must be odd and positive, got " + std::to_string(k));
  if (d_h < 1) throw ConfigError("hidden size must be positive");
  const int d_e = static_cast<int>(char_table.value.cols()) + kSegDim + k;
  set.add("encoder.pos_table", Tensor::Identity(k, k));
  Tensor conv_w(static_cast<Eigen::Index>(k) * d_h, d_e);
  for (int m = 0; m < k; ++m) conv_w.middleRows(static_cast<Eigen::Index>(m) * d_h, d_h) = glorot_tensor(d_h, d_e, rng);
  set.add("encoder.conv.w", std::move(conv_w));
  set.add("encoder.conv.b", Tensor::Zero(k, d_h));
  if (with_attention) {
    set.add("encoder.attn.v", glorot_tensor(d_h, 1, rng));
    set.add("encoder.attn.w1", glorot_tensor(d_h, d_e, rng));
    set.add("encoder.attn.w2", glorot_tensor(d_h, d_e, rng));
  }
  return bind(set, char_table, with_attention);
}

EncoderParams EncoderParams::bind(ParameterSet& set, Parameter& char_table, bool with_attention) {
  EncoderParams p;
  p.char_table = &char_table;
  p.pos_table = &set.at("encoder.pos_table");
  p.conv_w = &set.at("encoder.conv.w");
  p.conv_b = &set.at("encoder.conv.b");
  if (with_attention) {
    p.v = &set.at("encoder.attn.v");
    p.w1 = &set.at("encoder.attn.w1");
    p.w2 = &set.at("encoder.attn.w2");
  }
  check_shapes(p);
  return p;
}

LocalAttention local_attention(const Window& w, const EncoderParams& params) {
  const Eigen::Index k = w.tokens.rows();
  if (!params.has_attention()) throw ConfigError("local_attention: attention parameters not bound");
  if (w.tokens.cols() != params.w1->value.cols()) {
    throw ConfigError("local_attention: window tokens " + shape_str(w.tokens) + " do not match W1 " +
                      shape_str(params.w1->value));
  }
  const Eigen::Index mid = (k - 1) / 2;
  const Vector center_proj = params.w1->value * w.tokens.row(mid).transpose();

  LocalAttention out;
  out.scores_act = w.tokens * params.w2->value.transpose();
  out.scores_act.rowwise() += center_proj.transpose();
  out.scores_act = out.scores_act.array().tanh().matrix();
  const Vector scores = out.scores_act * params.v->value;

  if (params.mask_pads) {
    std::vector<Eigen::Index> live;
    for (Eigen::Index m = 0; m < k; ++m) {
      if (!w.pad_mask[static_cast<std::size_t>(m)]) live.push_back(m);
    }
    Vector sub(static_cast<Eigen::Index>(live.size()));
    for (std::size_t i = 0; i < live.size(); ++i) sub[static_cast<Eigen::Index>(i)] = scores[live[i]];
    const Vector p = softmax(sub);
    out.weights = Vector::Zero(k);
    for (std::size_t i = 0; i < live.size(); ++i) out.weights[live[i]] = p[static_cast<Eigen::Index>(i)];
  } else {
    out.weights = softmax(scores);
  }
  out.hidden = out.weights.asDiagonal() * w.tokens;
  return out;
}

Vector conv_sum_pool(const Tensor& hidden, const Tensor& conv_w, const Tensor& conv_b) {
  const Eigen::Index k = hidden.rows();
  const Eigen::Index d_e = hidden.cols();
  if (conv_b.rows() != k || conv_w.cols() != d_e || conv_w.rows() != k * conv_b.cols()) {
    throw ConfigError("conv_sum_pool: hidden " + shape_str(hidden) + ", kernel " + shape_str(conv_w) +
                      " and bias " + shape_str(conv_b) + " do not conform");
  }
  const Eigen::Index d_h = conv_b.cols();
  Vector out = Vector::Zero(d_h);
  for (Eigen::Index m = 0; m < k; ++m) {
    out.noalias() += conv_w.middleRows(m * d_h, d_h) * hidden.row(m).transpose();
    out += conv_b.row(m).transpose();
  }
  return out;
}

EncoderOutput conv_attention_forward(const InputRepr& repr, const EncoderParams& params) {
  check_shapes(params);
  if (repr.length() == 0) throw DataError("conv_attention_forward: empty sentence");
  if (repr.rows.cols() != params.d_ch() + kSegDim) {
    throw ConfigError("conv_attention_forward: input rows " + shape_str(repr.rows) + " do not match d_ch + 4");
  }
  const Eigen::Index tau = repr.length();
  const int k = params.k();
  EncoderOutput out;
  out.features.resize(tau, params.d_h());
  if (params.has_attention()) out.local_trace.resize(tau, k);
  out.windows.reserve(static_cast<std::size_t>(tau));
  for (Eigen::Index j = 0; j < tau; ++j) {
    Window w = make_window(repr, j, k, params.pos_table->value);
    if (params.has_attention()) {
      LocalAttention att = local_attention(w, params);
      out.features.row(j) = conv_sum_pool(att.hidden, params.conv_w->value, params.conv_b->value).transpose();
      out.local_trace.row(j) = att.weights.transpose();
      out.attention.push_back(std::move(att));
    } else {
      out.features.row(j) = conv_sum_pool(w.tokens, params.conv_w->value, params.conv_b->value).transpose();
    }
    out.windows.push_back(std::move(w));
  }
  return out;
}

Tensor conv_attention_backward(const InputRepr& repr, const EncoderParams& params, const EncoderOutput& out,
                               const Tensor& d_features) {
  const Eigen::Index tau = repr.length();
  const int k = params.k();
  const int half = (k - 1) / 2;
  const Eigen::Index d_h = params.d_h();
  const Eigen::Index d_in = repr.rows.cols();
  Tensor d_repr = Tensor::Zero(tau, d_in);

  for (Eigen::Index j = 0; j < tau; ++j) {
    const Window& w = out.windows[static_cast<std::size_t>(j)];
    const Vector d_out = d_features.row(j).transpose();
    const Tensor& hidden =
        params.has_attention() ? out.attention[static_cast<std::size_t>(j)].hidden : w.tokens;

    Tensor d_hidden(k, w.tokens.cols());
    for (int m = 0; m < k; ++m) {
      params.conv_b->grad.row(m) += d_out.transpose();
      params.conv_w->grad.middleRows(m * d_h, d_h).noalias() += d_out * hidden.row(m);
      d_hidden.row(m).noalias() = (params.conv_w->value.middleRows(m * d_h, d_h).transpose() * d_out).transpose();
    }

    Tensor d_tokens;
    if (params.has_attention()) {
      const LocalAttention& att = out.attention[static_cast<std::size_t>(j)];
      const Vector d_weights = (d_hidden.cwiseProduct(w.tokens)).rowwise().sum();
      d_tokens = att.weights.asDiagonal() * d_hidden;
      const double mean = att.weights.dot(d_weights);
      const Vector d_scores = att.weights.cwiseProduct((d_weights.array() - mean).matrix());
      params.v->grad.noalias() += att.scores_act.transpose() * d_scores;
      const Tensor d_pre =
          ((d_scores * params.v->value.transpose()).array() * (1.0 - att.scores_act.array().square())).matrix();
      params.w2->grad.noalias() += d_pre.transpose() * w.tokens;
      d_tokens.noalias() += d_pre * params.w2->value;
      const Vector d_center_proj = d_pre.colwise().sum().transpose();
      params.w1->grad.noalias() += d_center_proj * w.tokens.row(half);
      d_tokens.row(half).noalias() += (params.w1->value.transpose() * d_center_proj).transpose();
    } else {
      d_tokens = std::move(d_hidden);
    }

    for (int m = 0; m < k; ++m) {
      params.pos_table->grad.row(m) += d_tokens.row(m).tail(k);
      const Eigen::Index p = j + m - half;
      if (p >= 0 && p < tau) d_repr.row(p) += d_tokens.row(m).head(d_in);
    }
  }
  return d_repr;
}

void embedding_backward(const InputRepr& repr, const Tensor& d_repr, Parameter& char_table) {
  const Eigen::Index d_ch = char_table.value.cols();
  for (Eigen::Index i = 0; i < repr.length(); ++i) {
    char_table.grad.row(repr.char_ids[static_cast<std::size_t>(i)]) += d_repr.row(i).head(d_ch);
  }
}

}  // namespace can
