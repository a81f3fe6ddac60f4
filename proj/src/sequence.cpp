#include "can/sequence.hpp"

namespace can {

GruParams GruParams::create(ParameterSet& set, const std::string& prefix, Eigen::Index d_in, Eigen::Index d_dir,
                            Rng& rng) {
  if (d_in < 1 || d_dir < 1) throw ConfigError("GRU dimensions must be positive");
  Tensor w(3 * d_dir, d_in), u(3 * d_dir, d_dir);
  for (int g = 0; g < 3; ++g) {
    w.middleRows(g * d_dir, d_dir) = glorot_tensor(d_dir, d_in, rng);
    u.middleRows(g * d_dir, d_dir) = glorot_tensor(d_dir, d_dir, rng);
  }
  set.add(prefix + ".w", std::move(w));
  set.add(prefix + ".u", std::move(u));
  set.add(prefix + ".b", Tensor::Zero(3 * d_dir, 1));
  return bind(set, prefix);
}

GruParams GruParams::bind(ParameterSet& set, const std::string& prefix) {
  GruParams p{&set.at(prefix + ".w"), &set.at(prefix + ".u"), &set.at(prefix + ".b")};
  const Eigen::Index d = p.u->value.cols();
  if (p.u->value.rows() != 3 * d || p.w->value.rows() != 3 * d || p.b->value.rows() != 3 * d ||
      p.b->value.cols() != 1) {
    throw ConfigError("GRU parameters under '" + prefix + "' have inconsistent shapes");
  }
  return p;
}

GruStep gru_step(const Vector& x, const Vector& h_prev, const GruParams& params) {
  const Eigen::Index d = params.d_dir();
  if (x.size() != params.d_in() || h_prev.size() != d) {
    throw ConfigError("gru_cell: x " + shape_str(x) + " / h " + shape_str(h_prev) + " do not match W " +
                      shape_str(params.w->value));
  }
  const Tensor& w = params.w->value;
  const Tensor& u = params.u->value;
  const Vector& b = params.b->value.col(0);
  GruStep s;
  s.x = x;
  s.h_prev = h_prev;
  const Vector wx = w * x;
  const Vector gates = wx.head(2 * d) + u.topRows(2 * d) * h_prev + b.head(2 * d);
  s.z = gates.head(d).unaryExpr([](double v) { return sigmoid(v); });
  s.r = gates.tail(d).unaryExpr([](double v) { return sigmoid(v); });
  s.cand = (wx.tail(d) + u.bottomRows(d) * s.r.cwiseProduct(h_prev) + b.tail(d)).array().tanh().matrix();
  s.h = (1.0 - s.z.array()) * h_prev.array() + s.z.array() * s.cand.array();
  return s;
}

Vector gru_cell(const Vector& x, const Vector& h_prev, const GruParams& params) {
  return gru_step(x, h_prev, params).h;
}

std::pair<Vector, Vector> gru_step_backward(const GruStep& s, const Vector& d_h, const GruParams& params) {
  const Eigen::Index d = params.d_dir();
  const Tensor& w = params.w->value;
  const Tensor& u = params.u->value;

  Vector d_pre(3 * d);
  auto d_z = d_pre.head(d);
  auto d_r = d_pre.segment(d, d);
  auto d_c = d_pre.tail(d);
  d_z = (d_h.array() * (s.cand - s.h_prev).array() * s.z.array() * (1.0 - s.z.array())).matrix();
  d_c = (d_h.array() * s.z.array() * (1.0 - s.cand.array().square())).matrix();
  const Vector rh = s.r.cwiseProduct(s.h_prev);
  const Vector d_rh = u.bottomRows(d).transpose() * d_c;
  d_r = (d_rh.array() * s.h_prev.array() * s.r.array() * (1.0 - s.r.array())).matrix();

  params.w->grad.noalias() += d_pre * s.x.transpose();
  params.u->grad.topRows(2 * d).noalias() += d_pre.head(2 * d) * s.h_prev.transpose();
  params.u->grad.bottomRows(d).noalias() += d_c * rh.transpose();
  params.b->grad.col(0) += d_pre;

  Vector d_x = w.transpose() * d_pre;
  Vector d_prev = (d_h.array() * (1.0 - s.z.array())).matrix();
  d_prev += d_rh.cwiseProduct(s.r);
  d_prev.noalias() += u.topRows(2 * d).transpose() * d_pre.head(2 * d);
  return {std::move(d_x), std::move(d_prev)};
}

BiGruParams BiGruParams::create(ParameterSet& set, Eigen::Index d_in, Eigen::Index d_h, Rng& rng) {
  if (d_h < 2 || d_h % 2 != 0) throw ConfigError("BiGRU hidden size must be even, got " + std::to_string(d_h));
  BiGruParams p;
  p.fwd = GruParams::create(set, "gru.fwd", d_in, d_h / 2, rng);
  p.bwd = GruParams::create(set, "gru.bwd", d_in, d_h / 2, rng);
  return p;
}

BiGruParams BiGruParams::bind(ParameterSet& set) {
  return {GruParams::bind(set, "gru.fwd"), GruParams::bind(set, "gru.bwd")};
}

BiGruOutput bigru_forward(const Tensor& features, const BiGruParams& params) {
  const Eigen::Index tau = features.rows();
  if (tau < 1) throw DataError("bigru_forward: empty sequence");
  const Eigen::Index df = params.fwd.d_dir(), db = params.bwd.d_dir();
  BiGruOutput out;
  out.h.resize(tau, df + db);
  Vector h = Vector::Zero(df);
  for (Eigen::Index t = 0; t < tau; ++t) {
    out.fwd.push_back(gru_step(features.row(t).transpose(), h, params.fwd));
    h = out.fwd.back().h;
    out.h.row(t).head(df) = h.transpose();
  }
  h = Vector::Zero(db);
  for (Eigen::Index t = tau - 1; t >= 0; --t) {
    out.bwd.push_back(gru_step(features.row(t).transpose(), h, params.bwd));
    h = out.bwd.back().h;
    out.h.row(t).tail(db) = h.transpose();
  }
  return out;
}

Tensor bigru_backward(const BiGruParams& params, const BiGruOutput& out, const Tensor& d_h) {
  const Eigen::Index tau = out.h.rows();
  const Eigen::Index df = params.fwd.d_dir(), db = params.bwd.d_dir();
  Tensor d_x(tau, params.fwd.d_in());
  Vector carry = Vector::Zero(df);
  for (Eigen::Index t = tau - 1; t >= 0; --t) {
    const Vector grad = d_h.row(t).head(df).transpose() + carry;
    auto [dx, dprev] = gru_step_backward(out.fwd[static_cast<std::size_t>(t)], grad, params.fwd);
    d_x.row(t) = dx.transpose();
    carry = std::move(dprev);
  }
  carry = Vector::Zero(db);
  for (Eigen::Index i = tau - 1; i >= 0; --i) {
    const Eigen::Index t = tau - 1 - i;
    const Vector grad = d_h.row(t).tail(db).transpose() + carry;
    auto [dx, dprev] = gru_step_backward(out.bwd[static_cast<std::size_t>(i)], grad, params.bwd);
    d_x.row(t) += dx.transpose();
    carry = std::move(dprev);
  }
  return d_x;
}

GlobalAttnParams GlobalAttnParams::create(ParameterSet& set, Eigen::Index d_h, Rng& rng) {
  set.add("global.v", glorot_tensor(d_h, 1, rng));
  set.add("global.w1", glorot_tensor(d_h, d_h, rng));
  set.add("global.w2", glorot_tensor(d_h, d_h, rng));
  return bind(set);
}

GlobalAttnParams GlobalAttnParams::bind(ParameterSet& set) {
  GlobalAttnParams p{&set.at("global.v"), &set.at("global.w1"), &set.at("global.w2")};
  const Eigen::Index d = p.v->value.rows();
  if (p.w1->value.rows() != d || p.w1->value.cols() != d || p.w2->value.rows() != d || p.w2->value.cols() != d) {
    throw ConfigError("global attention parameters have inconsistent shapes");
  }
  return p;
}

GlobalAttention global_self_attention(const Tensor& hr, const GlobalAttnParams& params) {
  const Eigen::Index tau = hr.rows();
  if (tau < 1) throw DataError("global_self_attention: empty sequence");
  if (hr.cols() != params.w1->value.cols()) {
    throw ConfigError("global_self_attention: input " + shape_str(hr) + " does not match W1 " +
                      shape_str(params.w1->value));
  }
  const Tensor query = hr * params.w1->value.transpose();
  const Tensor context = hr * params.w2->value.transpose();
  GlobalAttention out;
  out.weights.resize(tau, tau);
  out.act.reserve(static_cast<std::size_t>(tau));
  for (Eigen::Index j = 0; j < tau; ++j) {
    Tensor act = context;
    act.rowwise() += query.row(j);
    act = act.array().tanh().matrix();
    out.weights.row(j) = softmax(act * params.v->value).transpose();
    out.act.push_back(std::move(act));
  }
  out.hg = out.weights * hr;
  return out;
}

Tensor global_attention_backward(const Tensor& hr, const GlobalAttnParams& params, const GlobalAttention& out,
                                 const Tensor& d_hg) {
  const Eigen::Index tau = hr.rows();
  const Eigen::Index d = hr.cols();
  Tensor d_hr = out.weights.transpose() * d_hg;
  const Tensor d_weights = d_hg * hr.transpose();
  Tensor d_query = Tensor::Zero(tau, d);
  Tensor d_context = Tensor::Zero(tau, d);
  for (Eigen::Index j = 0; j < tau; ++j) {
    const Vector a = out.weights.row(j).transpose();
    const Vector da = d_weights.row(j).transpose();
    const Vector d_scores = a.cwiseProduct((da.array() - a.dot(da)).matrix());
    const Tensor& act = out.act[static_cast<std::size_t>(j)];
    params.v->grad.noalias() += act.transpose() * d_scores;
    const Tensor d_pre = ((d_scores * params.v->value.transpose()).array() * (1.0 - act.array().square())).matrix();
    d_context += d_pre;
    d_query.row(j) = d_pre.colwise().sum();
  }
  params.w1->grad.noalias() += d_query.transpose() * hr;
  params.w2->grad.noalias() += d_context.transpose() * hr;
  d_hr.noalias() += d_query * params.w1->value;
  d_hr.noalias() += d_context * params.w2->value;
  return d_hr;
}

Tensor concat_repr(const Tensor& hr, const Tensor& hg) {
  if (hr.rows() != hg.rows() || hr.cols() != hg.cols()) {
    throw ConfigError("concat_repr: shapes " + shape_str(hr) + " and " + shape_str(hg) + " differ");
  }
  Tensor h(hr.rows(), hr.cols() * 2);
  h << hr, hg;
  return h;
}

std::pair<Tensor, Tensor> split_repr(const Tensor& h) {
  if (h.cols() % 2 != 0) throw ConfigError("split_repr: odd column count " + shape_str(h));
  const Eigen::Index half = h.cols() / 2;
  return {h.leftCols(half), h.rightCols(half)};
}

}  // namespace can
