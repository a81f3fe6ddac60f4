#include "can/crf.hpp"

#include <cmath>
#include <limits>

namespace can {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_emissions(const Tensor& e, const CrfParams& params) {
  if (e.rows() < 1) throw DataError("CRF: empty sequence");
  if (e.cols() != params.num_labels()) {
    throw ConfigError("CRF: emissions " + shape_str(e) + " do not match " + std::to_string(params.num_labels()) +
                      " labels");
  }
}

void check_tags(const std::vector<int>& tags, Eigen::Index tau, int labels) {
  if (static_cast<Eigen::Index>(tags.size()) != tau) {
    throw DataError("CRF: " + std::to_string(tags.size()) + " tags for a sequence of length " + std::to_string(tau));
  }
  for (int t : tags) {
    if (t < 0 || t >= labels) throw DataError("CRF: invalid label index " + std::to_string(t));
  }
}

// Forward log-potentials alpha(i, y), including emissions at i.
Tensor forward_table(const Tensor& e, const CrfParams& params) {
  const Eigen::Index tau = e.rows();
  const int L = params.num_labels();
  Tensor alpha(tau, L);
  for (int y = 0; y < L; ++y) alpha(0, y) = e(0, y) + params.transition(params.start(), y);
  Vector buf(L);
  for (Eigen::Index i = 1; i < tau; ++i) {
    for (int y = 0; y < L; ++y) {
      for (int p = 0; p < L; ++p) buf[p] = alpha(i - 1, p) + params.transition(p, y);
      alpha(i, y) = logsumexp(buf) + e(i, y);
    }
  }
  return alpha;
}

// Backward log-potentials beta(i, y), excluding emissions at i, including STOP.
Tensor backward_table(const Tensor& e, const CrfParams& params) {
  const Eigen::Index tau = e.rows();
  const int L = params.num_labels();
  Tensor beta(tau, L);
  for (int y = 0; y < L; ++y) beta(tau - 1, y) = params.transition(y, params.stop());
  Vector buf(L);
  for (Eigen::Index i = tau - 2; i >= 0; --i) {
    for (int y = 0; y < L; ++y) {
      for (int n = 0; n < L; ++n) buf[n] = params.transition(y, n) + e(i + 1, n) + beta(i + 1, n);
      beta(i, y) = logsumexp(buf);
    }
  }
  return beta;
}

double final_logz(const Tensor& alpha, const CrfParams& params) {
  const int L = params.num_labels();
  Vector buf(L);
  for (int y = 0; y < L; ++y) buf[y] = alpha(alpha.rows() - 1, y) + params.transition(y, params.stop());
  return logsumexp(buf);
}

}  // namespace

double CrfParams::transition(int from, int to) const {
  if (to == start() || from == stop()) return kNegInf;
  return trans->value(from, to);
}

CrfParams CrfParams::create(ParameterSet& set, int num_labels, Eigen::Index d_in, Rng& rng) {
  if (num_labels < 1) throw ConfigError("CRF needs at least one label");
  set.add("crf.w", glorot_tensor(num_labels, d_in, rng));
  set.add("crf.trans", Tensor::Zero(num_labels + 2, num_labels + 2));
  return bind(set);
}

CrfParams CrfParams::bind(ParameterSet& set) {
  CrfParams p{&set.at("crf.w"), &set.at("crf.trans")};
  const Eigen::Index n = p.w->value.rows() + 2;
  if (p.trans->value.rows() != n || p.trans->value.cols() != n) {
    throw ConfigError("CRF transition matrix " + shape_str(p.trans->value) + " does not match label count");
  }
  return p;
}

Tensor emissions(const Tensor& h, const CrfParams& params) {
  if (h.cols() != params.w->value.cols()) {
    throw ConfigError("emissions: representation " + shape_str(h) + " does not match W_CRF " +
                      shape_str(params.w->value));
  }
  return h * params.w->value.transpose();
}

Tensor emissions_backward(const Tensor& h, const CrfParams& params, const Tensor& d_e) {
  params.w->grad.noalias() += d_e.transpose() * h;
  return d_e * params.w->value;
}

double sequence_score(const Tensor& e, const CrfParams& params, const std::vector<int>& tags) {
  check_emissions(e, params);
  check_tags(tags, e.rows(), params.num_labels());
  double s = params.transition(params.start(), tags[0]);
  for (std::size_t i = 0; i < tags.size(); ++i) {
    s += e(static_cast<Eigen::Index>(i), tags[i]);
    if (i > 0) s += params.transition(tags[i - 1], tags[i]);
  }
  return s + params.transition(tags.back(), params.stop());
}

double log_partition(const Tensor& e, const CrfParams& params) {
  check_emissions(e, params);
  return final_logz(forward_table(e, params), params);
}

double neg_log_likelihood(const Tensor& e, const CrfParams& params, const std::vector<int>& gold) {
  return log_partition(e, params) - sequence_score(e, params, gold);
}

Tensor neg_log_likelihood_backward(const Tensor& e, const CrfParams& params, const std::vector<int>& gold,
                                   double* loss) {
  check_emissions(e, params);
  check_tags(gold, e.rows(), params.num_labels());
  const Eigen::Index tau = e.rows();
  const int L = params.num_labels();
  const Tensor alpha = forward_table(e, params);
  const Tensor beta = backward_table(e, params);
  const double logz = final_logz(alpha, params);
  if (loss) *loss = logz - sequence_score(e, params, gold);

  Tensor d_e = (alpha + beta).array().unaryExpr([logz](double v) { return std::exp(v - logz); }).matrix();
  Tensor& d_trans = params.trans->grad;
  for (int y = 0; y < L; ++y) {
    d_trans(params.start(), y) += d_e(0, y);
    d_trans(y, params.stop()) += d_e(tau - 1, y);
  }
  for (Eigen::Index i = 0; i + 1 < tau; ++i) {
    for (int a = 0; a < L; ++a) {
      for (int b = 0; b < L; ++b) {
        d_trans(a, b) += std::exp(alpha(i, a) + params.transition(a, b) + e(i + 1, b) + beta(i + 1, b) - logz);
      }
    }
  }

  d_trans(params.start(), gold[0]) -= 1.0;
  d_trans(gold.back(), params.stop()) -= 1.0;
  for (Eigen::Index i = 0; i < tau; ++i) {
    d_e(i, gold[static_cast<std::size_t>(i)]) -= 1.0;
    if (i > 0) d_trans(gold[static_cast<std::size_t>(i - 1)], gold[static_cast<std::size_t>(i)]) -= 1.0;
  }
  return d_e;
}

Decoded viterbi_decode(const Tensor& e, const CrfParams& params, const Tensor& allowed) {
  check_emissions(e, params);
  const Eigen::Index tau = e.rows();
  const int L = params.num_labels();
  const bool masked = allowed.size() != 0;
  if (masked && (allowed.rows() != L + 2 || allowed.cols() != L + 2)) {
    throw ConfigError("viterbi_decode: transition mask " + shape_str(allowed) + " does not match label count");
  }
  auto trans = [&](int from, int to) {
    if (masked && allowed(from, to) == 0.0) return kNegInf;
    return params.transition(from, to);
  };

  Tensor best(tau, L);
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> back(tau, L);
  for (int y = 0; y < L; ++y) best(0, y) = e(0, y) + trans(params.start(), y);
  for (Eigen::Index i = 1; i < tau; ++i) {
    for (int y = 0; y < L; ++y) {
      int arg = 0;
      double top = best(i - 1, 0) + trans(0, y);
      for (int p = 1; p < L; ++p) {
        const double v = best(i - 1, p) + trans(p, y);
        if (v > top) {
          top = v;
          arg = p;
        }
      }
      best(i, y) = top + e(i, y);
      back(i, y) = arg;
    }
  }
  int arg = 0;
  double top = best(tau - 1, 0) + trans(0, params.stop());
  for (int y = 1; y < L; ++y) {
    const double v = best(tau - 1, y) + trans(y, params.stop());
    if (v > top) {
      top = v;
      arg = y;
    }
  }
  Decoded out;
  out.tags.resize(static_cast<std::size_t>(tau));
  out.tags.back() = arg;
  for (Eigen::Index i = tau - 1; i > 0; --i) {
    out.tags[static_cast<std::size_t>(i - 1)] = back(i, out.tags[static_cast<std::size_t>(i)]);
  }
  out.score = sequence_score(e, params, out.tags);
  return out;
}

namespace {

template <typename Visit>
void enumerate_sequences(Eigen::Index tau, int labels, Visit&& visit) {
  double total = std::pow(static_cast<double>(labels), static_cast<double>(tau));
  if (total > 1e6) throw ConfigError("brute force: " + std::to_string(labels) + "^" + std::to_string(tau) +
                                     " sequences exceed the 1e6 limit");
  std::vector<int> tags(static_cast<std::size_t>(tau), 0);
  while (true) {
    visit(tags);
    Eigen::Index i = tau - 1;
    while (i >= 0 && ++tags[static_cast<std::size_t>(i)] == labels) {
      tags[static_cast<std::size_t>(i)] = 0;
      --i;
    }
    if (i < 0) break;
  }
}

}  // namespace

double brute_force_partition(const Tensor& e, const CrfParams& params) {
  check_emissions(e, params);
  std::vector<double> scores;
  enumerate_sequences(e.rows(), params.num_labels(),
                      [&](const std::vector<int>& tags) { scores.push_back(sequence_score(e, params, tags)); });
  return logsumexp(Eigen::Map<const Vector>(scores.data(), static_cast<Eigen::Index>(scores.size())));
}

Decoded brute_force_decode(const Tensor& e, const CrfParams& params) {
  check_emissions(e, params);
  Decoded best;
  best.score = kNegInf;
  enumerate_sequences(e.rows(), params.num_labels(), [&](const std::vector<int>& tags) {
    const double s = sequence_score(e, params, tags);
    if (best.tags.empty() || s > best.score) best = Decoded{tags, s};
  });
  return best;
}

Tensor bioes_transition_mask(const LabelSet& labels) {
  const int L = static_cast<int>(labels.size());
  const int start = L, stop = L + 1;
  Tensor mask = Tensor::Zero(L + 2, L + 2);
  // A chunk is open after B/M; it may only continue with M/E of the same type.
  auto opens = [](char p) { return p == 'B' || p == 'M'; };
  for (int a = 0; a < L; ++a) {
    const auto [pa, ta] = split_tag(labels.label(a));
    for (int b = 0; b < L; ++b) {
      const auto [pb, tb] = split_tag(labels.label(b));
      const bool continues = pb == 'M' || pb == 'E';
      if (pa == 'I' || pb == 'I') {
        mask(a, b) = 0.0;  // not a BIOES prefix
      } else if (opens(pa)) {
        mask(a, b) = continues && ta == tb ? 1.0 : 0.0;
      } else {
        mask(a, b) = continues ? 0.0 : 1.0;
      }
    }
    mask(start, a) = (pa == 'M' || pa == 'E' || pa == 'I') ? 0.0 : 1.0;
    mask(a, stop) = (opens(pa) || pa == 'I') ? 0.0 : 1.0;
  }
  return mask;
}

}  // namespace can
