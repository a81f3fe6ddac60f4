#pragma once

#include <vector>

#include "can/corpus.hpp"
#include "can/numerics.hpp"

namespace can {

/// Linear-chain CRF parameters. Transition matrix indices 0..L-1 are labels, L is the virtual
/// START state and L+1 is STOP.
struct CrfParams {
  Parameter* w = nullptr;      // L x d_in emission weights
  Parameter* trans = nullptr;  // (L+2) x (L+2), trans(from, to)

  int num_labels() const { return static_cast<int>(w->value.rows()); }
  int start() const { return num_labels(); }
  int stop() const { return num_labels() + 1; }
  /// -inf into START and out of STOP.
  double transition(int from, int to) const;

  static CrfParams create(ParameterSet& set, int num_labels, Eigen::Index d_in, Rng& rng);
  static CrfParams bind(ParameterSet& set);
};

/// tau x L, row i = W_CRF H_i.
Tensor emissions(const Tensor& h, const CrfParams& params);

double sequence_score(const Tensor& e, const CrfParams& params, const std::vector<int>& tags);
double log_partition(const Tensor& e, const CrfParams& params);
double neg_log_likelihood(const Tensor& e, const CrfParams& params, const std::vector<int>& gold);

/// Computes the negative log-likelihood, accumulates the transition gradient and returns
/// d(nll)/d(e) = marginals - gold indicators.
Tensor neg_log_likelihood_backward(const Tensor& e, const CrfParams& params, const std::vector<int>& gold,
                                   double* loss = nullptr);

/// Accumulates the emission-weight gradient and returns d(loss)/d(h).
Tensor emissions_backward(const Tensor& h, const CrfParams& params, const Tensor& d_e);

struct Decoded {
  std::vector<int> tags;
  double score = 0.0;
};

/// Max-score path; ties go to the lowest label index. `allowed`, when non-empty, is an
/// (L+2) x (L+2) 0/1 mask of permitted transitions.
Decoded viterbi_decode(const Tensor& e, const CrfParams& params, const Tensor& allowed = Tensor());

/// Test oracle: log of the explicit sum over all L^tau sequences (L^tau <= 1e6).
double brute_force_partition(const Tensor& e, const CrfParams& params);
/// Test oracle: exhaustive argmax, first maximal sequence in lexicographic order.
Decoded brute_force_decode(const Tensor& e, const CrfParams& params);

/// Transitions permitted by the BIOES scheme, as a mask for viterbi_decode.
Tensor bioes_transition_mask(const LabelSet& labels);

}  // namespace can
