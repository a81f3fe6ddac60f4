#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "can/corpus.hpp"
#include "can/crf.hpp"
#include "can/encoder.hpp"
#include "can/numerics.hpp"
#include "can/sequence.hpp"

namespace can {

enum class Arch { kBaseline, kBaselineCnn, kCan };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& s);

struct ModelConfig {
  Arch arch = Arch::kCan;
  int d_ch = 300;
  int k = 5;
  int d_h = 300;
  double lr = 0.005;
  double rho = 0.95;
  double eps = 1e-6;
  int epochs = 100;
  int batch_size = 16;
  std::uint64_t seed = 1;
  bool mask_window_pads = false;
  bool constrained_decode = false;
  bool freeze_embeddings = false;
  int min_freq = 1;

  static constexpr int kDSeg = kSegDim;

  void validate() const;
  AdaDeltaConfig optimizer() const { return {lr, rho, eps}; }

  /// Canonical key/value form, keys sorted.
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

/// Normalized attention weights of one sentence. Rows are query positions; local columns
/// are window offsets -(k-1)/2 .. (k-1)/2, global columns are context positions.
struct AttentionTrace {
  std::string sentence_id;
  std::vector<std::string> chars;
  Tensor local;   // tau x k
  Tensor global;  // tau x tau

  bool empty() const { return local.size() == 0 && global.size() == 0; }
};

/// Every intermediate of one forward pass, kept for the backward pass.
struct ForwardPass {
  InputRepr repr;
  std::optional<EncoderOutput> encoder;
  Tensor gru_input;
  BiGruOutput gru;
  std::optional<GlobalAttention> global;
  Tensor h;          // representation fed to the CRF
  Tensor emissions;  // tau x |Y|
};

class Model {
 public:
  /// Fresh model with seeded initialization.
  Model(ModelConfig config, Vocab vocab, LabelSet labels);
  /// Model over existing parameter values (checkpoint loading). Names and shapes are checked.
  Model(ModelConfig config, Vocab vocab, LabelSet labels, ParameterSet params);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  const LabelSet& labels() const { return labels_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  ForwardPass run_forward(const Sentence& sentence) const;
  /// Emissions plus the attention trace (empty for the baseline).
  std::pair<Tensor, AttentionTrace> forward(const Sentence& sentence) const;
  AttentionTrace attention(const Sentence& sentence) const;

  /// Negative log-likelihood of the gold tags; gradients are added to every touched parameter.
  double loss_and_grad(const Sentence& sentence);
  double loss(const Sentence& sentence) const;

  std::vector<std::string> predict(const Sentence& sentence) const;

  /// Names of the parameters an architecture owns, sorted.
  static std::vector<std::string> parameter_names(Arch arch);

 private:
  void bind();
  std::vector<int> gold_ids(const Sentence& sentence) const;

  ModelConfig config_;
  Vocab vocab_;
  LabelSet labels_;
  ParameterSet params_;

  Parameter* char_table_ = nullptr;
  std::optional<EncoderParams> encoder_;
  BiGruParams gru_;
  std::optional<GlobalAttnParams> global_;
  CrfParams crf_;
  Tensor decode_mask_;
};

/// Sum of per-sentence negative log-likelihoods; gradients accumulate into the model.
double batch_loss(const std::vector<const Sentence*>& batch, Model& model);
double batch_loss(const std::vector<Sentence>& batch, Model& model);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // mean over the epoch's batches, before the update
  std::optional<double> dev_f1;
};

std::string format_epoch_log(const std::vector<EpochLog>& log);

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

/// Called after each epoch with the current (not necessarily best) model.
using EpochObserver = std::function<void(const EpochLog&, const Model&)>;

/// Shuffles, batches and applies AdaDelta for config.epochs epochs, in place. With a dev set,
/// the returned result holds the parameters of the best dev-F1 epoch (ties go to the earlier).
TrainResult train(Model model, const std::vector<Sentence>& train_set, const std::vector<Sentence>* dev_set = nullptr,
                  const EpochObserver& observer = {});
/// Builds vocabulary and label set from the training corpus first.
TrainResult train(const std::vector<Sentence>& train_set, const ModelConfig& config,
                  const std::vector<Sentence>* dev_set = nullptr, const EpochObserver& observer = {});

std::vector<std::vector<std::string>> predict_all(const Model& model, const std::vector<Sentence>& sentences);

/// Plain-text embeddings: header "count dim", then "token v1 .. v_dim". Returns rows filled.
std::size_t load_embeddings(const std::filesystem::path& path, Model& model);

/// Gradient check of the full loss on a tiny model (d_ch=6, d_h=8, k=3, five labels) and one
/// labeled four-character sentence.
GradCheckReport gradcheck_toy_model(Arch arch, std::uint64_t seed = 1, double h = 1e-5, double tol = 1e-4,
                                    bool mask_pads = false);

}  // namespace can
