#include "can/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace can {

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::kBaseline:
      return "baseline";
    case Arch::kBaselineCnn:
      return "baseline_cnn";
    case Arch::kCan:
      return "can";
  }
  return "?";
}

Arch arch_from_string(const std::string& s) {
  if (s == "baseline") return Arch::kBaseline;
  if (s == "baseline_cnn" || s == "baseline-cnn") return Arch::kBaselineCnn;
  if (s == "can") return Arch::kCan;
  throw ConfigError("unknown architecture '" + s + "' (expected baseline, baseline_cnn or can)");
}

void ModelConfig::validate() const {
  if (d_ch < 1 || d_h < 1 || k < 1) throw ConfigError("all dimensions must be >= 1");
  if (k % 2 == 0) throw ConfigError("window size k must be odd, got " + std::to_string(k));
  if (d_h % 2 != 0) throw ConfigError("hidden size d_h must be even, got " + std::to_string(d_h));
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
  can::validate(optimizer());
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"arch", to_string(arch)},
          {"batch_size", std::to_string(batch_size)},
          {"constrained_decode", constrained_decode ? "1" : "0"},
          {"d_ch", std::to_string(d_ch)},
          {"d_h", std::to_string(d_h)},
          {"d_seg", std::to_string(kDSeg)},
          {"epochs", std::to_string(epochs)},
          {"eps", fmt_double(eps)},
          {"freeze_embeddings", freeze_embeddings ? "1" : "0"},
          {"k", std::to_string(k)},
          {"lr", fmt_double(lr)},
          {"mask_window_pads", mask_window_pads ? "1" : "0"},
          {"min_freq", std::to_string(min_freq)},
          {"rho", fmt_double(rho)},
          {"seed", std::to_string(seed)}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("config key '" + key + "' missing");
    return it->second;
  };
  ModelConfig c;
  try {
    c.arch = arch_from_string(get("arch"));
    c.batch_size = std::stoi(get("batch_size"));
    c.constrained_decode = get("constrained_decode") == "1";
    c.d_ch = std::stoi(get("d_ch"));
    c.d_h = std::stoi(get("d_h"));
    if (std::stoi(get("d_seg")) != kDSeg) throw DataError("unsupported d_seg");
    c.epochs = std::stoi(get("epochs"));
    c.eps = std::stod(get("eps"));
    c.freeze_embeddings = get("freeze_embeddings") == "1";
    c.k = std::stoi(get("k"));
    c.lr = std::stod(get("lr"));
    c.mask_window_pads = get("mask_window_pads") == "1";
    c.min_freq = std::stoi(get("min_freq"));
    c.rho = std::stod(get("rho"));
    c.seed = std::stoull(get("seed"));
  } catch (const std::logic_error& e) {
    throw DataError(std::string("malformed config value: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> Model::parameter_names(Arch arch) {
  std::vector<std::string> names = {"crf.trans", "crf.w",     "embed.char", "gru.bwd.b", "gru.bwd.u",
                                    "gru.bwd.w", "gru.fwd.b", "gru.fwd.u",  "gru.fwd.w"};
  if (arch != Arch::kBaseline) {
    names.insert(names.end(), {"encoder.conv.b", "encoder.conv.w", "encoder.pos_table"});
  }
  if (arch == Arch::kCan) {
    names.insert(names.end(), {"encoder.attn.v", "encoder.attn.w1", "encoder.attn.w2", "global.v", "global.w1",
                               "global.w2"});
  }
  std::sort(names.begin(), names.end());
  return names;
}

Model::Model(ModelConfig config, Vocab vocab, LabelSet labels)
    : config_(std::move(config)), vocab_(std::move(vocab)), labels_(std::move(labels)) {
  config_.validate();
  if (labels_.size() == 0) throw ConfigError("model needs a non-empty label set");
  Rng rng(config_.seed);
  const Eigen::Index d_ch = config_.d_ch, d_h = config_.d_h;
  Parameter& table = params_.add("embed.char", glorot_tensor(static_cast<Eigen::Index>(vocab_.size()), d_ch, rng));
  table.frozen = config_.freeze_embeddings;
  Eigen::Index gru_in = d_ch + kSegDim;
  if (config_.arch != Arch::kBaseline) {
    EncoderParams::create(params_, table, config_.k, config_.d_h, config_.arch == Arch::kCan, rng);
    gru_in = d_h;
  }
  BiGruParams::create(params_, gru_in, d_h, rng);
  Eigen::Index crf_in = d_h;
  if (config_.arch == Arch::kCan) {
    GlobalAttnParams::create(params_, d_h, rng);
    crf_in = 2 * d_h;
  }
  CrfParams::create(params_, static_cast<int>(labels_.size()), crf_in, rng);
  bind();
}

Model::Model(ModelConfig config, Vocab vocab, LabelSet labels, ParameterSet params)
    : config_(std::move(config)), vocab_(std::move(vocab)), labels_(std::move(labels)), params_(std::move(params)) {
  config_.validate();
  if (params_.names() != parameter_names(config_.arch)) {
    throw ConfigError("parameter names do not match architecture '" + to_string(config_.arch) + "'");
  }
  bind();
}

Model::Model(const Model& other)
    : config_(other.config_), vocab_(other.vocab_), labels_(other.labels_), params_(other.params_) {
  bind();
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    config_ = other.config_;
    vocab_ = other.vocab_;
    labels_ = other.labels_;
    params_ = other.params_;
    bind();
  }
  return *this;
}

void Model::bind() {
  char_table_ = &params_.at("embed.char");
  if (char_table_->value.rows() != static_cast<Eigen::Index>(vocab_.size()) ||
      char_table_->value.cols() != config_.d_ch) {
    throw ConfigError("character table " + shape_str(char_table_->value) + " does not match vocabulary size " +
                      std::to_string(vocab_.size()) + " and d_ch " + std::to_string(config_.d_ch));
  }
  char_table_->frozen = config_.freeze_embeddings;
  encoder_.reset();
  global_.reset();
  Eigen::Index gru_in = config_.d_ch + kSegDim;
  if (config_.arch != Arch::kBaseline) {
    encoder_ = EncoderParams::bind(params_, *char_table_, config_.arch == Arch::kCan);
    encoder_->mask_pads = config_.mask_window_pads;
    if (encoder_->k() != config_.k || encoder_->d_h() != config_.d_h) {
      throw ConfigError("encoder parameters do not match k/d_h of the config");
    }
    gru_in = config_.d_h;
  }
  gru_ = BiGruParams::bind(params_);
  if (gru_.fwd.d_in() != gru_in || gru_.bwd.d_in() != gru_in || gru_.d_out() != config_.d_h) {
    throw ConfigError("GRU parameters do not match the config");
  }
  Eigen::Index crf_in = config_.d_h;
  if (config_.arch == Arch::kCan) {
    global_ = GlobalAttnParams::bind(params_);
    if (global_->v->value.rows() != config_.d_h) throw ConfigError("global attention size does not match d_h");
    crf_in = 2 * config_.d_h;
  }
  crf_ = CrfParams::bind(params_);
  if (crf_.num_labels() != static_cast<int>(labels_.size()) || crf_.w->value.cols() != crf_in) {
    throw ConfigError("CRF weights " + shape_str(crf_.w->value) + " do not match " +
                      std::to_string(labels_.size()) + " labels");
  }
  decode_mask_ = config_.constrained_decode ? bioes_transition_mask(labels_) : Tensor();
}

ForwardPass Model::run_forward(const Sentence& sentence) const {
  if (sentence.size() == 0) throw DataError("forward: empty sentence");
  ForwardPass f;
  f.repr = build_input_repr(sentence, vocab_, char_table_->value);
  if (encoder_) {
    f.encoder = conv_attention_forward(f.repr, *encoder_);
    f.gru_input = f.encoder->features;
  } else {
    f.gru_input = f.repr.rows;
  }
  f.gru = bigru_forward(f.gru_input, gru_);
  if (global_) {
    f.global = global_self_attention(f.gru.h, *global_);
    f.h = concat_repr(f.gru.h, f.global->hg);
  } else {
    f.h = f.gru.h;
  }
  f.emissions = emissions(f.h, crf_);
  if (!all_finite(f.emissions)) throw NumericError("non-finite emissions for sentence '" + sentence.id + "'");
  return f;
}

std::pair<Tensor, AttentionTrace> Model::forward(const Sentence& sentence) const {
  ForwardPass f = run_forward(sentence);
  AttentionTrace trace;
  trace.sentence_id = sentence.id;
  trace.chars = sentence.chars;
  if (f.encoder && f.encoder->local_trace.size() != 0) trace.local = f.encoder->local_trace;
  if (f.global) trace.global = f.global->weights;
  return {std::move(f.emissions), std::move(trace)};
}

AttentionTrace Model::attention(const Sentence& sentence) const { return forward(sentence).second; }

std::vector<int> Model::gold_ids(const Sentence& sentence) const {
  if (!sentence.gold) throw DataError("sentence '" + sentence.id + "' has no gold tags");
  return labels_.encode(*sentence.gold);
}

double Model::loss_and_grad(const Sentence& sentence) {
  const std::vector<int> gold = gold_ids(sentence);
  const ForwardPass f = run_forward(sentence);
  double loss = 0.0;
  const Tensor d_e = neg_log_likelihood_backward(f.emissions, crf_, gold, &loss);
  const Tensor d_h = emissions_backward(f.h, crf_, d_e);
  Tensor d_hr;
  if (f.global) {
    const auto [d_left, d_right] = split_repr(d_h);
    d_hr = d_left + global_attention_backward(f.gru.h, *global_, *f.global, d_right);
  } else {
    d_hr = d_h;
  }
  const Tensor d_x = bigru_backward(gru_, f.gru, d_hr);
  const Tensor d_repr = f.encoder ? conv_attention_backward(f.repr, *encoder_, *f.encoder, d_x) : d_x;
  embedding_backward(f.repr, d_repr, *char_table_);
  return loss;
}

double Model::loss(const Sentence& sentence) const {
  return neg_log_likelihood(run_forward(sentence).emissions, crf_, gold_ids(sentence));
}

std::vector<std::string> Model::predict(const Sentence& sentence) const {
  return labels_.decode(viterbi_decode(run_forward(sentence).emissions, crf_, decode_mask_).tags);
}

double batch_loss(const std::vector<const Sentence*>& batch, Model& model) {
  for (const Sentence* s : batch) {
    if (!s->gold) throw DataError("batch_loss: sentence '" + s->id + "' is unlabeled");
  }
  double total = 0.0;
  for (const Sentence* s : batch) total += model.loss_and_grad(*s);
  return total;
}

double batch_loss(const std::vector<Sentence>& batch, Model& model) {
  std::vector<const Sentence*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  return batch_loss(ptrs, model);
}

std::string format_epoch_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch\tloss\tgrad_norm\tdev_f1\n";
  for (const auto& e : log) {
    os << e.epoch << '\t' << e.loss << '\t' << e.grad_norm << '\t';
    if (e.dev_f1) {
      os << *e.dev_f1;
    } else {
      os << '-';
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::vector<std::string>> predict_all(const Model& model, const std::vector<Sentence>& sentences) {
  std::vector<std::vector<std::string>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(model.predict(s));
  return out;
}

TrainResult train(Model model, const std::vector<Sentence>& train_set, const std::vector<Sentence>* dev_set,
                  const EpochObserver& observer) {
  const ModelConfig& cfg = model.config();
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training corpus");
  for (const auto& s : train_set) {
    if (!s.gold) throw DataError("train: sentence '" + s.id + "' is unlabeled");
    model.labels().encode(*s.gold);
  }
  if (dev_set) {
    for (const auto& s : *dev_set) {
      if (!s.gold) throw DataError("train: dev sentence '" + s.id + "' is unlabeled");
      model.labels().encode(*s.gold);
    }
  }

  Rng shuffle_rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochLog> log;
  std::optional<Model> best;
  double best_f1 = -1.0;
  int best_epoch = 0;
  const AdaDeltaConfig opt = cfg.optimizer();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochLog entry;
    entry.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      model.params().zero_grad();
      std::vector<const Sentence*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train_set[order[i]]);
      entry.loss += batch_loss(batch, model);
      entry.grad_norm += model.params().grad_norm();
      ++batches;
      for (Parameter* p : model.params().all()) {
        if (p->frozen) {
          p->zero_grad();
        } else {
          adadelta_step(*p, opt);
        }
      }
    }
    entry.grad_norm /= static_cast<double>(batches);
    if (dev_set) {
      entry.dev_f1 = score(*dev_set, predict_all(model, *dev_set)).overall.f1();
      if (*entry.dev_f1 > best_f1) {
        best_f1 = *entry.dev_f1;
        best_epoch = epoch;
        best = model;
      }
    }
    log.push_back(entry);
    if (observer) observer(entry, model);
  }

  if (best) return TrainResult{std::move(*best), std::move(log), best_epoch};
  return TrainResult{std::move(model), std::move(log), cfg.epochs};
}

TrainResult train(const std::vector<Sentence>& train_set, const ModelConfig& config,
                  const std::vector<Sentence>* dev_set, const EpochObserver& observer) {
  config.validate();
  if (train_set.empty()) throw DataError("train: empty training corpus");
  Model model(config, build_vocab(train_set, static_cast<std::size_t>(config.min_freq)),
              LabelSet::from_corpus(train_set));
  return train(std::move(model), train_set, dev_set, observer);
}

std::size_t load_embeddings(const std::filesystem::path& path, Model& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embeddings '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing 'count dim' header");
  std::istringstream header(line);
  long count = -1, dim = -1;
  if (!(header >> count >> dim) || count < 0 || dim < 1) {
    throw DataError(path.string() + ":1: malformed 'count dim' header");
  }
  Parameter& table = model.params().at("embed.char");
  if (dim != table.value.cols()) {
    throw DataError(path.string() + ": embedding dim " + std::to_string(dim) + " differs from d_ch " +
                    std::to_string(table.value.cols()));
  }
  std::size_t filled = 0;
  std::size_t lineno = 1;
  long seen = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string token;
    is >> token;
    split_utf8(token);
    Vector v(dim);
    for (long i = 0; i < dim; ++i) {
      if (!(is >> v[i])) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                         std::to_string(dim) + " values");
    }
    std::string extra;
    if (is >> extra) throw DataError(path.string() + ":" + std::to_string(lineno) + ": too many values");
    if (!all_finite(v)) throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-finite value");
    ++seen;
    const int id = model.vocab().id(token);
    if (id == Vocab::kUnk && token != Vocab::kUnkToken) continue;
    table.value.row(id) = v.transpose();
    ++filled;
  }
  if (seen != count) {
    throw DataError(path.string() + ": header announces " + std::to_string(count) + " vectors, found " +
                    std::to_string(seen));
  }
  return filled;
}

/// Tiny random model and one labeled 4-character sentence used by the gradient harness.
GradCheckReport gradcheck_toy_model(Arch arch, std::uint64_t seed, double h, double tol, bool mask_pads) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.d_ch = 6;
  cfg.d_h = 8;
  cfg.k = 3;
  cfg.seed = seed;
  cfg.mask_window_pads = mask_pads;
  Sentence s;
  s.id = "gradcheck";
  s.chars = {"南", "京", "市", "长"};
  s.seg = {SegMark::B, SegMark::M, SegMark::E, SegMark::S};
  s.gold = std::vector<std::string>{"B-LOC", "E-LOC", "O", "S-PER"};
  Model model(cfg, Vocab({"南", "京", "市", "长"}), LabelSet({"O", "B-LOC", "E-LOC", "S-LOC", "S-PER"}));
  // Non-zero transitions and biases so that every code path carries signal.
  Rng rng(seed + 17);
  for (Parameter* p : model.params().all()) {
    if (p->name == "crf.trans" || p->name.ends_with(".b")) p->value = uniform_tensor(p->value.rows(), p->value.cols(), 0.5, rng);
  }
  LossFn loss = [&](bool grad) { return grad ? model.loss_and_grad(s) : model.loss(s); };
  return check_gradients(loss, model.params().all(), h, tol);
}

}  // namespace can
