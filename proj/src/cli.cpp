#include "can/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "can/checkpoint.hpp"
#include "can/corpus.hpp"
#include "can/model.hpp"

namespace can {

namespace {

struct TrainArgs {
  std::string train, dev, model, log, embeddings, arch = "can";
  ModelConfig cfg;
  bool bio = false;
  bool save_optimizer = false;
};

struct TagArgs {
  std::string model, input, output;
  bool bio = false;
};

struct EvalArgs {
  std::string gold, pred, model, groups, format = "text";
  bool bio = false;
};

struct AttnArgs {
  std::string model, input, output;
};

struct GenArgs {
  std::uint64_t seed = 1;
  std::size_t n = 50;
  double entity_rate = SyntheticOptions{}.entity_rate;
  std::string output;
};

struct GradcheckArgs {
  std::string arch = "can";
  std::uint64_t seed = 1;
  double tol = 1e-4;
  double h = 1e-5;
  bool mask_window_pads = false;
};

ConllOptions conll_options(bool bio) {
  ConllOptions o;
  o.bio_input = bio;
  return o;
}

void add_model_flags(CLI::App& cmd, TrainArgs& a) {
  ModelConfig& c = a.cfg;
  cmd.add_option("--arch", a.arch, "Architecture: baseline, baseline_cnn or can")->capture_default_str();
  cmd.add_option("--d-ch", c.d_ch, "Character embedding size")->capture_default_str();
  cmd.add_option("--d-h", c.d_h, "Hidden size of the convolution and BiGRU (even)")->capture_default_str();
  cmd.add_option("--k", c.k, "Convolution window size (odd)")->capture_default_str();
  cmd.add_option("--lr", c.lr, "AdaDelta learning-rate scale")->capture_default_str();
  cmd.add_option("--rho", c.rho, "AdaDelta decay")->capture_default_str();
  cmd.add_option("--eps", c.eps, "AdaDelta epsilon")->capture_default_str();
  cmd.add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  cmd.add_option("--batch-size", c.batch_size, "Sentences per update")->capture_default_str();
  cmd.add_option("--seed", c.seed, "Seed for initialization and shuffling")->capture_default_str();
  cmd.add_option("--min-freq", c.min_freq, "Characters rarer than this map to UNK")->capture_default_str();
  cmd.add_flag("--mask-window-pads", c.mask_window_pads, "Exclude padded window slots from local attention");
  cmd.add_flag("--constrained-decode", c.constrained_decode, "Forbid invalid BIOES transitions when decoding");
  cmd.add_flag("--freeze-embeddings", c.freeze_embeddings, "Do not update the character table");
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err, int verbosity) {
  ModelConfig cfg = a.cfg;
  cfg.arch = arch_from_string(a.arch);
  cfg.validate();
  const auto train_set = parse_conll(a.train, conll_options(a.bio));
  if (train_set.empty()) throw DataError("training file '" + a.train + "' contains no sentences");
  std::vector<Sentence> dev_set;
  if (!a.dev.empty()) dev_set = parse_conll(a.dev, conll_options(a.bio));

  Model model(cfg, build_vocab(train_set, static_cast<std::size_t>(cfg.min_freq)), LabelSet::from_corpus(train_set));
  if (!a.embeddings.empty()) {
    const std::size_t n = load_embeddings(a.embeddings, model);
    if (verbosity > 0) err << "loaded " << n << " pretrained character vectors\n";
  }
  auto observer = [&](const EpochLog& e, const Model&) {
    if (verbosity > 0) {
      err << "epoch " << e.epoch << " loss " << e.loss << " grad_norm " << e.grad_norm;
      if (e.dev_f1) err << " dev_f1 " << *e.dev_f1;
      err << '\n';
    }
  };
  TrainResult result = train(std::move(model), train_set, a.dev.empty() ? nullptr : &dev_set, observer);

  const std::string log_path = a.log.empty() ? a.model + ".log" : a.log;
  const std::string ckpt = serialize_checkpoint(result.model, a.save_optimizer);
  atomic_write(log_path, format_epoch_log(result.log));
  atomic_write(a.model, ckpt);
  if (!a.dev.empty()) {
    const double f1 = score(dev_set, predict_all(result.model, dev_set)).overall.f1();
    out << "best_epoch = " << result.best_epoch << "\n";
    out << "dev_f1 = " << std::fixed << std::setprecision(2) << f1 << "\n";
  }
  return kExitOk;
}

void check_labels(const std::vector<Sentence>& sentences, const Model& model) {
  for (const auto& s : sentences) {
    if (!s.gold) continue;
    for (const auto& t : *s.gold) {
      if (!model.labels().contains(t)) {
        throw DataError("sentence '" + s.id + "': label '" + t + "' is not in the checkpoint's label set");
      }
    }
  }
}

int cmd_tag(const TagArgs& a) {
  const Model model = load(a.model);
  const auto sentences = parse_conll(a.input, conll_options(a.bio));
  check_labels(sentences, model);
  const auto tags = predict_all(model, sentences);
  std::ostringstream os;
  write_conll(os, sentences, &tags);
  atomic_write(a.output, os.str());
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.pred.empty() == a.model.empty()) throw ConfigError("eval needs exactly one of --pred or --model");
  if (a.format != "text" && a.format != "json") throw ConfigError("--format must be text or json");
  const auto gold = parse_conll(a.gold, conll_options(a.bio));
  std::vector<std::vector<std::string>> predicted;
  if (!a.pred.empty()) {
    const auto pred = parse_conll(a.pred, conll_options(a.bio));
    if (pred.size() != gold.size()) {
      throw DataError("gold has " + std::to_string(gold.size()) + " sentences but predictions have " +
                      std::to_string(pred.size()));
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i].chars != gold[i].chars) {
        throw DataError("sentence " + std::to_string(i) + " differs between gold and prediction files");
      }
      if (!pred[i].gold) throw DataError("prediction sentence " + std::to_string(i) + " carries no tags");
      predicted.push_back(*pred[i].gold);
    }
  } else {
    const Model model = load(a.model);
    check_labels(gold, model);
    predicted = predict_all(model, gold);
  }
  ScoreOptions opts;
  if (!a.groups.empty()) opts.groups = read_grouping_map(a.groups);
  const EvalReport report = score(gold, predicted, opts);
  out << (a.format == "json" ? report.to_json() + "\n" : report.to_text());
  return kExitOk;
}

nlohmann::ordered_json matrix_json(const Tensor& m) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

int cmd_attn(const AttnArgs& a) {
  const Model model = load(a.model);
  if (model.config().arch != Arch::kCan) {
    throw ConfigError("no attention in this variant ('" + to_string(model.config().arch) + "')");
  }
  const auto sentences = parse_conll(a.input);
  const int k = model.config().k;
  const int half = (k - 1) / 2;
  nlohmann::ordered_json doc;
  doc["format"] = "can-attention-trace";
  doc["version"] = 1;
  doc["window_size"] = k;
  std::vector<int> offsets;
  for (int m = -half; m <= half; ++m) offsets.push_back(m);
  doc["traces"] = nlohmann::ordered_json::array();
  for (const auto& s : sentences) {
    const AttentionTrace trace = model.attention(s);
    nlohmann::ordered_json t;
    t["id"] = trace.sentence_id;
    t["chars"] = trace.chars;
    nlohmann::ordered_json context = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < s.size(); ++j) {
      std::vector<std::string> row;
      for (int m = -half; m <= half; ++m) {
        const long p = static_cast<long>(j) + m;
        row.push_back(p < 0 || p >= static_cast<long>(s.size()) ? "" : s.chars[static_cast<std::size_t>(p)]);
      }
      context.push_back(row);
    }
    t["local"] = {{"rows", "query position"},
                  {"columns", "window offset (context)"},
                  {"offsets", offsets},
                  {"context_chars", context},
                  {"weights", matrix_json(trace.local)}};
    t["global"] = {{"rows", "query position"}, {"columns", "context position"}, {"weights", matrix_json(trace.global)}};
    doc["traces"].push_back(t);
  }
  atomic_write(a.output, doc.dump(1) + "\n");
  return kExitOk;
}

int cmd_gen(const GenArgs& a) {
  SyntheticOptions opts;
  opts.entity_rate = a.entity_rate;
  if (!(a.entity_rate >= 0.0 && a.entity_rate <= 1.0)) throw ConfigError("--entity-rate must lie in [0, 1]");
  std::ostringstream os;
  write_conll(os, gen_synthetic(a.seed, a.n, opts));
  atomic_write(a.output, os.str());
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const GradCheckReport report = gradcheck_toy_model(arch_from_string(a.arch), a.seed, a.h, a.tol, a.mask_window_pads);
  out << std::scientific << std::setprecision(3);
  for (const auto& e : report.entries) {
    out << std::left << std::setw(20) << e.name << " max_rel_error = " << e.max_rel_error
        << (e.max_rel_error < a.tol ? "  ok" : "  FAIL") << '\n';
  }
  out << "worst = " << report.worst() << " tol = " << a.tol << '\n';
  return report.passed() ? kExitOk : kExitNumeric;
}

// CLI11 only reads config files registered on the top-level app, so the subcommand's file is
// applied here. Options already given on the command line keep their values.
void apply_config_file(CLI::App& cmd, const CLI::Option& config_opt) {
  if (config_opt.count() == 0) return;
  const std::string path = config_opt.as<std::string>();
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path);
  } catch (const CLI::FileError& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
  for (const auto& item : items) {
    if (!item.parents.empty()) throw ConfigError("config file '" + path + "': sections are not supported");
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = cmd.get_option_no_throw("--" + name);
    if (opt == nullptr || opt == &config_opt) {
      throw ConfigError("config file '" + path + "': unknown key '" + item.name + "'");
    }
    if (opt->count() > 0) continue;
    try {
      opt->add_result(item.inputs);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config file '" + path + "': key '" + item.name + "': " + e.what());
    }
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Character-level Chinese NER with a convolutional attention network", "can-ner"};
  app.require_subcommand(1);
  app.allow_extras(false);
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "Log progress to standard error");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  CLI::Option* config_opt =
      train_cmd->set_config("--config", "", "TOML file of flag defaults (command-line flags take precedence)");
  train_cmd->add_option("--train", ta.train, "Training file (CoNLL)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--dev", ta.dev, "Development file for model selection")->check(CLI::ExistingFile);
  train_cmd->add_option("--model", ta.model, "Checkpoint path to write")->required();
  train_cmd->add_option("--log", ta.log, "Per-epoch metrics log (default: <model>.log)");
  train_cmd->add_option("--embeddings", ta.embeddings, "Pretrained character vectors ('count dim' header)")
      ->check(CLI::ExistingFile);
  train_cmd->add_flag("--bio", ta.bio, "Input tags are BIO; convert to BIOES");
  train_cmd->add_flag("--save-optimizer", ta.save_optimizer, "Store AdaDelta accumulators in the checkpoint");
  add_model_flags(*train_cmd, ta);

  TagArgs tg;
  auto* tag_cmd = app.add_subcommand("tag", "Tag a CoNLL file with a trained model");
  tag_cmd->add_option("--model", tg.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  tag_cmd->add_option("--input", tg.input, "Input file (tags optional)")->required()->check(CLI::ExistingFile);
  tag_cmd->add_option("--output", tg.output, "Output CoNLL file")->required();
  tag_cmd->add_flag("--bio", tg.bio, "Input tags are BIO");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Entity-level precision, recall and F1");
  eval_cmd->add_option("--gold", ea.gold, "Gold CoNLL file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--pred", ea.pred, "Predicted CoNLL file")->check(CLI::ExistingFile);
  eval_cmd->add_option("--model", ea.model, "Checkpoint to predict with instead of --pred")->check(CLI::ExistingFile);
  eval_cmd->add_option("--groups", ea.groups, "Grouping map file ('TYPE GROUP' per line)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--format", ea.format, "text or json")->capture_default_str();
  eval_cmd->add_flag("--bio", ea.bio, "Files use BIO tags");

  AttnArgs aa;
  auto* attn_cmd = app.add_subcommand("attn", "Export local and global attention weights as JSON");
  attn_cmd->add_option("--model", aa.model, "Checkpoint (arch can)")->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--input", aa.input, "Sentences (CoNLL)")->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--output", aa.output, "JSON output path")->required();

  GenArgs ga;
  auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic labeled corpus");
  gen_cmd->add_option("--seed", ga.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--n", ga.n, "Number of sentences")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--entity-rate", ga.entity_rate, "Probability that a segment is an entity")->capture_default_str();
  gen_cmd->add_option("--output", ga.output, "Output CoNLL file")->required();

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gc_cmd->add_option("--arch", gc.arch, "Architecture")->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed, "Initialization seed")->capture_default_str();
  gc_cmd->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
  gc_cmd->add_option("--step", gc.h, "Finite-difference step")->capture_default_str();
  gc_cmd->add_flag("--mask-window-pads", gc.mask_window_pads, "Exclude padded window slots from local attention");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help(e.get_name() == "--help" && app.get_subcommands().size() == 1
                        ? app.get_subcommands().front()->get_name()
                        : "");
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      apply_config_file(*train_cmd, *config_opt);
      return cmd_train(ta, out, err, verbosity);
    }
    if (tag_cmd->parsed()) return cmd_tag(tg);
    if (eval_cmd->parsed()) return cmd_eval(ea, out);
    if (attn_cmd->parsed()) return cmd_attn(aa);
    if (gen_cmd->parsed()) return cmd_gen(ga);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace can
