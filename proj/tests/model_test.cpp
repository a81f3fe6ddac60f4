#include <algorithm>
#include <fstream>

#include <gtest/gtest.h>

#include "can/model.hpp"
#include "test_util.hpp"

namespace can {
namespace {

ModelConfig small_config(Arch arch, int d = 8) {
  ModelConfig c;
  c.arch = arch;
  c.d_ch = d;
  c.d_h = d;
  c.k = 5;
  c.epochs = 5;
  c.batch_size = 4;
  return c;
}

struct Toy {
  std::vector<Sentence> corpus = gen_synthetic(1, 12);
  Vocab vocab = build_vocab(corpus);
  LabelSet labels = LabelSet::from_corpus(corpus);
  Model make(Arch arch, int d = 8) const { return Model(small_config(arch, d), vocab, labels); }
};

Sentence sentence_of(const std::string& text) {
  Sentence s;
  s.chars = split_utf8(text);
  s.seg.assign(s.chars.size(), SegMark::S);
  return s;
}

class ArchTest : public ::testing::TestWithParam<Arch> {};

TEST_P(ArchTest, ForwardShapesAndTraces) {
  const Toy toy;
  const Model m = toy.make(GetParam());
  const Sentence s = sentence_of("叫南京市长");
  const auto [e, trace] = m.forward(s);
  EXPECT_EQ(e.rows(), 5);
  EXPECT_EQ(e.cols(), static_cast<Eigen::Index>(toy.labels.size()));
  if (GetParam() == Arch::kCan) {
    ASSERT_EQ(trace.local.rows(), 5);
    EXPECT_EQ(trace.local.cols(), 5);
    EXPECT_EQ(trace.global.rows(), 5);
    EXPECT_EQ(trace.global.cols(), 5);
    for (Eigen::Index j = 0; j < 5; ++j) {
      EXPECT_NEAR(trace.local.row(j).sum(), 1.0, 1e-9);
      EXPECT_NEAR(trace.global.row(j).sum(), 1.0, 1e-9);
    }
  } else {
    EXPECT_TRUE(trace.empty());
  }
  EXPECT_EQ(m.run_forward(s).h.cols(), GetParam() == Arch::kCan ? 16 : 8);
}

TEST_P(ArchTest, ForwardIsDeterministic) {
  const Toy toy;
  const Model a = toy.make(GetParam()), b = toy.make(GetParam());
  const Sentence s = toy.corpus[3];
  EXPECT_EQ(a.forward(s).first, a.forward(s).first);
  EXPECT_EQ(a.forward(s).first, b.forward(s).first);
  EXPECT_EQ(a.predict(s), b.predict(s));
  EXPECT_EQ(a.predict(s).size(), s.size());
}

TEST_P(ArchTest, ToyGradientCheck) {
  const auto report = gradcheck_toy_model(GetParam());
  EXPECT_EQ(report.entries.size(), Model::parameter_names(GetParam()).size());
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
}

TEST_P(ArchTest, BatchGradientCheckOnTwoSentences) {
  std::vector<Sentence> batch = gen_synthetic(4, 2);
  ModelConfig c = small_config(GetParam(), 4);
  c.k = 3;
  Model m(c, build_vocab(batch), LabelSet::from_corpus(batch));
  Rng rng(5);
  for (Parameter* p : m.params().all()) {
    if (p->name == "crf.trans" || p->name.ends_with(".b")) p->value = uniform_tensor(p->value.rows(), p->value.cols(), 0.5, rng);
  }
  LossFn fn = [&](bool grad) {
    if (grad) return batch_loss(batch, m);
    double total = 0.0;
    for (const auto& s : batch) total += m.loss(s);
    return total;
  };
  m.params().zero_grad();
  const auto report = check_gradients(fn, m.params().all());
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
}

INSTANTIATE_TEST_SUITE_P(Variants, ArchTest, ::testing::Values(Arch::kBaseline, Arch::kBaselineCnn, Arch::kCan),
                         [](const auto& info) { return to_string(info.param); });

TEST(Model, ParameterSetsNest) {
  const auto base = Model::parameter_names(Arch::kBaseline);
  const auto cnn = Model::parameter_names(Arch::kBaselineCnn);
  const auto full = Model::parameter_names(Arch::kCan);
  EXPECT_TRUE(std::includes(cnn.begin(), cnn.end(), base.begin(), base.end()));
  EXPECT_TRUE(std::includes(full.begin(), full.end(), cnn.begin(), cnn.end()));
  EXPECT_LT(base.size(), cnn.size());
  EXPECT_LT(cnn.size(), full.size());
  const Toy toy;
  EXPECT_EQ(toy.make(Arch::kCan).params().names(), full);
}

TEST(Model, EmptySentenceRejected) {
  const Toy toy;
  EXPECT_THROW(toy.make(Arch::kCan).forward(Sentence{}), DataError);
}

TEST(Model, UnknownCharactersUseUnk) {
  const Toy toy;
  EXPECT_EQ(toy.make(Arch::kCan).predict(sentence_of("xyz")).size(), 3u);
}

TEST(ModelConfig, ValidationAndRoundTrip) {
  ModelConfig c;
  EXPECT_EQ(c.d_ch, 300);
  EXPECT_EQ(c.d_h, 300);
  EXPECT_EQ(c.k, 5);
  EXPECT_EQ(c.lr, 0.005);
  EXPECT_NO_THROW(c.validate());
  for (auto mutate : std::vector<std::function<void(ModelConfig&)>>{
           [](ModelConfig& m) { m.lr = 0.0; }, [](ModelConfig& m) { m.k = 4; }, [](ModelConfig& m) { m.d_h = 7; },
           [](ModelConfig& m) { m.rho = 1.0; }, [](ModelConfig& m) { m.d_ch = 0; }}) {
    ModelConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
  c.arch = Arch::kBaselineCnn;
  c.d_h = 32;
  c.lr = 0.125;
  c.mask_window_pads = true;
  const ModelConfig back = ModelConfig::from_map(c.to_map());
  EXPECT_EQ(back.to_map(), c.to_map());
  EXPECT_EQ(back.d_h, 32);
  EXPECT_EQ(arch_from_string("baseline-cnn"), Arch::kBaselineCnn);
  EXPECT_THROW(arch_from_string("lstm"), ConfigError);
}

TEST(BatchLoss, SingleLabelIsZeroAndSumsDecompose) {
  std::vector<Sentence> one = {sentence_of("南京")};
  one[0].gold = std::vector<std::string>{"O", "O"};
  Model m(small_config(Arch::kCan), build_vocab(one), LabelSet({"O"}));
  EXPECT_EQ(batch_loss(one, m), 0.0);

  const Toy toy;
  Model full = toy.make(Arch::kCan);
  const std::vector<Sentence> a(toy.corpus.begin(), toy.corpus.begin() + 5);
  const std::vector<Sentence> b(toy.corpus.begin() + 5, toy.corpus.end());
  const double la = batch_loss(a, full), lb = batch_loss(b, full), lab = batch_loss(toy.corpus, full);
  EXPECT_NEAR(lab, la + lb, 1e-10);
  EXPECT_GT(la, 0.0);

  Sentence unlabeled = sentence_of("南京");
  EXPECT_THROW(batch_loss({unlabeled}, full), DataError);
}

TEST(Train, RejectsZeroLearningRateAndEmptyCorpus) {
  const Toy toy;
  ModelConfig c = small_config(Arch::kCan);
  c.lr = 0.0;
  EXPECT_THROW(train(toy.corpus, c), ConfigError);
  EXPECT_THROW(train(std::vector<Sentence>{}, small_config(Arch::kCan)), DataError);
}

TEST(Train, LabelOutsideSetRejected) {
  const Toy toy;
  auto corpus = toy.corpus;
  (*corpus[0].gold)[0] = "S-XYZ";
  EXPECT_THROW(train(toy.make(Arch::kCan), corpus), DataError);
}

TEST(Train, DeterministicGivenSeed) {
  const Toy toy;
  const TrainResult a = train(toy.corpus, small_config(Arch::kCan));
  const TrainResult b = train(toy.corpus, small_config(Arch::kCan));
  EXPECT_EQ(format_epoch_log(a.log), format_epoch_log(b.log));
  for (const auto& name : a.model.params().names()) {
    EXPECT_EQ(a.model.params().at(name).value, b.model.params().at(name).value) << name;
  }
  ModelConfig other = small_config(Arch::kCan);
  other.seed = 2;
  EXPECT_NE(format_epoch_log(train(toy.corpus, other).log), format_epoch_log(a.log));
}

TEST(Train, LossStrictlyDecreasesOverFirstEpochsAtDefaultRate) {
  const auto corpus = gen_synthetic(1, 50);
  for (Arch arch : {Arch::kBaseline, Arch::kBaselineCnn, Arch::kCan}) {
    ModelConfig c = small_config(arch, 32);
    const TrainResult r = train(corpus, c);
    ASSERT_EQ(r.log.size(), 5u);
    for (std::size_t e = 1; e < r.log.size(); ++e) EXPECT_LT(r.log[e].loss, r.log[e - 1].loss) << to_string(arch);
  }
}

TEST(Train, OverfitsSyntheticCorpusWithLargerRate) {
  const auto corpus = gen_synthetic(1, 50);
  ModelConfig c = small_config(Arch::kCan, 32);
  c.lr = 1.0;
  c.epochs = 50;
  const TrainResult r = train(corpus, c);
  const auto pred = predict_all(r.model, corpus);
  EXPECT_EQ(score(corpus, pred).overall.f1(), 100.0);
  for (std::size_t i = 0; i < corpus.size(); ++i) EXPECT_EQ(pred[i], *corpus[i].gold);
}

TEST(Train, AttentionStaysNormalizedAndDevSelectsBestEpoch) {
  const auto corpus = gen_synthetic(1, 20);
  const auto dev = gen_synthetic(2, 10);
  ModelConfig c = small_config(Arch::kCan, 16);
  c.lr = 1.0;
  c.epochs = 6;
  double worst = 0.0;
  std::vector<double> f1s;
  const TrainResult r = train(corpus, c, &dev, [&](const EpochLog& log, const Model& m) {
    f1s.push_back(*log.dev_f1);
    for (const auto& s : dev) {
      const AttentionTrace t = m.attention(s);
      for (Eigen::Index j = 0; j < t.local.rows(); ++j) {
        worst = std::max(worst, std::abs(t.local.row(j).sum() - 1.0));
        worst = std::max(worst, std::abs(t.global.row(j).sum() - 1.0));
      }
    }
  });
  EXPECT_LT(worst, 1e-6);
  ASSERT_EQ(f1s.size(), 6u);
  const auto best = std::max_element(f1s.begin(), f1s.end());
  EXPECT_EQ(r.best_epoch, static_cast<int>(best - f1s.begin()) + 1);
  EXPECT_EQ(score(dev, predict_all(r.model, dev)).overall.f1(), *best);
}

TEST(Train, FrozenEmbeddingsDoNotMove) {
  const Toy toy;
  ModelConfig c = small_config(Arch::kCan);
  c.freeze_embeddings = true;
  Model m(c, toy.vocab, toy.labels);
  const Tensor before = m.params().at("embed.char").value;
  const TrainResult r = train(m, toy.corpus);
  EXPECT_EQ(r.model.params().at("embed.char").value, before);
  EXPECT_NE(r.model.params().at("crf.w").value, m.params().at("crf.w").value);
}

TEST(EpochLog, Format) {
  std::vector<EpochLog> log{{1, 2.5, 0.25, std::nullopt}, {2, 1.5, 0.125, 50.0}};
  const std::string text = format_epoch_log(log);
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch\tloss\tgrad_norm\tdev_f1");
  EXPECT_NE(text.find("2\t1.5\t0.125\t50"), std::string::npos);
}

TEST(Embeddings, LoadsKnownRowsAndValidates) {
  const Toy toy;
  Model m = toy.make(Arch::kBaseline, 4);
  const auto dir = test::temp_dir("emb");
  const std::string known = toy.vocab.token(2);
  std::ofstream(dir / "e.txt") << "2 4\n" << known << " 1 2 3 4\n" << "unseen 5 6 7 8\n";
  const Tensor before = m.params().at("embed.char").value;
  EXPECT_EQ(load_embeddings(dir / "e.txt", m), 1u);
  const Tensor& after = m.params().at("embed.char").value;
  EXPECT_EQ(after.row(2), (Eigen::RowVector4d(1, 2, 3, 4)));
  EXPECT_EQ(after.row(3), before.row(3));
  std::ofstream(dir / "bad.txt") << "1 3\n" << known << " 1 2 3\n";
  EXPECT_THROW(load_embeddings(dir / "bad.txt", m), DataError);
  std::ofstream(dir / "short.txt") << "1 4\n" << known << " 1 2\n";
  EXPECT_THROW(load_embeddings(dir / "short.txt", m), DataError);
}

}  // namespace
}  // namespace can
