#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "can/corpus.hpp"
#include "test_util.hpp"

namespace can {
namespace {

using Tags = std::vector<std::string>;

std::string seg_string(const std::vector<SegMark>& seg) {
  std::string s;
  for (SegMark m : seg) s += to_char(m);
  return s;
}

std::vector<Sentence> parse(const std::string& text, const ConllOptions& opts = {}) {
  std::istringstream in(text);
  return parse_conll(in, "mem", opts);
}

void expect_error_mentions(const std::string& text, const std::string& needle) {
  try {
    parse(text);
    FAIL() << "no error for " << text;
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(ParseConll, SentencesSplitOnBlankLines) {
  const auto s = parse("南\tB-LOC\n京\tE-LOC\n\n市\tO\n长\tS-PER\n");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].chars, (Tags{"南", "京"}));
  EXPECT_EQ(s[1].size(), 2u);
  EXPECT_EQ(*s[1].gold, (Tags{"O", "S-PER"}));
  EXPECT_EQ(seg_string(s[0].seg), "SS");
  EXPECT_EQ(s[0].id, "mem#0");
}

TEST(ParseConll, ThirdColumnAndUnlabeledInput) {
  const auto s = parse("南\tB-LOC\tB\n京\tE-LOC\tE\n\n\n市\n长\n\n");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(seg_string(s[0].seg), "BE");
  EXPECT_FALSE(s[1].labeled());
  EXPECT_TRUE(parse("").empty());
}

TEST(ParseConll, ErrorsCarryLineNumbers) {
  expect_error_mentions("a\tO\nb\tO\tS\tx\n", "mem:2:");
  expect_error_mentions("a\tO\nb\n", "mem:2:");
  expect_error_mentions("ab\tO\n", "mem:1:");
  expect_error_mentions("a\tO\n\n\xff\tO\n", "mem:3:");
  expect_error_mentions("a\tO\tS\nb\tO\tQ\n", "mem:2:");
}

TEST(ParseConll, BioInputConverted) {
  ConllOptions opts;
  opts.bio_input = true;
  const auto s = parse("a\tB-PER\nb\tI-PER\nc\tB-LOC\n", opts);
  EXPECT_EQ(*s[0].gold, (Tags{"B-PER", "E-PER", "S-LOC"}));
}

TEST(WriteConll, RoundTrip) {
  const auto corpus = gen_synthetic(3, 10);
  std::ostringstream out;
  write_conll(out, corpus);
  const auto back = parse(out.str());
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].chars, corpus[i].chars);
    EXPECT_EQ(back[i].seg, corpus[i].seg);
    EXPECT_EQ(back[i].gold, corpus[i].gold);
  }
}

TEST(SplitUtf8, CodePoints) {
  EXPECT_EQ(split_utf8("a南b"), (Tags{"a", "南", "b"}));
  EXPECT_THROW(split_utf8("\xe5\x8d"), DataError);
  EXPECT_THROW(split_utf8("\xc0\x80"), DataError);
}

TEST(BioToBioes, Examples) {
  EXPECT_EQ(bio_to_bioes({"B-PER", "I-PER"}), (Tags{"B-PER", "E-PER"}));
  EXPECT_EQ(bio_to_bioes({"B-PER"}), (Tags{"S-PER"}));
  EXPECT_EQ(bio_to_bioes({"O", "O"}), (Tags{"O", "O"}));
  EXPECT_EQ(bio_to_bioes({"B-LOC", "I-LOC", "I-LOC", "O", "B-PER", "B-PER"}),
            (Tags{"B-LOC", "M-LOC", "E-LOC", "O", "S-PER", "S-PER"}));
}

TEST(BioToBioes, StrictRejectsOrphanInsideAndLenientRepairs) {
  EXPECT_THROW(bio_to_bioes({"O", "I-PER"}), DataError);
  EXPECT_THROW(bio_to_bioes({"B-LOC", "I-PER"}), DataError);
  EXPECT_EQ(bio_to_bioes({"O", "I-PER", "I-PER"}, true), (Tags{"O", "B-PER", "E-PER"}));
}

TEST(BioToBioes, LenientIsIdempotentAndValid) {
  Rng rng(4);
  const Tags pool{"O", "B-PER", "I-PER", "B-LOC", "I-LOC"};
  for (int trial = 0; trial < 300; ++trial) {
    Tags bio;
    const std::size_t n = 1 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i) bio.push_back(pool[rng.below(pool.size())]);
    const Tags once = bio_to_bioes(bio, true);
    EXPECT_TRUE(is_valid_bioes(once));
    EXPECT_EQ(bio_to_bioes(once, true), once);
  }
}

TEST(BmesFromWords, WordBoundaryExamples) {
  EXPECT_EQ(seg_string(bmes_from_words({"南京市", "长江大桥"})), "BMEBMME");
  EXPECT_EQ(seg_string(bmes_from_words({"南京", "市长", "江大桥"})), "BEBEBME");
  EXPECT_EQ(seg_string(bmes_from_words({"南"})), "S");
  const Tags chars = split_utf8("南京市长江大桥");
  EXPECT_EQ(seg_string(bmes_from_words({"南京市", "长江大桥"}, chars)), "BMEBMME");
  EXPECT_THROW(bmes_from_words({"南京", "长江大桥"}, chars), DataError);
}

TEST(BmesFromWords, Properties) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> words;
    const std::size_t n = 1 + rng.below(6);
    for (std::size_t w = 0; w < n; ++w) words.push_back(std::string(1 + rng.below(4), 'x'));
    const auto seg = bmes_from_words(words);
    EXPECT_TRUE(is_valid_bmes(seg));
    const auto count = [&](SegMark m) { return std::count(seg.begin(), seg.end(), m); };
    EXPECT_EQ(count(SegMark::B), count(SegMark::E));
    for (std::size_t i = 0; i + 1 < seg.size(); ++i) {
      EXPECT_FALSE(seg[i] == SegMark::M && seg[i + 1] == SegMark::S);
      EXPECT_FALSE(seg[i] == SegMark::S && seg[i + 1] == SegMark::M);
    }
  }
}

TEST(ExtractSpans, Examples) {
  EXPECT_EQ(extract_spans({"B-PER", "E-PER", "O", "S-LOC"}),
            (std::set<Span>{{0, 1, "PER"}, {3, 3, "LOC"}}));
  EXPECT_TRUE(extract_spans({"O", "O", "O"}).empty());
  EXPECT_TRUE(extract_spans({"E-PER"}).empty());
  EXPECT_TRUE(extract_spans({"B-PER", "E-LOC"}).empty());
  EXPECT_EQ(extract_spans({"B-PER", "M-PER", "E-PER"}), (std::set<Span>{{0, 2, "PER"}}));
  EXPECT_FALSE(extract_spans({"E-PER"}, false).empty());
}

TEST(ExtractSpans, RoundTripWithSpansToBioes) {
  Rng rng(6);
  const Tags types{"PER", "LOC", "ORG"};
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t len = 1 + rng.below(15);
    std::set<Span> spans;
    std::size_t i = 0;
    while (i < len) {
      if (rng.bernoulli(0.4)) {
        const std::size_t end = std::min(len - 1, i + rng.below(4));
        spans.insert({i, end, types[rng.below(3)]});
        i = end + 1;
      } else {
        ++i;
      }
    }
    const Tags tags = spans_to_bioes(spans, len);
    EXPECT_TRUE(is_valid_bioes(tags));
    EXPECT_EQ(extract_spans(tags), spans);
  }
}

TEST(Score, Examples) {
  const std::vector<Tags> gold{{"B-PER", "E-PER", "O", "S-LOC"}};
  const EvalReport same = score(gold, gold);
  EXPECT_EQ(same.overall.precision(), 100.0);
  EXPECT_EQ(same.overall.recall(), 100.0);
  EXPECT_EQ(same.overall.f1(), 100.0);

  const EvalReport disjoint = score(gold, {{"O", "O", "S-PER", "O"}});
  EXPECT_EQ(disjoint.overall.precision(), 0.0);
  EXPECT_EQ(disjoint.overall.recall(), 0.0);
  EXPECT_EQ(disjoint.overall.f1(), 0.0);
  EXPECT_EQ(score(gold, {{"O", "O", "O", "O"}}).overall.f1(), 0.0);

  const EvalReport half = score(gold, {{"B-PER", "E-PER", "O", "O"}});
  EXPECT_EQ(half.overall.precision(), 100.0);
  EXPECT_EQ(half.overall.recall(), 50.0);
  EXPECT_NEAR(half.overall.f1(), 200.0 / 3.0, 1e-12);
  EXPECT_EQ(half.per_type.at("PER").correct, 1u);
  EXPECT_EQ(half.per_type.at("LOC").gold, 1u);
  EXPECT_EQ(half.per_type.at("LOC").pred, 0u);

  EXPECT_THROW(score(gold, {{"O"}}), DataError);
  EXPECT_THROW(score(gold, {}), DataError);
}

TEST(Score, LenientPredictionsAndGroups) {
  ScoreOptions opts;
  opts.groups = {{"PER.NAM", "NE"}, {"PER.NOM", "NM"}, {"LOC.NAM", "NE"}};
  const std::vector<Tags> gold{{"S-PER.NAM", "O", "B-PER.NOM", "E-PER.NOM", "S-LOC.NAM"}};
  const std::vector<Tags> pred{{"S-PER.NAM", "O", "I-PER.NOM", "E-PER.NOM", "O"}};
  const EvalReport r = score(gold, pred, opts);
  // The lenient reading of I E still forms the PER.NOM chunk.
  EXPECT_EQ(r.overall.correct, 2u);
  EXPECT_EQ(r.groups.at("NE").gold, 2u);
  EXPECT_EQ(r.groups.at("NE").correct, 1u);
  EXPECT_EQ(r.groups.at("NM").correct, 1u);
  SpanCounts sum;
  for (const auto& [type, c] : r.per_type) sum += c;
  EXPECT_EQ(sum.gold, r.overall.gold);
  EXPECT_EQ(sum.pred, r.overall.pred);
  EXPECT_EQ(sum.correct, r.overall.correct);
  EXPECT_NE(r.to_text().find("group.NE"), std::string::npos);
  EXPECT_NE(r.to_json().find("\"groups\""), std::string::npos);
}

TEST(Score, GoldAgainstItselfIsPerfect) {
  const auto corpus = gen_synthetic(9, 200);
  std::vector<Tags> tags;
  for (const auto& s : corpus) tags.push_back(*s.gold);
  EXPECT_EQ(score(corpus, tags).overall.f1(), 100.0);
}

TEST(GroupingMap, ReadsPairs) {
  const auto dir = test::temp_dir("groups");
  std::ofstream(dir / "g.txt") << "PER.NAM NE\nPER.NOM\tNM\n\n";
  const auto m = read_grouping_map(dir / "g.txt");
  EXPECT_EQ(m.at("PER.NAM"), "NE");
  EXPECT_EQ(m.at("PER.NOM"), "NM");
  std::ofstream(dir / "bad.txt") << "PER.NAM\n";
  EXPECT_THROW(read_grouping_map(dir / "bad.txt"), DataError);
}

TEST(GenSynthetic, DeterministicAndValid) {
  const auto a = gen_synthetic(7, 50), b = gen_synthetic(7, 50), c = gen_synthetic(8, 50);
  ASSERT_EQ(a.size(), 50u);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].chars, b[i].chars);
    EXPECT_EQ(a[i].gold, b[i].gold);
    EXPECT_EQ(a[i].seg, b[i].seg);
    differs |= a[i].chars != c[i].chars;
    EXPECT_NO_THROW(validate_sentence(a[i]));
    EXPECT_TRUE(is_valid_bioes(*a[i].gold));
    EXPECT_TRUE(is_valid_bmes(a[i].seg));
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(gen_synthetic(1, 0), ConfigError);
}

TEST(GenSynthetic, EntityRateNearConfigured) {
  for (double rate : {0.2, 0.35, 0.6}) {
    SyntheticOptions opts;
    opts.entity_rate = rate;
    std::size_t entities = 0, words = 0;
    for (const auto& s : gen_synthetic(21, 1000, opts)) {
      entities += extract_spans(*s.gold).size();
      for (SegMark m : s.seg) words += (m == SegMark::B || m == SegMark::S);
    }
    // Each entity segment is a trigger word followed by the entity word.
    const double observed = static_cast<double>(entities) / static_cast<double>(words - entities);
    EXPECT_NEAR(observed, rate, 0.1 * rate) << rate;
  }
}

TEST(GenSynthetic, TypeFollowsTrigger) {
  const std::map<std::string, std::string> trigger{{"叫", "PER"}, {"去", "LOC"}, {"入", "ORG"}};
  for (const auto& s : gen_synthetic(2, 200)) {
    for (const Span& sp : extract_spans(*s.gold)) {
      ASSERT_GT(sp.start, 0u);
      EXPECT_EQ(trigger.at(s.chars[sp.start - 1]), sp.type);
    }
  }
}

TEST(Vocab, BuildOrderingAndUnk) {
  Sentence s;
  s.chars = {"a", "b", "a", "b", "c", "b"};
  const Vocab v = build_vocab({s});
  EXPECT_EQ(v.tokens(), (Tags{"<unk>", "<pad>", "b", "a", "c"}));
  EXPECT_EQ(v.id("z"), Vocab::kUnk);
  EXPECT_EQ(v.id("<pad>"), Vocab::kUnk);
  EXPECT_EQ(v.token(v.id("a")), "a");

  Sentence ab;
  ab.chars = {"a", "b", "a", "b"};
  EXPECT_EQ(build_vocab({ab}).tokens(), (Tags{"<unk>", "<pad>", "a", "b"}));
  const Vocab v2 = build_vocab({s}, 2);
  EXPECT_EQ(v2.id("c"), Vocab::kUnk);
  EXPECT_EQ(v2.size(), 4u);
  EXPECT_EQ(build_vocab({s}), v);
  EXPECT_THROW(Vocab({"a", "a"}), DataError);
}

TEST(LabelSet, OFirstThenSorted) {
  const auto corpus = gen_synthetic(1, 100);
  const LabelSet labels = LabelSet::from_corpus(corpus);
  EXPECT_EQ(labels.label(0), "O");
  EXPECT_TRUE(std::is_sorted(labels.labels().begin() + 1, labels.labels().end()));
  EXPECT_THROW(labels.index("S-XYZ"), DataError);
  const Tags tags = *corpus[0].gold;
  EXPECT_EQ(labels.decode(labels.encode(tags)), tags);
}

}  // namespace
}  // namespace can
