#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace can {

/// Word-segmentation mark of one character.
enum class SegMark : std::uint8_t { B = 0, M = 1, E = 2, S = 3 };

char to_char(SegMark m);
SegMark seg_from_string(std::string_view s);

struct Sentence {
  std::string id;
  std::vector<std::string> chars;  // one UTF-8 encoded code point each
  std::vector<SegMark> seg;
  std::optional<std::vector<std::string>> gold;

  std::size_t size() const { return chars.size(); }
  bool labeled() const { return gold.has_value(); }
};

/// Splits UTF-8 text into code points; throws DataError on malformed input.
std::vector<std::string> split_utf8(std::string_view text);

void validate_bmes(const std::vector<SegMark>& seg);
bool is_valid_bmes(const std::vector<SegMark>& seg);
bool is_valid_bioes(const std::vector<std::string>& tags);
void validate_sentence(const Sentence& s);

struct ConllOptions {
  /// Convert BIO gold tags to BIOES while reading.
  bool bio_input = false;
  /// Applies to BIO conversion only.
  bool lenient = false;
};

/// Reads "char [TAB tag [TAB bmes]]" lines, blank-line separated. Sentences without a BMES
/// column get every character marked S.
std::vector<Sentence> parse_conll(const std::filesystem::path& path, const ConllOptions& opts = {});
std::vector<Sentence> parse_conll(std::istream& in, const std::string& source,
                                  const ConllOptions& opts = {});

/// Writes one "char TAB tag TAB bmes" line per character. `tags` overrides the gold column
/// when given; unlabeled sentences without tags are written with the char and BMES only.
void write_conll(std::ostream& out, const std::vector<Sentence>& sentences,
                 const std::vector<std::vector<std::string>>* tags = nullptr);

/// Splits "B-PER" into ('B', "PER"); "O" yields ('O', "").
std::pair<char, std::string> split_tag(std::string_view tag);

/// BIO -> BIOES. Strict mode rejects an I- without a preceding B-/I- of the same type;
/// lenient mode repairs it to B- and also accepts BIOES input unchanged.
std::vector<std::string> bio_to_bioes(const std::vector<std::string>& tags, bool lenient = false);

std::vector<SegMark> bmes_from_words(const std::vector<std::string>& words);
/// As above, additionally checking that the words concatenate exactly to `chars`.
std::vector<SegMark> bmes_from_words(const std::vector<std::string>& words,
                                     const std::vector<std::string>& chars);

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  std::string type;
  auto operator<=>(const Span&) const = default;
};

/// Strict mode keeps only well-formed B M* E and S chunks. Lenient mode chunks the way
/// conlleval does: any type change or stray I/M/E opens a new chunk.
std::set<Span> extract_spans(const std::vector<std::string>& tags, bool strict = true);

/// Inverse of extract_spans for non-overlapping spans.
std::vector<std::string> spans_to_bioes(const std::set<Span>& spans, std::size_t length);

struct SpanCounts {
  std::size_t gold = 0;
  std::size_t pred = 0;
  std::size_t correct = 0;

  double precision() const;  // percent
  double recall() const;
  double f1() const;
  SpanCounts& operator+=(const SpanCounts& o);
};

struct EvalReport {
  SpanCounts overall;
  std::map<std::string, SpanCounts> per_type;
  std::map<std::string, SpanCounts> groups;

  /// Flat "key = value" block.
  std::string to_text() const;
  std::string to_json() const;
};

struct ScoreOptions {
  bool strict_gold = true;
  bool strict_pred = false;
  /// entity type -> group name (e.g. PER.NAM -> NE); types absent from the map are not grouped.
  std::map<std::string, std::string> groups;
};

EvalReport score(const std::vector<Sentence>& gold, const std::vector<std::vector<std::string>>& predicted,
                 const ScoreOptions& opts = {});
EvalReport score(const std::vector<std::vector<std::string>>& gold,
                 const std::vector<std::vector<std::string>>& predicted, const ScoreOptions& opts = {});

/// "TYPE GROUP" per line.
std::map<std::string, std::string> read_grouping_map(const std::filesystem::path& path);

struct SyntheticOptions {
  /// Probability that a segment is an entity rather than a filler word.
  double entity_rate = 0.35;
  std::size_t min_segments = 3;
  std::size_t max_segments = 7;
};

/// Templated sentences whose entity characters are shared by every type; the type is fixed by
/// a trigger character immediately before the entity. Deterministic per seed.
std::vector<Sentence> gen_synthetic(std::uint64_t seed, std::size_t n, const SyntheticOptions& opts = {});

class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kPadToken = "<pad>";

  Vocab();
  /// Tokens must not repeat and must not include the reserved ones.
  explicit Vocab(const std::vector<std::string>& tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  /// All tokens in id order, reserved ones included.
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Frequency-descending then code-point-ascending; characters below min_freq map to UNK.
Vocab build_vocab(const std::vector<Sentence>& corpus, std::size_t min_freq = 1);

/// Ordered tag inventory; "O" is always index 0.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> labels);
  static LabelSet from_corpus(const std::vector<Sentence>& corpus);

  int index(const std::string& tag) const;  // throws DataError
  bool contains(const std::string& tag) const { return index_.count(tag) != 0; }
  const std::string& label(int i) const { return labels_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::vector<int> encode(const std::vector<std::string>& tags) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  bool operator==(const LabelSet& o) const { return labels_ == o.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace can
