#include "can/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "can/errors.hpp"
#include "can/numerics.hpp"

namespace can {

namespace {

std::string at_line(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream is(line);
  std::string f;
  while (is >> f) fields.push_back(f);
  return fields;
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

char to_char(SegMark m) {
  static constexpr char kChars[] = {'B', 'M', 'E', 'S'};
  return kChars[static_cast<int>(m)];
}

SegMark seg_from_string(std::string_view s) {
  if (s == "B") return SegMark::B;
  if (s == "M") return SegMark::M;
  if (s == "E") return SegMark::E;
  if (s == "S") return SegMark::S;
  throw DataError("invalid BMES mark '" + std::string(s) + "'");
}

std::vector<std::string> split_utf8(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len;
    std::uint32_t cp;
    if (lead < 0x80) {
      len = 1;
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      len = 2;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
      cp = lead & 0x07;
    } else {
      throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + len > text.size()) throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < len; ++k) {
      const auto c = static_cast<unsigned char>(text[i + k]);
      if ((c & 0xC0) != 0x80) throw DataError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      cp = (cp << 6) | (c & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw DataError("invalid UTF-8 code point at offset " + std::to_string(i));
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

bool is_valid_bmes(const std::vector<SegMark>& seg) {
  bool in_word = false;
  for (SegMark m : seg) {
    switch (m) {
      case SegMark::B:
        if (in_word) return false;
        in_word = true;
        break;
      case SegMark::M:
        if (!in_word) return false;
        break;
      case SegMark::E:
        if (!in_word) return false;
        in_word = false;
        break;
      case SegMark::S:
        if (in_word) return false;
        break;
    }
  }
  return !in_word;
}

void validate_bmes(const std::vector<SegMark>& seg) {
  if (!is_valid_bmes(seg)) {
    std::string s;
    for (SegMark m : seg) s += to_char(m);
    throw DataError("invalid BMES sequence '" + s + "'");
  }
}

std::pair<char, std::string> split_tag(std::string_view tag) {
  if (tag == "O") return {'O', ""};
  if (tag.size() < 3 || tag[1] != '-') throw DataError("malformed tag '" + std::string(tag) + "'");
  const char prefix = tag[0];
  if (std::string_view("BIMES").find(prefix) == std::string_view::npos) {
    throw DataError("malformed tag '" + std::string(tag) + "'");
  }
  return {prefix, std::string(tag.substr(2))};
}

bool is_valid_bioes(const std::vector<std::string>& tags) {
  std::string open;  // type of the open B chunk, empty when none
  bool in_chunk = false;
  for (const auto& t : tags) {
    char p;
    std::string type;
    try {
      std::tie(p, type) = split_tag(t);
    } catch (const DataError&) {
      return false;
    }
    switch (p) {
      case 'O':
      case 'S':
        if (in_chunk) return false;
        break;
      case 'B':
        if (in_chunk) return false;
        in_chunk = true;
        open = type;
        break;
      case 'M':
        if (!in_chunk || type != open) return false;
        break;
      case 'E':
        if (!in_chunk || type != open) return false;
        in_chunk = false;
        break;
      default:
        return false;  // I- is not BIOES
    }
  }
  return !in_chunk;
}

void validate_sentence(const Sentence& s) {
  if (s.seg.size() != s.chars.size()) {
    throw DataError("sentence '" + s.id + "': " + std::to_string(s.chars.size()) + " chars but " +
                    std::to_string(s.seg.size()) + " BMES marks");
  }
  validate_bmes(s.seg);
  if (s.gold) {
    if (s.gold->size() != s.chars.size()) {
      throw DataError("sentence '" + s.id + "': tag count differs from character count");
    }
    if (!is_valid_bioes(*s.gold)) throw DataError("sentence '" + s.id + "': gold tags are not valid BIOES");
  }
}

std::vector<Sentence> parse_conll(std::istream& in, const std::string& source, const ConllOptions& opts) {
  std::vector<Sentence> out;
  Sentence cur;
  std::size_t columns = 0;
  std::size_t start_line = 0;
  std::size_t lineno = 0;

  auto flush = [&]() {
    if (cur.chars.empty()) return;
    cur.id = source + "#" + std::to_string(out.size());
    if (columns < 3) cur.seg.assign(cur.chars.size(), SegMark::S);
    if (cur.gold && opts.bio_input) cur.gold = bio_to_bioes(*cur.gold, opts.lenient);
    try {
      validate_sentence(cur);
    } catch (const DataError& e) {
      throw DataError(at_line(source, start_line) + e.what());
    }
    out.push_back(std::move(cur));
    cur = Sentence{};
    columns = 0;
  };

  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) {
      flush();
      continue;
    }
    std::vector<std::string> fields = split_fields(line);
    if (fields.size() > 3) {
      throw DataError(at_line(source, lineno) + "expected at most 3 columns, got " + std::to_string(fields.size()));
    }
    if (cur.chars.empty()) {
      columns = fields.size();
      start_line = lineno;
      if (columns >= 2) cur.gold.emplace();
    } else if (fields.size() != columns) {
      throw DataError(at_line(source, lineno) + "column count " + std::to_string(fields.size()) +
                      " differs from " + std::to_string(columns) + " earlier in the sentence");
    }
    std::vector<std::string> cps;
    try {
      cps = split_utf8(fields[0]);
    } catch (const DataError& e) {
      throw DataError(at_line(source, lineno) + e.what());
    }
    if (cps.size() != 1) {
      throw DataError(at_line(source, lineno) + "token '" + fields[0] + "' is not a single character");
    }
    cur.chars.push_back(cps[0]);
    if (columns >= 2) {
      try {
        split_utf8(fields[1]);
        split_tag(fields[1]);
      } catch (const DataError& e) {
        throw DataError(at_line(source, lineno) + e.what());
      }
      cur.gold->push_back(fields[1]);
    }
    if (columns == 3) {
      try {
        cur.seg.push_back(seg_from_string(fields[2]));
      } catch (const DataError& e) {
        throw DataError(at_line(source, lineno) + e.what());
      }
    }
  }
  flush();
  return out;
}

std::vector<Sentence> parse_conll(const std::filesystem::path& path, const ConllOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_conll(in, path.filename().string(), opts);
}

void write_conll(std::ostream& out, const std::vector<Sentence>& sentences,
                 const std::vector<std::vector<std::string>>* tags) {
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const Sentence& sent = sentences[s];
    const std::vector<std::string>* col = tags ? &(*tags)[s] : (sent.gold ? &*sent.gold : nullptr);
    if (col && col->size() != sent.size()) throw DataError("write_conll: tag count mismatch in sentence " + std::to_string(s));
    for (std::size_t i = 0; i < sent.size(); ++i) {
      out << sent.chars[i];
      if (col) out << '\t' << (*col)[i] << '\t' << to_char(sent.seg[i]);
      out << '\n';
    }
    out << '\n';
  }
}

namespace {

// conlleval-style chunking that understands B/I/M/E/S prefixes.
std::vector<Span> lenient_chunks(const std::vector<std::string>& tags) {
  std::vector<Span> out;
  bool open = false;
  Span cur;
  auto close = [&](std::size_t end) {
    if (open) {
      cur.end = end;
      out.push_back(cur);
      open = false;
    }
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto [p, type] = split_tag(tags[i]);
    switch (p) {
      case 'O':
        if (i > 0) close(i - 1);
        break;
      case 'B':
        if (i > 0) close(i - 1);
        cur = Span{i, i, type};
        open = true;
        break;
      case 'S':
        if (i > 0) close(i - 1);
        out.push_back(Span{i, i, type});
        break;
      case 'I':
      case 'M':
        if (!open || cur.type != type) {
          if (i > 0) close(i - 1);
          cur = Span{i, i, type};
          open = true;
        }
        break;
      case 'E':
        if (open && cur.type == type) {
          close(i);
        } else {
          if (i > 0) close(i - 1);
          out.push_back(Span{i, i, type});
        }
        break;
    }
  }
  if (!tags.empty()) close(tags.size() - 1);
  return out;
}

}  // namespace

std::vector<std::string> bio_to_bioes(const std::vector<std::string>& tags, bool lenient) {
  if (lenient) {
    const auto chunks = lenient_chunks(tags);
    return spans_to_bioes(std::set<Span>(chunks.begin(), chunks.end()), tags.size());
  }
  std::vector<std::string> out(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto [p, type] = split_tag(tags[i]);
    const bool continues = i + 1 < tags.size() && split_tag(tags[i + 1]) == std::make_pair('I', type);
    switch (p) {
      case 'O':
        out[i] = "O";
        break;
      case 'B':
        out[i] = (continues ? "B-" : "S-") + type;
        break;
      case 'I': {
        if (i == 0) throw DataError("bio_to_bioes: I-" + type + " at position 0 has no preceding B-/I-");
        auto [pp, ptype] = split_tag(tags[i - 1]);
        if ((pp != 'B' && pp != 'I') || ptype != type) {
          throw DataError("bio_to_bioes: I-" + type + " at position " + std::to_string(i) +
                          " does not continue a " + type + " chunk");
        }
        out[i] = (continues ? "M-" : "E-") + type;
        break;
      }
      default:
        throw DataError("bio_to_bioes: tag '" + tags[i] + "' is not BIO (use lenient mode for BIOES input)");
    }
  }
  return out;
}

std::vector<SegMark> bmes_from_words(const std::vector<std::string>& words) {
  std::vector<SegMark> out;
  for (const auto& w : words) {
    const std::size_t n = split_utf8(w).size();
    if (n == 0) throw DataError("bmes_from_words: empty word");
    if (n == 1) {
      out.push_back(SegMark::S);
      continue;
    }
    out.push_back(SegMark::B);
    out.insert(out.end(), n - 2, SegMark::M);
    out.push_back(SegMark::E);
  }
  return out;
}

std::vector<SegMark> bmes_from_words(const std::vector<std::string>& words, const std::vector<std::string>& chars) {
  std::string joined, expected;
  for (const auto& w : words) joined += w;
  for (const auto& c : chars) expected += c;
  if (joined != expected) {
    throw DataError("bmes_from_words: words '" + joined + "' do not cover sentence '" + expected + "'");
  }
  return bmes_from_words(words);
}

std::set<Span> extract_spans(const std::vector<std::string>& tags, bool strict) {
  if (!strict) {
    const auto chunks = lenient_chunks(tags);
    return {chunks.begin(), chunks.end()};
  }
  std::set<Span> out;
  std::size_t i = 0;
  while (i < tags.size()) {
    auto [p, type] = split_tag(tags[i]);
    if (p == 'S') {
      out.insert(Span{i, i, type});
      ++i;
      continue;
    }
    if (p != 'B') {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < tags.size() && split_tag(tags[j]) == std::make_pair('M', type)) ++j;
    if (j < tags.size() && split_tag(tags[j]) == std::make_pair('E', type)) {
      out.insert(Span{i, j, type});
      i = j + 1;
    } else {
      i = j;  // malformed fragment; resume at the token that broke it
    }
  }
  return out;
}

std::vector<std::string> spans_to_bioes(const std::set<Span>& spans, std::size_t length) {
  std::vector<std::string> tags(length, "O");
  for (const auto& s : spans) {
    if (s.end < s.start || s.end >= length) throw DataError("spans_to_bioes: span out of range");
    for (std::size_t i = s.start; i <= s.end; ++i) {
      if (tags[i] != "O") throw DataError("spans_to_bioes: overlapping spans");
    }
    if (s.start == s.end) {
      tags[s.start] = "S-" + s.type;
      continue;
    }
    tags[s.start] = "B-" + s.type;
    for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = "M-" + s.type;
    tags[s.end] = "E-" + s.type;
  }
  return tags;
}

double SpanCounts::precision() const { return pred == 0 ? 0.0 : 100.0 * correct / pred; }
double SpanCounts::recall() const { return gold == 0 ? 0.0 : 100.0 * correct / gold; }
double SpanCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}
SpanCounts& SpanCounts::operator+=(const SpanCounts& o) {
  gold += o.gold;
  pred += o.pred;
  correct += o.correct;
  return *this;
}

namespace {

void write_counts(std::ostringstream& os, const std::string& prefix, const SpanCounts& c) {
  os << prefix << ".gold = " << c.gold << '\n'
     << prefix << ".pred = " << c.pred << '\n'
     << prefix << ".correct = " << c.correct << '\n'
     << prefix << ".precision = " << c.precision() << '\n'
     << prefix << ".recall = " << c.recall() << '\n'
     << prefix << ".f1 = " << c.f1() << '\n';
}

nlohmann::ordered_json counts_json(const SpanCounts& c) {
  return {{"gold", c.gold},           {"pred", c.pred},     {"correct", c.correct},
          {"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()}};
}

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  write_counts(os, "overall", overall);
  for (const auto& [type, c] : per_type) write_counts(os, "type." + type, c);
  for (const auto& [group, c] : groups) write_counts(os, "group." + group, c);
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["overall"] = counts_json(overall);
  j["per_type"] = nlohmann::ordered_json::object();
  for (const auto& [type, c] : per_type) j["per_type"][type] = counts_json(c);
  j["groups"] = nlohmann::ordered_json::object();
  for (const auto& [group, c] : groups) j["groups"][group] = counts_json(c);
  return j.dump(2);
}

EvalReport score(const std::vector<std::vector<std::string>>& gold,
                 const std::vector<std::vector<std::string>>& predicted, const ScoreOptions& opts) {
  if (gold.size() != predicted.size()) {
    throw DataError("score: " + std::to_string(gold.size()) + " gold sentences but " +
                    std::to_string(predicted.size()) + " predicted");
  }
  EvalReport report;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].size() != predicted[s].size()) {
      throw DataError("score: sentence " + std::to_string(s) + " has " + std::to_string(gold[s].size()) +
                      " gold tags but " + std::to_string(predicted[s].size()) + " predicted");
    }
    const auto g = extract_spans(gold[s], opts.strict_gold);
    const auto p = extract_spans(predicted[s], opts.strict_pred);
    for (const auto& span : g) report.per_type[span.type].gold += 1;
    for (const auto& span : p) {
      report.per_type[span.type].pred += 1;
      if (g.count(span)) report.per_type[span.type].correct += 1;
    }
  }
  for (const auto& [type, c] : report.per_type) {
    report.overall += c;
    if (auto it = opts.groups.find(type); it != opts.groups.end()) report.groups[it->second] += c;
  }
  return report;
}

EvalReport score(const std::vector<Sentence>& gold, const std::vector<std::vector<std::string>>& predicted,
                 const ScoreOptions& opts) {
  std::vector<std::vector<std::string>> tags;
  tags.reserve(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!gold[i].gold) throw DataError("score: sentence " + std::to_string(i) + " has no gold tags");
    tags.push_back(*gold[i].gold);
  }
  return score(tags, predicted, opts);
}

std::map<std::string, std::string> read_grouping_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open grouping map '" + path.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_fields(line);
    if (fields.empty() || fields[0][0] == '#') continue;
    if (fields.size() != 2) throw DataError(at_line(path.string(), lineno) + "expected 'TYPE GROUP'");
    out[fields[0]] = fields[1];
  }
  return out;
}

std::vector<Sentence> gen_synthetic(std::uint64_t seed, std::size_t n, const SyntheticOptions& opts) {
  static const std::vector<std::string> kFiller = {"的", "了", "在", "是", "我", "有", "和", "就",
                                                   "不", "人", "都", "一", "上", "也", "很", "到"};
  static const std::vector<std::string> kEntity = {"张", "王", "李", "华", "明", "东",
                                                   "海", "山", "京", "中", "国", "安"};
  struct Trigger {
    const char* ch;
    const char* type;
  };
  static const std::vector<Trigger> kTriggers = {{"叫", "PER"}, {"去", "LOC"}, {"入", "ORG"}};

  if (n == 0) throw ConfigError("gen_synthetic: n must be >= 1");
  if (opts.min_segments == 0 || opts.max_segments < opts.min_segments) {
    throw ConfigError("gen_synthetic: invalid segment range");
  }
  Rng rng(seed);
  std::vector<Sentence> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    Sentence sent;
    sent.id = "syn-" + std::to_string(seed) + "-" + std::to_string(s);
    sent.gold.emplace();
    const std::size_t segments = opts.min_segments + rng.below(opts.max_segments - opts.min_segments + 1);
    std::vector<std::string> words;
    for (std::size_t k = 0; k < segments; ++k) {
      if (rng.bernoulli(opts.entity_rate)) {
        const Trigger& t = kTriggers[rng.below(kTriggers.size())];
        const std::size_t len = 1 + rng.below(3);
        words.emplace_back(t.ch);
        sent.chars.emplace_back(t.ch);
        sent.gold->push_back("O");
        std::string word;
        for (std::size_t i = 0; i < len; ++i) {
          const std::string& c = kEntity[rng.below(kEntity.size())];
          word += c;
          sent.chars.push_back(c);
        }
        words.push_back(word);
        const std::string type = t.type;
        if (len == 1) {
          sent.gold->push_back("S-" + type);
        } else {
          sent.gold->push_back("B-" + type);
          for (std::size_t i = 1; i + 1 < len; ++i) sent.gold->push_back("M-" + type);
          sent.gold->push_back("E-" + type);
        }
      } else {
        const std::size_t len = 1 + rng.below(2);
        std::string word;
        for (std::size_t i = 0; i < len; ++i) {
          const std::string& c = kFiller[rng.below(kFiller.size())];
          word += c;
          sent.chars.push_back(c);
          sent.gold->push_back("O");
        }
        words.push_back(word);
      }
    }
    sent.seg = bmes_from_words(words, sent.chars);
    out.push_back(std::move(sent));
  }
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& tokens) {
  tokens_ = {kUnkToken, kPadToken};
  index_[kUnkToken] = kUnk;
  index_[kPadToken] = kPad;
  for (const auto& t : tokens) {
    if (!index_.emplace(t, static_cast<int>(tokens_.size())).second) {
      throw DataError("vocabulary token '" + t + "' is duplicated or reserved");
    }
    tokens_.push_back(t);
  }
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() || it->second == kPad ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw DataError("vocabulary id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

Vocab build_vocab(const std::vector<Sentence>& corpus, std::size_t min_freq) {
  std::map<std::string, std::size_t> freq;  // byte order of UTF-8 == code point order
  for (const auto& s : corpus) {
    for (const auto& c : s.chars) ++freq[c];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (const auto& [tok, count] : entries) {
    if (count >= min_freq && tok != Vocab::kUnkToken && tok != Vocab::kPadToken) tokens.push_back(tok);
  }
  return Vocab(tokens);
}

LabelSet::LabelSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty() || labels_.front() != "O") throw DataError("label set must start with 'O'");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    split_tag(labels_[i]);
    if (!index_.emplace(labels_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate label '" + labels_[i] + "'");
    }
  }
}

LabelSet LabelSet::from_corpus(const std::vector<Sentence>& corpus) {
  std::set<std::string> seen;
  for (const auto& s : corpus) {
    if (!s.gold) continue;
    for (const auto& t : *s.gold) {
      if (t != "O") seen.insert(t);
    }
  }
  std::vector<std::string> labels{"O"};
  labels.insert(labels.end(), seen.begin(), seen.end());
  return LabelSet(labels);
}

int LabelSet::index(const std::string& tag) const {
  auto it = index_.find(tag);
  if (it == index_.end()) throw DataError("label '" + tag + "' is outside the label set");
  return it->second;
}

std::vector<int> LabelSet::encode(const std::vector<std::string>& tags) const {
  std::vector<int> out;
  out.reserve(tags.size());
  for (const auto& t : tags) out.push_back(index(t));
  return out;
}

std::vector<std::string> LabelSet::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(label(i));
  return out;
}

}  // namespace can
