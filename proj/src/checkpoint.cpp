#include "can/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unistd.h>

namespace can {

namespace {

constexpr const char* kMagic = "CAN-NER-CHECKPOINT";

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void write_rows(std::ostringstream& os, const Tensor& t) {
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      if (c) os << ' ';
      os << t(r, c);
    }
    os << '\n';
  }
}

[[noreturn]] void corrupt(const std::string& what) {
  throw CheckpointError(CheckpointError::Kind::kCorrupt, "corrupt checkpoint: " + what);
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  std::string next(const char* what) {
    std::string line;
    if (!std::getline(in_, line)) corrupt(std::string("unexpected end of file reading ") + what);
    ++lineno_;
    return line;
  }

  /// Reads "keyword value" and returns value.
  std::string keyed(const std::string& keyword) {
    const std::string line = next(keyword.c_str());
    if (line.rfind(keyword + " ", 0) != 0) corrupt("line " + std::to_string(lineno_) + ": expected '" + keyword + "'");
    return line.substr(keyword.size() + 1);
  }

  std::size_t count(const std::string& keyword) {
    const std::string v = keyed(keyword);
    try {
      std::size_t pos = 0;
      const unsigned long n = std::stoul(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::logic_error&) {
      corrupt("line " + std::to_string(lineno_) + ": bad count '" + v + "'");
    }
  }

  Tensor rows(Eigen::Index rows, Eigen::Index cols) {
    Tensor t(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      std::istringstream is(next("tensor values"));
      for (Eigen::Index c = 0; c < cols; ++c) {
        std::string tok;
        if (!(is >> tok)) corrupt("line " + std::to_string(lineno_) + ": too few values");
        char* end = nullptr;
        t(r, c) = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0' || !std::isfinite(t(r, c))) {
          corrupt("line " + std::to_string(lineno_) + ": bad value '" + tok + "'");
        }
      }
      std::string extra;
      if (is >> extra) corrupt("line " + std::to_string(lineno_) + ": too many values");
    }
    return t;
  }

 private:
  std::istringstream in_;
  std::size_t lineno_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model, bool with_optimizer_state) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << kMagic << '\n' << "version " << kCheckpointVersion << '\n';
  const auto cfg = model.config().to_map();
  os << "config " << cfg.size() << '\n';
  for (const auto& [k, v] : cfg) os << k << ' ' << v << '\n';
  os << "vocab " << model.vocab().size() << '\n';
  for (const auto& t : model.vocab().tokens()) os << t << '\n';
  os << "labels " << model.labels().size() << '\n';
  for (const auto& l : model.labels().labels()) os << l << '\n';
  os << "optimizer " << (with_optimizer_state ? 1 : 0) << '\n';
  const auto params = model.params().all();
  os << "tensors " << params.size() << '\n';
  for (const Parameter* p : params) {
    os << "tensor " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    write_rows(os, p->value);
    if (with_optimizer_state) {
      write_rows(os, p->accum_sq_grad);
      write_rows(os, p->accum_sq_update);
    }
  }
  std::string body = os.str();
  return body + "checksum " + hex64(fnv1a(body)) + "\nend\n";
}

Model deserialize_checkpoint(const std::string& text) {
  const std::string marker = "checksum ";
  const std::size_t pos = text.rfind("\n" + marker);
  if (text.rfind(std::string(kMagic) + "\n", 0) != 0) corrupt("missing magic header");
  {
    // Version is checked before integrity so that a newer format is reported as such.
    LineReader head(text);
    head.next("magic");
    const std::string v = head.keyed("version");
    if (v != std::to_string(kCheckpointVersion)) {
      throw CheckpointError(CheckpointError::Kind::kVersion,
                            "checkpoint version " + v + " is not supported (expected " +
                                std::to_string(kCheckpointVersion) + ")");
    }
  }
  if (pos == std::string::npos) corrupt("missing checksum (truncated file?)");
  const std::string body = text.substr(0, pos + 1);
  const std::string trailer = text.substr(pos + 1);
  if (trailer != marker + hex64(fnv1a(body)) + "\nend\n") corrupt("checksum mismatch or truncated trailer");

  LineReader in(body);
  in.next("magic");
  in.keyed("version");
  std::map<std::string, std::string> kv;
  const std::size_t n_cfg = in.count("config");
  for (std::size_t i = 0; i < n_cfg; ++i) {
    const std::string line = in.next("config");
    const auto sp = line.find(' ');
    if (sp == std::string::npos) corrupt("malformed config line '" + line + "'");
    kv[line.substr(0, sp)] = line.substr(sp + 1);
  }
  ModelConfig config = ModelConfig::from_map(kv);

  const std::size_t n_vocab = in.count("vocab");
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < n_vocab; ++i) tokens.push_back(in.next("vocab"));
  if (n_vocab < 2 || tokens[0] != Vocab::kUnkToken || tokens[1] != Vocab::kPadToken) {
    throw CheckpointError(CheckpointError::Kind::kInconsistent, "checkpoint vocabulary lacks reserved entries");
  }
  Vocab vocab(std::vector<std::string>(tokens.begin() + 2, tokens.end()));

  const std::size_t n_labels = in.count("labels");
  std::vector<std::string> label_list;
  for (std::size_t i = 0; i < n_labels; ++i) label_list.push_back(in.next("labels"));
  LabelSet labels;
  try {
    labels = LabelSet(label_list);
  } catch (const DataError& e) {
    throw CheckpointError(CheckpointError::Kind::kInconsistent, std::string("checkpoint label set: ") + e.what());
  }

  const bool with_opt = in.keyed("optimizer") == "1";
  const std::size_t n_tensors = in.count("tensors");
  ParameterSet params;
  for (std::size_t i = 0; i < n_tensors; ++i) {
    std::istringstream is(in.keyed("tensor"));
    std::string name;
    long rows = 0, cols = 0;
    if (!(is >> name >> rows >> cols) || rows < 1 || cols < 1) corrupt("malformed tensor header");
    Parameter& p = params.add(name, in.rows(rows, cols));
    if (with_opt) {
      p.accum_sq_grad = in.rows(rows, cols);
      p.accum_sq_update = in.rows(rows, cols);
    }
  }
  try {
    return Model(config, std::move(vocab), std::move(labels), std::move(params));
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::kInconsistent, std::string("inconsistent checkpoint: ") + e.what());
  }
}

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw DataError("failed writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

void save(const Model& model, const std::filesystem::path& path, bool with_optimizer_state) {
  atomic_write(path, serialize_checkpoint(model, with_optimizer_state));
}

Model load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace can
