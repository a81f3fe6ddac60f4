#include "can/numerics.hpp"

#include <algorithm>
#include <sstream>

namespace can {

std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

Parameter::Parameter(std::string name_, Tensor init)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(Tensor::Zero(value.rows(), value.cols())),
      accum_sq_grad(Tensor::Zero(value.rows(), value.cols())),
      accum_sq_update(Tensor::Zero(value.rows(), value.cols())) {
  if (value.size() == 0) throw ConfigError("parameter '" + name + "' has an empty shape");
}

Parameter& ParameterSet::add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.try_emplace(name, name, std::move(init));
  if (!inserted) throw ConfigError("duplicate parameter name '" + name + "'");
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : &it->second;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : &it->second;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& [_, p] : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& [_, p] : params_) out.push_back(&p);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

double ParameterSet::grad_norm() const {
  double total = 0.0;
  for (const auto& [_, p] : params_) total += p.grad.squaredNorm();
  return std::sqrt(total);
}

void validate(const AdaDeltaConfig& cfg) {
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("learning rate must be > 0");
  if (!(cfg.rho > 0.0 && cfg.rho < 1.0)) throw ConfigError("rho must lie in (0, 1)");
  if (!(cfg.eps > 0.0)) throw ConfigError("eps must be > 0");
}

void adadelta_step(Parameter& p, const AdaDeltaConfig& cfg) {
  validate(cfg);
  if (!all_finite(p.grad)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  auto g = p.grad.array();
  p.accum_sq_grad.array() = cfg.rho * p.accum_sq_grad.array() + (1.0 - cfg.rho) * g.square();
  const Tensor delta = (-cfg.lr * (p.accum_sq_update.array() + cfg.eps).sqrt() /
                        (p.accum_sq_grad.array() + cfg.eps).sqrt() * g)
                           .matrix();
  p.value += delta;
  p.accum_sq_update.array() =
      cfg.rho * p.accum_sq_update.array() + (1.0 - cfg.rho) * delta.array().square();
  p.zero_grad();
}

// splitmix64
Rng::Rng(std::uint64_t seed) : state_(seed) {}

std::uint64_t Rng::next() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ConfigError("Rng::below: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

Tensor uniform_tensor(Eigen::Index rows, Eigen::Index cols, double limit, Rng& rng) {
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-limit, limit);
  return t;
}

Tensor glorot_tensor(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return uniform_tensor(rows, cols, std::sqrt(6.0 / static_cast<double>(rows + cols)), rng);
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(const LossFn& loss, const std::vector<Parameter*>& params,
                                double h, double tol) {
  GradCheckReport report;
  report.tol = tol;
  for (Parameter* p : params) p->zero_grad();
  loss(true);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    analytic.push_back(p->grad);
    p->zero_grad();
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    GradCheckReport::Entry entry{p.name};
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss(false);
      x = saved - h;
      const double down = loss(false);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k].data()[i];
      const double err = std::isfinite(numeric) && std::isfinite(a)
                             ? relative_error(a, numeric)
                             : std::numeric_limits<double>::infinity();
      if (err > entry.max_rel_error || i == 0) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace can
