#include "meld/optim.hpp"

#include <cmath>

namespace meld::optim {

void Adam::step(std::span<ad::Parameter* const> params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (ad::Parameter* p : params) {
    if (!p->trainable) continue;
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
      throw ShapeError("adam: gradient shape mismatch for " + p->name);
    }
    auto [it, inserted] = state_.try_emplace(p->name);
    Moments& s = it->second;
    if (inserted || s.m.rows() != p->value.rows() || s.m.cols() != p->value.cols()) {
      s.m = Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * p->grad;
    s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * p->grad.cwiseAbs2();
    const double step = lr / bc1;
    p->value.array() -= step * s.m.array() / ((s.v.array() / bc2).sqrt() + cfg_.eps);
  }
}

std::vector<io::NamedTensor> Adam::export_state() const {
  std::vector<io::NamedTensor> out;
  for (const auto& [name, s] : state_) {
    out.push_back({name + "/m", s.m});
    out.push_back({name + "/v", s.v});
  }
  return out;
}

void Adam::import_state(const std::vector<io::NamedTensor>& tensors, std::int64_t steps) {
  state_.clear();
  for (const auto& t : tensors) {
    const auto slash = t.name.rfind('/');
    if (slash == std::string::npos) throw FormatError("optimizer tensor without moment suffix: " + t.name);
    const std::string base = t.name.substr(0, slash);
    const std::string kind = t.name.substr(slash + 1);
    if (kind == "m") {
      state_[base].m = t.value;
    } else if (kind == "v") {
      state_[base].v = t.value;
    } else {
      throw FormatError("unknown optimizer moment: " + t.name);
    }
  }
  t_ = steps;
}

double global_grad_norm(std::span<ad::Parameter* const> params) {
  double sq = 0.0;
  for (const ad::Parameter* p : params) {
    if (p->trainable) sq += p->grad.squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("grad clip must be positive");
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (ad::Parameter* p : params) {
      if (p->trainable) p->grad *= s;
    }
  }
  return norm;
}

}  // namespace meld::optim
