#pragma once

#include "meld/autodiff.hpp"
#include "meld/tensor_io.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace meld::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are keyed by parameter name so the
/// state survives a checkpoint round-trip independent of registration order.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter in `params` using its current grad.
  void step(std::span<ad::Parameter* const> params, double lr);

  std::int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  /// Moments as named tensors ("<param>/m", "<param>/v") plus the step count.
  std::vector<io::NamedTensor> export_state() const;
  void import_state(const std::vector<io::NamedTensor>& tensors, std::int64_t steps);

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

double global_grad_norm(std::span<ad::Parameter* const> params);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm);

}  // namespace meld::optim
