#pragma once

#include <cstdint>
#include <vector>

#include "msda/autodiff.hpp"

namespace msda {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay.
///
/// After the bias-corrected adaptive step, parameters whose `decay` flag is
/// set are shrunk by lr * weight_decay * p. Moment buffers are allocated on
/// construction and always match the parameter shapes.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  void step();
  void zero_grad();

  std::int64_t step_count() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t steps_ = 0;
};

}  // namespace msda
