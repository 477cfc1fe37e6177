#pragma once

#include <string>
#include <vector>

#include "thlm/tensor.hpp"

namespace thlm {

struct ParamRef {
  std::string name;
  nn::Tensor tensor;
  int group = 0;       // index into the optimizer's learning-rate groups
  bool decay = true;   // biases and layer-norm parameters are not decayed
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Learning rates are supplied per group at
// every step so schedules stay outside the optimizer.
class AdamW {
 public:
  AdamW(std::vector<ParamRef> params, AdamWOptions options);

  void step(const std::vector<double>& group_lr);
  void zero_grad();
  long steps_taken() const { return t_; }
  const std::vector<ParamRef>& params() const { return params_; }

 private:
  std::vector<ParamRef> params_;
  AdamWOptions opt_;
  std::vector<nn::Matrix> m_, v_;
  long t_ = 0;
};

// Global L2 norm of all gradients; rescales them in place when it exceeds
// max_norm (max_norm <= 0 disables clipping). Returns the pre-clip norm.
double clip_grad_norm(const std::vector<ParamRef>& params, double max_norm);

// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at
// `total`. lr(0) = peak / warmup, lr(warmup) = peak.
double warmup_linear_lr(long step, long warmup, long total, double peak);

}  // namespace thlm
