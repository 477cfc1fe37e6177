#include "thlm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace thlm {

AdamW::AdamW(std::vector<ParamRef> params, AdamWOptions options)
    : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.push_back(nn::Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    v_.push_back(nn::Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
  }
}

void AdamW::step(const std::vector<double>& group_lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.group < 0 || static_cast<std::size_t>(p.group) >= group_lr.size()) {
      throw std::out_of_range("AdamW: parameter group without a learning rate");
    }
    const double lr = group_lr[p.group];
    if (lr == 0.0) continue;
    nn::Matrix& w = p.tensor.mutable_value();
    if (p.decay && opt_.weight_decay > 0.0) w *= (1.0 - lr * opt_.weight_decay);
    if (!p.tensor.has_grad()) continue;
    const nn::Matrix& g = p.tensor.grad();
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    w.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opt_.eps);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double clip_grad_norm(const std::vector<ParamRef>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto p : params) {
      if (p.tensor.has_grad()) p.tensor.mutable_grad() *= s;
    }
  }
  return norm;
}

double warmup_linear_lr(long step, long warmup, long total, double peak) {
  if (step < 0) step = 0;
  if (warmup > 0 && step < warmup) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const long span = total - warmup;
  if (span <= 0) return peak;
  const double frac = static_cast<double>(total - step) / static_cast<double>(span);
  return peak * std::clamp(frac, 0.0, 1.0);
}

}  // namespace thlm
