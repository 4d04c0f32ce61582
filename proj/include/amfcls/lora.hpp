#pragma once

#include "amfcls/common.hpp"

#include <cmath>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace amfcls {

enum class ProjTarget { kQuery, kKey, kValue };

ProjTarget parse_proj_target(const std::string& name);
const char* proj_target_name(ProjTarget t);

struct LoraConfig {
  int rank = 8;
  float alpha = 16.0f;
  float dropout_p = 0.3f;
  std::set<ProjTarget> targets = {ProjTarget::kQuery, ProjTarget::kKey, ProjTarget::kValue};
  std::vector<int> adapted_blocks;  // empty means every transformer block

  float scaling() const { return alpha / static_cast<float>(rank); }
};

void validate(const LoraConfig& cfg);

template <typename Scalar>
struct BasicParameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  int64_t count() const { return static_cast<int64_t>(value.size()); }
};

using Parameter = BasicParameter<float>;

// y = x W^T + b with a manual backward pass. Weight gradients are skipped
// for frozen parameters; input gradients are produced on demand.
template <typename Scalar>
class BasicLinear {
 public:
  BasicLinear() = default;
  BasicLinear(std::string name, int in_dim, int out_dim, bool with_bias = true)
      : has_bias_(with_bias) {
    weight.name = name + ".weight";
    weight.resize(out_dim, in_dim);
    bias.name = name + ".bias";
    bias.resize(1, with_bias ? out_dim : 0);
  }

  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }

  // Gaussian fan-in init, the usual choice for transformer linears.
  void init_gaussian(Rng& rng, double std_scale = 1.0) {
    double stddev = std_scale / std::sqrt(static_cast<double>(in_dim()));
    for (Eigen::Index i = 0; i < weight.value.size(); ++i) {
      weight.value.data()[i] = static_cast<Scalar>(rng.normal() * stddev);
    }
    if (has_bias_) bias.value.setZero();
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x) {
    cached_x_ = x;
    Matrix<Scalar> y = x * weight.value.transpose();
    if (has_bias_) y.rowwise() += bias.value.row(0);
    return y;
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& dy, bool need_dx = true) {
    if (weight.trainable) {
      weight.grad.noalias() += dy.transpose() * cached_x_;
      if (has_bias_) bias.grad.row(0) += dy.colwise().sum();
    }
    if (!need_dx) return Matrix<Scalar>();
    return dy * weight.value;
  }

  void collect(std::vector<BasicParameter<Scalar>*>& out) {
    out.push_back(&weight);
    if (has_bias_) out.push_back(&bias);
  }

  bool has_bias() const { return has_bias_; }

  BasicParameter<Scalar> weight;
  BasicParameter<Scalar> bias;  // stored 1 x out_dim

 private:
  bool has_bias_ = false;
  Matrix<Scalar> cached_x_;
};

// Linear projection with an optional low-rank adapter:
//   y = x W^T + b + scaling * drop(x) A^T B^T
// The base weight stays frozen; only A (r x d_in) and B (d_out x r) train.
// B starts at zero so a fresh adapter contributes nothing.
template <typename Scalar>
class BasicLoraLinear {
 public:
  BasicLoraLinear() = default;
  BasicLoraLinear(std::string name, int in_dim, int out_dim, bool with_bias = true)
      : base(name, in_dim, out_dim, with_bias), name_(std::move(name)) {}

  void attach_adapter(const LoraConfig& cfg, Rng& rng) {
    validate(cfg);
    int in_dim = base.in_dim();
    int out_dim = base.out_dim();
    if (cfg.rank > std::min(in_dim, out_dim)) {
      std::cerr << "warning: LoRA rank " << cfg.rank << " exceeds min(d_in,d_out)="
                << std::min(in_dim, out_dim) << " for " << name_
                << "; adapter is over-parameterized\n";
    }
    lora_a.name = name_ + ".lora_A";
    lora_a.resize(cfg.rank, in_dim);
    double stddev = 1.0 / static_cast<double>(cfg.rank);
    for (Eigen::Index i = 0; i < lora_a.value.size(); ++i) {
      lora_a.value.data()[i] = static_cast<Scalar>(rng.normal() * stddev);
    }
    lora_b.name = name_ + ".lora_B";
    lora_b.resize(out_dim, cfg.rank);  // zero init
    scaling_ = static_cast<Scalar>(cfg.scaling());
    dropout_p_ = cfg.dropout_p;
    has_adapter_ = true;
    merged_ = false;
  }

  bool has_adapter() const { return has_adapter_; }
  bool merged() const { return merged_; }
  Scalar scaling() const { return scaling_; }
  const std::string& name() const { return name_; }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, bool train_mode = false, Rng* rng = nullptr) {
    if (train_mode && merged_) {
      throw Error("training through a merged adapter on " + name_);
    }
    Matrix<Scalar> y = base.forward(x);
    adapter_active_ = has_adapter_ && !merged_;
    if (!adapter_active_) return y;

    if (train_mode && dropout_p_ > 0.0f) {
      if (rng == nullptr) throw Error("dropout requires an rng in train mode");
      Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - dropout_p_));
      drop_mask_.resize(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < drop_mask_.size(); ++i) {
        drop_mask_.data()[i] = rng->uniform() < dropout_p_ ? Scalar(0) : keep_scale;
      }
      dropped_x_ = x.cwiseProduct(drop_mask_);
      dropout_applied_ = true;
    } else {
      dropped_x_ = x;
      dropout_applied_ = false;
    }
    ax_ = dropped_x_ * lora_a.value.transpose();  // n x r
    y.noalias() += scaling_ * (ax_ * lora_b.value.transpose());
    return y;
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& dy, bool need_dx = true) {
    Matrix<Scalar> dx = base.backward(dy, need_dx);
    if (!adapter_active_) return dx;

    if (lora_b.trainable) lora_b.grad.noalias() += scaling_ * (dy.transpose() * ax_);
    Matrix<Scalar> d_ax = scaling_ * (dy * lora_b.value);  // n x r
    if (lora_a.trainable) lora_a.grad.noalias() += d_ax.transpose() * dropped_x_;
    if (need_dx) {
      Matrix<Scalar> d_dropped = d_ax * lora_a.value;
      if (dropout_applied_) d_dropped = d_dropped.cwiseProduct(drop_mask_);
      dx.noalias() += d_dropped;
    }
    return dx;
  }

  // Folds the adapter into the base weight: W <- W + scaling * B A.
  void merge() {
    if (!has_adapter_) throw Error("merge: no adapter attached to " + name_);
    if (merged_) throw Error("merge: adapter on " + name_ + " is already merged");
    base.weight.value.noalias() += scaling_ * (lora_b.value * lora_a.value);
    merged_ = true;
  }

  void unmerge() {
    if (!has_adapter_) throw Error("unmerge: no adapter attached to " + name_);
    if (!merged_) throw Error("unmerge: adapter on " + name_ + " is not merged");
    base.weight.value.noalias() -= scaling_ * (lora_b.value * lora_a.value);
    merged_ = false;
  }

  void collect(std::vector<BasicParameter<Scalar>*>& out) {
    base.collect(out);
    if (has_adapter_) {
      out.push_back(&lora_a);
      out.push_back(&lora_b);
    }
  }

  BasicLinear<Scalar> base;
  BasicParameter<Scalar> lora_a;  // r x d_in
  BasicParameter<Scalar> lora_b;  // d_out x r

 private:
  std::string name_;
  Scalar scaling_ = Scalar(1);
  float dropout_p_ = 0.0f;
  bool has_adapter_ = false;
  bool merged_ = false;
  bool adapter_active_ = false;
  bool dropout_applied_ = false;
  Matrix<Scalar> drop_mask_;
  Matrix<Scalar> dropped_x_;
  Matrix<Scalar> ax_;
};

using Linear = BasicLinear<float>;
using LoraLinear = BasicLoraLinear<float>;

}  // namespace amfcls
