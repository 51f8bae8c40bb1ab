#ifndef SERGAN_NN_HPP_
#define SERGAN_NN_HPP_

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "sergan/autograd.hpp"
#include "sergan/rng.hpp"
#include "sergan/tensor.hpp"

namespace sergan {

// Named parameter container. Parameters are registered once at construction
// in a fixed order; names must be unique within the module.
class Module {
 public:
  explicit Module(std::string name) : name_(std::move(name)) {}
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  const std::string& name() const { return name_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
  }
  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& p : params_) n += p.value.numel();
    return n;
  }
  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }
  Parameter& find(const std::string& pname);

 protected:
  Parameter& register_param(const std::string& local, Tensor init);
  // Adds this module's parameter to the tape; trainable unless frozen.
  Var use(Tape& t, Parameter& p) const { return t.param(p, !frozen_); }

 private:
  std::string name_;
  bool frozen_ = false;
  std::deque<Parameter> params_;  // deque keeps addresses stable
};

// --- initializers -----------------------------------------------------------

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, RngStream& rng);
Tensor zeros(std::vector<int> shape);

// --- layers ----------------------------------------------------------------
// Layers hold pointers into their owning module's parameter registry.

struct Conv2dLayer {
  Parameter* w = nullptr;
  Parameter* b = nullptr;
  int stride = 1, pad = 0;
};

struct LinearLayer {
  Parameter* w = nullptr;
  Parameter* b = nullptr;
};

struct LstmLayer {
  Parameter* wx = nullptr;  // [4H, F], gate order i,f,g,o
  Parameter* wh = nullptr;  // [4H, H]
  Parameter* b = nullptr;   // [4H], forget gate bias initialized to 1
  int hidden = 0;
};

struct AttentionPool {
  Parameter* w = nullptr;  // [A, H]
  Parameter* b = nullptr;  // [A]
  Parameter* v = nullptr;  // [1, A]
};

// Builder mixin giving concrete models terse layer construction. Each maker
// registers parameters under "<name>.w" etc. and returns the layer handle.
class NetBuilder : public Module {
 public:
  using Module::Module;

 protected:
  Conv2dLayer conv(const std::string& name, int ci, int co, int k, int stride, int pad,
                   RngStream& rng);
  Conv2dLayer deconv(const std::string& name, int ci, int co, int k, int stride, int pad,
                     RngStream& rng);
  LinearLayer linear(const std::string& name, int in, int out, RngStream& rng);
  LstmLayer lstm(const std::string& name, int in, int hidden, RngStream& rng);
  AttentionPool attention(const std::string& name, int hidden, int attn_dim,
                          RngStream& rng);

  Var apply(Tape& t, const Conv2dLayer& l, Var x) const;
  Var apply_deconv(Tape& t, const Conv2dLayer& l, Var x) const;
  Var apply(Tape& t, const LinearLayer& l, Var x) const;
  // Runs the LSTM over [N,C,T,B] treating T as the sequence axis with C*B
  // features per step; returns the per-step hidden states, each [N,H].
  std::vector<Var> apply(Tape& t, const LstmLayer& l, Var x) const;
  // Additive attention over per-step hidden states; returns pooled [N,H].
  Var apply(Tape& t, const AttentionPool& a, const std::vector<Var>& steps) const;
};

}  // namespace sergan

#endif  // SERGAN_NN_HPP_
