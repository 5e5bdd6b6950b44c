// SPDX-License-Identifier: Apache-2.0
#include "confsearch/tensor.hpp"

#include <atomic>
#include <sstream>
#include <stdexcept>

namespace confsearch {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local int g_no_grad_depth = 0;
std::atomic<std::uint64_t> g_tape_epoch{1};

std::size_t shapeNumel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

std::string shapeToString(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  auto d = std::make_shared<TensorData>();
  d->value.assign(shapeNumel(shape), 0.0);
  d->shape = std::move(shape);
  return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.d_->value) x = v;
  return t;
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::fromVector(std::vector<std::size_t> shape, std::vector<double> values) {
  if (shapeNumel(shape) != values.size()) {
    throw std::invalid_argument("data length " + std::to_string(values.size()) +
                                " does not match shape " + shapeToString(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->value = std::move(values);
  return Tensor(std::move(d));
}

double Tensor::item() const {
  if (!d_ || d_->value.size() != 1) {
    throw std::invalid_argument("item() requires a scalar tensor");
  }
  return d_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!d_ || d_->grad.empty()) {
    throw std::runtime_error("tensor has no accumulated gradient");
  }
  return d_->grad;
}

std::vector<double>& ensureGrad(TensorData& t) {
  if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
  return t.grad;
}

void accumGrad(TensorData& t, std::size_t i, double v) { ensureGrad(t)[i] += v; }

Tape::Tape() : epoch_(g_tape_epoch.fetch_add(1)) {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_no_grad_depth > 0 ? nullptr : g_active_tape; }

std::int64_t Tape::idFor(const Tensor& t) {
  TensorData& d = *t.d_;
  if (d.tape_epoch != epoch_) {
    d.tape_epoch = epoch_;
    d.node = nextId_++;
    d.produced = false;
  }
  return d.node;
}

bool Tape::tracked(const Tensor& t) const {
  if (!t.defined()) return false;
  const TensorData& d = *t.d_;
  return d.requires_grad || (d.tape_epoch == epoch_ && d.produced);
}

void Tape::record(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
                  std::function<void()> backward) {
  record(op, std::vector<Tensor>(inputs), output, std::move(backward));
}

void Tape::record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
                  std::function<void()> backward) {
  TapeEntry e;
  e.op = op;
  e.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) e.inputs.push_back(idFor(in));
  e.output = idFor(output);
  output.d_->produced = true;
  e.backward = std::move(backward);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss tensor");
  }
  if (loss.d_->tape_epoch != epoch_ || !loss.d_->produced) {
    throw std::invalid_argument("loss tensor was not recorded on the active tape");
  }
  ensureGrad(*loss.d_)[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward();
  }
  clear();
}

void Tape::clear() {
  entries_.clear();
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

}  // namespace confsearch
