// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace confsearch {

class Tape;

struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward touches it
  bool requires_grad = false;

  // Autograd bookkeeping, valid only while tape_epoch matches the live tape.
  std::uint64_t tape_epoch = 0;
  std::int64_t node = -1;
  bool produced = false;  // true if output of a recorded op on that tape
};

// Value-semantics handle onto shared storage. Copying a Tensor aliases the
// underlying buffer; ops always allocate fresh outputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor scalar(double v);
  static Tensor fromVector(std::vector<std::size_t> shape, std::vector<double> values);

  bool defined() const { return d_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->value.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }
  // 2-d helpers
  std::size_t rows() const { return d_->shape[0]; }
  std::size_t cols() const { return d_->shape[1]; }

  double at(std::size_t i) const { return d_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return d_->value[r * cols() + c]; }
  double& mut(std::size_t i) { return d_->value[i]; }
  double item() const;  // scalar value; throws if size != 1

  const std::vector<double>& values() const { return d_->value; }
  std::vector<double>& valuesMut() { return d_->value; }

  bool requiresGrad() const { return d_->requires_grad; }
  Tensor& setRequiresGrad(bool b) {
    d_->requires_grad = b;
    return *this;
  }
  bool hasGrad() const { return d_ && !d_->grad.empty(); }
  const std::vector<double>& grad() const;  // throws if no grad accumulated
  void zeroGrad() { d_->grad.clear(); }

  TensorData& data() { return *d_; }
  const TensorData& data() const { return *d_; }
  const std::shared_ptr<TensorData>& ptr() const { return d_; }

  bool sameStorage(const Tensor& o) const { return d_ == o.d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
  friend class Tape;
};

struct TapeEntry {
  const char* op;
  std::vector<std::int64_t> inputs;
  std::int64_t output;
  std::function<void()> backward;
};

// Reverse-mode tape. Constructing one makes it the active tape for the
// current thread (RAII); ops record onto the active tape when any input is
// grad-tracked. Entries are appended in execution order, so the list is
// already topologically sorted and the backward sweep is a single reverse
// pass that visits each entry once, accumulating (summing) gradients at
// fan-out points.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Node id of t on this tape, assigning one if needed (leaf until recorded
  // as an output).
  std::int64_t idFor(const Tensor& t);

  void record(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
              std::function<void()> backward);
  void record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss)=1, runs the reverse sweep, then clears the tape.
  // loss must be a scalar recorded on this tape.
  void backward(const Tensor& loss);

  void clear();

  const std::vector<TapeEntry>& entries() const { return entries_; }
  std::size_t numEntries() const { return entries_.size(); }
  std::uint64_t epoch() const { return epoch_; }

  // True if the tensor is connected to this tape's graph (leaf or produced).
  bool tracked(const Tensor& t) const;

 private:
  std::vector<TapeEntry> entries_;
  std::int64_t nextId_ = 0;
  std::uint64_t epoch_;
  Tape* prev_ = nullptr;
};

// Temporarily disables recording (evaluation-mode forward passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Accumulates v into t.grad[i], allocating zeros on first touch.
void accumGrad(TensorData& t, std::size_t i, double v);
std::vector<double>& ensureGrad(TensorData& t);

std::string shapeToString(const std::vector<std::size_t>& shape);

}  // namespace confsearch
