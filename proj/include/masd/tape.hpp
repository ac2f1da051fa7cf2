#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "masd/errors.hpp"
#include "masd/tensor.hpp"

namespace masd {

// Records executed operations in execution order, which is already a
// topological order of the computation. One backward pass replays the
// records once, in reverse. A tape and the tensors flowing through it are
// confined to a single thread; independent tapes may run concurrently.
class Tape {
 public:
  void record(std::function<void()> backward_step) {
    nodes_.push_back(std::move(backward_step));
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return backward_run_; }

  // Propagates d(loss)/d(tensor) into the grad buffer of every tensor on the
  // recorded chain. `loss` must hold exactly one element. A second call
  // without reset() is an error: grad buffers would double-accumulate.
  void backward(Tensor loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be a one-element tensor");
    if (backward_run_) throw ContractError("backward: tape already consumed; reset() first");
    if (nodes_.empty() && !loss.requires_grad())
      throw ContractError("backward: tape is empty and loss is not a tracked leaf");
    loss.mut_grad()[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    backward_run_ = true;
  }

  void reset() {
    nodes_.clear();
    backward_run_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool backward_run_ = false;
};

}  // namespace masd
