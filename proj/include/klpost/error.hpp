#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace klpost {

/// Base of every error thrown by the library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input shapes or values violate an operation's precondition.
class argument_error : public error {
 public:
  using error::error;
};

/// Training set with no variance at all.
class degenerate_error : public error {
 public:
  using error::error;
};

/// The Q block of the basis cannot be pseudo-inverted.
class rank_error : public error {
 public:
  using error::error;
};

class chain_divergence : public error {
 public:
  chain_divergence(std::size_t chain, std::size_t step)
      : error("chain divergence at (" + std::to_string(chain) + ", " +
              std::to_string(step) + ")"),
        chain_(chain),
        step_(step) {}

  std::size_t chain() const noexcept { return chain_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t chain_;
  std::size_t step_;
};

class hessian_error : public error {
 public:
  explicit hessian_error(double condition)
      : error("Hessian not PD after jitter (condition estimate " +
              std::to_string(condition) + ")"),
        condition_(condition) {}

  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Malformed or unreadable matrix / container file.
class io_error : public error {
 public:
  using error::error;
};

}  // namespace klpost
