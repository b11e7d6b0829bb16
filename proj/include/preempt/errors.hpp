#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace preempt {

// Base of every error raised by the harness. `name()` is a stable,
// machine-checkable identifier; what() carries the human-readable context.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& message)
      : std::runtime_error(message), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

}  // namespace preempt
