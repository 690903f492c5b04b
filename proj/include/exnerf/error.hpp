// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace exnerf {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an object is used in a state that forbids the call
/// (e.g. a tape that was already consumed by backward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string &what, std::string parameter = {})
      : std::runtime_error(what), parameter_(std::move(parameter)) {}
  const std::string &parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

class UnsupportedFormat : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace exnerf
