// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by all gradekit modules.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace gradekit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a documented precondition (bad argument, unknown id, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Model output does not follow the structured response format.
class MalformedResponse : public Error {
 public:
  MalformedResponse(const std::string& what, std::size_t position)
      : Error(what + " (at offset " + std::to_string(position) + ")"), position_(position) {}

  /// Offset of the first character that could not be accepted.
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class GeneratorError : public Error {
 public:
  using Error::Error;
};

class RepairFailed : public Error {
 public:
  using Error::Error;
};

class OutOfBounds : public Error {
 public:
  OutOfBounds(const std::string& what, std::size_t box_index)
      : Error(what), box_index_(box_index) {}
  std::size_t box_index() const noexcept { return box_index_; }

 private:
  std::size_t box_index_;
};

class JudgeUnavailable : public Error {
 public:
  using Error::Error;
};

class UnparseableVerdict : public Error {
 public:
  UnparseableVerdict(const std::string& what, std::string raw_reply)
      : Error(what), raw_reply_(std::move(raw_reply)) {}
  const std::string& raw_reply() const noexcept { return raw_reply_; }

 private:
  std::string raw_reply_;
};

/// Raised when an optimizer step produces non-finite values.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace gradekit
