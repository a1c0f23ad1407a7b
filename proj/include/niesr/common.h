// niesr/common.h

// Copyright 2026  The NIESR Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef NIESR_COMMON_H_
#define NIESR_COMMON_H_

#include <sstream>
#include <stdexcept>
#include <string>

namespace niesr {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// An op produced NaN or Inf; the message names the op.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& msg) : Error(msg) {}
};

// On-disk format violations (bad magic, truncation, unknown fields).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Caller violated a documented contract (maps to CLI exit code 2).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

namespace internal {
// Stream-style message assembly for the NIESR_THROW macros.
class MessageStream {
 public:
  template <typename T>
  MessageStream& operator<<(const T& v) {
    os_ << v;
    return *this;
  }
  std::string str() const { return os_.str(); }

 private:
  std::ostringstream os_;
};
}  // namespace internal

}  // namespace niesr

#define NIESR_THROW(ExcType, msg_expr)                            \
  do {                                                            \
    ::niesr::internal::MessageStream niesr_ms__;                  \
    niesr_ms__ << msg_expr;                                       \
    throw ExcType(niesr_ms__.str());                              \
  } while (false)

#define NIESR_CHECK(cond, ExcType, msg_expr) \
  do {                                       \
    if (!(cond)) NIESR_THROW(ExcType, msg_expr); \
  } while (false)

#endif  // NIESR_COMMON_H_
