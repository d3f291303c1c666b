// Copyright 2026 The oprobe Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <stdexcept>
#include <string>

namespace oprobe {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class RangeError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

/// Malformed bytes or text: bad magic, truncation, checksum mismatch.
class FormatError : public Error { using Error::Error; };

/// Well-formed input that violates a semantic invariant (NaN, label bound,
/// cycle in a taxonomy, misaligned labels).
class ValidationError : public Error { using Error::Error; };

/// A class set whose members share no common hypernym.
class NoCommonHypernymError : public Error { using Error::Error; };

/// Non-finite loss during optimization.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace oprobe
