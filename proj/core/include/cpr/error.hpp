/* Copyright 2026 The cprlite Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace cpr {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input files (dataset, points, checkpoints).
class LoadError : public Error {
 public:
  using Error::Error;
};

// A call whose preconditions do not hold (bad geometry, empty bag, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training. Carries the epoch and image index.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, int image_index, const std::string& what)
      : Error(what), epoch_(epoch), image_index_(image_index) {}

  int epoch() const { return epoch_; }
  int image_index() const { return image_index_; }

 private:
  int epoch_;
  int image_index_;
};

}  // namespace cpr
