/*
 * Copyright 2026 The resfair Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace resfair {

// Error hierarchy. The CLI maps each class onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed config or command line (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad input data: malformed files, inconsistent dimensions, missing
// artifacts (exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or similar numerical breakdown (exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class Attribute : std::uint8_t { kGender = 0, kRace = 1, kAge = 2 };
inline constexpr std::size_t kNumAttributes = 3;
inline constexpr std::array<Attribute, kNumAttributes> kAllAttributes = {
    Attribute::kGender, Attribute::kRace, Attribute::kAge};

enum class Sentiment : std::uint8_t { kPositive = 0, kNegative = 1 };
enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

std::string_view attribute_name(Attribute attribute);
Attribute parse_attribute(std::string_view name);
std::string_view sentiment_name(Sentiment sentiment);
Sentiment parse_sentiment(std::string_view name);
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

inline constexpr std::size_t index_of(Attribute attribute) {
  return static_cast<std::size_t>(attribute);
}

}  // namespace resfair
