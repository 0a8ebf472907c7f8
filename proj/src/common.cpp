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

#include "resfair/common.hpp"

namespace resfair {

std::string_view attribute_name(Attribute attribute) {
  switch (attribute) {
    case Attribute::kGender:
      return "gender";
    case Attribute::kRace:
      return "race";
    case Attribute::kAge:
      return "age";
  }
  return "unknown";
}

Attribute parse_attribute(std::string_view name) {
  for (const Attribute a : kAllAttributes) {
    if (attribute_name(a) == name) return a;
  }
  throw ValidationError("unknown attribute '" + std::string(name) + "'");
}

std::string_view sentiment_name(Sentiment sentiment) {
  return sentiment == Sentiment::kPositive ? "positive" : "negative";
}

Sentiment parse_sentiment(std::string_view name) {
  if (name == "positive") return Sentiment::kPositive;
  if (name == "negative") return Sentiment::kNegative;
  throw ValidationError("unknown sentiment '" + std::string(name) + "'");
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ValidationError("unknown split '" + std::string(name) + "'");
}

}  // namespace resfair
