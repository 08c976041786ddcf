// Copyright 2026 The FairClip Authors.
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
#include <string_view>

namespace fairclip {

enum class ErrorCode {
  kNonFiniteInput,
  kInvalidStdDev,
  kShapeMismatch,
  kNonFiniteLoss,
  kEmptySplit,
  kInvalidBound,
  kEmptyBatch,
  kNotAdaptive,
  kAccountingOverflow,
  kNoFiniteOrder,
  kCalibrationOutOfRange,
  kDivergedStep,
  kNonBinaryAttribute,
  kNoAttributes,
  kInvalidBaseline,
  kDegeneratePairs,
  kUnpairedData,
  kStratumTooSmall,
  kMissingAttribute,
  kMalformedCsv,
  kSchemaMismatch,
  kInvalidArgument,
  kConfigError,
  kIoError,
};

constexpr std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kInvalidStdDev: return "InvalidStdDev";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kInvalidBound: return "InvalidBound";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kNotAdaptive: return "NotAdaptive";
    case ErrorCode::kAccountingOverflow: return "AccountingOverflow";
    case ErrorCode::kNoFiniteOrder: return "NoFiniteOrder";
    case ErrorCode::kCalibrationOutOfRange: return "CalibrationOutOfRange";
    case ErrorCode::kDivergedStep: return "DivergedStep";
    case ErrorCode::kNonBinaryAttribute: return "NonBinaryAttribute";
    case ErrorCode::kNoAttributes: return "NoAttributes";
    case ErrorCode::kInvalidBaseline: return "InvalidBaseline";
    case ErrorCode::kDegeneratePairs: return "DegeneratePairs";
    case ErrorCode::kUnpairedData: return "UnpairedData";
    case ErrorCode::kStratumTooSmall: return "StratumTooSmall";
    case ErrorCode::kMissingAttribute: return "MissingAttribute";
    case ErrorCode::kMalformedCsv: return "MalformedCsv";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

// Every failure surfaced by the library carries one of the codes above; the
// message is prefixed with the code name so CLI output stays greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(ErrorCodeName(code)) +
                           (detail.empty() ? "" : ": " + detail)),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fairclip
