// Copyright 2026 The safe-align Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "safe_align/errors.hpp"

namespace safe_align {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NumericalDivergence: return "NumericalDivergence";
    case ErrorKind::DomainViolation: return "DomainViolation";
    case ErrorKind::InfeasibleStart: return "InfeasibleStart";
    case ErrorKind::DimensionError: return "DimensionError";
    case ErrorKind::EmptyBox: return "EmptyBox";
    case ErrorKind::DegenerateCorrection: return "DegenerateCorrection";
    case ErrorKind::InfeasiblePolytope: return "InfeasiblePolytope";
    case ErrorKind::UnboundedPolytope: return "UnboundedPolytope";
    case ErrorKind::EmptyHypothesis: return "EmptyHypothesis";
    case ErrorKind::InvalidBudget: return "InvalidBudget";
    case ErrorKind::NotSupervised: return "NotSupervised";
    case ErrorKind::UnsupportedSlice: return "UnsupportedSlice";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace safe_align
