#include "sparsedyn/errors.hpp"

namespace sparsedyn {

const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::configuration: return "configuration";
    case ErrorCategory::argument: return "argument";
    case ErrorCategory::size: return "size";
    case ErrorCategory::integration: return "integration";
    case ErrorCategory::linear_algebra: return "linear_algebra";
    case ErrorCategory::solver: return "solver";
    case ErrorCategory::no_corner: return "no_corner";
    case ErrorCategory::coverage: return "coverage";
    case ErrorCategory::evaluation: return "evaluation";
    case ErrorCategory::rank: return "rank";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

}  // namespace sparsedyn
