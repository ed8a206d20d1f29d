#pragma once

#include <stdexcept>
#include <string>

namespace samcnn {

// Malformed input files (embeddings, qrels, runs, configs). CLI exit code 3.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad command usage detected past the flag parser. CLI exit code 2.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace samcnn
