#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "permflow/tensor.hpp"

namespace permflow::ckpt {

// Versioned container: a JSON metadata block followed by named
// little-endian float64 tensors in a fixed order. Writing the result of
// a read reproduces the file byte for byte.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace permflow::ckpt
