// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "confsearch/tensor.hpp"

namespace confsearch {

struct NamedTensor {
  std::string name;  // no whitespace
  Tensor tensor;
};

// Tensor blob layout, little-endian regardless of host:
//   u32 rank | rank x u64 dims | rank-product x f64 raw values
// records back to back. The index file is human-readable, one line per
// tensor: "<name> <byte-offset> <rank> <dims...>".
std::string encodeTensors(const std::vector<NamedTensor>& tensors, std::string* indexOut);
std::vector<NamedTensor> decodeTensors(const std::string& blob, const std::string& index);

void saveTensors(const std::string& blobPath, const std::string& indexPath,
                 const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> loadTensors(const std::string& blobPath,
                                     const std::string& indexPath);

const Tensor& findTensor(const std::vector<NamedTensor>& tensors, const std::string& name);

// temp file + rename, so readers never observe a truncated artifact
void writeFileAtomic(const std::string& path, const std::string& content);
std::string readFile(const std::string& path);

}  // namespace confsearch
