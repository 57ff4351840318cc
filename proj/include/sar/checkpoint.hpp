// Checkpoint container: JSON header (tensor names, shapes, dtypes, byte
// offsets, plus arbitrary metadata) followed by raw little-endian fp32
// blobs. Round trips are bit-exact.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sar/tensor.hpp"

namespace sar {

struct CheckpointTensor {
    std::vector<int> shape;
    std::vector<float> data;
};

struct Checkpoint {
    // Insertion-ordered tensor section.
    std::vector<std::pair<std::string, CheckpointTensor>> tensors;
    nlohmann::json meta;

    const CheckpointTensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
    void add(const std::string& name, const TensorPtr& t);
    void add(const std::string& name, std::vector<int> shape, std::vector<float> data);
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sar
