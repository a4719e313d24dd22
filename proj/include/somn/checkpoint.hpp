#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "somn/tensor.hpp"

namespace somn {

// Named-tensor container: a line-delimited text manifest (name, dtype, shape,
// byte offset) followed by a raw little-endian float32 blob. Carries the run
// seed and a free-form single-line metadata string (config snapshot).
void save_named_tensors(const std::string& path, uint64_t seed, const std::string& meta,
                        const std::vector<std::pair<std::string, const TensorF*>>& tensors);

struct LoadedTensors {
    uint64_t seed = 0;
    std::string meta;
    std::vector<std::string> order;  // manifest order
    std::map<std::string, TensorF> tensors;
};

LoadedTensors load_named_tensors(const std::string& path);

}  // namespace somn
