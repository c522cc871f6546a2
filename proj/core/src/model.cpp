// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#include "vedit/model.hpp"

namespace vedit {

std::vector<std::string> expected_tensor_names(const ModelConfig& cfg) {
    ParamStore<float> scratch;
    Rng rng(0);
    register_vedit_params(scratch, cfg, rng);
    std::vector<std::string> names;
    names.reserve(static_cast<size_t>(scratch.count()));
    for (const auto& e : scratch.entries()) {
        names.push_back(e.name);
    }
    return names;
}

}  // namespace vedit
