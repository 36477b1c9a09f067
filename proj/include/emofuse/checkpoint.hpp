// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "emofuse/layers.hpp"

namespace emofuse {

/// Text checkpoint:
///
///   emofuse-checkpoint 1
///   config<TAB>key<TAB>value          (zero or more)
///   param<TAB>name<TAB>d0,d1,...<TAB>v0 v1 ...
///
/// Values carry 17 significant digits, so a write/read cycle is bit-exact.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint snapshot(const nn::ParameterStore &store,
                    std::vector<std::pair<std::string, std::string>> config);
std::string serializeCheckpoint(const Checkpoint &ck);
Checkpoint parseCheckpoint(const std::string &bytes, const std::string &origin);

void writeCheckpoint(const std::string &path, const Checkpoint &ck);
Checkpoint readCheckpoint(const std::string &path);

/// Copies every tensor into the store. Names must match one-to-one and
/// shapes must agree.
void restore(nn::ParameterStore &store, const Checkpoint &ck);

} // namespace emofuse
