#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dicforge/common.hpp"

namespace dicforge::ckpt {

// DICM checkpoint container:
//   magic "DICM" | u32 version=1 | u32 param_count
//   per param: u32 name_len | name | u32 rank | u32 dims[rank] | f32 LE data
//   u32 adam_entry_count | u64 adam_step
//   per entry: same record layout, names "<param>.m" / "<param>.v"

struct TensorRecord {
  std::string name;
  std::vector<int64_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::vector<TensorRecord> params;
  std::vector<TensorRecord> adam;  // empty when no optimizer state is stored
  uint64_t adam_step = 0;
};

void write_dicm(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_dicm(const std::string& path);

struct DicmSummary {
  uint32_t version = 0;
  uint32_t param_count = 0;
  uint64_t adam_step = 0;
  bool has_adam = false;
  std::vector<std::pair<std::string, std::vector<int64_t>>> entries;
};
DicmSummary read_dicm_summary(const std::string& path);

}  // namespace dicforge::ckpt
