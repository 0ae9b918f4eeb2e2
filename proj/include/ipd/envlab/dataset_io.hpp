#pragma once

#include <stdexcept>
#include <string>

#include "ipd/envlab/dataset.hpp"

namespace ipd::envlab {

enum class DatasetError { bad_magic, bad_version, truncated, dim_mismatch, io_failure };

struct DatasetIoError : std::runtime_error {
  DatasetError code;
  DatasetIoError(DatasetError c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

// Dataset file, all integers little-endian:
//   magic "IPDT", version u32
//   env block: name length u32 + bytes, state_dim u32, action_dim u32,
//              action_low f32[a], action_high f32[a], max_steps u32
//   trajectory count u32
//   per trajectory: provenance u8, source_index i64 (-1 if none),
//                   transition count u32, then per transition contiguous
//                   f32 state, action, reward, next_state, then terminal u8
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace ipd::envlab
