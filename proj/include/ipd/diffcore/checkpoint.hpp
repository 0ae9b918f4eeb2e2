#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ipd/diffcore/params.hpp"

namespace ipd::diffcore {

enum class CheckpointError { bad_magic, bad_version, truncated, io_failure };

struct CheckpointIoError : std::runtime_error {
  CheckpointError code;
  CheckpointIoError(CheckpointError c, const std::string& msg)
      : std::runtime_error(msg), code(c) {}
};

// Checkpoint file: magic "IPDC", format-version u32, then named blobs until
// EOF, each: u32 name length, UTF-8 name, u64 element count, little-endian
// f64 values. Written atomically (tmp file + rename).
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Vec>>& blobs);

std::map<std::string, Vec> load_checkpoint(const std::string& path);

// Convenience: one blob per ParameterSet, named; load overwrites values and
// checks sizes.
void save_params(const std::string& path,
                 const std::vector<std::pair<std::string, const ParameterSet*>>& sets);
void load_params(const std::string& path,
                 const std::vector<std::pair<std::string, ParameterSet*>>& sets);

}  // namespace ipd::diffcore
