#include "ipd/diffcore/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ipd/common/binio.hpp"

namespace ipd::diffcore {

namespace {
constexpr char kMagic[4] = {'I', 'P', 'D', 'C'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Vec>>& blobs) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointIoError(CheckpointError::io_failure, "cannot open " + tmp);
    os.write(kMagic, 4);
    binio::write_u32(os, kVersion);
    for (const auto& [name, values] : blobs) {
      binio::write_string(os, name);
      binio::write_u64(os, static_cast<uint64_t>(values.size()));
      os.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
    if (!os) throw CheckpointIoError(CheckpointError::io_failure, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::map<std::string, Vec> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointIoError(CheckpointError::io_failure, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw CheckpointIoError(CheckpointError::bad_magic, "bad checkpoint magic in " + path);
  uint32_t ver;
  try {
    ver = binio::read_u32(is);
  } catch (const binio::TruncatedRead&) {
    throw CheckpointIoError(CheckpointError::truncated, "truncated checkpoint " + path);
  }
  if (ver != kVersion)
    throw CheckpointIoError(CheckpointError::bad_version,
                            "unsupported checkpoint version " + std::to_string(ver));
  std::map<std::string, Vec> out;
  while (true) {
    is.peek();
    if (is.eof()) break;
    try {
      const std::string name = binio::read_string(is);
      const uint64_t n = binio::read_u64(is);
      Vec v(static_cast<Eigen::Index>(n));
      is.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
      if (!is)
        throw CheckpointIoError(CheckpointError::truncated, "truncated blob in " + path);
      out[name] = std::move(v);
    } catch (const binio::TruncatedRead&) {
      throw CheckpointIoError(CheckpointError::truncated, "truncated checkpoint " + path);
    }
  }
  return out;
}

void save_params(const std::string& path,
                 const std::vector<std::pair<std::string, const ParameterSet*>>& sets) {
  std::vector<std::pair<std::string, Vec>> blobs;
  blobs.reserve(sets.size());
  for (const auto& [name, ps] : sets) blobs.emplace_back(name, ps->values());
  save_checkpoint(path, blobs);
}

void load_params(const std::string& path,
                 const std::vector<std::pair<std::string, ParameterSet*>>& sets) {
  auto blobs = load_checkpoint(path);
  for (const auto& [name, ps] : sets) {
    auto it = blobs.find(name);
    if (it == blobs.end())
      throw CheckpointIoError(CheckpointError::io_failure,
                              "checkpoint missing blob " + name);
    if (it->second.size() != ps->total_size())
      throw CheckpointIoError(CheckpointError::io_failure,
                              "blob " + name + " has wrong element count");
    ps->values() = it->second;
  }
}

}  // namespace ipd::diffcore
