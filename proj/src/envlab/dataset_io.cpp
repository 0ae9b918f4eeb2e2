#include "ipd/envlab/dataset_io.hpp"

#include <filesystem>
#include <fstream>

#include "ipd/common/binio.hpp"

namespace ipd::envlab {

namespace {
constexpr char kMagic[4] = {'I', 'P', 'D', 'T'};
constexpr uint32_t kVersion = 1;

void write_vec32(std::ostream& os, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    binio::write_f32(os, static_cast<float>(v(i)));
}

Vec read_vec32(std::istream& is, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = static_cast<double>(binio::read_f32(is));
  return v;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DatasetIoError(DatasetError::io_failure, "cannot open " + tmp);
    os.write(kMagic, 4);
    binio::write_u32(os, kVersion);
    binio::write_string(os, to_string(ds.env.name));
    binio::write_u32(os, static_cast<uint32_t>(ds.env.state_dim));
    binio::write_u32(os, static_cast<uint32_t>(ds.env.action_dim));
    write_vec32(os, ds.env.action_low);
    write_vec32(os, ds.env.action_high);
    binio::write_u32(os, static_cast<uint32_t>(ds.env.max_episode_steps));
    binio::write_u32(os, static_cast<uint32_t>(ds.trajectories.size()));
    for (const auto& traj : ds.trajectories) {
      binio::write_u8(os, static_cast<uint8_t>(traj.provenance));
      binio::write_i64(os, traj.source_index);
      binio::write_u32(os, static_cast<uint32_t>(traj.transitions.size()));
      for (const auto& tr : traj.transitions) {
        if (tr.state.size() != ds.env.state_dim || tr.next_state.size() != ds.env.state_dim ||
            tr.action.size() != ds.env.action_dim)
          throw DatasetIoError(DatasetError::dim_mismatch,
                               "transition dimensions inconsistent with env spec");
        write_vec32(os, tr.state);
        write_vec32(os, tr.action);
        binio::write_f32(os, static_cast<float>(tr.reward));
        write_vec32(os, tr.next_state);
        binio::write_u8(os, tr.terminal ? 1 : 0);
      }
    }
    if (!os) throw DatasetIoError(DatasetError::io_failure, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetIoError(DatasetError::io_failure, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw DatasetIoError(DatasetError::bad_magic, "bad dataset magic in " + path);
  try {
    const uint32_t ver = binio::read_u32(is);
    if (ver != kVersion)
      throw DatasetIoError(DatasetError::bad_version,
                           "unsupported dataset version " + std::to_string(ver));
    Dataset ds;
    const std::string name = binio::read_string(is);
    ds.env = EnvSpec::by_name(env_name_from_string(name));
    const uint32_t sdim = binio::read_u32(is);
    const uint32_t adim = binio::read_u32(is);
    if (static_cast<int>(sdim) != ds.env.state_dim ||
        static_cast<int>(adim) != ds.env.action_dim)
      throw DatasetIoError(DatasetError::dim_mismatch,
                           "stored dims disagree with environment " + name);
    ds.env.action_low = read_vec32(is, static_cast<int>(adim));
    ds.env.action_high = read_vec32(is, static_cast<int>(adim));
    ds.env.max_episode_steps = static_cast<int>(binio::read_u32(is));
    const uint32_t n_traj = binio::read_u32(is);
    ds.trajectories.reserve(n_traj);
    for (uint32_t t = 0; t < n_traj; ++t) {
      Trajectory traj;
      const uint8_t prov = binio::read_u8(is);
      if (prov > 1)
        throw DatasetIoError(DatasetError::dim_mismatch,
                             "invalid provenance byte " + std::to_string(prov));
      traj.provenance = static_cast<Provenance>(prov);
      traj.source_index = binio::read_i64(is);
      const uint32_t n_tr = binio::read_u32(is);
      traj.transitions.reserve(n_tr);
      for (uint32_t k = 0; k < n_tr; ++k) {
        Transition tr;
        tr.state = read_vec32(is, static_cast<int>(sdim));
        tr.action = read_vec32(is, static_cast<int>(adim));
        tr.reward = static_cast<double>(binio::read_f32(is));
        tr.next_state = read_vec32(is, static_cast<int>(sdim));
        tr.terminal = binio::read_u8(is) != 0;
        traj.transitions.push_back(std::move(tr));
      }
      ds.trajectories.push_back(std::move(traj));
    }
    return ds;
  } catch (const binio::TruncatedRead&) {
    throw DatasetIoError(DatasetError::truncated, "truncated dataset file " + path);
  }
}

}  // namespace ipd::envlab
